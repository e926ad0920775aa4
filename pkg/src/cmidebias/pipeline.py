"""Dependence-guided resampling of a biased interaction log.

The bias attribute is cut into K strata. Bayesian optimization searches the
stratum weights that minimize

    loss(w) = held-out BCE of a click model on the resampled data
              + lambda * CMI(first variable; click | x_r) on the resampled data,

and the log is finally resampled with the best weights found.
"""

from __future__ import annotations

import json
import logging
import warnings
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import _kernels
from .click_model import ClickModelConfig, bce, fit, score
from .cmi import CmiEstimate, StatNetConfig, estimate_cmi_dv
from .data import Dataset, concat, copy_groups, validate
from .errors import DebiasError, SingleClassTargetWarning
from .optimizer import BoConfig, BoTrace, minimize
from .perturbation import BinAssignment, PerturbationConfig, discretize, resample

log = logging.getLogger(__name__)

_FOLD_STREAM = 41


def derive_seed(seed: int, component: str) -> int:
    """Per-component seed derived from one global seed (stable across runs and platforms)."""
    return int(_kernels.stream_key(int(seed), zlib.crc32(component.encode())) & 0xFFFFFFFF)


@dataclass(frozen=True)
class PipelineConfig:
    k: int | None = 5
    lam: float = 1.0
    n_iter: int = 50
    dependence_target: str = "exposure"
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    cmi: StatNetConfig = field(default_factory=StatNetConfig)
    click: ClickModelConfig = field(default_factory=ClickModelConfig)
    bo: BoConfig = field(default_factory=BoConfig)
    n_folds: int = 5
    loop_cmi_epochs: int = 100
    loop_click_epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ValueError("k must be at least 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        if self.dependence_target not in ("exposure", "bias_attribute"):
            raise ValueError(f"unknown dependence_target {self.dependence_target!r}")
        if self.n_folds < 2:
            raise ValueError("n_folds must be at least 2")

    def seeds(self) -> dict:
        return {name: derive_seed(self.seed, name) for name in ("resample", "cmi", "click", "folds", "bo")}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


class JointLoss(NamedTuple):
    loss: float
    bce_term: float
    cmi_term: float


@dataclass(eq=False)
class DebiasResult:
    debiased: Dataset
    optimal_weights: np.ndarray
    trace: BoTrace
    bins: BinAssignment
    pre_cmi: CmiEstimate
    post_cmi: CmiEstimate
    pre_bce: float
    post_bce: float
    seeds: dict
    config: dict

    def weights_json(self) -> str:
        return json.dumps({"k": self.bins.k, "edges": self.bins.edges.tolist(),
                           "weights": [float(w) for w in self.optimal_weights]}, indent=2)

    def diagnostics(self) -> dict:
        return {
            "pre_cmi": self.pre_cmi.to_dict(),
            "post_cmi": self.post_cmi.to_dict(),
            "pre_bce": self.pre_bce,
            "post_bce": self.post_bce,
            "best_value": self.trace.best_value,
            "best_trial": self.trace.best_index,
            "n_rows_in": int(len(self.bins.bin_index)),
            "n_rows_out": len(self.debiased),
            "stratum_counts": self.bins.counts().tolist(),
            "degenerate_strata": self.bins.degenerate,
            "seeds": self.seeds,
            "config": self.config,
        }


def _budget(cfg: PipelineConfig, loop: bool) -> tuple[StatNetConfig, ClickModelConfig]:
    seeds = cfg.seeds()
    cmi_cfg = replace(cfg.cmi, seed=seeds["cmi"])
    click_cfg = replace(cfg.click, seed=seeds["click"])
    if loop:
        cmi_cfg = replace(cmi_cfg, epochs=min(cmi_cfg.epochs, cfg.loop_cmi_epochs))
        click_cfg = replace(click_cfg, epochs=min(click_cfg.epochs, cfg.loop_click_epochs),
                            n_stumps=min(click_cfg.n_stumps, cfg.loop_click_epochs))
    return cmi_cfg, click_cfg


def heldout_bce(sample: Dataset, click_cfg: ClickModelConfig, n_folds: int, seed: int) -> float:
    """Mean over folds of the BCE of a model trained on the other folds.

    Folds are assigned per observation, so copies of a resampled row never
    sit on both sides of a split.
    """
    group, n = copy_groups(sample)
    if n < n_folds:
        raise DebiasError(f"need at least {n_folds} distinct rows for {n_folds}-fold evaluation")
    rank = np.empty(n, dtype=np.intp)
    rank[np.argsort(_kernels.uniforms(seed, _FOLD_STREAM, 0, n), kind="stable")] = np.arange(n)
    fold = (rank % n_folds)[group]
    losses = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingleClassTargetWarning)
        for f in range(n_folds):
            train, test = sample.take(np.flatnonzero(fold != f)), sample.take(np.flatnonzero(fold == f))
            model = fit(train, click_cfg)
            losses.append(bce(score(model, test), test.click.astype(np.float64)))
    return float(np.mean(losses))


def joint_loss(sample: Dataset, cfg: PipelineConfig, loop: bool = True) -> JointLoss:
    """Held-out click-model BCE plus lambda times the estimated CMI on one sample."""
    cmi_cfg, click_cfg = _budget(cfg, loop)
    bce_term = heldout_bce(sample, click_cfg, cfg.n_folds, cfg.seeds()["folds"])
    cmi_term = estimate_cmi_dv(sample, cmi_cfg, cfg.dependence_target).value if cfg.lam > 0 else 0.0
    return JointLoss(bce_term + cfg.lam * cmi_term, bce_term, cmi_term)


def _perturbation(cfg: PipelineConfig) -> PerturbationConfig:
    return replace(cfg.perturbation, seed=cfg.seeds()["resample"])


def debias(dataset: Dataset, cfg: PipelineConfig | None = None, clean: Dataset | None = None,
           callback=None) -> DebiasResult:
    """Search stratum weights that minimize the joint loss and resample with them.

    Every trial resamples with the same seed, so the loss is a deterministic
    function of the weights and the returned dataset is exactly the sample
    scored at the best trial. ``clean`` rows (e.g. a randomized benchmark
    log), when given, are appended before stratification and tagged in
    ``origin``. On failure the exception carries ``partial_trace``.
    """
    cfg = cfg or PipelineConfig()
    if clean is not None:
        dataset = concat([dataset, clean], origins=["logged", "clean"], split=dataset.split)
    bad = validate(dataset)
    if bad:
        raise DebiasError(f"{len(bad)} record violations, first: {bad[0]}")
    bins = discretize(dataset, cfg.k)
    pcfg = _perturbation(cfg)
    seeds = cfg.seeds()
    bo_cfg = replace(cfg.bo, n_iter=cfg.n_iter, seed=seeds["bo"])

    def objective(w):
        sample = resample(dataset, bins, w, pcfg)
        res = joint_loss(sample, cfg, loop=True)
        return res.loss, {"cmi_term": res.cmi_term, "bce_term": res.bce_term}

    partial = BoTrace()

    def record(i, w, value, extras):
        partial.points.append(w)
        partial.values.append(value)
        partial.extras.append(extras)
        log.info("trial %d loss %.5f (bce %.5f, cmi %.5f)", i, value, extras["bce_term"], extras["cmi_term"])
        if callback is not None:
            callback(i, w, value, extras)

    try:
        trace = minimize(objective, bo_cfg, k=bins.k, callback=record)
    except Exception as exc:
        exc.partial_trace = partial
        raise
    best = np.asarray(trace.best_point, dtype=np.float64)
    debiased = resample(dataset, bins, best, pcfg)
    cmi_cfg, click_cfg = _budget(cfg, loop=False)
    pre_cmi = estimate_cmi_dv(dataset, cmi_cfg, cfg.dependence_target)
    post_cmi = estimate_cmi_dv(debiased, cmi_cfg, cfg.dependence_target)
    pre_bce = heldout_bce(dataset, click_cfg, cfg.n_folds, seeds["folds"])
    post_bce = heldout_bce(debiased, click_cfg, cfg.n_folds, seeds["folds"])
    return DebiasResult(debiased, best, trace, bins, pre_cmi, post_cmi, pre_bce, post_bce, seeds, cfg.to_dict())
