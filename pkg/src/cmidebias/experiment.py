"""Scenario grid runner: train click models on biased or debiased data and
evaluate them on randomized, biased, reweighted, stratified or debiased
evaluation data, writing one report per scenario plus a consolidated table."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
import threading
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .baselines import ips_metrics, ips_weights, stratified_evaluate
from .click_model import ClickModelConfig, fit, score
from .cmi import StatNetConfig
from .data import Dataset
from .io import atomic_write, load_coat_full, save_csv, write_coat_dir
from .metrics import METRICS, EvalReport, evaluate
from .optimizer import BoConfig
from .perturbation import PerturbationConfig, discretize
from .pipeline import DebiasResult, PipelineConfig, debias, derive_seed
from .synthetic import SyntheticConfig, coat_like_ratings, generate

log = logging.getLogger(__name__)

TABLE_COLUMNS = ["scenario", *[c for m in METRICS for c in (m, f"{m}_drift_pct")]]
SOURCES = ("mnar_train", "mnar_eval", "mar")


@dataclass(frozen=True)
class Scenario:
    id: str
    eval_source: str = "mar"
    debias: str = "none"  # none | eval | train
    method: str = "plain"  # plain | ips | stratified
    include_bias_factor: bool = False
    ips_train: bool = False
    benchmark: str | None = None

    def __post_init__(self):
        if self.eval_source not in ("mar", "mnar_eval"):
            raise ValueError(f"{self.id}: unknown eval_source {self.eval_source!r}")
        if self.debias not in ("none", "eval", "train"):
            raise ValueError(f"{self.id}: unknown debias target {self.debias!r}")
        if self.method not in ("plain", "ips", "stratified"):
            raise ValueError(f"{self.id}: unknown method {self.method!r}")
        if self.debias == "eval" and self.eval_source != "mnar_eval":
            raise ValueError(f"{self.id}: only the biased evaluation split can be debiased")


def standard_grid() -> tuple[Scenario, ...]:
    """The nine scenarios: evaluation-side (E1-E5) and training-side (T1-T4)."""
    return (
        Scenario("E1"),
        Scenario("E2", eval_source="mnar_eval", benchmark="E1"),
        Scenario("E3", eval_source="mnar_eval", method="ips", benchmark="E1"),
        Scenario("E4", eval_source="mnar_eval", method="stratified", benchmark="E1"),
        Scenario("E5", eval_source="mnar_eval", debias="eval", benchmark="E1"),
        Scenario("T1", include_bias_factor=True),
        Scenario("T2", ips_train=True, benchmark="E1"),
        Scenario("T3", debias="train", benchmark="E1"),
        Scenario("T4", debias="train", include_bias_factor=True, benchmark="T1"),
    )


@dataclass(frozen=True)
class DataConfig:
    kind: str = "coat_like"  # coat | coat_like | synthetic
    path: str | None = None
    seed: int = 0
    eval_fraction: float = 0.3
    synthetic: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("coat", "coat_like", "synthetic"):
            raise ValueError(f"unknown data kind {self.kind!r}")
        if self.kind == "coat" and not self.path:
            raise ValueError("the coat data source needs a path")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must lie in (0, 1)")


def coat_pipeline_config(seed: int = 0) -> PipelineConfig:
    """Debiasing settings for rating logs: 10% of rows redrawn, dependence on the propensity attribute."""
    return PipelineConfig(
        k=5, lam=1.0, n_iter=50, dependence_target="bias_attribute",
        perturbation=PerturbationConfig(perturb_fraction=0.1, mode="partial"),
        click=ClickModelConfig(model_kind="boosted_stumps"), seed=seed,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple = field(default_factory=standard_grid)
    data: DataConfig = field(default_factory=DataConfig)
    pipeline: PipelineConfig = field(default_factory=coat_pipeline_config)
    click: ClickModelConfig = field(default_factory=lambda: ClickModelConfig(model_kind="boosted_stumps"))
    threshold: float = 0.5
    strata_k: int = 5
    clip_min: float = 0.01
    output_dir: str = "experiment_out"
    seed: int = 0
    parallel: bool = False

    def __post_init__(self):
        ids = [s.id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ValueError(f"scenario ids must be unique: {ids}")
        for s in self.scenarios:
            if s.benchmark is not None and s.benchmark not in ids:
                raise ValueError(f"{s.id}: benchmark {s.benchmark!r} is not a scenario of this grid")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pipeline"] = self.pipeline.to_dict()
        return d


# ---------------------------------------------------------------------------
# config (de)serialization


def _tuple_fields(d: dict, names) -> dict:
    return {k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if k in names and v is not None else v)
            for k, v in d.items()}


def pipeline_from_dict(d: dict) -> PipelineConfig:
    d = dict(d)
    if "lambda" in d:
        d["lam"] = d.pop("lambda")
    sub = {
        "perturbation": PerturbationConfig,
        "cmi": StatNetConfig,
        "click": ClickModelConfig,
        "bo": BoConfig,
    }
    for key, cls in sub.items():
        if key in d and isinstance(d[key], dict):
            v = d[key]
            if cls is StatNetConfig and "hidden_layers" in v:
                v = {**v, "hidden_layers": tuple(v["hidden_layers"])}
            if cls is BoConfig:
                v = _tuple_fields(v, ("bounds",))
            d[key] = cls(**v)
    return PipelineConfig(**d)


def experiment_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    if "scenarios" in d:
        d["scenarios"] = tuple(Scenario(**s) for s in d["scenarios"])
    if "data" in d and isinstance(d["data"], dict):
        d["data"] = DataConfig(**d["data"])
    if "pipeline" in d and isinstance(d["pipeline"], dict):
        d["pipeline"] = pipeline_from_dict(d["pipeline"])
    if "click" in d and isinstance(d["click"], dict):
        d["click"] = ClickModelConfig(**d["click"])
    return ExperimentConfig(**d)


# ---------------------------------------------------------------------------
# data


@dataclass
class ExperimentData:
    mnar_train: Dataset
    mnar_eval: Dataset
    mar: Dataset
    fingerprint: dict


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def split_rows(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded split into (first part, held-out part) with ``floor(fraction * n)`` held out, original order kept."""
    order = np.argsort(_kernels.uniforms(seed, 61, 0, n), kind="stable")
    n_out = int(np.floor(fraction * n))
    held = np.zeros(n, dtype=bool)
    held[order[:n_out]] = True
    return np.flatnonzero(~held), np.flatnonzero(held)


def load_experiment_data(cfg: ExperimentConfig, workdir: Path) -> ExperimentData:
    dc = cfg.data
    if dc.kind == "synthetic":
        mnar, mar = generate(SyntheticConfig(**{**dc.synthetic, "seed": dc.seed}))
        fingerprint = {"kind": "synthetic", "params": {**dc.synthetic, "seed": dc.seed}}
    else:
        if dc.kind == "coat":
            directory = Path(dc.path)
        else:
            m = coat_like_ratings(dc.seed, **dc.synthetic)
            directory = workdir / "data" / "coat_like"
            write_coat_dir(directory, m.train, m.test, m.user_features, m.item_features, m.user_names, m.item_names)
        coat = load_coat_full(directory)
        mnar, mar = coat.train, coat.test
        files = sorted(p for p in directory.rglob("*") if p.is_file())
        fingerprint = {"kind": dc.kind, "seed": dc.seed if dc.kind == "coat_like" else None,
                       "files": {str(p.relative_to(directory)): _sha256(p) for p in files},
                       "propensity": coat.propensity.to_dict()}
    fit_idx, eval_idx = split_rows(len(mnar), dc.eval_fraction, derive_seed(cfg.seed, "eval-split"))
    mnar_eval = mnar.take(eval_idx).replace(split="eval")
    return ExperimentData(mnar.take(fit_idx), mnar_eval, mar, fingerprint)


# ---------------------------------------------------------------------------
# reports


def drift_pct(value: float, benchmark: float) -> float:
    """Relative change in percent: ``100 * (value - benchmark) / benchmark``."""
    return 100.0 * (value - benchmark) / benchmark


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return ""
    return f"{v:.6f}"


def consolidated_table(scenarios, reports: dict) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for s in scenarios:
        rep = reports.get(s.id)
        if rep is None:
            continue
        bench = reports.get(s.benchmark) if s.benchmark else None
        row = [s.id]
        for m in METRICS:
            v = rep.metric(m)
            d = None
            if bench is not None and bench.metric(m) not in (0.0,) and np.isfinite(bench.metric(m)):
                d = drift_pct(v, bench.metric(m))
            row += [_fmt(v), _fmt(d)]
        w.writerow(row)
    return buf.getvalue()


def distribution_plot_data(scores_pre, scores_post, scores_ref, n_bins: int = 10) -> str:
    """Histogram densities of predicted relevance for clicked rows (bin, pre, post, reference)."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)

    def dens(s):
        h, _ = np.histogram(np.clip(s, 0.0, 1.0), bins=edges)
        return h / h.sum() if h.sum() > 0 else h.astype(float)

    pre, post, ref = dens(scores_pre), dens(scores_post), dens(scores_ref)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "bin_lo", "bin_hi", "pre_density", "post_density", "reference_density"])
    for b in range(n_bins):
        w.writerow([b, f"{edges[b]:.2f}", f"{edges[b + 1]:.2f}", _fmt(pre[b]), _fmt(post[b]), _fmt(ref[b])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# runner


class _Runner:
    def __init__(self, cfg: ExperimentConfig, data: ExperimentData, out: Path):
        self.cfg, self.data, self.out = cfg, data, out
        self.debiased: dict[str, DebiasResult] = {}
        self._models: dict = {}
        self._lock = threading.Lock()

    def debias_target(self, target: str) -> DebiasResult:
        if target not in self.debiased:
            source = self.data.mnar_eval if target == "eval" else self.data.mnar_train
            pcfg = replace(self.cfg.pipeline, seed=derive_seed(self.cfg.seed, f"debias-{target}"))
            res = debias(source, pcfg)
            self.debiased[target] = res
            d = self.out / f"debias_{target}"
            res.trace.to_csv(_mkparent(d / "trace.csv"))
            atomic_write(d / "weights.json", res.weights_json() + "\n")
            atomic_write(d / "diagnostics.json", json.dumps(res.diagnostics(), indent=2, sort_keys=True) + "\n")
            save_csv(res.debiased, d / "debiased.csv", metadata={"source": f"mnar_{target}"})
        return self.debiased[target]

    def model(self, s: Scenario):
        key = (s.debias == "train", s.include_bias_factor, s.ips_train)
        with self._lock:
            if key in self._models:
                return self._models[key]
        train = self.debiased["train"].debiased if s.debias == "train" else self.data.mnar_train
        ccfg = replace(self.cfg.click, include_bias_factor=s.include_bias_factor,
                       seed=derive_seed(self.cfg.seed, "click"))
        weights = ips_weights(train.x_nr, self.cfg.clip_min) if s.ips_train else None
        model = fit(train, ccfg, sample_weight=weights)
        with self._lock:
            self._models.setdefault(key, model)
            return self._models[key]

    def evaluate(self, s: Scenario) -> EvalReport:
        model = self.model(s)
        if s.eval_source == "mar":
            data = self.data.mar
        elif s.debias == "eval":
            data = self.debiased["eval"].debiased
        else:
            data = self.data.mnar_eval
        thr = self.cfg.threshold
        if s.method == "ips":
            rep = ips_metrics(score(model, data), data.click, data.x_nr, thr, self.cfg.clip_min, s.id)
        elif s.method == "stratified":
            rep = stratified_evaluate(model, data, discretize(data, self.cfg.strata_k), thr, s.id)
        else:
            rep = evaluate(score(model, data), data.click, thr, scenario=s.id)
        rep.extras = {**rep.extras, "eval_rows": len(data), "train_source": "debiased" if s.debias == "train"
                      else "mnar_train", "include_bias_factor": s.include_bias_factor, "ips_train": s.ips_train}
        return rep


def _mkparent(p: Path) -> Path:
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every scenario and write reports, the consolidated table and a manifest.

    A failing scenario is recorded in the manifest and does not stop the
    others. Returns the output directory.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_experiment_data(cfg, out)
    runner = _Runner(cfg, data, out)
    failures: dict[str, str] = {}
    for target in ("eval", "train"):
        if any(s.debias == target for s in cfg.scenarios):
            try:
                runner.debias_target(target)
            except Exception as exc:  # recorded; dependent scenarios fail below
                log.exception("debiasing the %s data failed", target)
                failures[f"debias-{target}"] = f"{type(exc).__name__}: {exc}"

    reports: dict[str, EvalReport] = {}

    def one(s: Scenario):
        try:
            return s.id, runner.evaluate(s), None
        except Exception as exc:
            return s.id, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"

    if cfg.parallel:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(one, cfg.scenarios))
    else:
        results = [one(s) for s in cfg.scenarios]
    for sid, rep, err in results:
        if err is not None:
            failures[sid] = err
            continue
        reports[sid] = rep
        atomic_write(out / "reports" / f"{sid}.json", rep.to_json() + "\n")
    atomic_write(out / "table.csv", consolidated_table(cfg.scenarios, reports))
    if "eval" in runner.debiased and "E1" in {s.id for s in cfg.scenarios}:
        base = runner.model(Scenario("plot"))
        pre, post, ref = data.mnar_eval, runner.debiased["eval"].debiased, data.mar
        clicked = [score(base, d)[d.click == 1] for d in (pre, post, ref)]
        atomic_write(out / "distribution_eval.csv", distribution_plot_data(*clicked))
    manifest = {
        "config": cfg.to_dict(),
        "code_version": __version__,
        "kernel_backend": _kernels.BACKEND,
        "data": data.fingerprint,
        "rows": {"mnar_train": len(data.mnar_train), "mnar_eval": len(data.mnar_eval), "mar": len(data.mar)},
        "seeds": {"global": cfg.seed, "eval_split": derive_seed(cfg.seed, "eval-split"),
                  "click": derive_seed(cfg.seed, "click"),
                  **{f"debias_{t}": derive_seed(cfg.seed, f"debias-{t}") for t in ("eval", "train")}},
        "failures": failures,
        "scenarios_completed": [s.id for s in cfg.scenarios if s.id in reports],
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return out


def load_manifest_config(path) -> ExperimentConfig:
    """The experiment configuration recorded in a manifest, ready to rerun."""
    return experiment_from_dict(json.loads(Path(path).read_text())["config"])
