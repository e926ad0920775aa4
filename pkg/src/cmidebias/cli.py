"""Command-line entry point: ``cmidebias {generate,debias,evaluate,experiment,report}``.

Every verb accepts ``--config`` with a JSON or TOML file; explicit flags
override values from the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .baselines import ips_metrics, stratified_evaluate
from .click_model import ClickModelConfig, fit, score
from .experiment import (
    ExperimentConfig,
    experiment_from_dict,
    load_manifest_config,
    pipeline_from_dict,
    run_experiment,
)
from .io import atomic_write, load_coat, load_dataset, save_csv, write_coat_dir
from .metrics import evaluate
from .perturbation import discretize
from .pipeline import debias
from .synthetic import SyntheticConfig, coat_like_ratings, generate_full, true_cmi

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

log = logging.getLogger("cmidebias")


def read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def _set(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _overrides(base: dict, args, mapping: dict) -> dict:
    """Copy of ``base`` with every non-None flag written to its dotted config key."""
    out = json.loads(json.dumps(base))
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            _set(out, key, v)
    return out


PIPELINE_FLAGS = {
    "k": "k", "lam": "lambda", "n_iter": "n_iter", "target": "dependence_target", "seed": "seed",
    "mode": "perturbation.mode", "perturb_fraction": "perturbation.perturb_fraction",
    "model_kind": "click.model_kind", "cmi_epochs": "cmi.epochs",
}


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("debiasing")
    g.add_argument("--k", type=int, help="number of bias-attribute strata")
    g.add_argument("--lambda", dest="lam", type=float, help="weight of the dependence term")
    g.add_argument("--n-iter", type=int, help="Bayesian-optimization iterations")
    g.add_argument("--target", choices=("exposure", "bias_attribute"), help="variable whose dependence is minimized")
    g.add_argument("--mode", choices=("partial", "full"), help="resampling mode")
    g.add_argument("--perturb-fraction", type=float, help="share of rows redrawn in partial mode")
    g.add_argument("--model-kind", choices=("logistic", "boosted_stumps"), help="click model")
    g.add_argument("--cmi-epochs", type=int, help="critic training epochs for final diagnostics")
    g.add_argument("--seed", type=int, help="global seed")


# ---------------------------------------------------------------------------
# verbs


def cmd_generate(args) -> int:
    out = Path(args.out)
    if args.coat_like:
        m = coat_like_ratings(args.seed or 0)
        write_coat_dir(out, m.train, m.test, m.user_features, m.item_features, m.user_names, m.item_names)
        print(f"wrote Coat-layout rating grids to {out}")
        return 0
    conf = _overrides(read_config(args.config), args, {
        "n_users": "n_users", "n_items": "n_items", "feature_dim": "feature_dim", "bias_strength": "bias_strength",
        "exposure_budget": "exposure_budget", "x_nr_dist": "x_nr_dist", "seed": "seed",
    })
    cfg = SyntheticConfig(**conf)
    g = generate_full(cfg)
    oracle = {t: true_cmi(cfg, args.n_mc, t, beta0=g.beta0)._asdict() for t in ("exposure", "bias_attribute")}
    meta = {"generator": cfg.to_dict(), "beta0": g.beta0, "true_cmi": oracle}
    out.mkdir(parents=True, exist_ok=True)
    save_csv(g.mnar, out / "mnar.csv", metadata=meta)
    save_csv(g.mar_oracle, out / "mar.csv", metadata=meta)
    print(json.dumps({"mnar_rows": len(g.mnar), "mar_rows": len(g.mar_oracle), "true_cmi": oracle}, indent=2))
    return 0


def _load_input(args):
    if args.coat:
        train, test = load_coat(args.coat)
        return train if args.coat_split == "train" else test
    return load_dataset(args.data)


def cmd_debias(args) -> int:
    conf = _overrides(read_config(args.config), args, PIPELINE_FLAGS)
    cfg = pipeline_from_dict(conf)
    dataset = _load_input(args)
    clean = load_dataset(args.clean) if args.clean else None
    res = debias(dataset, cfg, clean=clean)
    out = Path(args.out)
    save_csv(res.debiased, out / "debiased.csv", metadata={"weights": [float(w) for w in res.optimal_weights]})
    atomic_write(out / "weights.json", res.weights_json() + "\n")
    res.trace.to_csv(out / "trace.csv")
    atomic_write(out / "diagnostics.json", json.dumps(res.diagnostics(), indent=2, sort_keys=True) + "\n")
    print(f"CMI {res.pre_cmi.value:.4f} -> {res.post_cmi.value:.4f}; "
          f"weights {[round(float(w), 3) for w in res.optimal_weights]}; outputs in {out}")
    return 0


def cmd_evaluate(args) -> int:
    conf = _overrides(read_config(args.config), args, {
        "model_kind": "model_kind", "include_bias_factor": "include_bias_factor", "seed": "seed",
    })
    train, test = load_dataset(args.train), load_dataset(args.eval)
    model = fit(train, ClickModelConfig(**conf))
    if args.method == "ips":
        rep = ips_metrics(score(model, test), test.click, test.x_nr, args.threshold, args.clip_min, args.scenario)
    elif args.method == "stratified":
        rep = stratified_evaluate(model, test, discretize(test, args.k), args.threshold, args.scenario)
    else:
        rep = evaluate(score(model, test), test.click, args.threshold, scenario=args.scenario)
    text = rep.to_json()
    if args.out:
        atomic_write(args.out, text + "\n")
    print(text)
    return 0


def cmd_experiment(args) -> int:
    if args.manifest:
        cfg = load_manifest_config(args.manifest)
        base = cfg.to_dict()
    else:
        base = read_config(args.config)
    conf = _overrides(base, args, {
        "output_dir": "output_dir", "seed": "seed", "data_kind": "data.kind", "data_path": "data.path",
        "data_seed": "data.seed", "n_iter": "pipeline.n_iter", "parallel": "parallel",
    })
    cfg = experiment_from_dict(conf) if conf else ExperimentConfig()
    out = run_experiment(cfg)
    print((out / "table.csv").read_text(), end="")
    failures = json.loads((out / "manifest.json").read_text())["failures"]
    for k, v in failures.items():
        print(f"FAILED {k}: {v.splitlines()[0]}", file=sys.stderr)
    return 1 if failures else 0


def cmd_report(args) -> int:
    d = Path(args.dir)
    with open(d / "table.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
    for r in rows:
        print("  ".join(v.rjust(w) for v, w in zip(r, widths)))
    manifest = json.loads((d / "manifest.json").read_text())
    for k, v in manifest.get("failures", {}).items():
        print(f"failed: {k}: {v.splitlines()[0]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmidebias",
                                description="Reduce selection bias in interaction logs by dependence-guided resampling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="write a simulated MNAR log and its fully exposed oracle")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--coat-like", action="store_true", help="write Coat-layout rating grids instead")
    g.add_argument("--n-users", type=int)
    g.add_argument("--n-items", type=int)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--bias-strength", type=float)
    g.add_argument("--exposure-budget", type=float)
    g.add_argument("--x-nr-dist", choices=("uniform01", "exponential"))
    g.add_argument("--seed", type=int)
    g.add_argument("--n-mc", type=int, default=200_000, help="Monte-Carlo size for the dependence oracle")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("debias", help="resample a log to reduce click dependence on the bias attribute")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset in the package CSV format")
    src.add_argument("--coat", help="directory in the Coat layout")
    d.add_argument("--coat-split", choices=("train", "test"), default="train")
    d.add_argument("--clean", help="optional randomized dataset appended before debiasing")
    d.add_argument("--out", required=True)
    d.add_argument("--config")
    _add_pipeline_flags(d)
    d.set_defaults(func=cmd_debias)

    e = sub.add_parser("evaluate", help="train a click model and evaluate it on another dataset")
    e.add_argument("--train", required=True)
    e.add_argument("--eval", required=True)
    e.add_argument("--method", choices=("plain", "ips", "stratified"), default="plain")
    e.add_argument("--model-kind", choices=("logistic", "boosted_stumps"))
    e.add_argument("--include-bias-factor", action="store_true", default=None)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--clip-min", type=float, default=0.01)
    e.add_argument("--k", type=int, default=5, help="strata for stratified evaluation")
    e.add_argument("--scenario", default="custom")
    e.add_argument("--seed", type=int)
    e.add_argument("--config")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="run a scenario grid and write reports")
    x.add_argument("--config")
    x.add_argument("--manifest", help="rerun the configuration recorded in a manifest")
    x.add_argument("--output-dir")
    x.add_argument("--data-kind", choices=("coat", "coat_like", "synthetic"))
    x.add_argument("--data-path")
    x.add_argument("--data-seed", type=int)
    x.add_argument("--n-iter", type=int)
    x.add_argument("--seed", type=int)
    x.add_argument("--parallel", action="store_true", default=None)
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="print the consolidated table of an experiment directory")
    r.add_argument("dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
