"""Command line entry point.

Settings are layered: built-in defaults, then ``--config`` (JSON object
with ExperimentConfig keys), then explicit flags.

Exit codes: 0 success, 2 bad configuration or policy name, 3 missing or
malformed data, 4 report I/O failure, 5 more clusters than training users.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .clustering import CentroidSet
from .errors import ConfigError, DataError, EWCError
from .harness import REFERENCE_REDUCTION_PCT, ExperimentConfig, best_k, fit_centroids, load_or_generate, resolve_population, run_experiment, sweep_k
from .report import atomic_write_bytes, atomic_write_text, csv_text, export_report, load_regret_csv, render_regret_svg, render_sweep_svg
from .simulation import generate_dataset

log = logging.getLogger("ewc")


def parse_int_list(text: str) -> list[int]:
    """``"0,1,5-7"`` -> ``[0, 1, 5, 6, 7]``."""
    out = []
    try:
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            lo, sep, hi = part.partition("-")
            out.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    except ValueError:
        raise ConfigError(f"cannot parse integer list {text!r}") from None
    if not out:
        raise ConfigError("empty integer list")
    return out


def load_model(path) -> CentroidSet:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return CentroidSet.from_dict(data)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model file ({exc})") from None


def build_config(args) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: not valid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {
        "seeds": parse_int_list(args.seed) if getattr(args, "seed", None) else None,
        "out_dir": getattr(args, "out", None),
        "policies": [p for p in args.policies.split(",") if p.strip()] if getattr(args, "policies", None) else None,
        "k": getattr(args, "k", None),
        "eta": getattr(args, "eta", None),
        "linucb_alpha": getattr(args, "alpha", None),
        "dataset": getattr(args, "dataset", None),
        "population": getattr(args, "population", None),
        "model": getattr(args, "model", None),
        "n_test": getattr(args, "n_test", None),
        "n_train": getattr(args, "n_train", None),
        "t_test": getattr(args, "t_test", None),
        "t_train": getattr(args, "t_train", None),
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(config: ExperimentConfig) -> Path:
    if not config.out_dir:
        raise ConfigError("--out is required")
    return Path(config.out_dir)


def cmd_generate(args) -> int:
    config = build_config(args)
    spec = resolve_population(config)
    if spec is None:
        raise ConfigError("a population is required to generate data")
    out = _out_dir(config)
    atomic_write_text(out / "population.json", json.dumps(spec.to_dict(), indent=2) + "\n")
    for seed in config.seeds:
        ds = generate_dataset(spec, config.n_test, config.n_train, config.t_test, config.t_train, seed)
        name = "dataset.csv" if len(config.seeds) == 1 else f"dataset-seed{seed}.csv"
        ds.save(out / name)
        print(f"{out / name}: {len(ds.train)} train / {len(ds.test)} test users, {ds.n_rounds()} rounds")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    spec = resolve_population(config)
    out = _out_dir(config)
    seed = config.seeds[0]
    dataset = load_or_generate(config, seed, spec)
    centroids, params = fit_centroids(dataset, config.k, seed, args.clustering, config)
    model = centroids.to_dict()
    model.update(
        clustering=args.clustering,
        seed=seed,
        n_train_users=len(params),
        one_class_users=int(sum(p.degenerate for p in params)),
    )
    atomic_write_text(out / "model.json", json.dumps(model, indent=2) + "\n")
    print(f"{out / 'model.json'}: K={len(centroids)} ({args.clustering}), {model['one_class_users']} one-class users")
    return 0


def cmd_run(args) -> int:
    config = build_config(args)
    out = _out_dir(config)
    report = run_experiment(config)
    export_report(report, out)
    summary = report.summary()
    for policy, value in summary["median_final_regret"].items():
        print(f"{policy:15s} median final regret {value:10.1f}")
    if "ewc_reduction_vs_linucb_pct" in summary:
        print(f"EWC vs LinUCB: {summary['ewc_reduction_vs_linucb_pct']:.2f}% lower regret (reference figure: {REFERENCE_REDUCTION_PCT}%)")
    print(f"report written to {out}")
    return 0


def cmd_sweep_k(args) -> int:
    config = build_config(args)
    out = _out_dir(config)
    ks = parse_int_list(args.k_range)
    rows = sweep_k(config, ks)
    cols = ("seed", "k", "realized_regret", "expected_regret", "l_hat_centroids")
    atomic_write_text(out / "sweep_k.csv", csv_text(cols, ([r[c] for c in cols] for r in rows)))
    uniq = sorted({r["k"] for r in rows})
    med = [float(np.median([r["realized_regret"] for r in rows if r["k"] == k])) for k in uniq]
    atomic_write_bytes(out / "sweep_k.svg", render_sweep_svg(uniq, med))
    for k, m in zip(uniq, med):
        print(f"K={k:3d} median holdout regret {m:10.1f}")
    print(f"best K = {best_k(rows)}")
    return 0


def cmd_report(args) -> int:
    directory = Path(args.input)
    table = load_regret_csv(directory / "regret.csv")
    curves = {}
    for policy, seeds in table.items():
        stacked = np.stack([seeds[s] for s in sorted(seeds)])
        curves[policy] = np.median(stacked, axis=0)
        print(f"{policy:15s} median final regret {curves[policy][-1]:10.1f}  ({len(seeds)} seeds)")
    n_seeds = max(len(s) for s in table.values())
    atomic_write_bytes(directory / "regret.svg", render_regret_svg(curves, n_seeds=n_seeds))
    print(f"figure written to {directory / 'regret.svg'}")
    return 0


def _add_common(p, experiment=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", help="seed list, e.g. 0,1,2 or 0-9")
    p.add_argument("--out", help="output directory")
    p.add_argument("--population", help="preset name (default, separated, degenerate) or JSON spec path")
    p.add_argument("--dataset", help="dataset CSV instead of generating one")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--t-test", type=int, dest="t_test")
    p.add_argument("--t-train", type=int, dest="t_train")
    p.add_argument("--k", type=int, help="number of clusters / experts")
    if experiment:
        p.add_argument("--eta", type=float, help="Hedge learning rate (default sqrt(8 ln K / T))")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ewc", description="Expert-with-clustering bandit experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    _add_common(p, experiment=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit separators and cluster them into a model file")
    _add_common(p, experiment=False)
    p.add_argument("--clustering", choices=("loss_guided", "l2"), default="loss_guided")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run policies and export a regret report")
    _add_common(p)
    p.add_argument("--policies", help="comma separated policy names")
    p.add_argument("--alpha", type=float, help="LinUCB exploration width")
    p.add_argument("--model", help="model.json from `train` to use as EWC experts")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-k", help="holdout regret of EWC across K")
    _add_common(p)
    p.add_argument("--k-range", default="2-12")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("report", help="re-render the figure of an existing report directory")
    p.add_argument("input", help="directory holding regret.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EWCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
