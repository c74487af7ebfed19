"""Report files: CSV tables, config echo and matplotlib figures.

Every file is written to a temporary sibling and renamed into place, so a
rerun into the same directory never leaves a half-written artifact.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError, ReportIOError  # noqa: E402

REGRET_COLUMNS = ("policy", "round", "cumulative_loss", "cumulative_regret_vs_oracle", "seed")
BOUND_COLUMNS = (
    "seed",
    "policy",
    "n_users",
    "horizon",
    "k",
    "l_hat_centroids",
    "hedge_term",
    "centroid_term",
    "bound",
    "expected_regret",
    "realized_regret",
    "within_bound",
)

POLICY_STYLE = {
    "ewc": dict(color="C3", lw=2.2, label="EWC"),
    "ewc-l2": dict(color="C1", lw=1.6, ls="--", label="EWC (L2 k-means)"),
    "linucb": dict(color="C0", lw=1.6, label="LinUCB"),
    "ftl": dict(color="C2", lw=1.6, label="FTL"),
    "oracle-ftl": dict(color="C4", lw=1.4, ls=":", label="Oracle FTL"),
    "oracle-cluster": dict(color="C5", lw=1.4, ls="-.", label="Oracle cluster"),
    "oracle-theta": dict(color="k", lw=1.2, ls=":", label=r"Oracle $\theta$"),
}

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.fonttype": "path",
    "svg.hashsalt": "ewc",
}


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def regret_rows(report):
    for policy in report.policies:
        cum = report.cumulative_loss[policy]
        reg = report.cumulative_regret(policy)
        for s, seed in enumerate(report.seeds):
            for t in range(report.horizon):
                yield (policy, t + 1, cum[s, t], reg[s, t], seed)


def bound_rows(report):
    for row in report.bound_table():
        yield tuple(row[c] for c in BOUND_COLUMNS)


def export_report(report, directory) -> dict[str, Path]:
    """Write regret.csv, bounds.csv, config.json, summary.json and regret.svg."""
    from .harness import crossover_analysis

    directory = Path(directory)
    paths = {name: directory / name for name in ("regret.csv", "bounds.csv", "config.json", "summary.json", "regret.svg")}
    atomic_write_text(paths["regret.csv"], csv_text(REGRET_COLUMNS, regret_rows(report)))
    atomic_write_text(paths["bounds.csv"], csv_text(BOUND_COLUMNS, bound_rows(report)))
    atomic_write_text(paths["config.json"], json.dumps(report.config, indent=2, sort_keys=True) + "\n")
    summary = report.summary()
    if "ewc" in report.policies and "linucb" in report.policies:
        summary["crossover"] = crossover_analysis(report)
    atomic_write_text(paths["summary.json"], json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    curves = {p: np.median(report.cumulative_regret(p), axis=0) for p in report.policies}
    atomic_write_bytes(paths["regret.svg"], render_regret_svg(curves, n_seeds=len(report.seeds)))
    return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def render_regret_svg(curves: dict, n_seeds: int = 1) -> bytes:
    """Median cumulative regret per policy as a self-contained SVG line chart."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for policy, curve in curves.items():
            style = POLICY_STYLE.get(policy, dict(label=policy))
            rounds = np.arange(1, len(curve) + 1)
            ax.plot(rounds, curve, **style)
        ax.set_xlabel("round")
        ylabel = "cumulative regret vs. oracle"
        ax.set_ylabel(ylabel if n_seeds == 1 else f"median {ylabel} ({n_seeds} seeds)")
        ax.set_xlim(left=1)
        ax.grid(alpha=0.3, lw=0.5)
        ax.legend(frameon=False, loc="upper left")
        fig.tight_layout(pad=0.4)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def render_sweep_svg(ks, medians) -> bytes:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        ax.plot(ks, medians, marker="o", color="C3")
        best = int(np.argmin(medians))
        ax.plot([ks[best]], [medians[best]], marker="*", ms=12, color="k", ls="none", label=f"best K = {ks[best]}")
        ax.set_xlabel("number of clusters K")
        ax.set_ylabel("median holdout regret")
        ax.grid(alpha=0.3, lw=0.5)
        ax.legend(frameon=False)
        fig.tight_layout(pad=0.4)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def load_regret_csv(path) -> dict[str, dict[int, np.ndarray]]:
    """Read regret.csv back into ``{policy: {seed: cumulative regret by round}}``."""
    out: dict[str, dict[int, list]] = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                series = out.setdefault(row["policy"], {}).setdefault(int(row["seed"]), [])
                series.append((int(row["round"]), float(row["cumulative_regret_vs_oracle"])))
    except FileNotFoundError:
        raise DataError(f"no regret table at {path}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed regret table ({exc})") from None
    return {p: {s: np.array([v for _, v in sorted(rows)]) for s, rows in seeds.items()} for p, seeds in out.items()}
