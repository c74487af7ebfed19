"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from ewc import hedge
from ewc.cli import main
from ewc.clustering import CentroidSet
from ewc.core import predict_array
from ewc.harness import REFERENCE_REDUCTION_PCT, ExperimentConfig, run_ewc, run_experiment
from ewc.offline import fit_all_users, fit_user_separator
from ewc.simulation import check_separation, generate_dataset, degenerate_population, separated_population

from conftest import separable_user

pytestmark = pytest.mark.acceptance

ALL_POLICIES = ["ewc", "ewc-l2", "linucb", "ftl", "oracle-ftl", "oracle-cluster", "oracle-theta"]


def test_c1_hedge_regret_bound(record_criterion):
    K, T = 6, 40
    rng = np.random.default_rng(2024)
    limit = 2 * math.sqrt(T * math.log(K))
    start = time.perf_counter()
    worst = -math.inf
    for _ in range(100):
        losses = rng.random((T, K))
        state = hedge.init_uniform(K, hedge.default_eta(K, T))
        total = 0.0
        for row in losses:
            total += float(hedge.expected_loss(state, row))
            state = hedge.update(state, row)
        worst = max(worst, total - losses.sum(axis=0).min())
    elapsed = time.perf_counter() - start
    ok = worst <= limit and elapsed < 1.0
    record_criterion("1 hedge bound", ok, f"worst regret {worst:.3f} <= {limit:.3f}, {elapsed:.2f}s")
    assert worst <= limit
    assert elapsed < 1.0


@pytest.fixture(scope="module")
def benchmark():
    spec = separated_population()
    config = ExperimentConfig(population=spec, n_test=200, n_train=300, t_test=40, t_train=40, k=6, policies=ALL_POLICIES, seeds=list(range(10)))
    start = time.perf_counter()
    report = run_experiment(config)
    return spec, report, time.perf_counter() - start


def test_c2_policy_ordering(benchmark, record_criterion):
    spec, report, elapsed = benchmark
    med = {p: report.median_final_regret(p) for p in report.policies}
    ordering = med["oracle-theta"] <= med["oracle-cluster"] <= med["ewc"] < min(med["linucb"], med["ftl"])
    ftl_vs_hindsight = bool(np.all(report.per_user_loss["ftl"] >= report.per_user_loss["oracle-ftl"]))
    separation = check_separation(spec)
    ok = ordering and ftl_vs_hindsight and separation >= 10 and elapsed < 30
    detail = ", ".join(f"{p}={v:.1f}" for p, v in med.items()) + f"; separation {separation:.0f}x; {elapsed:.1f}s"
    record_criterion("2 policy ordering", ok, detail)
    assert separation >= 10
    assert ordering
    assert ftl_vs_hindsight
    assert elapsed < 30


def test_c3_reduction_vs_linucb(benchmark, record_criterion):
    _, report, _ = benchmark
    lin = report.median_final_regret("linucb")
    reduction = 100 * (lin - report.median_final_regret("ewc")) / lin
    assert report.summary()["ewc_reduction_vs_linucb_pct"] == pytest.approx(reduction)
    record_criterion("3 reduction vs LinUCB", reduction >= 10, f"measured {reduction:.2f}% (reference {REFERENCE_REDUCTION_PCT}%)")
    assert reduction >= 10


def test_c4_loss_guided_vs_l2(record_criterion):
    spec = degenerate_population()
    seeds = list(range(10))
    one_class = np.mean([u.history.is_one_class for s in seeds[:2] for u in generate_dataset(spec, 200, 300, 40, 40, s).train])
    config = ExperimentConfig(population=spec, n_test=200, n_train=300, t_test=40, t_train=40, k=6, policies=["ewc", "ewc-l2"], seeds=seeds)
    start = time.perf_counter()
    report = run_experiment(config)
    elapsed = time.perf_counter() - start
    lg, l2 = report.median_final_regret("ewc"), report.median_final_regret("ewc-l2")
    ok = lg <= l2 and one_class >= 0.2 and elapsed < 60
    record_criterion("4 loss-guided vs L2", ok, f"loss-guided {lg:.1f} vs L2 {l2:.1f}; one-class share {one_class:.0%}; {elapsed:.1f}s")
    assert one_class >= 0.2
    assert lg <= l2
    assert elapsed < 60


def test_c5_bound_holds(record_criterion):
    config = ExperimentConfig(population=separated_population(temperature=0.0), n_test=100, n_train=200, t_test=40, t_train=40, k=6, policies=["ewc"], seeds=list(range(20)))
    start = time.perf_counter()
    report = run_experiment(config)
    elapsed = time.perf_counter() - start
    rows = report.bound_table()
    share = np.mean([r["within_bound"] for r in rows])
    worst = max(r["expected_regret"] / r["bound"] for r in rows)
    ok = len(rows) == 20 and share >= 0.9 and elapsed < 30
    record_criterion("5 regret bound", ok, f"{share:.0%} of 20 seeds within bound (max regret/bound {worst:.2f}); {elapsed:.1f}s")
    assert len(rows) == 20
    assert share >= 0.9
    assert elapsed < 30


def _reference_trajectory(theta, tau, e, y, eta):
    """Weight recursion written with plain floats for one user."""
    probs = [1.0 / len(theta)] * len(theta)
    out = [list(probs)]
    for t in range(len(y)):
        losses = []
        for b, s, o in theta:
            pred = 2 if o * (tau[t] - s * e[t] - b) > 0 else 1
            losses.append(0.0 if pred == y[t] else 1.0)
        w = [p * math.exp(-eta * l) for p, l in zip(probs, losses)]
        z = sum(w)
        probs = [x / z for x in w]
        out.append(list(probs))
    return out


def test_c6_brute_force_weights(record_criterion):
    theta = [(1.2, 0.3, 1.0), (0.6, 0.9, -1.0)]
    tau = np.array([[1.05, 1.40, 1.22, 1.31], [1.48, 1.10, 1.35, 1.02], [1.19, 1.27, 1.44, 1.15]])
    e = np.array([[0.55, 0.90, 0.71, 0.62], [0.98, 0.51, 0.77, 0.84], [0.66, 0.59, 0.93, 0.70]])
    y = np.array([[2, 1, 2, 2], [1, 1, 2, 1], [2, 2, 1, 1]])
    eta = hedge.default_eta(2, 4)
    out = run_ewc(CentroidSet(theta), tau, e, y, eta, np.random.default_rng(0), record=True)
    worst = 0.0
    for i in range(3):
        ref = np.array(_reference_trajectory(theta, tau[i], e[i], y[i], eta))
        worst = max(worst, float(np.max(np.abs(out["probs"][:, i, :] - ref))))
    # the instance must actually move the weights
    assert np.ptp(out["probs"]) > 0.1
    record_criterion("6 brute-force weights", worst <= 1e-12, f"max deviation {worst:.1e}")
    assert worst <= 1e-12


@pytest.fixture(scope="module")
def separable_users():
    rng = np.random.default_rng(7)
    return [separable_user(rng, T=40, margin=0.05)[1] for _ in range(100)]


def test_c7_offline_roundtrip(separable_users, record_criterion):
    start = time.perf_counter()
    fits = fit_all_users(separable_users)
    elapsed = time.perf_counter() - start
    exact = sum(np.array_equal(predict_array(p.as_array(), h.tau, h.e), h.choices) for p, h in zip(fits, separable_users))
    ok = exact == 100 and elapsed < 10
    record_criterion("7 offline round-trip", ok, f"{exact}/100 users reproduced, {elapsed:.2f}s")
    assert exact == 100
    assert elapsed < 10


def test_c7_single_user_fits_match_batch(separable_users):
    batch = fit_all_users(separable_users)
    for h, p in zip(separable_users, batch):
        single = fit_user_separator(h)
        assert single == p
        assert np.array_equal(predict_array(single.as_array(), h.tau, h.e), h.choices)


def test_c8_cli_determinism(tmp_path, record_criterion):
    args = ["run", "--population", "default", "--n-test", "30", "--n-train", "60", "--t-test", "20", "--t-train", "20", "--seed", "0,1"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "regret.csv").read_bytes()
    b = (tmp_path / "b" / "regret.csv").read_bytes()
    record_criterion("8 CLI determinism", a == b, f"regret.csv {len(a)} bytes, identical={a == b}")
    assert a == b
