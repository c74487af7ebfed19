import csv
import json
import math
import os

import numpy as np
import pytest

from ewc import hedge
from ewc.clustering import CentroidSet
from ewc.core import TravelContext
from ewc.errors import ConfigError, ReportIOError
from ewc.harness import (
    POLICIES,
    ExperimentConfig,
    RegretReport,
    crossover_analysis,
    ewc_policy_round,
    hedge_term,
    linucb_bound_shape,
    normalize_policy,
    oracle_ftl_condition,
    run_ewc,
    run_experiment,
    run_linucb,
    sweep_k,
    best_k,
    theoretical_bound,
)
from ewc.report import REGRET_COLUMNS, atomic_write_text, export_report, load_regret_csv

SMALL = dict(population="separated", n_test=12, n_train=30, t_test=8, t_train=12, k=3, svm_iterations=500)


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(ExperimentConfig(policies=list(POLICIES), seeds=[0, 1], **SMALL))


def test_bound_formula():
    assert theoretical_bound(10, 40, 6, 0.05) == pytest.approx(20 * math.sqrt(40 * math.log(6)) + 40 * 10 * 0.05)
    assert hedge_term(5, 9, 1) == 0.0
    with pytest.raises(ValueError):
        theoretical_bound(0, 1, 1, 0.0)
    with pytest.raises(ValueError):
        theoretical_bound(1, 1, 1, -0.1)


def test_linucb_bound_shape():
    s = linucb_bound_shape(3, np.array([1, 2, 10]))
    assert np.isnan(s[0])
    arg = 2 * 10 * math.log(10) / 0.1
    assert s[2] == pytest.approx(3 * math.sqrt(10 * 2 * math.log(arg) ** 3))


def test_normalize_policy():
    assert normalize_policy("Oracle_FTL") == "oracle-ftl"
    with pytest.raises(ConfigError):
        normalize_policy("ucb2")


@pytest.mark.parametrize(
    "kwargs",
    [dict(policies=[]), dict(policies=["ewc", "ewc"]), dict(seeds=[]), dict(k=0), dict(eta=0.0), dict(linucb_delta=1.0), dict(hedge_mode="x"), dict(n_test=0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"k": 3, "horizon": 5})
    assert ExperimentConfig.from_dict({"k": 3}).k == 3


def test_config_digest_ignores_out_dir():
    assert ExperimentConfig(out_dir="a").digest() == ExperimentConfig(out_dir="b").digest()
    assert ExperimentConfig(k=5).digest() != ExperimentConfig(k=6).digest()


def test_policy_round_single_expert():
    c = CentroidSet([[1.0, 0.0, 1.0]])
    state = hedge.init_uniform(1, 1.0)
    rec, realized, expected, state = ewc_policy_round(state, c, TravelContext(1.2, 0.7), 1, np.random.default_rng(0))
    assert rec == 2 and realized == 1.0 and expected == 1.0
    assert state.probs.tolist() == [1.0]


def test_run_ewc_single_expert_equals_prediction(rng):
    c = CentroidSet([[1.0, 0.3, -1.0]])
    tau, e = rng.uniform(1, 1.5, (5, 9)), rng.uniform(0.5, 1, (5, 9))
    y = rng.integers(1, 3, (5, 9))
    out = run_ewc(c, tau, e, y, 0.5, rng)
    m = -1.0 * (tau - 0.3 * e - 1.0)
    assert np.array_equal(out["recommendations"], np.where(m > 0, 2, 1))
    assert np.array_equal(out["realized"], out["expected"])


def test_run_ewc_argmax_mode_deterministic(rng):
    c = CentroidSet([[1.0, 0.0, 1.0], [1.0, 0.0, -1.0]])
    tau, e = rng.uniform(1, 1.5, (3, 6)), rng.uniform(0.5, 1, (3, 6))
    y = rng.integers(1, 3, (3, 6))
    a = run_ewc(c, tau, e, y, 1.0, np.random.default_rng(0), "argmax")
    b = run_ewc(c, tau, e, y, 1.0, np.random.default_rng(99), "argmax")
    assert np.array_equal(a["recommendations"], b["recommendations"])


def test_run_linucb_shape(rng):
    tau, e = rng.uniform(1, 1.5, (4, 7)), rng.uniform(0.5, 1, (4, 7))
    y = rng.integers(1, 3, (4, 7))
    losses = run_linucb(tau, e, y, 1.0)
    assert losses.shape == (4, 7) and set(np.unique(losses)) <= {0.0, 1.0}


def test_streams_identical_across_policies(small_report):
    for digests in small_report.stream_digests:
        assert len(set(digests.values())) == 1
        assert set(digests) == set(POLICIES)
    assert small_report.stream_digests[0]["ewc"] != small_report.stream_digests[1]["ewc"]


def test_regret_identity_and_monotonicity(small_report):
    r = small_report
    for p in r.policies:
        cum = r.cumulative_loss[p]
        assert np.all(np.diff(cum, axis=1) >= 0)
        assert np.allclose(r.cumulative_regret(p), cum - r.oracle_cumulative)
        assert np.allclose(cum[:, -1], r.per_user_loss[p].sum(axis=1))
    assert np.allclose(r.cumulative_regret("oracle-theta"), 0)


def test_bound_table(small_report):
    rows = small_report.bound_table()
    assert {r["policy"] for r in rows} == {"ewc", "ewc-l2"}
    for row in rows:
        assert row["bound"] == pytest.approx(theoretical_bound(12, 8, 3, row["l_hat_centroids"]))
        assert row["hedge_term"] + row["centroid_term"] == pytest.approx(row["bound"])


def test_summary(small_report):
    s = small_report.summary()
    assert set(s["median_final_regret"]) == set(POLICIES)
    assert s["reference_reduction_pct"] == 27.57


def test_export_report(small_report, tmp_path):
    paths = export_report(small_report, tmp_path)
    for p in paths.values():
        assert p.exists() and p.stat().st_size > 0
    with open(paths["regret.csv"]) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == REGRET_COLUMNS
    assert len(rows) - 1 == len(POLICIES) * 2 * 8
    summary = json.loads(paths["summary.json"].read_text())
    assert "crossover" in summary
    assert json.loads(paths["config.json"].read_text())["k"] == 3
    assert paths["regret.svg"].read_bytes().startswith(b"<?xml")
    table = load_regret_csv(paths["regret.csv"])
    assert np.allclose(table["ewc"][1], small_report.cumulative_regret("ewc")[1])


def test_export_overwrites_atomically(small_report, tmp_path):
    first = export_report(small_report, tmp_path)["regret.csv"].read_bytes()
    export_report(small_report, tmp_path)
    assert (tmp_path / "regret.csv").read_bytes() == first
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".")]


def test_atomic_write_failure_leaves_target(tmp_path):
    target = tmp_path / "f.txt"
    target.write_text("old")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportIOError):
        atomic_write_text(blocker / "sub" / "g.txt", "new")
    assert target.read_text() == "old"


def _synthetic_report(ewc_curve, lin_curve, n=10, k=4, l_hat=0.1, p=None):
    T = len(ewc_curve)
    zeros = np.zeros((1, T))
    return RegretReport(
        policies=["ewc", "linucb"],
        seeds=[0],
        horizon=T,
        n_users=n,
        k=k,
        cumulative_loss={"ewc": np.array([ewc_curve], float), "linucb": np.array([lin_curve], float)},
        oracle_cumulative=zeros,
        expected_cumulative={"ewc": np.array([ewc_curve], float)},
        per_user_loss={},
        l_hat_centroids={"ewc": np.array([l_hat])},
        p_choice1=np.full(n, 0.5) if p is None else np.asarray(p),
        stream_digests=[],
        centroids={},
        config={},
        config_hash="x",
    )


def test_crossover_none():
    rep = _synthetic_report(np.arange(1, 11), np.arange(1, 11) * 3)
    out = crossover_analysis(rep)
    assert out["empirical_crossover_round"] is None
    assert out["empirical_crossover"] == "none within horizon"


def test_crossover_found_with_equality():
    ewc = np.array([1, 2, 3, 4, 5, 6])
    lin = np.array([3, 4, 5, 4, 4, 4])
    out = crossover_analysis(_synthetic_report(ewc, lin))
    assert out["empirical_crossover_round"] == 4


def test_crossover_threshold():
    T = np.arange(1, 41)
    shape = linucb_bound_shape(10, T)
    lin = np.nan_to_num(shape) * 5.0
    out = crossover_analysis(_synthetic_report(np.zeros(40), lin, l_hat=0.5))
    assert out["fitted_linucb_constant"] == pytest.approx(5.0)
    assert out["predicted_threshold_rounds"] == pytest.approx(((5.0 - 2.0) / 0.5) ** 2)
    zero = crossover_analysis(_synthetic_report(np.zeros(40), lin, l_hat=0.0))
    assert zero["predicted_threshold_rounds"] == math.inf


def test_oracle_ftl_condition():
    p = np.array([0.5, 0.5])
    assert oracle_ftl_condition(0.1, p, 4, 10_000)
    assert not oracle_ftl_condition(0.1, p, 4, 10)
    assert not oracle_ftl_condition(0.0, np.array([1.0, 0.0]), 4, 100)


def test_sweep_k():
    config = ExperimentConfig(seeds=[0], **{**SMALL, "n_train": 40})
    rows = sweep_k(config, ks=[1, 2, 4])
    assert [r["k"] for r in rows] == [1, 2, 4]
    assert best_k(rows) in (1, 2, 4)
    with pytest.raises(ConfigError):
        sweep_k(config, ks=[31])


def test_bound_examples():
    assert theoretical_bound(1, 40, 6, 0.0) == pytest.approx(16.93, abs=0.01)
    assert theoretical_bound(7, 40, 1, 0.25) == pytest.approx(40 * 7 * 0.25)
    assert theoretical_bound(800, 40, 6, 0.05) == pytest.approx(15_146, abs=2)


def test_policy_round_worked_example():
    c = CentroidSet([[1.0, 0.0, 1.0], [1.0, 0.0, -1.0]])  # at (1.2, 0.7): expert 0 says 2, expert 1 says 1
    state = hedge.init_uniform(2, 1.0)
    rec, realized, expected, state = ewc_policy_round(state, c, TravelContext(1.2, 0.7), 2, np.random.default_rng(0))
    assert expected == pytest.approx(0.5)
    assert np.allclose(state.probs, [0.7311, 0.2689], atol=1e-4)
    assert realized == (0.0 if rec == 2 else 1.0)


def test_policy_round_all_experts_right():
    c = CentroidSet([[1.0, 0.0, 1.0], [0.9, 0.1, 1.0]])
    state = hedge.HedgeState(np.array([0.3, 0.7]), 1.0, np.zeros(2))
    _, realized, _, new = ewc_policy_round(state, c, TravelContext(1.4, 0.7), 2, np.random.default_rng(0))
    assert realized == 0.0 and np.allclose(new.probs, [0.3, 0.7])


def test_crossover_identical_curves_round_one():
    curve = np.arange(1, 6)
    assert crossover_analysis(_synthetic_report(curve, curve))["empirical_crossover_round"] == 1


def test_ftl_condition_threshold():
    # l_hat = 0, p = 0.5: holds exactly when 2 sqrt(ln K / T) < 0.5
    K = 6
    T_star = 16 * math.log(K)
    assert not oracle_ftl_condition(0.0, np.full(4, 0.5), K, int(math.floor(T_star)))
    assert oracle_ftl_condition(0.0, np.full(4, 0.5), K, int(math.ceil(T_star)) + 1)


def test_oracle_only_noise_free_is_flat_zero():
    config = ExperimentConfig(population="separated", policies=["oracle-theta"], n_test=20, n_train=1, t_test=40, t_train=1, seeds=[0, 1])
    rep = run_experiment(config)
    assert rep.cumulative_loss["oracle-theta"].shape == (2, 40)
    assert np.all(rep.cumulative_regret("oracle-theta") == 0)


def test_regret_csv_row_count(tmp_path):
    config = ExperimentConfig(population="default", policies=["ftl", "oracle-ftl", "oracle-theta"], n_test=15, n_train=1, t_test=40, t_train=1, seeds=list(range(5)))
    export_report(run_experiment(config), tmp_path)
    lines = (tmp_path / "regret.csv").read_text().splitlines()
    assert len(lines) == 3 * 40 * 5 + 1


def test_repeated_experiment_identical():
    config = ExperimentConfig(policies=["ewc", "linucb"], seeds=[3], **SMALL)
    a, b = run_experiment(config), run_experiment(config)
    for p in ("ewc", "linucb"):
        assert np.array_equal(a.cumulative_loss[p], b.cumulative_loss[p])
    assert a.config_hash == b.config_hash


def test_too_few_users_error():
    from ewc.errors import TooFewUsersError

    config = ExperimentConfig(population="separated", n_test=3, n_train=4, t_test=5, t_train=5, k=6, policies=["ewc"])
    with pytest.raises(TooFewUsersError):
        run_experiment(config)


def test_zero_variance_cluster_oracle_matches_theta_oracle():
    spec = {"components": [{"weight": 1.0, "mean": [1.2, 0.1, 1.0], "std": 0.0}], "noise_temperature": 0.3}
    config = ExperimentConfig(population=spec, policies=["oracle-cluster", "oracle-theta"], n_test=10, n_train=1, t_test=30, t_train=1)
    rep = run_experiment(config)
    assert np.array_equal(rep.cumulative_loss["oracle-cluster"], rep.cumulative_loss["oracle-theta"])
    assert rep.cumulative_loss["oracle-theta"][0, -1] > 0
