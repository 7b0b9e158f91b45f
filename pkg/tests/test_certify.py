import math

import numpy as np
import pytest

import oracles
from probest.bellmodel import (
    JointDistribution,
    SettingsDistribution,
    bell_function,
    lr_deterministic,
    pr_box,
    semidirect,
    standard_model,
)
from probest.certify import (
    SessionError,
    TrialRecord,
    Trials,
    accumulate,
    accumulate_many,
    adaptive_run,
    load_checkpoint,
    lr_pvalue_bound,
    new_session,
    report,
    save_checkpoint,
    static_run,
)
from probest.datasets import embedded_dataset
from probest.pefopt import PEF, LN2, log_prob_rate, optimize_pef
from probest.mlfit import ml_project
from probest.simulate import make_rng, sample_drifting, sample_trials

UNIFORM = SettingsDistribution.uniform()


@pytest.fixture(scope="module")
def atoms_rho():
    return semidirect(embedded_dataset("atoms"), UNIFORM)


def test_new_session_validation():
    s = new_session(1e-4, 2.0**-64, 10**8)
    assert s.log2_T == 0.0 and s.n == 0 and s.threshold_q is None
    with pytest.raises(ValueError):
        new_session(1e-4, 1.0, 10)
    with pytest.raises(ValueError):
        new_session(0.0, 0.1, 10)
    with pytest.raises(ValueError):
        new_session(0.1, 0.1, 0)


def test_trivial_pef_gives_trivial_bound():
    beta, eps = 0.5, 0.01
    s = new_session(beta, eps, 100)
    for tr in sample_trials(embedded_dataset("atoms"), UNIFORM, 100, 1):
        accumulate(s, tr, PEF.unit(beta))
    assert s.log2_T == 0.0
    assert report(s).u_final == pytest.approx(eps ** (-1 / beta))


def test_single_trial_arithmetic():
    s = new_session(1.0, 0.25, 1)
    accumulate(s, TrialRecord(0, 0, 0, 0), PEF(np.full((4, 4), 2.0), 1.0))
    assert s.log2_T == pytest.approx(1.0)
    s = new_session(1.0, 0.25, 1)
    accumulate(s, TrialRecord(1, 1, 0, 1), PEF.unit(1.0))
    assert report(s).net_log2_prob == pytest.approx(-2.0)
    assert report(s).sigma_h == 0.0


def test_monte_carlo_log_prob_rate(atoms_rho):
    beta = 1e-4
    F = optimize_pef(standard_model("Q"), atoms_rho, beta)
    trials = sample_trials(embedded_dataset("atoms"), UNIFORM, 10**5, 2024)
    rep = static_run(trials, F, 0.5)
    per_trial = F.log_values[trials.z, trials.c] / (LN2 * beta)
    se = per_trial.std() / math.sqrt(len(trials))
    rate = (rep.net_log2_prob + math.log2(1 / 0.5) / beta) / len(trials)
    assert abs(rate - log_prob_rate(F, beta, atoms_rho)) <= 3 * se
    assert abs(rate - 0.191) <= 3 * se + 2e-3


def test_runningmax_and_prefix_max(atoms_rho):
    F = optimize_pef(standard_model("NS"), atoms_rho, 0.05)
    trials = sample_trials(embedded_dataset("atoms"), UNIFORM, 5000, 8)
    s = new_session(0.05, 1e-3, len(trials))
    for tr in trials:
        accumulate(s, tr, F)
        assert s.log2_T_max >= s.log2_T
    path = np.cumsum(F.log_values[trials.z, trials.c] / LN2)
    assert s.log2_T == pytest.approx(path[-1], rel=1e-12)
    assert s.log2_T_max == pytest.approx(max(0.0, path.max()), rel=1e-12)
    rep = report(s)
    assert rep.u_runningmax <= rep.u_final
    fast = accumulate_many(new_session(0.05, 1e-3, len(trials)), trials, F)
    assert fast.log2_T == pytest.approx(s.log2_T, rel=1e-12)
    assert fast.log2_T_max == pytest.approx(s.log2_T_max, rel=1e-12)


def test_freeze_on_threshold_and_reject_afterwards(atoms_rho):
    F = optimize_pef(standard_model("Q"), atoms_rho, 0.05)
    trials = sample_trials(embedded_dataset("atoms"), UNIFORM, 20000, 3)
    q = 2.0**-200
    s = new_session(0.05, 1e-3, len(trials), threshold_q=q)
    accumulate_many(s, trials, F)
    assert s.frozen and s.n < len(trials)
    assert s.log2_u_final <= -200
    with pytest.raises(SessionError):
        accumulate(s, trials[0], F)
    # the trial-by-trial loop stops at the same trial
    s2 = new_session(0.05, 1e-3, len(trials), threshold_q=q)
    for tr in trials:
        accumulate(s2, tr, F)
        if s2.frozen:
            break
    assert s2.n == s.n


def test_zero_factor_fails_session():
    vals = np.ones((4, 4))
    vals[0, 0] = 0.0
    s = new_session(0.1, 0.1, 10)
    accumulate(s, TrialRecord(0, 0, 0, 0), PEF(vals, 0.1))
    assert s.failed and s.log2_T == -math.inf
    with pytest.raises(SessionError):
        accumulate(s, TrialRecord(0, 0, 0, 0), PEF(vals, 0.1))


def test_power_mismatch_rejected():
    s = new_session(0.1, 0.1, 10)
    with pytest.raises(ValueError):
        accumulate(s, TrialRecord(0, 0, 0, 0), PEF.unit(0.2))


def test_budget_exhaustion():
    s = new_session(0.1, 0.1, 1)
    accumulate(s, TrialRecord(0, 0, 0, 0), PEF.unit(0.1))
    with pytest.raises(SessionError):
        accumulate(s, TrialRecord(0, 0, 0, 0), PEF.unit(0.1))


def test_empty_report_rejected():
    with pytest.raises(SessionError):
        report(new_session(0.1, 0.1, 1))


def test_supermartingale_mean_at_vertices(atoms_rho):
    model = standard_model("Q")
    F = optimize_pef(model, atoms_rho, 0.05)
    rng = make_rng(12)
    for k in range(0, len(model), 9):
        v = model.vertices[k].reshape(-1)
        cells = rng.choice(16, size=20000, p=v)
        f = F.values.reshape(-1)[cells] * (model.conditionals()[k].reshape(-1)[cells]) ** 0.05
        assert f.mean() <= 1 + 3 * f.std() / math.sqrt(len(f))


def test_lr_pvalue_trivial_and_pr_box():
    trials = sample_trials(pr_box((0, 0, 0, 1)), UNIFORM, 100, 4)
    assert lr_pvalue_bound(trials, np.ones((4, 4))) == 1.0
    factor = 1.0 + bell_function("CHSH").values
    p = lr_pvalue_bound(trials, factor)
    # on PR-box trials 1+B is 2 at xy=11 and 1 elsewhere, so log2 T counts xy=11 trials
    n11 = int(np.sum(trials.z == 3))
    assert p == pytest.approx(2.0**-n11)
    expected_log = 100 * 0.25 * 1.0
    assert np.log2(factor[trials.z, trials.c]).sum() == n11
    assert abs(n11 - expected_log) <= 4 * math.sqrt(100 * 0.25 * 0.75)


def test_lr_pvalue_rejects_invalid_factor():
    with pytest.raises(ValueError):
        lr_pvalue_bound(sample_trials(pr_box((0, 0, 0, 1)), UNIFORM, 10, 0), np.full((4, 4), 1.5))


def test_lr_pvalue_coverage():
    """Under an LR source p <= 0.05 happens with probability at most 0.05."""
    # this strategy makes 1 + 0.9 B a mean-one martingale, the tightest LR case
    source = lr_deterministic((0, 0), (0, 1))
    factor = 1.0 + 0.9 * bell_function("CHSH").values
    rng = make_rng(99)
    runs, n = 10_000, 40
    joint = (source * 0.25).reshape(-1)
    cells = rng.choice(16, size=(runs, n), p=joint)
    logs = np.cumsum(np.log2(factor.reshape(-1)[cells]), axis=1)
    pvals = np.minimum(1.0, 2.0 ** -np.maximum(0.0, logs.max(axis=1)))
    assert np.mean(pvals <= 0.05) <= oracles.binomial_upper(0.05, runs)
    z, c = cells[0] // 4, cells[0] % 4
    tr = Trials(z & 1, z >> 1, c & 1, c >> 1)
    assert lr_pvalue_bound(tr, factor) == pytest.approx(pvals[0])


def _warm_pef(trials, kind, model, beta):
    fit = ml_project(trials.frequency_table(), kind)
    return optimize_pef(model, JointDistribution(fit.cond.table * fit.settings_freqs[:, None]), beta)


def test_adaptive_matches_oracle_on_stationary_source():
    model = standard_model("Q")
    beta, eps, warmup = 0.05, 1e-3, 2_000
    cond = embedded_dataset("ions")
    trials = sample_trials(cond, UNIFORM, 10**5, 77)
    res = adaptive_run(trials, model, beta, eps, cadence=2_000, warmup=warmup)
    F = optimize_pef(model, semidirect(cond, UNIFORM), beta)
    oracle = F.log_values[trials.z, trials.c].sum() / LN2
    assert res.refits == 49
    assert res.state.log2_T == pytest.approx(oracle, rel=0.05)


def test_adaptive_tracks_drift():
    model = standard_model("Q")
    beta, eps, warmup = 0.01, 1e-3, 5_000
    trials = sample_drifting([embedded_dataset("atoms"), embedded_dataset("ions")], [30_000, 60_000], UNIFORM, 5)
    res = adaptive_run(trials, model, beta, eps, cadence=5_000, warmup=warmup)
    static = static_run(trials[warmup:], _warm_pef(trials[:warmup], "Q", model, beta), eps)
    assert res.report.net_log2_prob >= static.net_log2_prob


def test_cadence_longer_than_stream_is_single_refit():
    model = standard_model("NS")
    trials = sample_trials(embedded_dataset("atoms"), UNIFORM, 3000, 6)
    res = adaptive_run(trials, model, 0.05, 0.01, cadence=10**6, warmup=1000)
    assert res.refits == 1
    F = _warm_pef(trials[:1000], "NS", model, 0.05)
    expected = F.log_values[trials.z[1000:], trials.c[1000:]].sum() / LN2
    assert res.state.log2_T == pytest.approx(expected, rel=1e-10)


def test_checkpoint_round_trip(tmp_path, atoms_rho):
    F = optimize_pef(standard_model("Q"), atoms_rho, 0.02)
    trials = sample_trials(embedded_dataset("atoms"), UNIFORM, 4000, 10)
    s = accumulate_many(new_session(0.02, 1e-4, 4000), trials[:2000], F)
    save_checkpoint(s, tmp_path / "ck.txt")
    resumed = load_checkpoint(tmp_path / "ck.txt")
    assert (resumed.n, resumed.log2_T, resumed.log2_T_max) == (s.n, s.log2_T, s.log2_T_max)
    accumulate_many(resumed, trials[2000:], F)
    whole = accumulate_many(new_session(0.02, 1e-4, 4000), trials, F)
    assert resumed.log2_T == pytest.approx(whole.log2_T, rel=1e-12)


def test_trials_container():
    recs = [TrialRecord(0, 1, 1, 0), TrialRecord(1, 1, 0, 0, None)]
    tr = Trials.from_records(recs)
    assert len(tr) == 2 and tr[0] == recs[0]
    assert tr.z.tolist() == [2, 3] and tr.c.tolist() == [1, 0]
    with pytest.raises(ValueError):
        TrialRecord(2, 0, 1, 1)
    with pytest.raises(ValueError):
        Trials([0], [1], [0], [2])
