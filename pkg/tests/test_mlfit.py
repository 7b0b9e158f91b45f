import numpy as np
import pytest

import oracles
from probest.bellmodel import TSIRELSON, conditional_extreme_points, lr_deterministic, nonsignaling_check, pr_box
from probest.datasets import NAMES, embedded_dataset
from probest.mlfit import FitError, FrequencyTable, log_likelihood_ratio, ml_project


def counts_of(table, total=1e6):
    return FrequencyTable.from_distribution(np.asarray(table) * 0.25, total)


@pytest.mark.parametrize("name", NAMES)
def test_embedded_tables_project_to_themselves(name):
    t = embedded_dataset(name).table
    fit = ml_project(counts_of(t), "Q")
    assert np.abs(fit.cond.table - t).max() < 1e-6
    assert fit.kkt_residual <= 1e-8
    assert np.allclose(fit.cond.table.sum(axis=1), 1.0, atol=1e-12)


def test_deterministic_point_is_fixed():
    t = lr_deterministic((0, 1), (1, 1))
    fit = ml_project(counts_of(t, 1000), "NS")
    assert np.abs(fit.cond.table - t).max() < 1e-6
    assert fit.objective == pytest.approx(0.0, abs=1e-8)


def test_pr_box_projection_matches_grid_search():
    freq = counts_of(pr_box((0, 0, 0, 1)), 1000)
    fit = ml_project(freq, "Q")
    # the PR box is symmetric; a 1-D grid along its isotropic family, restricted
    # to Tsirelson-satisfying members, locates the optimum
    best = -np.inf
    for s in np.linspace(0, 1, 200001):
        cand = s * pr_box((0, 0, 0, 1)) + (1 - s) * 0.25
        if max(oracles.bg_value(cand, g) for g in [(0, 0, 0, 1)]) > TSIRELSON + 1e-15:
            break
        best = max(best, oracles.log_likelihood_ratio(freq.counts, cand))
    assert fit.objective == pytest.approx(best, abs=1e-4)
    row = fit.cond.table[3]
    assert row[1] == pytest.approx((2 + np.sqrt(2)) / 8, abs=1e-6)


@pytest.mark.parametrize("kind", ["NS", "Q"])
def test_matches_conic_oracle_on_noisy_counts(kind):
    rng = np.random.default_rng(11)
    t = embedded_dataset("atoms").table
    counts = np.array([rng.multinomial(500, row) for row in t], float)
    fit = ml_project(FrequencyTable(counts), kind)
    _, oracle_obj = oracles.ml_fit(counts, [p.table for p in conditional_extreme_points(kind)])
    assert fit.objective >= oracle_obj - 1e-7
    assert fit.objective == pytest.approx(oracle_obj, abs=1e-6)


def test_properties_of_the_fit():
    rng = np.random.default_rng(5)
    counts = np.array([rng.multinomial(300, row) for row in embedded_dataset("atoms").table], float)
    freq = FrequencyTable(counts)
    fit = ml_project(freq, "Q")
    assert fit.objective <= 0.0
    for v in conditional_extreme_points("Q"):
        assert fit.objective >= log_likelihood_ratio(freq, v.table) - 1e-12
    assert nonsignaling_check(fit.cond, 1e-9).passed
    assert max(oracles.bg_value(fit.cond.table, g) for g in oracles.odd_functions()) <= TSIRELSON + 1e-9
    again = ml_project(counts_of(fit.cond.table, 1e6), "Q")
    assert np.abs(again.cond.table - fit.cond.table).max() < 1e-8
    assert np.allclose(fit.settings_freqs, counts.sum(axis=1) / counts.sum())


def test_unobserved_setting_is_rejected():
    counts = np.ones((4, 4))
    counts[2] = 0
    with pytest.raises(ValueError):
        ml_project(FrequencyTable(counts), "NS")


def test_impossible_cell_is_reported():
    with pytest.raises(FitError):
        ml_project(counts_of(np.full((4, 4), 0.25)), "NS", vertices=[lr_deterministic((0, 0), (0, 0))])


def test_frequency_table_validation():
    with pytest.raises(ValueError):
        FrequencyTable(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        FrequencyTable(-np.ones((4, 4)))
