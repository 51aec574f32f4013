import numpy as np
import pytest

from deconfounder import factor as fm
from deconfounder.check import CheckConfig, aggregate, check_outcome, run_check, score_fit, tail_score
from deconfounder.data import Dataset, split_holdout
from deconfounder.errors import SpecError
from deconfounder.rng import RngStream
from deconfounder.outcome import OutcomeModelSpec


def real(A, y=None):
    n, m = A.shape
    return Dataset(A, np.zeros(n) if y is None else y, ("real",) * m, tuple(f"a{j}" for j in range(m)))


def test_tail_score_counts_ties_half():
    assert tail_score([1.0, 2.0, 3.0, 4.0], 2.5) == 0.5
    assert tail_score([1.0, 2.0, 2.0, 4.0], 2.0) == pytest.approx(0.25 + 0.25)
    assert tail_score([5.0, 6.0], 1.0) == 0.0


def test_aggregate_modes():
    t_obs = np.array([1.0, np.nan, 3.0])
    t_rep = np.array([[0.0, 2.0], [np.nan, np.nan], [4.0, 5.0]])
    scores = np.array([0.5, np.nan, 0.0])
    assert aggregate(t_obs, t_rep, scores, "mean") == 0.25
    # pooled: t_obs sum 4 against replicate sums [4, 7]
    assert aggregate(t_obs, t_rep, scores, "pooled") == 0.25


def test_check_config_validation():
    with pytest.raises(SpecError):
        CheckConfig(threshold=1.5)
    with pytest.raises(SpecError):
        CheckConfig(aggregation="median")


def test_matched_model_passes_and_misfit_fails():
    gen = np.random.default_rng(0)
    Z = gen.standard_normal((300, 2))
    A = Z @ gen.standard_normal((2, 10)) * 2 + 0.5 * gen.standard_normal((300, 10))
    cfg = CheckConfig(replicates=50, z_samples=50)
    good = run_check(fm.PPCASpec(k=2), real(A), cfg, 1)
    assert good.passed and 0.3 < good.score < 0.7
    # a fixed noise variance far below the truth makes held-out data look too extreme
    bad = run_check(fm.PPCASpec(k=2, learn_noise=False, noise_var=0.01), real(A), cfg, 1)
    assert not bad.passed and bad.score < 0.05


def test_report_shapes_and_determinism():
    gen = np.random.default_rng(1)
    A = gen.standard_normal((60, 6))
    cfg = CheckConfig(replicates=20, z_samples=10)
    r1 = run_check(fm.PPCASpec(k=1, max_iter=30), real(A), cfg, 5)
    r2 = run_check(fm.PPCASpec(k=1, max_iter=30), real(A), cfg, 5, threads=3)
    assert r1.to_json(include_replicates=True) == r2.to_json(include_replicates=True)
    assert r1.t_rep.shape == (60, 20)
    held = split_holdout(A, cfg.holdout, RngStream(5).child("holdout")).mask
    assert np.isnan(r1.scores[~held.any(axis=1)]).all()
    assert r1.skipped == int((~held.any(axis=1)).sum())


def test_scores_follow_rows_under_permutation():
    gen = np.random.default_rng(2)
    A = gen.standard_normal((40, 5))
    mask = split_holdout(A, 0.4, 0).mask
    fit = fm.fit(fm.PPCASpec(k=1, max_iter=20), real(A), mask, rng=0)
    cfg = CheckConfig(replicates=20, z_samples=10)
    r = score_fit(fit, A, mask, cfg, 3)
    perm = gen.permutation(40)
    # the same fit on permuted rows: the posterior of row i moves with it
    fit_p = fm.fit(fm.PPCASpec(k=1, max_iter=20), real(A[perm]), mask[perm], rng=0)
    r_p = score_fit(fit_p, A[perm], mask[perm], cfg, 3)
    np.testing.assert_allclose(r_p.t_obs, r.t_obs[perm], rtol=1e-6)


def test_outcome_check():
    gen = np.random.default_rng(3)
    z = gen.standard_normal(400)
    A = np.column_stack([z + gen.standard_normal(400) for _ in range(4)])
    y = A.sum(axis=1) + z + gen.standard_normal(400)
    d = real(A, y)
    fit = fm.fit(fm.PPCASpec(k=1), d, rng=0)
    rep = check_outcome(OutcomeModelSpec(), d, fit, None, CheckConfig(replicates=50), 0)
    assert rep.passed
    assert np.isfinite(rep.extra["heldout_loglik"])
    assert (~np.isnan(rep.scores)).sum() == 400 - rep.skipped


def test_score_direction_under_noise_misfit():
    gen = np.random.default_rng(0)
    Z = gen.standard_normal((300, 2))
    A = Z @ gen.standard_normal((2, 10)) * 2 + 0.5 * gen.standard_normal((300, 10))
    cfg = CheckConfig(replicates=50, z_samples=50)

    def score(noise_var):
        return run_check(fm.PPCASpec(k=2, learn_noise=False, noise_var=noise_var), real(A), cfg, 3).score

    matched = score(0.25)
    # too little noise: observed data look too extreme, score drops
    assert score(0.25 / 9) < matched - 0.2
    # too much noise: replicates are the extreme ones, score rises
    assert score(0.25 * 9) > matched + 0.2
