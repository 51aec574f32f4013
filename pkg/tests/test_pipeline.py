import numpy as np
import pytest

from deconfounder import factor as fm
from deconfounder.check import CheckConfig
from deconfounder.data import Dataset
from deconfounder.errors import SpecError
from deconfounder.metrics import rmse
from deconfounder.outcome import OutcomeModelSpec
from deconfounder.pipeline import (PipelineConfig, estimate_with_fit, mask_causes_experiment, no_control,
                                   oracle, overlap_diagnostics, run, uncertainty)
from deconfounder.rng import RngStream
from deconfounder.simulate import SimTruth

FAST = CheckConfig(replicates=30, z_samples=30)


def confounded(n=600, m=10, seed=0):
    gen = np.random.default_rng(seed)
    z = gen.standard_normal((n, 1))
    A = z @ gen.normal(1.0, 0.3, (1, m)) + 0.7 * gen.standard_normal((n, m))
    beta = np.zeros(m)
    beta[:3] = [1.0, -0.5, 0.5]
    y = A @ beta + 2.0 * z[:, 0] + gen.standard_normal(n)
    d = Dataset(A, y, ("real",) * m, tuple(f"a{j}" for j in range(m)))
    return d, SimTruth(beta, d.cause_names, z[:, 0])


def test_deconfounder_beats_no_control():
    d, truth = confounded()
    cfg = PipelineConfig(check=FAST, outcome=OutcomeModelSpec(penalty=1.0), outcome_check=True)
    est = run(d, [fm.PPCASpec(k=1)], cfg, rng=0)
    base = no_control(d, cfg.outcome)
    orc = oracle(d, truth.confounder, cfg.outcome)
    assert est.passed and est.outcome_check is not None
    # linear-Gaussian confounding is largely absorbed by the other causes, so
    # the gain over no control is real but modest
    assert rmse(est.beta, truth.beta) < rmse(base.beta, truth.beta)
    assert rmse(orc.beta, truth.beta) < rmse(base.beta, truth.beta)
    for j, name in enumerate(d.cause_names):
        assert est.effects[name] == pytest.approx(est.beta[j])


def test_first_passing_candidate_is_accepted():
    d, _ = confounded(n=300)
    bad = fm.PPCASpec(k=1, learn_noise=False, noise_var=0.01)
    good = fm.PPCASpec(k=1)
    est = run(d, [bad, good, fm.PPCASpec(k=2)], PipelineConfig(check=FAST, outcome_check=False), rng=1)
    assert est.spec == good
    assert [c["passed"] for c in est.candidates] == [False, True]
    none_pass = run(d, [bad], PipelineConfig(check=FAST, outcome_check=False), rng=1)
    assert not none_pass.passed and none_pass.spec == bad


def test_candidate_errors_are_skipped():
    d, _ = confounded(n=200)
    est = run(d, [fm.PoissonFactorSpec(k=1), fm.PPCASpec(k=1)],
              PipelineConfig(check=FAST, outcome_check=False), rng=0)
    assert est.spec == fm.PPCASpec(k=1)
    assert "error" in est.candidates[0]


def test_uncertainty_draws():
    d, _ = confounded(n=300)
    fit = fm.fit(fm.PPCASpec(k=1), d, rng=0)
    spec = OutcomeModelSpec(penalty=1.0)
    unc = uncertainty(d, fit, spec, 8, RngStream(0))
    assert unc.samples.shape == (8, d.m)
    assert np.all(unc.variance > 0) and np.all(unc.q025 <= unc.q975)
    frozen = uncertainty(d, fit, spec, 4, RngStream(0), scale=0.0)
    np.testing.assert_allclose(frozen.variance, 0.0, atol=1e-20)
    again = uncertainty(d, fit, spec, 8, RngStream(0), threads=3)
    np.testing.assert_array_equal(again.samples, unc.samples)
    with pytest.raises(SpecError):
        PipelineConfig(samples=1)


def test_overlap_diagnostics():
    d, _ = confounded(n=200)
    fit = fm.fit(fm.PPCASpec(k=1), d, rng=0)
    diag = overlap_diagnostics(fit)
    assert diag.kind == "variance" and not diag.warning
    assert diag.quantiles["median"] == pytest.approx(fit.noise_var)
    tight = overlap_diagnostics(fit, floor=10.0)
    assert tight.warning


def test_estimate_json_has_uncertainty_and_contrast():
    d, _ = confounded(n=200)
    fit = fm.fit(fm.PPCASpec(k=1), d, rng=0)
    a = np.ones(d.m)
    cfg = PipelineConfig(outcome=OutcomeModelSpec(penalty=1.0), samples=3, outcome_check=False)
    est = estimate_with_fit(d, fit, cfg, 0, contrasts=[("all", a, np.zeros(d.m))])
    out = est.to_dict()
    assert out["effects"]["all"] == pytest.approx(est.beta.sum())
    assert len(out["uncertainty"]["samples"]) == 3
    assert out["conditioning"] == "z"


def test_masking_zero_percent_reproduces_plain_run():
    d, truth = confounded(n=300, m=12)
    cfg = PipelineConfig(check=FAST, outcome=OutcomeModelSpec(penalty=1.0), outcome_check=False)
    rows = mask_causes_experiment(d, truth, [0, 50], [fm.PPCASpec(k=1)], cfg, RngStream(4))
    plain = run(d, [fm.PPCASpec(k=1)], cfg, RngStream(4).child("run"))
    assert rows[0].rmse_deconfounder == rmse(plain.beta, truth.beta)
    assert rows[1].kept == 6
    with pytest.raises(SpecError):
        mask_causes_experiment(d, truth, [100], [fm.PPCASpec(k=1)], cfg, 0)
