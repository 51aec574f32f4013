import numpy as np
import pytest

from deconfounder.errors import SpecError
from deconfounder.simulate import (F_CLIP, GwasSimConfig, SimTruth, TwoCauseSimConfig, assign_groups,
                                   balding_nichols, kmeans, load_pfst, simulate_genotypes, simulate_gwas,
                                   simulate_trait, simulate_two_cause)


def test_two_cause_shapes_and_determinism():
    d, truth = simulate_two_cause(TwoCauseSimConfig(n=500), 3)
    d2, truth2 = simulate_two_cause(TwoCauseSimConfig(n=500), 3)
    np.testing.assert_array_equal(d.causes, d2.causes)
    np.testing.assert_array_equal(d.outcome, d2.outcome)
    assert d.causes.shape == (500, 2) and truth.beta.shape == (2,)
    np.testing.assert_allclose(d.causes.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(d.causes.std(axis=0), 1, atol=1e-12)


def test_two_cause_oracle_recovers_beta():
    d, truth = simulate_two_cause(TwoCauseSimConfig(n=9708), 0)
    X = np.column_stack([np.ones(d.n), d.causes, truth.confounder])
    coef = np.linalg.lstsq(X, d.outcome, rcond=None)[0]
    np.testing.assert_allclose(coef[1:3], truth.beta, atol=0.05)
    np.testing.assert_allclose(coef[3], truth.params["beta_age"], atol=0.05)


def test_two_cause_without_confounding_is_unbiased():
    d, truth = simulate_two_cause(TwoCauseSimConfig(n=9708, link_slope=0.0, link_quadratic=0.0), 1)
    X = np.column_stack([np.ones(d.n), d.causes])
    coef = np.linalg.lstsq(X, d.outcome, rcond=None)[0]
    assert np.sqrt(np.mean((coef[1:] - truth.beta) ** 2)) < 0.05


def test_balding_nichols_moments():
    gen = np.random.default_rng(0)
    draws = balding_nichols(np.array([0.3]), np.array([0.1]), 200000, gen)[0]
    assert draws.mean() == pytest.approx(0.3, abs=2e-3)
    assert draws.var() == pytest.approx(0.1 * 0.3 * 0.7, rel=0.02)


@pytest.mark.parametrize("generator", ["bn", "psd", "spatial"])
def test_genotype_invariants(generator):
    cfg = GwasSimConfig(generator=generator, n=200, m=60, seed=4)
    g = simulate_genotypes(cfg)
    assert g.A.shape == (200, 60) and g.F.shape == (200, 60)
    assert g.gamma.shape == (60, 3) and g.S.shape == (3, 200)
    assert g.F.min() >= F_CLIP and g.F.max() <= 1 - F_CLIP
    assert set(np.unique(g.A)) <= {0, 1, 2}
    np.testing.assert_array_equal(simulate_genotypes(cfg).A, g.A)
    if generator != "spatial":
        np.testing.assert_allclose(g.S.sum(axis=0), 1.0)


def test_kmeans_finds_planted_clusters():
    gen = np.random.default_rng(5)
    centers = np.array([[0.0, 0.0], [5.0, 5.0], [0.0, 6.0]])
    X = np.vstack([c + 0.3 * gen.standard_normal((50, 2)) for c in centers])
    labels, C, _ = kmeans(X, 3, gen)
    for block in range(3):
        assert len(set(labels[block * 50:(block + 1) * 50])) == 1
    assert len(set(labels)) == 3


def test_assign_groups_bn_recovers_populations():
    g = simulate_genotypes(GwasSimConfig(n=150, m=40, seed=2))
    groups = assign_groups(g.S, 3, 0)
    truth = g.S.argmax(axis=0)
    # the partition matches the one-hot populations up to relabelling
    for label in np.unique(groups):
        assert len(set(truth[groups == label])) == 1
    assert set(groups) <= {1, 2, 3}


def test_trait_causal_count_and_binary_family():
    cfg = GwasSimConfig(n=300, m=150, causal_fraction=0.01, seed=1)
    d, truth = simulate_gwas(cfg)
    assert np.count_nonzero(truth.beta) == 2  # ceil(1.5)
    cfg_b = GwasSimConfig(n=300, m=150, family="binary", seed=1)
    d_b, truth_b = simulate_gwas(cfg_b)
    assert set(np.unique(d_b.outcome)) <= {0.0, 1.0}
    assert truth_b.effect_sign == -1


def test_trait_rejects_bad_groups():
    with pytest.raises(SpecError):
        simulate_trait(np.ones((5, 3)), np.ones(4), GwasSimConfig())


def test_truth_round_trip(tmp_path):
    _, truth = simulate_gwas(GwasSimConfig(n=80, m=20, seed=0))
    path = tmp_path / "t.json"
    path.write_text(truth.to_json())
    back = SimTruth.load(path)
    np.testing.assert_array_equal(back.beta, truth.beta)
    np.testing.assert_array_equal(back.confounder, truth.confounder)
    assert back.cause_names == truth.cause_names


def test_load_pfst(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("p,fst\n0.2,0.05\n0.6,0.1\n")
    np.testing.assert_allclose(load_pfst(path), [[0.2, 0.05], [0.6, 0.1]])
    path.write_text("p,fst\n1.2,0.05\n")
    with pytest.raises(SpecError):
        load_pfst(path)
