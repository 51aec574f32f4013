import numpy as np

from deconfounder.experiments import (GwasSuiteConfig, MaskingSuiteConfig, SmokingSuiteConfig, gwas_sim_config,
                                      gwas_table, masking_csv, masking_suite, ordered_map, smoking_table,
                                      with_overrides)


def test_ordered_map_keeps_order():
    items = list(range(20))
    assert ordered_map(lambda x: x * x, items, threads=4) == [x * x for x in items]


def test_with_overrides_skips_none():
    cfg = with_overrides(SmokingSuiteConfig(), n=100, seeds=None)
    assert cfg.n == 100 and cfg.seeds == SmokingSuiteConfig().seeds


def test_gwas_sim_config_parses_generator():
    cfg = GwasSuiteConfig()
    assert gwas_sim_config("psd:0.1", cfg, 0).alpha == 0.1
    assert gwas_sim_config("spatial:0.25", cfg, 0).tau == 0.25
    assert gwas_sim_config("bn", cfg, 0).generator == "bn"


def test_smoking_table_rows_and_determinism():
    cfg = SmokingSuiteConfig(n=300, samples=3)
    table = smoking_table(0, cfg)
    labels = [r.label for r in table.rows]
    assert labels == ["No control", "Oracle (confounder)", "Linear z", "Linear a(z)", "Quadratic z",
                      "Quadratic a(z)"]
    assert set(table.metadata["scores"]) == set(labels[2:])
    again = smoking_table(0, cfg)
    np.testing.assert_array_equal([r.mse for r in table.rows], [r.mse for r in again.rows])
    for r in table.rows:
        np.testing.assert_allclose(r.mse, r.bias2 + r.variance, rtol=1e-10)


def test_gwas_table_rows():
    cfg = GwasSuiteConfig(n=100, m=30, k=2, check=False)
    table = gwas_table("bn", 0, cfg)
    assert [r.label for r in table.rows] == ["No control", "Oracle (groups)", "Deconfounder PF(K=2)"]
    assert table.rows[2].check is None


def test_masking_suite_thread_invariant():
    cfg = MaskingSuiteConfig(n=100, m=30, k=2, seeds=2)
    a = masking_suite(cfg, threads=1)
    b = masking_suite(cfg, threads=2)
    assert masking_csv(a[0]) == masking_csv(b[0])
    assert a[1] == b[1]
    text = masking_csv(a[0], a[2])
    assert text.splitlines()[0] == "percent,mean_ratio"
    assert len(text.splitlines()) == 5
