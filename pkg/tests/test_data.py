"""Dataset construction, ingestion, splitting, batching, synthesis."""

import numpy as np
import pytest

from upliftmil import data
from upliftmil.data import (
    Dataset,
    SynthConfig,
    TableSchema,
    ate_standard_error,
    empirical_ate,
    generate_synthetic,
    load_table,
    minibatches,
    save_table,
    split,
)
from upliftmil.errors import ConfigError, MetricError, ParseError, SchemaError


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rate_dataset(n_t, k_t, n_c, k_c):
    """Dataset with exact group response rates k_t/n_t and k_c/n_c."""
    y = np.concatenate(
        [np.ones(k_t), np.zeros(n_t - k_t), np.ones(k_c), np.zeros(n_c - k_c)]
    )
    t = np.concatenate([np.ones(n_t), np.zeros(n_c)])
    return Dataset(np.zeros((n_t + n_c, 1)), t, y)


class TestDataset:
    def test_binary_validation(self):
        with pytest.raises(ConfigError):
            Dataset(np.zeros((2, 1)), np.array([0, 2]), np.array([0, 1]))

    def test_length_validation(self):
        with pytest.raises(ConfigError):
            Dataset(np.zeros((3, 1)), np.array([0, 1]), np.array([0, 1, 0]))

    def test_true_ite_range_validation(self):
        with pytest.raises(ConfigError):
            Dataset(
                np.zeros((2, 1)),
                np.array([0, 1]),
                np.array([0, 1]),
                np.array([0.0, 1.5]),
            )

    def test_arrays_frozen(self):
        ds = Dataset(np.zeros((2, 2)), np.array([0, 1]), np.array([1, 0]))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0


class TestLoadTable:
    def test_small_file_shape(self, tmp_path):
        p = _write(
            tmp_path,
            "a,b,treatment,outcome\n1,2,1,0\n3,4,0,1\n5,6,1,1\n7,8,0,0\n",
        )
        ds = load_table(p, TableSchema())
        assert (ds.n, ds.d) == (4, 2)
        np.testing.assert_array_equal(ds.treatment, [1, 0, 1, 0])

    def test_nonbinary_treatment_names_row(self, tmp_path):
        p = _write(tmp_path, "a,treatment,outcome\n1,1,0\n2,0,1\n3,2,0\n4,1,1\n")
        with pytest.raises(ParseError, match="row 3"):
            load_table(p, TableSchema())

    def test_twelve_feature_columns_accepted(self, tmp_path):
        cols = [f"f{i}" for i in range(12)]
        header = ",".join(cols + ["treatment", "outcome"])
        row = ",".join(["0.5"] * 12 + ["1", "0"])
        p = _write(tmp_path, header + "\n" + row + "\n" + row + "\n")
        ds = load_table(p, TableSchema())
        assert ds.d == 12

    def test_missing_column_names_it(self, tmp_path):
        p = _write(tmp_path, "a,treatment\n1,0\n")
        with pytest.raises(SchemaError, match="outcome"):
            load_table(p, TableSchema())

    def test_non_numeric_feature_rejected(self, tmp_path):
        p = _write(tmp_path, "a,treatment,outcome\nfoo,1,0\n")
        with pytest.raises(ParseError, match="'a'"):
            load_table(p, TableSchema())

    def test_explicit_feature_subset_and_delimiter(self, tmp_path):
        p = _write(tmp_path, "a;b;t;y\n1;9;1;0\n2;8;0;1\n")
        ds = load_table(
            p,
            TableSchema(
                treatment_col="t", outcome_col="y", feature_cols=["a"], delimiter=";"
            ),
        )
        assert ds.d == 1
        np.testing.assert_array_equal(ds.features.ravel(), [1.0, 2.0])

    def test_round_trip_with_true_ite(self, tmp_path):
        ds = generate_synthetic(SynthConfig(n=200, d=3, seed=9))
        p = tmp_path / "synth.csv"
        save_table(ds, p)
        back = load_table(p, TableSchema(true_ite_col="true_ite"))
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.treatment, ds.treatment)
        np.testing.assert_array_equal(back.outcome, ds.outcome)
        np.testing.assert_array_equal(back.true_ite, ds.true_ite)


class TestSplit:
    def test_exact_sizes(self):
        ds = generate_synthetic(SynthConfig(n=100, d=3, seed=1))
        tr, va, te = split(ds, (0.8, 0.1, 0.1), seed=0)
        assert (tr.n, va.n, te.n) == (80, 10, 10)

    def test_deterministic(self):
        ds = generate_synthetic(SynthConfig(n=500, d=3, seed=2))
        a = split(ds, (0.6, 0.2, 0.2), seed=5)
        b = split(ds, (0.6, 0.2, 0.2), seed=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)

    def test_partition_complete_and_disjoint(self):
        ds = generate_synthetic(SynthConfig(n=503, d=3, seed=3))
        parts = split(ds, (0.7, 0.15, 0.15), seed=1)
        assert sum(p.n for p in parts) == ds.n
        # Row identity via the unique uniform features
        keys = [tuple(row) for p in parts for row in p.features]
        assert len(set(keys)) == ds.n

    def test_stratification_keeps_cell_proportions(self):
        ds = generate_synthetic(SynthConfig(n=2000, d=3, seed=4))
        fractions = (0.8, 0.1, 0.1)
        parts = split(ds, fractions, seed=2)
        for t in (0, 1):
            for y in (0, 1):
                cell_n = int(((ds.treatment == t) & (ds.outcome == y)).sum())
                for p, f in zip(parts, fractions):
                    got = int(((p.treatment == t) & (p.outcome == y)).sum())
                    assert abs(got - cell_n * f) <= 3

    def test_all_treated_falls_back_with_warning(self):
        ds = Dataset(
            np.arange(20, dtype=float).reshape(20, 1),
            np.ones(20),
            np.tile([0, 1], 10),
        )
        with pytest.warns(UserWarning, match="unstratified"):
            parts = split(ds, (0.5, 0.25, 0.25), seed=0)
        assert sum(p.n for p in parts) == 20

    def test_bad_fractions_rejected(self):
        ds = generate_synthetic(SynthConfig(n=50, d=3, seed=0))
        with pytest.raises(ConfigError):
            split(ds, (0.5, 0.2, 0.2), seed=0)


class TestMinibatches:
    def test_short_final_batch_dropped(self):
        ds = generate_synthetic(SynthConfig(n=10, d=3, seed=0))
        batches = minibatches(ds, 4, seed=0, epoch=0)
        assert len(batches) == 2
        assert all(len(b.indices) == 4 for b in batches)

    def test_treated_fraction_exact(self):
        ds = Dataset(np.zeros((4, 1)), np.array([1, 1, 1, 0]), np.zeros(4))
        (batch,) = minibatches(ds, 4, seed=0, epoch=0)
        assert batch.u_t == 0.75
        assert batch.u_t == int(ds.treatment[batch.indices].sum()) / len(batch.indices)

    def test_epochs_reshuffle_same_multiset(self):
        ds = generate_synthetic(SynthConfig(n=64, d=3, seed=1))
        e1 = np.concatenate([b.indices for b in minibatches(ds, 8, seed=3, epoch=1)])
        e2 = np.concatenate([b.indices for b in minibatches(ds, 8, seed=3, epoch=2)])
        assert not np.array_equal(e1, e2)
        np.testing.assert_array_equal(np.sort(e1), np.sort(e2))

    def test_oversized_batch_warns_and_returns_nothing(self):
        ds = generate_synthetic(SynthConfig(n=10, d=3, seed=0))
        with pytest.warns(UserWarning, match="batch_size"):
            assert minibatches(ds, 11, seed=0, epoch=0) == []

    def test_tiny_batch_size_rejected(self):
        ds = generate_synthetic(SynthConfig(n=10, d=3, seed=0))
        with pytest.raises(ConfigError):
            minibatches(ds, 1, seed=0, epoch=0)


class TestGenerateSynthetic:
    def test_no_effect_case(self):
        ds = generate_synthetic(SynthConfig(n=50_000, tau_max=0.0, seed=7))
        assert not ds.true_ite.any()
        assert abs(empirical_ate(ds)) <= 3 * ate_standard_error(ds)

    def test_defaults_recover_mean_effect(self):
        # mean of tau_max * max(0, 2(x - 1/2)) over uniform x is tau_max/4
        ds = generate_synthetic(SynthConfig(seed=11))
        assert abs(ds.true_ite.mean() - 0.015) < 0.0005
        assert abs(empirical_ate(ds) - ds.true_ite.mean()) <= 3 * ate_standard_error(ds)

    def test_deterministic(self):
        a = generate_synthetic(SynthConfig(n=100, seed=5))
        b = generate_synthetic(SynthConfig(n=100, seed=5))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.outcome, b.outcome)

    def test_probability_overflow_rejected_before_sampling(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SynthConfig(base_rate=0.97, slope=0.02, tau_max=0.06))

    def test_half_population_has_zero_uplift(self):
        ds = generate_synthetic(SynthConfig(n=20_000, seed=2))
        zero_frac = (ds.true_ite == 0.0).mean()
        assert abs(zero_frac - 0.5) < 0.02


class TestEmpiricalAte:
    def test_lenta_rates(self):
        ds = _rate_dataset(100_000, 11_012, 100_000, 10_257)
        assert abs(empirical_ate(ds) - 0.00755) < 5e-18

    def test_criteo_rates(self):
        ds = _rate_dataset(50_000, 2_427, 5_000, 191)
        assert abs(empirical_ate(ds) - 0.01034) < 5e-18

    def test_identical_groups_zero(self):
        ds = _rate_dataset(100, 40, 50, 20)
        assert empirical_ate(ds) == 0.0

    def test_single_arm_rejected(self):
        ds = Dataset(np.zeros((3, 1)), np.ones(3), np.array([0, 1, 0]))
        with pytest.raises(MetricError):
            empirical_ate(ds)


class TestScaler:
    def test_standardizes_train_columns(self):
        rng = np.random.default_rng(0)
        x = rng.normal(3.0, 2.5, size=(500, 4))
        mean, std = data.fit_scaler(x)
        z = (x - mean) / std
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-12)

    def test_constant_column_maps_to_zero(self):
        x = np.ones((10, 2))
        x[:, 1] = np.arange(10)
        mean, std = data.fit_scaler(x)
        z = (x - mean) / std
        np.testing.assert_array_equal(z[:, 0], np.zeros(10))
