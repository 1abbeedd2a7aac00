"""Training loop: warm-up, early stopping, checkpointing, repetition."""

import numpy as np
import pytest

from upliftmil import models
from upliftmil.data import SynthConfig, empirical_ate, generate_synthetic, split
from upliftmil.errors import ConfigError, TrainingError
from upliftmil.metrics import auuc
from upliftmil.trainer import TrainConfig, evaluate, repeat_runs, train


@pytest.fixture(scope="module")
def splits():
    ds = generate_synthetic(SynthConfig(n=6000, d=4, seed=42))
    return split(ds, (0.7, 0.15, 0.15), seed=7)


def _cfg(**kw):
    base = dict(
        model="tarnet",
        hidden_sizes=(8, 4),
        batch_size=256,
        bag_size=16,
        max_steps=200,
        warmup_steps=50,
        eval_every=50,
        patience=5,
        seed=3,
        learning_rate=1e-3,
        alpha=1e-3,
    )
    base.update(kw)
    return TrainConfig(**base)


def _report_key(report):
    """Everything that must reproduce bitwise; timing excluded."""
    d = report.to_dict()
    d.pop("wall_clock_s")
    return d


class TestConfig:
    def test_warmup_defaults_to_fifth_of_steps(self):
        assert TrainConfig(max_steps=1000, warmup_steps=None).resolved_warmup() == 200

    def test_bag_larger_than_batch_rejected(self):
        with pytest.raises(ConfigError):
            _cfg(bag_size=512, batch_size=256).validate()

    def test_warmup_beyond_steps_rejected(self):
        with pytest.raises(ConfigError):
            _cfg(warmup_steps=201, max_steps=200).validate()

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError):
            _cfg(model="xlearner").validate()


class TestTrain:
    def test_alpha_zero_matches_full_warmup_run(self, splits):
        # Holding the regularizer weight at zero for the whole run and
        # never enabling it at all must give identical trajectories.
        tr, va, te = splits
        m_a, rep_a = train(tr, va, te, _cfg(alpha=0.0, warmup_steps=0))
        m_b, rep_b = train(tr, va, te, _cfg(alpha=1e-3, warmup_steps=200))
        hist_a = [(h.step, h.l_base, h.l_mil, h.val_auuc) for h in rep_a.history]
        hist_b = [(h.step, h.l_base, h.l_mil, h.val_auuc) for h in rep_b.history]
        assert hist_a == hist_b
        assert rep_a.test_auuc == rep_b.test_auuc
        for a, b in zip(m_a.parameter_arrays(), m_b.parameter_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_deterministic_reports(self, splits):
        tr, va, te = splits
        _, rep_a = train(tr, va, te, _cfg())
        _, rep_b = train(tr, va, te, _cfg())
        assert _report_key(rep_a) == _report_key(rep_b)

    def test_returned_model_is_best_checkpoint(self, splits):
        tr, va, te = splits
        model, report = train(tr, va, te, _cfg(max_steps=400, eval_every=40))
        assert report.best_val_auuc == max(h.val_auuc for h in report.history)
        assert report.best_step in [h.step for h in report.history]
        got, _ = evaluate(model, va, 100)
        assert got == report.best_val_auuc

    def test_warmup_steps_report_zero_mil_loss(self, splits):
        tr, va, te = splits
        _, report = train(
            tr, va, te, _cfg(max_steps=200, warmup_steps=100, eval_every=25)
        )
        for h in report.history:
            if h.step <= 100:
                assert h.l_mil == 0.0 and h.usable_bags == 0
            else:
                assert h.usable_bags > 0

    def test_history_steps_strictly_increase(self, splits):
        tr, va, te = splits
        _, report = train(tr, va, te, _cfg(max_steps=130, eval_every=40))
        steps = [h.step for h in report.history]
        assert steps == sorted(set(steps))
        assert steps[-1] == 130  # final step evaluated even off-grid

    def test_nonfinite_loss_aborts_with_diagnostics(self, splits):
        tr, va, te = splits
        with np.errstate(all="ignore"), pytest.raises(TrainingError, match="step"):
            train(tr, va, te, _cfg(learning_rate=1e200, max_steps=50))


class TestEvaluate:
    def test_constant_model_near_random_baseline(self):
        ds = generate_synthetic(SynthConfig(n=30_000, seed=9))
        model = models.build("tm", ds.d, (4,), seed=0)
        net = model.nets["net"]
        net.weights[-1] = np.zeros_like(net.weights[-1])
        net.biases[-1] = np.zeros_like(net.biases[-1])
        got, _ = evaluate(model, ds, 100)
        expected = empirical_ate(ds) * 101 / 200
        assert abs(got - expected) <= 0.1 * abs(expected)

    def test_true_effect_scores_beat_constant_model(self):
        diffs = []
        for seed in range(5):
            ds = generate_synthetic(SynthConfig(n=20_000, seed=seed))
            oracle = auuc(ds.true_ite, ds.outcome, ds.treatment)
            constant = auuc(np.zeros(ds.n), ds.outcome, ds.treatment)
            diffs.append(oracle - constant)
        diffs = np.asarray(diffs)
        assert diffs.mean() > 3 * diffs.std(ddof=1) / np.sqrt(len(diffs))

    def test_frozen_model_evaluates_identically(self, splits):
        tr, va, te = splits
        model, _ = train(tr, va, te, _cfg(max_steps=60, eval_every=30))
        a = evaluate(model, te, 100)
        b = evaluate(model, te, 100)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1].g, b[1].g)


class TestRepeatRuns:
    def test_single_run_aggregate_is_that_run(self, splits):
        tr, va, te = splits
        agg, results, failures = repeat_runs(tr, va, te, _cfg(), n_runs=1)
        assert not failures
        assert agg.single_run
        assert agg.mean == results[0].report.test_auuc

    def test_deterministic_aggregate(self, splits):
        tr, va, te = splits
        cfg = _cfg(max_steps=100, eval_every=50)
        a = repeat_runs(tr, va, te, cfg, n_runs=3)[0]
        b = repeat_runs(tr, va, te, cfg, n_runs=3)[0]
        assert a.values == b.values

    def test_seeds_consecutive_and_ordered(self, splits):
        tr, va, te = splits
        _, results, _ = repeat_runs(
            tr, va, te, _cfg(seed=11, max_steps=60, eval_every=30), n_runs=3
        )
        assert [r.seed for r in results] == [11, 12, 13]

    def test_parallel_matches_sequential(self, splits):
        tr, va, te = splits
        cfg = _cfg(max_steps=60, eval_every=30)
        seq, seq_results, _ = repeat_runs(tr, va, te, cfg, n_runs=2, jobs=1)
        par, par_results, _ = repeat_runs(tr, va, te, cfg, n_runs=2, jobs=2)
        assert seq.values == par.values
        for a, b in zip(seq_results, par_results):
            assert _report_key(a.report) == _report_key(b.report)

    def test_failed_runs_counted_not_fatal(self, splits):
        tr, va, te = splits
        cfg = _cfg(learning_rate=1e200, max_steps=40, warmup_steps=10, eval_every=20)
        with np.errstate(all="ignore"):
            agg, results, failures = repeat_runs(tr, va, te, cfg, n_runs=2)
        assert agg is None
        assert not results
        assert len(failures) == 2
