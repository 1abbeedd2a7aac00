"""Training orchestration: warm-up on the base loss, per-batch
predict/cluster/bag, joint optimization with early stopping on
validation AUUC, and multi-seed repetition.

A run starts with `warmup_steps` of pure base training (the bag
regularizer weight held at zero), then switches to the combined loss
with bags re-formed from fresh predictions every step. Validation AUUC
is computed every `eval_every` steps; training stops at `max_steps` or
after `patience` evaluations without improvement, and the returned model
is the best-validation checkpoint.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics, mil, models, nncore
from .data import Dataset, fit_scaler, minibatches
from .errors import ConfigError, TrainingError
from .metrics import RunAggregate, UpliftCurve
from .mil import BagMode
from .models import ModelKind, UpliftModel


@dataclass
class TrainConfig:
    """All knobs of one training run.

    Defaults mirror the reference regime (batch 1024, bag 64, Adam with
    betas 0.9/0.999, alpha 1e-3, hidden sizes 1024/512/256) with the
    step budget scaled to desk-size data. warmup_steps=None resolves to
    20% of max_steps.
    """

    model: str = "tarnet"
    hidden_sizes: tuple[int, ...] = (1024, 512, 256)
    learning_rate: float = 1e-3
    alpha: float = 1e-3
    base_weight: float = 1.0
    batch_size: int = 1024
    bag_size: int = 64
    max_steps: int = 3000
    warmup_steps: int | None = None
    eval_every: int = 500
    patience: int = 5
    seed: int = 0
    mode: str = "clustered"
    standardize: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_points: int = 100

    def resolved_warmup(self) -> int:
        if self.warmup_steps is None:
            return self.max_steps // 5
        return int(self.warmup_steps)

    def validate(self) -> None:
        ModelKind(self.model)
        BagMode(self.mode)
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.base_weight < 0:
            raise ConfigError(f"base_weight must be nonnegative, got {self.base_weight}")
        if self.bag_size > self.batch_size:
            raise ConfigError(
                f"bag_size {self.bag_size} exceeds batch_size {self.batch_size}"
            )
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be positive, got {self.max_steps}")
        if self.resolved_warmup() > self.max_steps:
            raise ConfigError(
                f"warmup_steps {self.resolved_warmup()} exceeds max_steps "
                f"{self.max_steps}"
            )
        if self.eval_every < 1 or self.patience < 1:
            raise ConfigError("eval_every and patience must be positive")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["warmup_steps"] = self.resolved_warmup()
        return d


@dataclass
class EvalPoint:
    step: int
    l_base: float
    l_mil: float
    val_auuc: float
    usable_bags: int


@dataclass
class TrainReport:
    """History and outcome of one run; serializes to the report JSON.

    wall_clock_s is timing metadata and is excluded from reproducibility
    comparisons.
    """

    config: dict
    history: list[EvalPoint] = field(default_factory=list)
    best_step: int = 0
    best_val_auuc: float = float("-inf")
    test_auuc: float = float("nan")
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "history": [asdict(h) for h in self.history],
            "best_step": self.best_step,
            "best_val_auuc": self.best_val_auuc,
            "test_auuc": self.test_auuc,
            "wall_clock_s": self.wall_clock_s,
        }


def evaluate(
    model: UpliftModel, ds: Dataset, n_points: int = 100
) -> tuple[float, UpliftCurve]:
    """AUUC and uplift curve of a model's uplift scores on a dataset."""
    _, _, uplift = models.predict(model, ds.features)
    curve = metrics.uplift_curve(uplift, ds.outcome, ds.treatment, n_points)
    return curve.auuc, curve


def train(
    train_ds: Dataset, valid_ds: Dataset, test_ds: Dataset, cfg: TrainConfig
) -> tuple[UpliftModel, TrainReport]:
    """Run one training job and return the best-validation model."""
    cfg.validate()
    started = time.perf_counter()
    model = models.build(cfg.model, train_ds.d, cfg.hidden_sizes, cfg.seed)
    if cfg.standardize:
        model.scaler = fit_scaler(train_ds.features)
    arrays = model.parameter_arrays()
    state = nncore.init_adam(arrays, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    # Dedicated stream for the random-bag ablation; consumed only when
    # that mode is active, so clustered runs stay bitwise comparable.
    bag_rng = np.random.default_rng([cfg.seed, 104729])

    warmup = cfg.resolved_warmup()
    mode = BagMode(cfg.mode)
    report = TrainReport(config=cfg.to_dict())
    best_arrays = models.clone_parameter_arrays(model)
    bad_evals = 0

    step = 0
    epoch = 0
    pending: list = []
    while step < cfg.max_steps:
        if not pending:
            pending = list(minibatches(train_ds, cfg.batch_size, cfg.seed, epoch))
            epoch += 1
            if not pending:
                raise ConfigError(
                    f"batch_size {cfg.batch_size} yields no batches on a "
                    f"training split of {train_ds.n} rows"
                )
        batch = pending.pop(0)
        step += 1
        eff_alpha = 0.0 if step <= warmup else cfg.alpha
        breakdown, grads, _ = mil.combined_loss_and_grads(
            model,
            train_ds.features[batch.indices],
            train_ds.treatment[batch.indices],
            train_ds.outcome[batch.indices],
            batch.u_t,
            eff_alpha,
            cfg.bag_size,
            mode,
            rng=bag_rng,
            base_weight=cfg.base_weight,
        )
        if not np.isfinite(breakdown.loss):
            raise TrainingError(
                f"non-finite loss at step {step}: l_base={breakdown.l_base!r} "
                f"l_mil={breakdown.l_mil!r} u_t={batch.u_t!r} "
                f"batch_head={batch.indices[:8].tolist()}"
            )
        arrays, state = nncore.adam_step(arrays, grads, state)
        models.set_parameter_arrays(model, arrays)

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            val_auuc, _ = evaluate(model, valid_ds, cfg.n_points)
            report.history.append(
                EvalPoint(step, breakdown.l_base, breakdown.l_mil, val_auuc,
                          breakdown.usable_bags)
            )
            if val_auuc > report.best_val_auuc:
                report.best_val_auuc = val_auuc
                report.best_step = step
                best_arrays = [a.copy() for a in arrays]
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= cfg.patience:
                    break

    models.set_parameter_arrays(model, best_arrays)
    report.test_auuc, _ = evaluate(model, test_ds, cfg.n_points)
    report.wall_clock_s = time.perf_counter() - started
    return model, report


@dataclass
class RunResult:
    seed: int
    model: UpliftModel
    report: TrainReport


def _run_one(args) -> tuple[int, UpliftModel | None, TrainReport | None, str | None]:
    train_ds, valid_ds, test_ds, cfg = args
    try:
        model, report = train(train_ds, valid_ds, test_ds, cfg)
        return cfg.seed, model, report, None
    except TrainingError as exc:
        return cfg.seed, None, None, str(exc)


def repeat_runs(
    train_ds: Dataset,
    valid_ds: Dataset,
    test_ds: Dataset,
    cfg: TrainConfig,
    n_runs: int,
    jobs: int = 1,
) -> tuple[RunAggregate | None, list[RunResult], list[tuple[int, str]]]:
    """Repeat training with seeds seed+0 .. seed+n_runs-1.

    Returns (aggregate over completed runs' test AUUCs, completed run
    results ordered by seed, failures as (seed, message)). The aggregate
    is None when every run failed. Runs are state-isolated, so parallel
    execution (jobs > 1) gives results identical to sequential.
    """
    if n_runs < 1:
        raise ConfigError(f"n_runs must be at least 1, got {n_runs}")
    from dataclasses import replace

    tasks = [
        (train_ds, valid_ds, test_ds, replace(cfg, seed=cfg.seed + i))
        for i in range(n_runs)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    else:
        outcomes = [_run_one(t) for t in tasks]

    results: list[RunResult] = []
    failures: list[tuple[int, str]] = []
    for seed, model, report, err in outcomes:
        if err is None:
            results.append(RunResult(seed=seed, model=model, report=report))
        else:
            failures.append((seed, err))
    aggregate = None
    if results:
        aggregate = metrics.aggregate_runs([r.report.test_auuc for r in results])
    return aggregate, results, failures
