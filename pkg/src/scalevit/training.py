"""Losses, Adam, metrics, early stopping, and the cross-validated experiment loop."""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model as vit
from .cwt import cwt_forward, rasterize, scale_grid, scaleogram
from .errors import (
    BadConfigError,
    EmptyDataError,
    NonFiniteError,
    OutOfRangeError,
    UsageError,
)
from .trials import FoldAssignment, quadrant_from_ratings, zscore_normalize

RELEVANCE_ACCURACY = 0.50     # twice the expected random accuracy for 4 classes
RELEVANCE_RMSE = 1.6995       # half the expected RMSE of a random rating predictor


class LabelSource(enum.Enum):
    VAQ = "vaq"
    SAM = "sam"
    SAM_CONTINUOUS = "sam-continuous"


class Scheduler(enum.Enum):
    COSINE = "cosine"
    STEP = "step"


class RandomPredictor(enum.Enum):
    UNIFORM_CONTINUOUS = "uniform-continuous"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    scheduler: Scheduler = Scheduler.COSINE
    cosine_floor: float = 0.01   # final lr as a fraction of lr
    step_every: int = 10
    step_gamma: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 100
    patience: int | None = None  # None resolves to 5 (classify) / 10 (regress)
    seed: int = 0
    huber_delta: float = 1.0
    # 0 monitors early stopping on the test fold itself (the protocol this
    # package reproduces, test leakage and all); > 0 carves that fraction of
    # the training trials into an inner validation split and monitors it
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise BadConfigError("lr must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise BadConfigError("betas must lie in (0, 1)")
        if self.patience is not None and self.patience < 1:
            raise BadConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise BadConfigError("batch_size and max_epochs must be >= 1")
        if self.huber_delta <= 0:
            raise BadConfigError("huber_delta must be positive")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise BadConfigError("validation_fraction must lie in [0, 0.5]")

    def resolved_patience(self, task: vit.Head) -> int:
        if self.patience is not None:
            return self.patience
        return 5 if task is vit.Head.CLASSIFY4 else 10


def scheduled_lr(config: TrainConfig, epoch: int) -> float:
    """Learning rate for a (0-based) epoch."""
    if config.scheduler is Scheduler.COSINE:
        floor = config.cosine_floor * config.lr
        span = max(1, config.max_epochs - 1)
        t = min(epoch, span) / span
        return floor + (config.lr - floor) * 0.5 * (1.0 + np.cos(np.pi * t))
    return config.lr * config.step_gamma ** (epoch // config.step_every)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy(logits, target: int) -> float:
    """-log softmax(logits)[target], stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    return float(lse - z[target])


def cross_entropy_with_grad(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    rows = np.arange(n)
    lse = np.log(e.sum(axis=1))
    loss = float((lse - z[rows, targets]).mean())
    d = probs.copy()
    d[rows, targets] -= 1.0
    return loss, d / n


def huber(pred, target, delta: float = 1.0) -> float:
    """Mean Huber loss over the output components."""
    if delta <= 0:
        raise BadConfigError("delta must be positive")
    e = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    a = np.abs(e)
    per = np.where(a <= delta, 0.5 * e * e, delta * (a - 0.5 * delta))
    return float(per.mean())


def huber_with_grad(preds: np.ndarray, targets: np.ndarray, delta: float = 1.0):
    """Mean Huber loss over all batch components and its gradient."""
    e = preds - targets
    a = np.abs(e)
    per = np.where(a <= delta, 0.5 * e * e, delta * (a - 0.5 * delta))
    d = np.where(a <= delta, e, delta * np.sign(e)) / e.size
    return float(per.mean()), d


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def init_adam_state(params: vit.ModelParams) -> AdamState:
    return AdamState(m=vit.zero_grads(params), v=vit.zero_grads(params))


def adam_step(params: vit.ModelParams, grads: dict, state: AdamState, t: int,
              config: TrainConfig, lr: float | None = None):
    """One bias-corrected Adam update; returns (new params, new state).

    `t` is the 1-based step count; `lr` overrides config.lr with the
    scheduler's rate for the current epoch.
    """
    if t < 1:
        raise BadConfigError("step count t must be >= 1")
    rate = config.lr if lr is None else lr
    b1, b2 = config.beta1, config.beta2
    new_tensors, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient for {name} is not finite")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_tensors[name] = theta - rate * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[name] = m
        new_v[name] = v
    return vit.ModelParams(params.config, new_tensors), AdamState(m=new_m, v=new_v)


def early_stop_check(test_losses, patience: int) -> bool:
    """True iff the last `patience` epochs all exceed the running minimum."""
    h = list(test_losses)
    if not h:
        raise ValueError("history must be nonempty")
    lowest = min(h)
    window = h[-patience:]
    return len(h) >= patience and all(x > lowest for x in window)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _forward_batched(params: vit.ModelParams, inputs: np.ndarray, batch_size: int = 64):
    outs = []
    for lo in range(0, inputs.shape[0], batch_size):
        out, _ = vit.forward(inputs[lo:lo + batch_size], params, train_mode=False)
        outs.append(out)
    return np.concatenate(outs, axis=0)


def evaluate_classification(params: vit.ModelParams, inputs: np.ndarray,
                            labels: np.ndarray, batch_size: int = 64) -> float:
    """Fraction of argmax-correct predictions; ties break to the lowest class."""
    if inputs.shape[0] == 0:
        raise EmptyDataError("no trials to evaluate")
    logits = _forward_batched(params, inputs, batch_size)
    return float((logits.argmax(axis=1) == labels).mean())


def evaluate_regression(params: vit.ModelParams, inputs: np.ndarray,
                        targets: np.ndarray, batch_size: int = 64) -> float:
    """RMSE pooled over both output dimensions and all trials."""
    if inputs.shape[0] == 0:
        raise EmptyDataError("no trials to evaluate")
    preds = _forward_batched(params, inputs, batch_size)
    return float(np.sqrt(((preds - targets) ** 2).mean()))


def combined_binary_accuracy(acc_valence: float, acc_arousal: float) -> float:
    """Accuracy of two independent binary models classifying jointly."""
    for name, a in (("acc_valence", acc_valence), ("acc_arousal", acc_arousal)):
        if not 0.0 <= a <= 1.0:
            raise OutOfRangeError(f"{name}={a!r} outside [0, 1]")
    return acc_valence * acc_arousal


def relevance_threshold(task: vit.Head) -> float:
    """Twice random accuracy (0.50) for 4-class; 1.6995 for rating regression."""
    return RELEVANCE_ACCURACY if task is vit.Head.CLASSIFY4 else RELEVANCE_RMSE


def baseline_random_rmse(labels, predictor: RandomPredictor = RandomPredictor.UNIFORM_CONTINUOUS) -> float:
    """Expected pooled RMSE of a predictor drawing uniformly from [1, 9].

    For a label component y the expected squared error is Var(U[1,9]) +
    (5 - y)^2 = 64/12 + (5 - y)^2; the result pools both components of every
    label pair.
    """
    pairs = np.asarray(list(labels), dtype=np.float64)
    if pairs.size == 0:
        raise EmptyDataError("no labels")
    if predictor is not RandomPredictor.UNIFORM_CONTINUOUS:
        raise BadConfigError(f"unknown predictor {predictor!r}")
    return float(np.sqrt((64.0 / 12.0 + (5.0 - pairs) ** 2).mean()))


# ---------------------------------------------------------------------------
# dataset -> model inputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PreprocessConfig:
    """Scaleogram settings shared by training, evaluation, and previews."""

    f_min_hz: float = 4.0
    f_max_hz: float = 45.0
    n_scales: int = 224
    omega0: float = 6.0
    image_height: int = 224
    image_width: int = 224

    def to_json_dict(self) -> dict:
        return {
            "f_min_hz": self.f_min_hz, "f_max_hz": self.f_max_hz,
            "n_scales": self.n_scales, "omega0": self.omega0,
            "image_height": self.image_height, "image_width": self.image_width,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PreprocessConfig":
        return cls(f_min_hz=float(d["f_min_hz"]), f_max_hz=float(d["f_max_hz"]),
                   n_scales=int(d["n_scales"]), omega0=float(d["omega0"]),
                   image_height=int(d["image_height"]), image_width=int(d["image_width"]))


def select_channel_rows(dataset, subset) -> list[int]:
    """0-based row indices of a subset's channels within a dataset's layout.

    The "all" subset means every channel the dataset has; any other subset
    must be fully present (matched by name, case-insensitively).
    """
    names = [n.lower() for n in dataset.channel_names]
    if subset.name == "all":
        return list(range(len(names)))
    rows = []
    for ch in subset.channel_names:
        try:
            rows.append(names.index(ch.lower()))
        except ValueError:
            raise UsageError(f"dataset has no channel {ch!r} required by subset {subset.name!r}")
    return rows


def render_channel(samples_row: np.ndarray, fs_hz: float, pre: PreprocessConfig) -> np.ndarray:
    """Scaleogram raster pixels for one channel: z-score, CWT, rasterize."""
    grid = scale_grid(pre.f_min_hz, pre.f_max_hz, pre.n_scales, fs_hz, pre.omega0)
    coeffs = cwt_forward(zscore_normalize(samples_row), grid)
    sg = scaleogram(coeffs, grid)
    return rasterize(sg, pre.image_height, pre.image_width).pixels


def build_inputs(records, channel_rows, pre: PreprocessConfig) -> np.ndarray:
    """Input tensor [n_trials, n_channels, H, W] for the selected channels."""
    stack = []
    for rec in records:
        trial = rec.trial
        stack.append(np.stack([
            render_channel(trial.samples[r], trial.sample_rate_hz, pre)
            for r in channel_rows
        ]))
    return np.stack(stack)


def classification_targets(records, source: LabelSource) -> np.ndarray:
    if source is LabelSource.VAQ:
        return np.array([int(r.labels.vaq_quadrant) for r in records], dtype=np.int64)
    if source is LabelSource.SAM:
        return np.array([
            int(quadrant_from_ratings(r.labels.sam_valence, r.labels.sam_arousal))
            for r in records
        ], dtype=np.int64)
    raise UsageError("classification needs vaq or sam labels")


def regression_targets(records) -> np.ndarray:
    return np.array([[r.labels.sam_valence, r.labels.sam_arousal] for r in records],
                    dtype=np.float64)


# ---------------------------------------------------------------------------
# experiment loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldResult:
    fold_index: int
    metric: float
    history: tuple[tuple[float, float, float], ...]  # (train loss, test loss, metric)
    stopped_epoch: int
    best_epoch: int

    def __post_init__(self):
        if self.best_epoch > self.stopped_epoch:
            raise ValueError("best_epoch cannot exceed stopped_epoch")

    def to_json_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "metric": self.metric,
            "history": [list(h) for h in self.history],
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
        }


@dataclass(frozen=True)
class ExperimentReport:
    subset_name: str
    n_channels: int
    label_source: LabelSource
    task: vit.Head
    k: int
    seed: int
    fold_mode: str
    fold_of: tuple[int, ...]
    fold_results: tuple[FoldResult, ...]
    mean_metric: float
    relevant: bool
    n_parameters: int

    def to_json_dict(self) -> dict:
        return {
            "subset": self.subset_name,
            "n_channels": self.n_channels,
            "labels": self.label_source.value,
            "task": self.task.value,
            "k": self.k,
            "seed": self.seed,
            "fold_mode": self.fold_mode,
            "fold_of": list(self.fold_of),
            "folds": [f.to_json_dict() for f in self.fold_results],
            "mean_metric": self.mean_metric,
            "relevance_threshold": relevance_threshold(self.task),
            "relevant": self.relevant,
            "n_parameters": self.n_parameters,
        }


def _loss_with_grad(task: vit.Head, outputs, targets, huber_delta: float):
    if task is vit.Head.CLASSIFY4:
        return cross_entropy_with_grad(outputs, targets)
    return huber_with_grad(outputs, targets, huber_delta)


def train_fold(fold_index: int, inputs: np.ndarray, targets: np.ndarray,
               train_idx: np.ndarray, test_idx: np.ndarray,
               model_config: vit.ModelConfig, train_config: TrainConfig):
    """Train one fold with early stopping; returns (FoldResult, best params).

    The monitored loss (test fold by default, or the inner validation split
    when train_config.validation_fraction > 0) drives both the early-stopping
    rule and best-epoch checkpointing; the last epoch attaining the minimum
    monitored loss wins, so stopped_epoch - best_epoch <= patience always
    holds. Everything is deterministic given the fold index and the training
    seed.
    """
    task = model_config.head
    patience = train_config.resolved_patience(task)
    params = vit.init_params(model_config, seed=[train_config.seed, fold_index])
    state = init_adam_state(params)
    step = 0
    history: list[tuple[float, float, float]] = []
    best_loss = np.inf
    best_params = params.copy()
    best_epoch = 0
    fit_idx = np.asarray(train_idx)
    monitor_idx = np.asarray(test_idx)
    if train_config.validation_fraction > 0.0:
        # salt 961 keeps the split's stream distinct from epoch shuffles
        perm = np.random.default_rng(
            [train_config.seed, fold_index, 961]).permutation(fit_idx)
        n_val = max(1, int(round(train_config.validation_fraction * perm.size)))
        monitor_idx, fit_idx = perm[:n_val], perm[n_val:]
        if fit_idx.size == 0:
            raise BadConfigError("validation split left no training trials")
    test_in, test_tg = inputs[test_idx], targets[test_idx]
    mon_in, mon_tg = inputs[monitor_idx], targets[monitor_idx]

    def test_loss_and_metric(p):
        mon_outs = _forward_batched(p, mon_in, train_config.batch_size)
        loss, _ = _loss_with_grad(task, mon_outs, mon_tg, train_config.huber_delta)
        outs = _forward_batched(p, test_in, train_config.batch_size)
        if task is vit.Head.CLASSIFY4:
            metric = float((outs.argmax(axis=1) == test_tg).mean())
        else:
            metric = float(np.sqrt(((outs - test_tg) ** 2).mean()))
        return loss, metric

    for epoch in range(train_config.max_epochs):
        lr = scheduled_lr(train_config, epoch)
        order = np.random.default_rng(
            [train_config.seed, fold_index, epoch]).permutation(fit_idx)
        total_loss = 0.0
        for lo in range(0, order.size, train_config.batch_size):
            batch = order[lo:lo + train_config.batch_size]
            rng = np.random.default_rng([train_config.seed, fold_index, epoch, lo])
            outs, cache = vit.forward(inputs[batch], params, train_mode=True, rng=rng)
            loss, d_out = _loss_with_grad(task, outs, targets[batch],
                                          train_config.huber_delta)
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"fold {fold_index}: training loss diverged at epoch {epoch}")
            grads = vit.backward(d_out, cache)
            step += 1
            params, state = adam_step(params, grads, state, step, train_config, lr=lr)
            total_loss += loss * batch.size
        train_loss = total_loss / order.size
        t_loss, t_metric = test_loss_and_metric(params)
        if not np.isfinite(t_loss):
            raise NonFiniteError(f"fold {fold_index}: test loss diverged at epoch {epoch}")
        history.append((train_loss, t_loss, t_metric))
        if t_loss <= best_loss:
            best_loss, best_params, best_epoch = t_loss, params.copy(), epoch
        if early_stop_check([h[1] for h in history], patience):
            break

    if task is vit.Head.CLASSIFY4:
        metric = evaluate_classification(best_params, test_in, test_tg,
                                         train_config.batch_size)
    else:
        metric = evaluate_regression(best_params, test_in, test_tg,
                                     train_config.batch_size)
    result = FoldResult(fold_index=fold_index, metric=metric, history=tuple(history),
                        stopped_epoch=len(history) - 1, best_epoch=best_epoch)
    return result, best_params


def _train_fold_args(args):
    return train_fold(*args)


def run_experiment(dataset, subset, label_source: LabelSource, task: vit.Head,
                   folds: FoldAssignment, train_config: TrainConfig,
                   model_config: vit.ModelConfig,
                   pre: PreprocessConfig = PreprocessConfig(),
                   jobs: int = 1, checkpoint_hook=None) -> ExperimentReport:
    """Train/evaluate one subset across all folds and aggregate the report.

    Scaleograms are computed once and shared across folds. Folds may run in
    parallel (`jobs`); results are identical to sequential execution because
    every fold derives its own seeds. `checkpoint_hook(fold_index, params)`
    receives each fold's restored best parameters.
    """
    records = dataset.records
    if not records:
        raise EmptyDataError("dataset has no trials")
    if folds.n_trials != len(records):
        raise UsageError("fold assignment does not match dataset size")
    if task is vit.Head.REGRESS2 and label_source is not LabelSource.SAM_CONTINUOUS:
        raise UsageError("regression requires sam-continuous labels")
    if task is vit.Head.CLASSIFY4 and label_source is LabelSource.SAM_CONTINUOUS:
        raise UsageError("classification requires vaq or sam labels")

    rows = select_channel_rows(dataset, subset)
    if model_config.n_channels != len(rows):
        raise UsageError(
            f"model expects {model_config.n_channels} channels, subset has {len(rows)}")
    inputs = build_inputs(records, rows, pre)
    if inputs.min() < 0.0 or inputs.max() > 1.0:
        raise NonFiniteError("rasterized inputs fell outside [0, 1]")
    if task is vit.Head.CLASSIFY4:
        targets = classification_targets(records, label_source)
    else:
        targets = regression_targets(records)

    work = [(fold, inputs, targets,
             np.asarray(folds.train_indices(fold), dtype=np.intp),
             np.asarray(folds.test_indices(fold), dtype=np.intp),
             model_config, train_config)
            for fold in range(folds.k)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_train_fold_args, work))
    else:
        outcomes = [train_fold(*w) for w in work]

    fold_results = []
    for result, best_params in outcomes:
        fold_results.append(result)
        if checkpoint_hook is not None:
            checkpoint_hook(result.fold_index, best_params)
    mean_metric = float(np.mean([r.metric for r in fold_results]))
    if task is vit.Head.CLASSIFY4:
        relevant = mean_metric > relevance_threshold(task)
    else:
        relevant = mean_metric < relevance_threshold(task)
    return ExperimentReport(
        subset_name=subset.name, n_channels=len(rows), label_source=label_source,
        task=task, k=folds.k, seed=train_config.seed, fold_mode=folds.mode.value,
        fold_of=folds.fold_of, fold_results=tuple(fold_results),
        mean_metric=mean_metric, relevant=relevant,
        n_parameters=vit.n_parameters(model_config))
