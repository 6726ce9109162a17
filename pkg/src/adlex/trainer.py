"""Training protocol: Adam, early stopping, plateau LR reduction, freeze/unfreeze phases, repeated CV."""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as tn
from .corpus import CVPlan, Dataset, Transcript
from .errors import EmptySplit, ShapeMismatch
from .model import (BaseModel, Example, LossConfig, ModelConfig, MTLModel, PrecomputedEncoder, Vocab,
                    balanced_class_weights, build_model)
from .tensor import Tensor

log = logging.getLogger(__name__)

MIN_DELTA = 1e-6


# --------------------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update of ``params`` in place; parameters without a gradient are skipped."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------- schedules

@dataclass(frozen=True)
class Phase:
    name: str
    lr: float
    patience: int
    reduce_lr: bool
    train_encoder: bool


@dataclass(frozen=True)
class TrainSchedule:
    phase1_lr: float = 1e-4
    phase2_lr: float = 1e-5
    es_patience_phase1: int = 9
    es_patience_phase2: int = 3
    rlrop_factor: float = 0.2
    rlrop_patience: int = 3
    max_epochs: int = 500
    batch_size: int = 8
    two_phase: bool = True
    train_encoder_single_phase: bool = True

    def __post_init__(self):
        if self.phase1_lr <= 0 or self.phase2_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.rlrop_factor < 1.0:
            raise ValueError("rlrop_factor must lie in (0, 1)")
        if min(self.es_patience_phase1, self.es_patience_phase2, self.rlrop_patience) < 1:
            raise ValueError("patience values must be at least 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "TrainSchedule":
        """Default protocol per model kind."""
        if kind == "siamese":
            base = cls(phase1_lr=1e-3)
        elif kind == "mtl":
            base = cls(phase1_lr=1e-6, es_patience_phase1=8, two_phase=False)
        elif kind == "mtl-de":
            base = cls(phase1_lr=1e-6, es_patience_phase1=8, two_phase=False, train_encoder_single_phase=False)
        else:
            base = cls()
        return replace(base, **overrides)

    def phases(self) -> list[Phase]:
        if not self.two_phase:
            return [Phase("single", self.phase1_lr, self.es_patience_phase1, False, self.train_encoder_single_phase)]
        return [Phase("frozen", self.phase1_lr, self.es_patience_phase1, True, False),
                Phase("unfrozen", self.phase2_lr, self.es_patience_phase2, False, True)]


# --------------------------------------------------------------------------- fitting

def to_examples(transcripts: Sequence[Transcript]) -> list[Example]:
    return [Example(t.id, t.tokens, t.label, None if t.mmse is None else int(t.severity)) for t in transcripts]


def mean_loss(model: BaseModel, examples: Sequence[Example], loss_config: LossConfig) -> float:
    return float(np.mean([model.loss(ex, False, None, loss_config).item() for ex in examples]))


@dataclass
class FitResult:
    history: list[dict]
    best_val_loss: dict[str, float]
    epochs: int


def fit(model: BaseModel, train: Sequence[Example], val: Sequence[Example], schedule: TrainSchedule,
        seed: int = 0, loss_config: LossConfig | None = None, phases: Sequence[Phase] | None = None) -> FitResult:
    """Train ``model`` in place phase by phase, restoring the best-validation weights after each phase."""
    if not train or not val:
        raise EmptySplit(f"train and validation sets must be non-empty (got {len(train)} and {len(val)})")
    train_ids = {ex.id for ex in train}
    if train_ids & {ex.id for ex in val}:
        raise EmptySplit("train and validation sets overlap")
    loss_config = loss_config or LossConfig()
    phases = list(phases) if phases is not None else schedule.phases()
    all_params = model.parameters()
    encoder_names = model.encoder_parameter_names()
    history: list[dict] = []
    best_losses: dict[str, float] = {}
    total_epochs = 0

    for phase in phases:
        trainable = {n: p for n, p in all_params.items() if phase.train_encoder or n not in encoder_names}
        for n, p in all_params.items():
            p.requires_grad = n in trainable
        state = AdamState()
        lr = phase.lr
        best = math.inf
        best_state = model.state()
        es_wait = rl_wait = 0
        rng = tn.make_rng(seed, "fit", phase.name)
        for epoch in range(1, schedule.max_epochs + 1):
            order = rng.permutation(len(train))
            batch_losses = []
            for start in range(0, len(order), schedule.batch_size):
                batch = [train[i] for i in order[start:start + schedule.batch_size]]
                for p in trainable.values():
                    p.grad = None
                with tn.Tape() as tape:
                    total = None
                    for ex in batch:
                        l = model.loss(ex, True, rng, loss_config)
                        total = l if total is None else tn.add(total, l)
                    loss = tn.scale(total, 1.0 / len(batch))
                tape.backward(loss)
                grads = {n: p.grad for n, p in trainable.items() if p.grad is not None}
                adam_step(trainable, grads, state, lr)
                batch_losses.append(loss.item())
            val_loss = mean_loss(model, val, loss_config)
            total_epochs += 1
            history.append({"phase": phase.name, "epoch": epoch, "train_loss": float(np.mean(batch_losses)),
                            "val_loss": val_loss, "lr": lr})
            if val_loss < best - MIN_DELTA:
                best = val_loss
                best_state = model.state()
                es_wait = rl_wait = 0
            else:
                es_wait += 1
                rl_wait += 1
                if es_wait >= phase.patience:
                    break
                if phase.reduce_lr and rl_wait >= schedule.rlrop_patience:
                    lr *= schedule.rlrop_factor
                    rl_wait = 0
        model.load_state(best_state)
        best_losses[phase.name] = best
        log.debug("phase %s finished after %d epochs, best val loss %.6f", phase.name, epoch, best)
    for p in all_params.values():
        p.requires_grad = True
    return FitResult(history, best_losses, total_epochs)


# --------------------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    specificity: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn_: int, fn: int) -> "Metrics":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        n = tp + fp + tn_ + fn
        accuracy = (tp + tn_) / n if n else 0.0
        specificity = tn_ / (tn_ + fp) if tn_ + fp else 0.0
        return cls(precision, recall, f1, accuracy, specificity)

    @classmethod
    def from_predictions(cls, y_true: Sequence[int], y_pred: Sequence[int]) -> "Metrics":
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        tp = int(np.sum((y_true == 1) & (y_pred == 1)))
        fp = int(np.sum((y_true == 0) & (y_pred == 1)))
        tn_ = int(np.sum((y_true == 0) & (y_pred == 0)))
        fn = int(np.sum((y_true == 1) & (y_pred == 0)))
        return cls.from_counts(tp, fp, tn_, fn)

    def to_json(self) -> dict:
        return asdict(self)


METRIC_NAMES = ("precision", "recall", "f1", "accuracy", "specificity")


def predict_labels(model: BaseModel, examples: Sequence[Example]) -> np.ndarray:
    """Dementia = 1 when P(dementia) > 0.5 (sigmoid heads) or wins the argmax (softmax heads)."""
    return (model.predict_proba(examples) > 0.5).astype(np.int64)


def evaluate(model: BaseModel, test: Sequence[Example]) -> Metrics:
    if not test:
        raise EmptySplit("cannot evaluate on an empty test set")
    return Metrics.from_predictions([ex.label for ex in test], predict_labels(model, test))


def aggregate(metrics: Sequence[Metrics]) -> dict[str, dict[str, float]]:
    """Arithmetic mean and sample standard deviation (ddof=1) of each metric across folds."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(m, name) for m in metrics], dtype=np.float64)
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[name] = {"mean": float(vals.mean()), "std": std}
    return out


# --------------------------------------------------------------------------- cross-validation

def fold_seed(master_seed: int, repeat: int, fold: int) -> int:
    h = hashlib.blake2b(f"{master_seed}/{repeat}/{fold}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1


def prepare_model(config: ModelConfig, train: Sequence[Transcript], seed: int,
                  encoder: PrecomputedEncoder | None = None) -> BaseModel:
    vocab = Vocab.build(t.tokens for t in train) if config.encoder == "toy" else None
    return build_model(config, vocab, seed, encoder)


def loss_config_for(model: BaseModel, train: Sequence[Example], alpha: float) -> LossConfig:
    if isinstance(model, MTLModel):
        return LossConfig(alpha, balanced_class_weights(ex.severity for ex in train))
    return LossConfig(alpha)


def train_model(dataset: Dataset, train_ids, val_ids, config: ModelConfig, schedule: TrainSchedule, seed: int,
                alpha: float = 0.1, encoder: PrecomputedEncoder | None = None) -> tuple[BaseModel, FitResult]:
    train_t = list(dataset.subset(train_ids))
    val_t = list(dataset.subset(val_ids))
    model = prepare_model(config, train_t, seed, encoder)
    train_ex, val_ex = to_examples(train_t), to_examples(val_t)
    result = fit(model, train_ex, val_ex, schedule, seed, loss_config_for(model, train_ex, alpha))
    return model, result


def _run_fold(args) -> dict:
    dataset, fold, config, schedule, master_seed, alpha, encoder = args
    seed = fold_seed(master_seed, fold.repeat, fold.fold)
    overlap = set(fold.test_ids) & (set(fold.train_ids) | set(fold.val_ids))
    if overlap:
        raise EmptySplit(f"fold {fold.repeat}/{fold.fold}: test ids leak into training: {sorted(overlap)[:5]}")
    model, result = train_model(dataset, fold.train_ids, fold.val_ids, config, schedule, seed, alpha, encoder)
    test_ex = to_examples(list(dataset.subset(fold.test_ids)))
    train_ex = to_examples(list(dataset.subset(fold.train_ids)))
    return {
        "repeat": fold.repeat, "fold": fold.fold, "seed": seed,
        "test": evaluate(model, test_ex).to_json(),
        "train": evaluate(model, train_ex).to_json(),
        "epochs": result.epochs,
        "best_val_loss": result.best_val_loss,
        "history": result.history,
    }


@dataclass
class CVReport:
    config: dict
    folds: list[dict]
    aggregate: dict

    def to_json(self) -> dict:
        return {"config": self.config, "aggregate": self.aggregate, "folds": self.folds}


def cross_validate(dataset: Dataset, config: ModelConfig, schedule: TrainSchedule, plan: CVPlan,
                   seed: int = 0, alpha: float = 0.1, jobs: int = 1,
                   encoder: PrecomputedEncoder | None = None) -> CVReport:
    """Fresh model per fold; metrics aggregated over all k * repeats folds in (repeat, fold) order."""
    tasks = [(dataset, f, config, schedule, seed, alpha, encoder) for f in plan.folds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    results.sort(key=lambda r: (r["repeat"], r["fold"]))
    test_metrics = [Metrics(**r["test"]) for r in results]
    return CVReport(
        config={"model": asdict(config), "schedule": asdict(schedule), "seed": seed, "alpha": alpha,
                "k": plan.k, "repeats": plan.repeats, "val_frac": plan.val_frac},
        folds=results,
        aggregate=aggregate(test_metrics),
    )
