"""Joint loss, AdamW with linear warmup + cosine decay, metrics and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .autograd import NonFiniteError, Tensor, add, mul, no_grad, reshape, softmax_cross_entropy
from .baselines import build_model
from .checkpoint import save_checkpoint
from .data import Dataset
from .relation import ModelConfig, ModelOutput, RelationModel

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


class NonFiniteGradient(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 150
    warmup_epochs: int = 30
    base_lr: float = 2e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    seed: int = 0
    eval_train: bool = False


@dataclass
class Schedule:
    base_lr: float
    warmup_epochs: int
    total_epochs: int


def lr_at(epoch: int, schedule: Schedule) -> float:
    """Linear ramp ``base·(e+1)/warmup`` then cosine decay towards zero."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    w = schedule.warmup_epochs
    if epoch < w:
        return schedule.base_lr * (epoch + 1) / w
    span = schedule.total_epochs - w
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / span))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    base_lr: float = 2e-4
    warmup_epochs: int = 30
    total_epochs: int = 150
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_step(state: OptimizerState, params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float) -> None:
    """Decoupled weight decay, then a bias-corrected Adam step; updates ``params`` in place.

    A non-finite gradient aborts the whole step before any parameter moves.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        new = p.data * (1.0 - lr * state.weight_decay)
        new -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = new


def _as_batch(t: Tensor, width_axes: int) -> Tensor:
    return t if t.ndim > width_axes else reshape(t, (1, *t.shape))


def joint_loss(output: ModelOutput, y_group, y_actions, lam: float) -> Tensor:
    """Cross-entropy on the fused group logits plus ``lam`` times the fused individual term."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    group = _as_batch(output.fused_group, 1)
    loss = softmax_cross_entropy(group, np.asarray(y_group).reshape(-1))
    if lam == 0:
        return loss
    ind = _as_batch(output.fused_individual, 2)
    ind = reshape(ind, (-1, ind.shape[-1]))
    return add(loss, mul(softmax_cross_entropy(ind, np.asarray(y_actions).reshape(-1)), lam))


def confusion_matrix(y_true, y_pred, classes: int) -> np.ndarray:
    conf = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(conf, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return conf


def exact_scores(confusion: np.ndarray) -> tuple[Fraction, Fraction]:
    """MCA = trace/total and MPCA = mean recall over classes with support, as fractions in [0, 1]."""
    conf = np.asarray(confusion)
    total = int(conf.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    mca = Fraction(int(np.trace(conf)), total)
    recalls = [Fraction(int(conf[i, i]), int(conf[i].sum())) for i in range(conf.shape[0]) if conf[i].sum() > 0]
    return mca, sum(recalls, Fraction(0)) / len(recalls)


def scores_from_confusion(confusion: np.ndarray) -> tuple[float, float]:
    mca, mpca = exact_scores(confusion)
    return float(100 * mca), float(100 * mpca)


@dataclass
class MetricReport:
    mca: float
    mpca: float
    confusion: np.ndarray
    per_path: dict[str, tuple[float, float]]
    loss: float
    losses: list[float] = field(default_factory=list)


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def evaluate(model: RelationModel, dataset: Dataset, batch_size: int = 256) -> MetricReport:
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    classes = model.config.group_classes
    preds = np.empty(n, dtype=np.int64)
    path_preds = {name: np.empty(n, dtype=np.int64) for name in model.paths}
    use_scene = model.scene_head is not None and dataset.scene is not None
    if use_scene:
        path_preds["scene"] = np.empty(n, dtype=np.int64)
    total_loss = 0.0
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for sl in _batches(n, batch_size):
                out = model(dataset.features[sl], dataset.scene[sl] if use_scene else None)
                preds[sl] = out.fused_group.data.argmax(axis=-1)
                for name, logits in out.group.items():
                    path_preds[name][sl] = logits.data.argmax(axis=-1)
                if out.scene is not None:
                    path_preds["scene"][sl] = out.scene.data.argmax(axis=-1)
                loss = joint_loss(out, dataset.group_labels[sl], dataset.action_labels[sl], model.config.lam)
                total_loss += loss.item() * (sl.stop - sl.start)
    finally:
        model.train(was_training)
    conf = confusion_matrix(dataset.group_labels, preds, classes)
    mca, mpca = scores_from_confusion(conf)
    per_path = {
        name: scores_from_confusion(confusion_matrix(dataset.group_labels, p, classes))
        for name, p in path_preds.items()
    }
    return MetricReport(mca, mpca, conf, per_path, total_loss / n)


@dataclass
class TrainState:
    model: RelationModel
    optimizer: OptimizerState
    epoch: int = 0
    best_mca: float = -1.0
    best_epoch: int = -1
    best_state: dict[str, np.ndarray] | None = None


METRIC_FIELDS = ("epoch", "split", "head", "lr", "loss", "mca", "mpca")


def _fmt(x) -> str:
    return "" if x is None else (f"{x:.10g}" if isinstance(x, float) else str(x))


def metric_rows(epoch: int, split_name: str, lr: float, report: MetricReport) -> list[dict]:
    rows = [dict(epoch=epoch, split=split_name, head="fused", lr=lr, loss=report.loss, mca=report.mca, mpca=report.mpca)]
    for name, (mca, mpca) in report.per_path.items():
        rows.append(dict(epoch=epoch, split=split_name, head=name, lr=lr, loss=None, mca=mca, mpca=mpca))
    return rows


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in METRIC_FIELDS])


def write_confusion_csv(conf: np.ndarray, class_names: list[str], path) -> None:
    names = class_names if len(class_names) == conf.shape[0] else [str(i) for i in range(conf.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, conf):
            w.writerow([name, *map(int, row)])


def fit(
    config: ModelConfig,
    train_set: Dataset,
    test_set: Dataset | None = None,
    train_config: TrainConfig | None = None,
    out_dir=None,
) -> tuple[TrainState, list[dict]]:
    """Train to completion and restore the best-by-test-MCA parameters.

    Without a test set the last epoch is kept. Returns the state and the
    metric rows (also written to ``out_dir/metrics.csv`` when given).
    """
    tc = train_config or TrainConfig()
    if len(train_set) == 0:
        raise ValueError("empty training set")
    model = build_model(config)
    use_scene = config.scene and train_set.scene is not None
    opt = OptimizerState(
        base_lr=tc.base_lr, warmup_epochs=tc.warmup_epochs, total_epochs=tc.epochs,
        weight_decay=tc.weight_decay, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps,
    )
    schedule = Schedule(tc.base_lr, tc.warmup_epochs, tc.epochs)
    state = TrainState(model, opt)
    params = dict(model.named_parameters())
    shuffle_rng = np.random.default_rng(tc.seed)
    dropout_rng = np.random.default_rng(tc.seed + 1)
    rows: list[dict] = []
    n = len(train_set)
    for epoch in range(tc.epochs):
        lr = lr_at(epoch, schedule)
        model.train()
        order = shuffle_rng.permutation(n)
        running = 0.0
        for sl in _batches(n, tc.batch_size):
            idx = order[sl]
            scene = train_set.scene[idx] if use_scene else None
            try:
                out = model(train_set.features[idx], scene, dropout_rng)
                loss = joint_loss(out, train_set.group_labels[idx], train_set.action_labels[idx], config.lam)
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch, str(exc)) from None
            model.zero_grad()
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            try:
                adamw_step(opt, params, grads, lr)
            except NonFiniteGradient as exc:
                raise TrainingDiverged(epoch, str(exc)) from None
            running += loss.item() * len(idx)
        rows.append(dict(epoch=epoch, split="train", head="fused", lr=lr, loss=running / n, mca=None, mpca=None))
        if tc.eval_train:
            rows.extend(r for r in metric_rows(epoch, "train-eval", lr, evaluate(model, train_set)))
        if test_set is not None and len(test_set):
            report = evaluate(model, test_set)
            rows.extend(metric_rows(epoch, "test", lr, report))
            if report.mca > state.best_mca:
                state.best_mca, state.best_epoch = report.mca, epoch
                state.best_state = model.state_dict()
            log.info("epoch %d lr %.3g loss %.4f test MCA %.2f", epoch, lr, running / n, report.mca)
        else:
            log.info("epoch %d lr %.3g loss %.4f", epoch, lr, running / n)
        state.epoch = epoch + 1
    if state.best_state is not None:
        model.load_state_dict(state.best_state)
    model.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(rows, out_dir / "metrics.csv")
        save_checkpoint(model, out_dir / "checkpoint", {"best_epoch": state.best_epoch, "best_mca": state.best_mca})
    return state, rows


def group_embeddings(model: RelationModel, dataset: Dataset, path_name: str | None = None, batch_size: int = 256) -> np.ndarray:
    path_name = path_name or next(iter(model.paths))
    if path_name not in model.paths:
        raise KeyError(f"model has no path {path_name!r}")
    model.eval()
    chunks = []
    with no_grad():
        for sl in _batches(len(dataset), batch_size):
            _, _, emb = model.paths[path_name](Tensor(dataset.features[sl]))
            chunks.append(emb.data)
    return np.concatenate(chunks) if chunks else np.zeros((0, model.config.dim))


def export_embeddings(model: RelationModel, dataset: Dataset, path, path_name: str | None = None) -> Path:
    """One CSV row per episode: index, group label, then the D-dimensional group embedding."""
    emb = group_embeddings(model, dataset, path_name)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "label", *[f"e{i}" for i in range(emb.shape[1])]])
        for i, (row, label) in enumerate(zip(emb, dataset.group_labels)):
            w.writerow([i, int(label), *(repr(float(v)) for v in row)])
    return path
