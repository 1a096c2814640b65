"""Training harness: SGD with momentum, the desk-scale loop, and ablations."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import N_CLASSES, make_dataset
from .errors import ArgumentError, DivergenceError
from .network import Model, build_model, multiscale_cidc_forward
from .ops import softmax_cross_entropy
from .tensor import Tensor

DIRECTIONS = ("non", "uni", "bi")
ABLATION_VARIANTS = ("non", "uni", "bi", "pool")


@dataclass
class TrainConfig:
    seed: int = 12345
    epochs: int = 30
    batch: int = 16
    train_size: int = 2000
    val_size: int = 400
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: tuple[int, ...] = (20, 26)
    decay_factor: float = 10.0
    dropout: float = 0.6
    fusion: str = "concat_t"
    direction: str = "bi"
    clip_t: int = 8
    clip_size: int = 36
    stage_channels: tuple[int, ...] = (8, 16, 32)
    spatial_strides: tuple[int, ...] = (2, 2, 2)
    temporal_strides: tuple[int, ...] = (1, 1, 2)
    unit_count: int = 2


@dataclass
class OptimState:
    lr_init: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: tuple[int, ...] = (40, 80)
    decay_factor: float = 10.0
    epoch: int = 0
    velocities: dict[str, Tensor] = field(default_factory=dict)

    def learning_rate(self) -> float:
        drops = sum(1 for d in self.decay_epochs if self.epoch >= d)
        return self.lr_init / self.decay_factor**drops


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainResult:
    config: TrainConfig
    history: list[EpochStats]
    model: Model
    metrics: dict


def sgd_step(params: dict[str, Tensor], grads: dict[str, Tensor], state: OptimState) -> None:
    """In-place momentum update: v <- m*v + (g + wd*p); p <- p - lr*v."""
    lr = state.learning_rate()
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
        v = state.velocities.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.velocities[name] = v
        v *= state.momentum
        v += g + state.weight_decay * p
        p -= lr * v


def model_for(config: TrainConfig, rng: np.random.Generator) -> Model:
    return build_model(
        rng,
        in_channels=1,
        in_t=config.clip_t,
        in_size=config.clip_size,
        stage_channels=tuple(config.stage_channels),
        spatial_strides=tuple(config.spatial_strides),
        temporal_strides=tuple(config.temporal_strides),
        unit_count=config.unit_count,
        fusion_mode=config.fusion,
        temporal_mode=config.direction,
        dropout_rate=config.dropout,
        n_classes=N_CLASSES,
    )


def batch_loss_and_grads(
    model: Model,
    clips: Tensor,
    labels: np.ndarray,
    rng: np.random.Generator | None,
    train_flag: bool = True,
) -> tuple[float, dict[str, Tensor], Tensor]:
    """Mean loss over the batch, parameter gradients, and the raw logits."""
    net = multiscale_cidc_forward(clips, model, rng, train_flag)
    ce = softmax_cross_entropy(net.output, labels)
    (dlogits,) = ce.backward(1.0)
    _, grads = net.backward(dlogits)
    return ce.output, grads, net.output


def predict_logits(model: Model, clips: Tensor, chunk: int = 64) -> Tensor:
    parts = []
    for start in range(0, clips.shape[0], chunk):
        out = multiscale_cidc_forward(clips[start : start + chunk], model, None, False)
        parts.append(out.output)
    return np.concatenate(parts, axis=0)


def evaluate(model: Model, clips: Tensor, labels: np.ndarray, chunk: int = 64) -> dict:
    """Validation metrics: overall, per-class, reversal-pair, and axis accuracy.

    Pair accuracy restricts both the samples and the argmax to one reversal
    pair, so it isolates how much frame-order information the model carries.
    Axis accuracy only asks horizontal-vs-vertical, solvable without order.
    """
    logits = predict_logits(model, clips, labels.size if chunk is None else chunk)
    preds = logits.argmax(axis=1)
    per_class = [
        float((preds[labels == c] == c).mean()) if (labels == c).any() else float("nan")
        for c in range(N_CLASSES)
    ]
    pairs = {}
    for name, (a, b) in (("pair_01", (0, 1)), ("pair_23", (2, 3))):
        idx = (labels == a) | (labels == b)
        if idx.any():
            sub = logits[idx][:, [a, b]].argmax(axis=1)
            truth = (labels[idx] == b).astype(sub.dtype)
            pairs[name] = float((sub == truth).mean())
        else:
            pairs[name] = float("nan")
    return {
        "overall": float((preds == labels).mean()),
        "per_class": per_class,
        "axis": float(((preds // 2) == (labels // 2)).mean()),
        **pairs,
    }


def train(config: TrainConfig, progress=None) -> TrainResult:
    """Desk-scale training run, bit-reproducible for a fixed config.

    `progress`, if given, is called with each EpochStats as it completes;
    it must not mutate the model (reporting only).
    """
    if config.epochs < 1 or config.batch < 1:
        raise ArgumentError("epochs and batch size must be positive")
    if config.direction not in ABLATION_VARIANTS:
        raise ArgumentError(f"unknown direction {config.direction!r}")
    streams = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, train_rng, val_rng, loop_rng = (np.random.default_rng(s) for s in streams)

    model = model_for(config, init_rng)
    train_clips, train_labels = make_dataset(
        config.train_size, train_rng, config.clip_t, config.clip_size
    )
    val_clips, val_labels = make_dataset(
        config.val_size, val_rng, config.clip_t, config.clip_size
    )

    params = model.parameters()
    state = OptimState(
        lr_init=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        decay_epochs=tuple(config.decay_epochs),
        decay_factor=config.decay_factor,
    )
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        state.epoch = epoch
        order = loop_rng.permutation(config.train_size)
        losses = []
        hits = 0
        for start in range(0, config.train_size, config.batch):
            take = order[start : start + config.batch]
            loss, grads, logits = batch_loss_and_grads(
                model, train_clips[take], train_labels[take], loop_rng, True
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            losses.append(loss)
            hits += int((logits.argmax(axis=1) == train_labels[take]).sum())
            sgd_step(params, grads, state)
        val = evaluate(model, val_clips, val_labels)
        stats = EpochStats(epoch, float(np.mean(losses)), hits / config.train_size, val["overall"])
        history.append(stats)
        if progress is not None:
            progress(stats)
    metrics = evaluate(model, val_clips, val_labels)
    return TrainResult(config, history, model, metrics)


def history_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,loss,train_acc,val_acc"]
    for row in history:
        lines.append(f"{row.epoch},{row.loss!r},{row.train_acc!r},{row.val_acc!r}")
    return "\n".join(lines) + "\n"


def ablate_directions(config: TrainConfig, progress=None) -> dict[str, TrainResult]:
    """Train the direction grid plus the order-invariant pooling control.

    All variants share the seed and sizes; only the temporal pathway
    changes. The control replaces the branch stack with a temporal mean (and
    runs its backbone without temporal striding), so it cannot represent
    frame order at all.
    """
    results = {}
    for variant in ABLATION_VARIANTS:
        report = None if progress is None else (lambda s, v=variant: progress(v, s))
        results[variant] = train(replace(config, direction=variant), report)
    return results


def ablation_table(results: dict[str, TrainResult]) -> list[dict]:
    rows = []
    for variant, res in results.items():
        m = res.metrics
        rows.append(
            {
                "variant": variant,
                "overall": m["overall"],
                "class0": m["per_class"][0],
                "class1": m["per_class"][1],
                "class2": m["per_class"][2],
                "class3": m["per_class"][3],
                "pair_01": m["pair_01"],
                "pair_23": m["pair_23"],
                "axis": m["axis"],
            }
        )
    return rows
