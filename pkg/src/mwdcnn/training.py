"""Losses, the Adam optimizer, the banded LR schedule and the training loop."""

import math
import numpy as np
from dataclasses import dataclass
from pathlib import Path

from . import engine
from .engine import Tensor, Tape, DTYPES
from .checkpoint import save_checkpoint


class NonFiniteLossError(RuntimeError):
    """Raised the moment the training loss stops being finite."""


def mse_loss(pred: Tensor, target: Tensor, n: int | None = None,
             per_pixel: bool = False) -> Tensor:
    """Half squared error over the batch, divided by the image count n.

    With the default normalization the gradient w.r.t. the prediction is
    (pred - target) / n, i.e. scaled per image rather than per pixel.
    `per_pixel=True` divides by the total element count instead, which is
    the more common convention in practical trainers.
    """
    d = engine.sub(pred, target)
    if per_pixel:
        denom = d.data.size
    else:
        denom = n if n is not None else pred.shape[0]
    return engine.scale(engine.sum_all(engine.square(d)), 0.5 / denom)


def charbonnier_loss(pred: Tensor, target: Tensor, eps: float = 1e-3) -> Tensor:
    """Mean of sqrt((pred - target)^2 + eps^2), a smooth L1 surrogate."""
    d = engine.sub(pred, target)
    return engine.mean_all(engine.sqrt(engine.add_scalar(engine.square(d), eps * eps)))


class AdamState:
    """First and second moment buffers for one parameter list."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    @classmethod
    def from_blob(cls, params, blob, beta1=0.9, beta2=0.999, eps=1e-8):
        """Rebuild saved state (a checkpoint OptimizerBlob) onto `params`."""
        state = cls(params, beta1, beta2, eps)
        for i, (p, m, v) in enumerate(zip(params, blob.m, blob.v)):
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ValueError(f"moment {i} shape does not match its parameter")
        state.t = blob.step
        state.m = [m.copy() for m in blob.m]
        state.v = [v.copy() for v in blob.v]
        return state


def adam_step(state: AdamState, params, grads, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def default_lr_table(epochs: int):
    """Three descending bands: 1e-4, 1e-5, 1e-6 over thirds of the run."""
    band = math.ceil(epochs / 3)
    table = []
    start = 1
    for lr in (1e-4, 1e-5, 1e-6):
        if start > epochs:
            break
        end = min(epochs, start + band - 1)
        table.append((start, end, lr))
        start = end + 1
    return tuple(table)


def parse_lr_table(text: str):
    """Parse '1-30:1e-4,31-60:1e-5' into ((1, 30, 1e-4), (31, 60, 1e-5))."""
    table = []
    for part in text.split(","):
        span, _, rate = part.partition(":")
        lo, _, hi = span.partition("-")
        try:
            table.append((int(lo), int(hi), float(rate)))
        except ValueError as exc:
            raise ValueError(f"bad lr table entry {part!r}: {exc}") from exc
    return tuple(table)


@dataclass
class TrainPlan:
    batch_size: int = 64
    epochs: int = 90
    lr_table: tuple | None = None  # ((first_epoch, last_epoch, lr), ...)
    loss: str = "mse"
    seed: int = 0
    sigma: float = 25.0
    blind: bool = False
    blind_range: tuple = (0.0, 55.0)
    per_pixel_loss: bool = False
    max_iters: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.loss not in ("mse", "charbonnier"):
            raise ValueError(f"loss must be 'mse' or 'charbonnier', got {self.loss!r}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.lr_table is None:
            self.lr_table = default_lr_table(self.epochs)
        covered = set()
        for lo, hi, _ in self.lr_table:
            covered.update(range(lo, hi + 1))
        expected = set(range(1, self.epochs + 1))
        if not expected <= covered:
            missing = sorted(expected - covered)
            raise ValueError(f"lr table leaves epochs uncovered, starting at {missing[0]}")

    _BOOLS = {"true": True, "1": True, "yes": True,
              "false": False, "0": False, "no": False}

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainPlan":
        kwargs = {}
        for key, raw in mapping.items():
            if key not in cls.__dataclass_fields__:
                raise ValueError(f"unknown training config key: {key}")
            if key in ("batch_size", "epochs", "seed", "max_iters"):
                kwargs[key] = int(raw)
            elif key == "sigma":
                kwargs[key] = float(raw)
            elif key in ("blind", "per_pixel_loss"):
                if isinstance(raw, str):
                    word = raw.strip().lower()
                    if word not in cls._BOOLS:
                        raise ValueError(f"{key}: expected true/false, got {raw!r}")
                    kwargs[key] = cls._BOOLS[word]
                else:
                    kwargs[key] = bool(raw)
            elif key == "lr_table":
                kwargs[key] = parse_lr_table(raw) if isinstance(raw, str) else raw
            elif key == "blind_range":
                lo, _, hi = str(raw).partition("-")
                kwargs[key] = (float(lo), float(hi))
            else:
                kwargs[key] = raw
        return cls(**kwargs)


def lr_for_epoch(plan: TrainPlan, epoch: int) -> float:
    if not 1 <= epoch <= plan.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{plan.epochs}")
    for lo, hi, lr in plan.lr_table:
        if lo <= epoch <= hi:
            return lr
    raise ValueError(f"lr table has no band for epoch {epoch}")


def train(plan: TrainPlan, model, dataset, out_dir=None, log_name="train_log.csv"):
    """Seeded mini-batch Adam loop; returns the per-iteration log rows.

    Each row is (iteration, epoch, lr, loss). When `out_dir` is given the
    rows are streamed to a CSV there (header `iter,epoch,lr,loss`, LF
    endings) and a checkpoint with optimizer state is written after every
    epoch. Batches are drawn from a fresh seeded shuffle per epoch; the
    last short batch is kept. A non-finite loss aborts immediately.
    """
    dtype = DTYPES[model.config.precision]
    params = [p for _, p in model.params()]
    state = AdamState(params)
    rng = np.random.default_rng(plan.seed)

    out_dir = Path(out_dir) if out_dir is not None else None
    log = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log = open(out_dir / log_name, "w", newline="\n")
        log.write("iter,epoch,lr,loss\n")

    rows = []
    iteration = 0
    try:
        for epoch in range(1, plan.epochs + 1):
            lr = lr_for_epoch(plan, epoch)
            order = rng.permutation(len(dataset))
            for start in range(0, len(order), plan.batch_size):
                batch = order[start:start + plan.batch_size]
                noisy, clean = dataset.batch(batch, dtype=dtype)
                x = Tensor(noisy, dtype=dtype)
                y = Tensor(clean, dtype=dtype)
                with Tape() as tape:
                    pred = model.forward(x)
                    if plan.loss == "charbonnier":
                        loss = charbonnier_loss(pred, y)
                    else:
                        loss = mse_loss(pred, y, n=len(batch), per_pixel=plan.per_pixel_loss)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteLossError(
                        f"loss is {value} at iteration {iteration + 1} (epoch {epoch}, lr {lr:g})")
                engine.zero_grads(params)
                engine.backward(loss)
                adam_step(state, params, [p.grad for p in params], lr)
                tape.release()  # else dead graphs wait on the cycle collector
                iteration += 1
                rows.append((iteration, epoch, lr, value))
                if log is not None:
                    log.write(f"{iteration},{epoch},{lr:g},{value:.10g}\n")
                if plan.max_iters is not None and iteration >= plan.max_iters:
                    break
            if out_dir is not None:
                save_checkpoint(model, out_dir / f"epoch_{epoch:03d}.ckpt", state)
            if plan.max_iters is not None and iteration >= plan.max_iters:
                break
    finally:
        if log is not None:
            log.close()
    return rows
