"""On-line augmented mini-batch training.

Every iteration samples data indices i.i.d. with replacement, draws a fresh
deformation parameter set per slot, deforms, takes one SGD step on the
mean gradient, and discards the virtual batch. An epoch is the number of
iterations needed to process N virtual samples, N being the original
training-pool size.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from apac import sampler
from apac.dataio import LabeledDataset
from apac.nn_core import Network
from apac.optim import OptimConfig, OptimState, lr_at_epoch, sgd_momentum_step
from apac.rng import STREAM_BATCH_INDICES, STREAM_TRAIN_DEFORM, RngStream
from apac.sampler import DeformSpec


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, lr: float, loss: float):
        super().__init__(f"non-finite loss {loss} at iteration {iteration} (lr={lr})")
        self.iteration = iteration
        self.lr = lr
        self.loss = loss


@dataclass
class TrainConfig:
    optim: OptimConfig
    epochs: int
    seed: int
    deform: DeformSpec | None = None        # None -> non-augmented baseline
    class_distinctive: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.class_distinctive and (self.deform is None or not self.deform.class_distinctive):
            raise ValueError("class_distinctive training needs a class-distinctive DeformSpec")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_error: float        # NaN when no validation set is supplied
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_clock_sec: float = 0.0
    checkpoint_digest: str = ""

    def write_csv(self, path, meta: str | None = None) -> None:
        with open(path, "w", newline="") as f:
            if meta:
                f.write(f"# {meta}\n")
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "val_error", "lr"])
            for r in self.epochs:
                w.writerow([r.epoch, f"{r.train_loss:.10g}",
                            f"{r.val_error:.10g}", f"{r.lr:.10g}"])


def build_minibatch(ds: LabeledDataset, cfg: TrainConfig,
                    iteration: int) -> tuple[np.ndarray, np.ndarray, list]:
    """One virtual mini-batch for the given global iteration index.

    Indices are uniform with replacement; each slot gets an independent
    deformation parameter set keyed by its global slot index, so duplicate
    data indices still receive distinct deformations. Returns
    (images, labels, params_log).
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    b = cfg.optim.batch_size
    idx_gen = RngStream(cfg.seed, (STREAM_BATCH_INDICES,)).at(iteration)
    indices = idx_gen.integers(0, len(ds), size=b)
    labels = ds.labels[indices]
    if cfg.deform is None:
        return ds.images[indices], labels, []
    deform_stream = RngStream(cfg.seed, (STREAM_TRAIN_DEFORM,))
    images = np.empty((b,) + ds.images.shape[1:], dtype=ds.images.dtype)
    params_log = []
    for j in range(b):
        gen = deform_stream.at(iteration * b + j)
        cls = int(labels[j]) if cfg.class_distinctive else None
        theta = sampler.sample_theta(cfg.deform, gen, cls)
        images[j] = sampler.apply(cfg.deform, theta, ds.images[indices[j]])
        params_log.append(theta)
    return images, labels, params_log


def _validation_error(net: Network, val: LabeledDataset, batch: int = 500) -> float:
    wrong = 0
    for start in range(0, len(val), batch):
        probs, _, _ = net.forward(val.images[start:start + batch])
        wrong += int((probs.argmax(axis=1) != val.labels[start:start + batch]).sum())
    return wrong / len(val)


def train(ds: LabeledDataset, net: Network, cfg: TrainConfig,
          val: LabeledDataset | None = None) -> tuple[Network, TrainReport]:
    """Run epochs x ceil(N / batch) iterations of augmented SGD in place."""
    t0 = time.monotonic()
    iters_per_epoch = -(-len(ds) // cfg.optim.batch_size)
    state = OptimState.for_params(net.params, cfg.optim)
    report = TrainReport()
    iteration = 0
    for epoch in range(cfg.epochs):
        state.current_lr = lr_at_epoch(cfg.optim, epoch)
        loss_sum = 0.0
        for _ in range(iters_per_epoch):
            images, labels, _ = build_minibatch(ds, cfg, iteration)
            try:
                probs, logp, cache = net.forward(images)
            except ValueError as err:  # non-finite logits after a blow-up
                raise TrainingDiverged(iteration, state.current_lr,
                                       float("nan")) from err
            loss = float(-logp[np.arange(len(labels)), labels].mean())
            if not np.isfinite(loss):
                raise TrainingDiverged(iteration, state.current_lr, loss)
            grads = net.backward(cache, labels)
            sgd_momentum_step(net.params, grads, state, cfg.optim)
            net.bump_version()
            loss_sum += loss
            iteration += 1
        val_err = _validation_error(net, val) if val is not None else float("nan")
        report.epochs.append(EpochRecord(epoch, loss_sum / iters_per_epoch,
                                         val_err, state.current_lr))
        state.epoch = epoch + 1
    report.wall_clock_sec = time.monotonic() - t0
    report.checkpoint_digest = net.digest()
    return net, report
