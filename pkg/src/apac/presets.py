"""Network architectures and full-scale training recipes.

The four full presets are the reference experiment settings (15K epochs,
batch 100, momentum 0.9, per-epoch lr decay 0.9993). The *_desk presets are
small-budget stand-ins for CI and local runs; they share every structural
choice but shrink the network and epoch budget.
"""

from __future__ import annotations

from dataclasses import dataclass

from apac.nn_core import Conv, Dense, LayerSpec, Pool, Relu, Softmax
from apac.optim import OptimConfig


@dataclass(frozen=True)
class Preset:
    name: str
    dataset_kind: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    optim: OptimConfig
    epochs: int


def _mlp(*units: int) -> tuple[LayerSpec, ...]:
    layers: list[LayerSpec] = []
    for u in units[:-1]:
        layers += [Dense(u), Relu()]
    return tuple(layers + [Dense(units[-1]), Softmax()])


PRESETS: dict[str, Preset] = {}


def _register(p: Preset) -> None:
    PRESETS[p.name] = p


_register(Preset(
    name="mnist_cnn", dataset_kind="mnist", input_shape=(1, 28, 28),
    layers=(Conv(20, 5), Relu(), Pool(2), Conv(40, 5), Relu(), Pool(2),
            Dense(150), Relu(), Dense(10), Softmax()),
    optim=OptimConfig(initial_lr=2 ** -4, decay_per_epoch=0.9993, momentum=0.9,
                      l2_factor=5e-7, batch_size=100),
    epochs=15000))

_register(Preset(
    name="mnist_mlp", dataset_kind="mnist", input_shape=(1, 28, 28),
    layers=_mlp(2500, 2000, 10),
    optim=OptimConfig(initial_lr=2 ** -5, decay_per_epoch=0.9993, momentum=0.9,
                      l2_factor=5e-6, batch_size=100),
    epochs=15000))

_register(Preset(
    name="cifar_cnn", dataset_kind="cifar10", input_shape=(3, 32, 32),
    layers=(Conv(64, 3), Relu(), Pool(3), Conv(128, 3), Relu(), Pool(2),
            Conv(256, 3), Relu(), Pool(2), Dense(128), Relu(), Dense(10), Softmax()),
    optim=OptimConfig(initial_lr=2 ** -8, decay_per_epoch=0.9993, momentum=0.9,
                      l2_factor=5e-7, batch_size=100),
    epochs=15000))

_register(Preset(
    name="cifar_mlp", dataset_kind="cifar10", input_shape=(3, 32, 32),
    layers=_mlp(4096, 3072, 10),
    optim=OptimConfig(initial_lr=2 ** -8, decay_per_epoch=0.9993, momentum=0.9,
                      l2_factor=5e-7, batch_size=100),
    epochs=15000))

# Desk-scale presets: same recipe shape, CI-sized budgets.
_register(Preset(
    name="mnist_mlp_desk", dataset_kind="mnist", input_shape=(1, 28, 28),
    layers=_mlp(128, 10),
    optim=OptimConfig(initial_lr=2 ** -5, decay_per_epoch=1.0, momentum=0.9,
                      l2_factor=0.0, batch_size=100),
    epochs=30))

_register(Preset(
    name="mnist_cnn_desk", dataset_kind="mnist", input_shape=(1, 28, 28),
    layers=(Conv(8, 5), Relu(), Pool(2), Conv(16, 5), Relu(), Pool(2),
            Dense(32), Relu(), Dense(10), Softmax()),
    optim=OptimConfig(initial_lr=2 ** -4, decay_per_epoch=1.0, momentum=0.9,
                      l2_factor=0.0, batch_size=100),
    epochs=5))


def get_preset(name: str) -> Preset:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r} (available: {sorted(PRESETS)})")
    return PRESETS[name]
