"""Experiment configuration files.

Flat INI-style key-value text with sections, parsed with configparser.
Schema (see configs/ for shipped examples):

    [experiment]
    seed = 12345

    [dataset]
    kind = mnist                      ; mnist | cifar10
    train_images = path/to/idx       ; mnist: idx pair; cifar10: train_files
    train_labels = path/to/idx
    test_images = ...
    test_labels = ...
    train_subset = 10000             ; optional, first-k cap after loading
    test_subset = 2000               ; optional
    val_fraction = 0.1               ; optional held-out-original validation

    [network]
    preset = mnist_mlp               ; or layers = dense:128,relu,dense:10,softmax

    [train]
    epochs / batch_size / initial_lr / decay_per_epoch / momentum / l2_factor
    augment = true|false
    class_distinctive = false

    [decision]
    rules = apac_log_mean,non_apac
    m = 64
    m_list = 1,4,16,64,256,1024,4096,16384
    seed = 7

The config digest is a stable sha256 over the resolved key-value pairs; it
is embedded in every output file.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

from apac.nn_core import Conv, Dense, LayerSpec, Pool, Relu, Softmax
from apac.optim import OptimConfig
from apac.presets import get_preset

DEFAULT_M_SWEEP = (1, 4, 16, 64, 256, 1024, 4096, 16384)


class ConfigError(ValueError):
    """Invalid or missing configuration key."""


def parse_layers(text: str, dataset_kind: str) -> tuple[LayerSpec, ...]:
    """Parse an explicit layer list like ``conv:20:5,relu,pool:2,dense:10,softmax``."""
    out: list[LayerSpec] = []
    for tok in text.split(","):
        parts = tok.strip().lower().split(":")
        try:
            if parts[0] == "conv":
                out.append(Conv(out_maps=int(parts[1]), k=int(parts[2])))
            elif parts[0] == "pool":
                out.append(Pool(g=int(parts[1])))
            elif parts[0] == "dense":
                out.append(Dense(units=int(parts[1])))
            elif parts[0] == "relu":
                out.append(Relu())
            elif parts[0] == "softmax":
                out.append(Softmax())
            else:
                raise ConfigError(f"unknown layer token {tok!r}")
        except (IndexError, ValueError) as e:
            raise ConfigError(f"bad layer token {tok!r}: {e}") from None
    return tuple(out)


@dataclass
class ExperimentConfig:
    seed: int
    dataset_kind: str
    dataset_paths: dict[str, str]
    train_subset: int | None
    test_subset: int | None
    val_fraction: float | None
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    optim: OptimConfig
    epochs: int
    augment: bool
    class_distinctive: bool
    rules: tuple[str, ...]
    m: int
    m_list: tuple[int, ...]
    decision_seed: int
    raw_items: tuple[tuple[str, str], ...]      # resolved (section.key, value) pairs

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in sorted(self.raw_items):
            h.update(f"{k}={v}\n".encode())
        return h.hexdigest()


def _get(cp: configparser.ConfigParser, section: str, key: str, fallback=None, required=False):
    if cp.has_option(section, key):
        return cp.get(section, key)
    if required:
        raise ConfigError(f"missing required key [{section}] {key}")
    return fallback


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError(f"config parse error in {path}: {e}") from None

    kind = _get(cp, "dataset", "kind", required=True)
    if kind not in ("mnist", "cifar10"):
        raise ConfigError(f"[dataset] kind must be mnist or cifar10, got {kind!r}")

    paths = {}
    path_keys = (("train_images", "train_labels", "test_images", "test_labels")
                 if kind == "mnist" else ("train_files", "test_files"))
    for key in path_keys:
        v = _get(cp, "dataset", key)
        if v is not None:
            paths[key] = v

    preset_name = _get(cp, "network", "preset")
    layers_text = _get(cp, "network", "layers")
    if preset_name is None and layers_text is None:
        raise ConfigError("missing [network] preset or layers")
    if preset_name is not None:
        preset = get_preset(preset_name)
        layers = preset.layers
        input_shape = preset.input_shape
        default_optim, default_epochs = preset.optim, preset.epochs
    else:
        layers = parse_layers(layers_text, kind)
        input_shape = (1, 28, 28) if kind == "mnist" else (3, 32, 32)
        default_optim, default_epochs = OptimConfig(initial_lr=0.03125, batch_size=100), 10

    def fvalue(key, fb):
        v = _get(cp, "train", key)
        return fb if v is None else float(v)

    def ivalue(section, key, fb):
        v = _get(cp, section, key)
        return fb if v is None else int(v)

    try:
        optim = OptimConfig(
            initial_lr=fvalue("initial_lr", default_optim.initial_lr),
            decay_per_epoch=fvalue("decay_per_epoch", default_optim.decay_per_epoch),
            momentum=fvalue("momentum", default_optim.momentum),
            l2_factor=fvalue("l2_factor", default_optim.l2_factor),
            batch_size=ivalue("train", "batch_size", default_optim.batch_size))
    except ValueError as e:
        raise ConfigError(f"bad [train] value: {e}") from None

    rules_text = _get(cp, "decision", "rules", fallback="apac_log_mean,non_apac")
    m_list_text = _get(cp, "decision", "m_list")
    m_list = (tuple(int(t) for t in m_list_text.split(",")) if m_list_text
              else DEFAULT_M_SWEEP)

    val_frac_text = _get(cp, "dataset", "val_fraction")

    items = []
    for section in cp.sections():
        for key, value in cp.items(section):
            items.append((f"{section}.{key}", value))

    cfg = ExperimentConfig(
        seed=ivalue("experiment", "seed", 0),
        dataset_kind=kind,
        dataset_paths=paths,
        train_subset=ivalue("dataset", "train_subset", None),
        test_subset=ivalue("dataset", "test_subset", None),
        val_fraction=None if val_frac_text is None else float(val_frac_text),
        input_shape=input_shape,
        layers=layers,
        optim=optim,
        epochs=ivalue("train", "epochs", default_epochs),
        augment=cp.getboolean("train", "augment", fallback=True),
        class_distinctive=cp.getboolean("train", "class_distinctive", fallback=False),
        rules=tuple(t.strip() for t in rules_text.split(",")),
        m=ivalue("decision", "m", 64),
        m_list=m_list,
        decision_seed=ivalue("decision", "seed", 7),
        raw_items=tuple(items))
    return cfg
