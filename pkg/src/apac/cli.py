"""Experiment harness.

Verbs: train, eval, sweep-m, export-weight-maps, inspect-config.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort.

Every emitted CSV starts with a comment line embedding the run seed and the
config digest; runs with equal seeds and digests produce byte-identical
outputs. The --threads flag is accepted for interface stability but never
affects results (all internal work is deterministically ordered).
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from apac import decision, sampler, trainer
from apac.augment import ZcaTransform, zca_apply, zca_fit
from apac.config import ConfigError, ExperimentConfig, load_config
from apac.dataio import DataFormatError, LabeledDataset, load_cifar10_bin, load_mnist_idx, split_validation
from apac.nn_core import Network, spec_to_dict
from apac.trainer import TrainingDiverged
from apac.visualize import export_weight_maps

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class DataError(RuntimeError):
    pass


def _load_datasets(cfg: ExperimentConfig):
    """Returns (train_pool, val_or_none, test, zca_or_none)."""
    p = cfg.dataset_paths
    try:
        if cfg.dataset_kind == "mnist":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if key not in p:
                    raise DataError(f"missing [dataset] {key}")
            train = load_mnist_idx(p["train_images"], p["train_labels"], "train")
            test = load_mnist_idx(p["test_images"], p["test_labels"], "test")
        else:
            for key in ("train_files", "test_files"):
                if key not in p:
                    raise DataError(f"missing [dataset] {key}")
            train = load_cifar10_bin([s.strip() for s in p["train_files"].split(",")], "train")
            test = load_cifar10_bin([s.strip() for s in p["test_files"].split(",")], "test")
    except (FileNotFoundError, DataFormatError) as e:
        raise DataError(str(e)) from None

    if cfg.train_subset:
        train = train.subset(np.arange(min(cfg.train_subset, len(train))))
    if cfg.test_subset:
        test = test.subset(np.arange(min(cfg.test_subset, len(test))))

    zca = None
    if cfg.dataset_kind == "cifar10" and cfg.augment:
        flat = train.images.reshape(len(train), -1)
        zca = zca_fit(flat)
        train = LabeledDataset(
            np.stack([zca_apply(zca, im) for im in train.images]),
            train.labels, train.n_classes, train.provenance)
        test = LabeledDataset(
            np.stack([zca_apply(zca, im) for im in test.images]),
            test.labels, test.n_classes, test.provenance)

    val = None
    if cfg.val_fraction:
        train, val = split_validation(train, cfg.val_fraction, cfg.seed)
    return train, val, test, zca


def _deform_spec(cfg: ExperimentConfig) -> sampler.DeformSpec | None:
    if not cfg.augment:
        return None
    return sampler.default_spec(cfg.dataset_kind)


def _meta(cfg: ExperimentConfig) -> str:
    return f"seed={cfg.seed} config_digest={cfg.digest()}"


def _check_architecture(net_header: dict, cfg: ExperimentConfig) -> None:
    expected = [spec_to_dict(s) for s in cfg.layers]
    if net_header["layers"] != expected or tuple(net_header["input_shape"]) != cfg.input_shape:
        raise ConfigError("checkpoint architecture does not match the config's network section")


# ---------------------------------------------------------------------------
# Commands

def cmd_train(cfg: ExperimentConfig, out_dir: Path) -> int:
    train_ds, val_ds, _, zca = _load_datasets(cfg)
    net = Network(list(cfg.layers), cfg.input_shape, seed=cfg.seed)
    tcfg = trainer.TrainConfig(optim=cfg.optim, epochs=cfg.epochs, seed=cfg.seed,
                               deform=_deform_spec(cfg),
                               class_distinctive=cfg.class_distinctive)
    net, report = trainer.train(train_ds, net, tcfg, val=val_ds)
    out_dir.mkdir(parents=True, exist_ok=True)
    net.save(out_dir / "checkpoint.apacnet", seed=cfg.seed, config_digest=cfg.digest())
    report.write_csv(out_dir / "train_report.csv", meta=_meta(cfg))
    if zca is not None:
        zca.save(out_dir / "zca.apaczca")
    print(f"trained {cfg.epochs} epochs; checkpoint digest {net.digest()[:16]}")
    return EXIT_OK


def _rule_cfg(cfg: ExperimentConfig, rule: str, m: int) -> decision.DecisionConfig:
    spec = _deform_spec(cfg) if rule != "non_apac" else None
    if rule != "non_apac" and spec is None:
        spec = sampler.default_spec(cfg.dataset_kind)
    return decision.DecisionConfig(rule=rule, m=m, deform=spec, seed=cfg.decision_seed)


def cmd_eval(cfg: ExperimentConfig, checkpoint: Path, out_dir: Path) -> int:
    net, header = Network.load(checkpoint)
    _check_architecture(header, cfg)
    _, _, test_ds, _ = _load_datasets(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rule in cfg.rules:
        m = 1 if rule == "non_apac" else cfg.m
        t0 = time.monotonic()
        table = decision.evaluate(net, test_ds, _rule_cfg(cfg, rule, m), k_list=(1, 2))
        wall = time.monotonic() - t0
        rows.append([rule, m, f"{table.topk_error[1]:.6f}",
                     f"{table.topk_error[2]:.6f}", f"{wall:.3f}"])
        table.write_outcomes_csv(out_dir / f"outcomes_{rule}_m{m}.csv", meta=_meta(cfg))
    with open(out_dir / "eval.csv", "w", newline="") as f:
        f.write(f"# {_meta(cfg)}\n")
        w = csv.writer(f)
        w.writerow(["rule", "M", "top1_error", "top2_error", "wall_clock"])
        w.writerows(rows)
    for r in rows:
        print(f"{r[0]:>14} M={r[1]:<6} top1={r[2]} top2={r[3]}")
    return EXIT_OK


def cmd_sweep_m(cfg: ExperimentConfig, checkpoint: Path, out_dir: Path) -> int:
    net, header = Network.load(checkpoint)
    _check_architecture(header, cfg)
    _, _, test_ds, _ = _load_datasets(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    rule = next((r for r in cfg.rules if r != "non_apac"), "apac_log_mean")
    with open(out_dir / "sweep_m.csv", "w", newline="") as f:
        f.write(f"# {_meta(cfg)}\n")
        w = csv.writer(f)
        w.writerow(["rule", "M", "top1_error", "top2_error", "wall_clock"])
        for m in cfg.m_list:
            t0 = time.monotonic()
            table = decision.evaluate(net, test_ds, _rule_cfg(cfg, rule, m), k_list=(1, 2))
            wall = time.monotonic() - t0
            w.writerow([rule, m, f"{table.topk_error[1]:.6f}",
                        f"{table.topk_error[2]:.6f}", f"{wall:.3f}"])
            print(f"M={m:<6} top1={table.topk_error[1]:.6f}")
    return EXIT_OK


def cmd_export_weight_maps(checkpoint: Path, count: int, seed: int, out_dir: Path) -> int:
    net, _ = Network.load(checkpoint)
    paths = export_weight_maps(net, count, seed, out_dir)
    print(f"wrote {len(paths)} weight maps to {out_dir}")
    return EXIT_OK


def cmd_inspect_config(cfg: ExperimentConfig) -> int:
    print(f"config digest: {cfg.digest()}")
    print(f"seed: {cfg.seed}")
    print(f"dataset: {cfg.dataset_kind}  augment={cfg.augment}")
    print(f"input shape: {cfg.input_shape}")
    print("layers:")
    for s in cfg.layers:
        print(f"  {spec_to_dict(s)}")
    print(f"optim: {cfg.optim}")
    print(f"epochs: {cfg.epochs}")
    print(f"rules: {cfg.rules}  M={cfg.m}  m_list={cfg.m_list}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apac", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--threads", type=int, default=1,
                        help="reserved; never affects results")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)

    common(sub.add_parser("train", help="train a network per config"))
    common(sub.add_parser("eval", help="evaluate decision rules"), checkpoint=True)
    common(sub.add_parser("sweep-m", help="error as a function of M"), checkpoint=True)

    ew = sub.add_parser("export-weight-maps", help="dump first-layer weight maps")
    ew.add_argument("--checkpoint", required=True)
    ew.add_argument("--count", type=int, default=16)
    ew.add_argument("--seed", type=int, default=0)
    ew.add_argument("--out-dir", default="out/weight_maps")

    ic = sub.add_parser("inspect-config", help="resolve and print a config")
    ic.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-weight-maps":
            return cmd_export_weight_maps(Path(args.checkpoint), args.count,
                                          args.seed, Path(args.out_dir))
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "inspect-config":
            return cmd_inspect_config(cfg)
        out_dir = Path(args.out_dir)
        if args.command == "train":
            return cmd_train(cfg, out_dir)
        if args.command == "eval":
            return cmd_eval(cfg, Path(args.checkpoint), out_dir)
        if args.command == "sweep-m":
            return cmd_sweep_m(cfg, Path(args.checkpoint), out_dir)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DataFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
