"""Sampling of deformation parameter sets from configured PDFs.

A DeformSpec holds one PDF per deformation parameter (optionally per
class, for class-distinctive deformation) plus the fixed elastic-filter
constants. sample_theta draws one full parameter set; apply composes the
deformation operators in the dataset's fixed order.

Deformation order: MNIST = homography -> elastic -> morphology;
CIFAR-10 = scale -> crop-shift -> elastic -> optional flip (whitening is a
one-shot dataset preprocessing step, see dataio/trainer).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from apac import augment
from apac.rng import STREAM_ELASTIC_FIELD, generator_for

MNIST_H_KEYS = ("h11", "h12", "h13", "h21", "h22", "h23", "h31", "h32")


# ---------------------------------------------------------------------------
# PDF descriptors

@dataclass(frozen=True)
class Gaussian:
    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be non-negative")

    def draw(self, gen: np.random.Generator) -> float:
        return self.mean + self.std * gen.standard_normal()


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("lo must not exceed hi")

    def draw(self, gen: np.random.Generator) -> float:
        return self.lo + (self.hi - self.lo) * gen.random()


@dataclass(frozen=True)
class Categorical:
    probs: tuple[float, ...]
    values: tuple[str, ...]

    def __post_init__(self):
        if len(self.probs) != len(self.values):
            raise ValueError("probs and values must have equal length")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("categorical probabilities must sum to 1")

    def draw(self, gen: np.random.Generator) -> str:
        u = gen.random()
        acc = 0.0
        for p, v in zip(self.probs, self.values):
            acc += p
            if u < acc:
                return v
        return self.values[-1]


Pdf = Gaussian | Uniform | Categorical


# ---------------------------------------------------------------------------
# Specs and sampled parameter sets

@dataclass
class DeformSpec:
    dataset_kind: str                       # "mnist" | "cifar10"
    pdfs: dict[str, Pdf]
    elastic_sigma: float
    elastic_alpha: float
    image_size: tuple[int, int]             # (H, W)
    per_class: dict[int, dict[str, Pdf]] | None = None

    @property
    def class_distinctive(self) -> bool:
        return self.per_class is not None

    def pdfs_for(self, cls: int | None) -> dict[str, Pdf]:
        if self.per_class is None:
            if cls is not None:
                return self.pdfs
            return self.pdfs
        if cls is None:
            raise ValueError("class index required for a class-distinctive spec")
        if cls not in self.per_class:
            raise ValueError(f"no deformation PDFs defined for class {cls}")
        return self.per_class[cls]

    def class_set_ids(self, n_classes: int) -> list[int]:
        """Map each class to a deformation-set id; classes with equal PDF
        sets share an id. Class-indistinctive specs map everything to 0."""
        if self.per_class is None:
            return [0] * n_classes
        sets: list[dict[str, Pdf]] = []
        ids = []
        for c in range(n_classes):
            pdfs = self.pdfs_for(c)
            for i, s in enumerate(sets):
                if s == pdfs:
                    ids.append(i)
                    break
            else:
                ids.append(len(sets))
                sets.append(pdfs)
        return ids


@dataclass(frozen=True)
class MnistParams:
    h: tuple[float, ...]        # 8 free homography entries, row-major
    morph_mode: str
    elastic_seed: int

    def h_matrix(self) -> np.ndarray:
        m = np.ones((3, 3), dtype=np.float64)
        m.flat[:8] = self.h
        return m

    def to_json(self) -> str:
        return json.dumps({"kind": "mnist", "h": list(self.h),
                           "morph": self.morph_mode, "elastic_seed": self.elastic_seed})


@dataclass(frozen=True)
class CifarParams:
    s: float
    ox: float
    oy: float
    flip: bool
    elastic_seed: int

    def to_json(self) -> str:
        return json.dumps({"kind": "cifar10", "s": self.s, "ox": self.ox,
                           "oy": self.oy, "flip": self.flip,
                           "elastic_seed": self.elastic_seed})


DeformParams = MnistParams | CifarParams


# ---------------------------------------------------------------------------
# Canonical specs

def default_spec(dataset_kind: str) -> DeformSpec:
    """The deformation distributions used throughout the experiments."""
    if dataset_kind == "mnist":
        pdfs: dict[str, Pdf] = {k: Gaussian(1.0 if k in ("h11", "h22") else 0.0, 0.1)
                                for k in MNIST_H_KEYS}
        pdfs["morph"] = Categorical((0.25, 0.25, 0.5), ("dilate", "erode", "none"))
        return DeformSpec("mnist", pdfs, elastic_sigma=6.0, elastic_alpha=38.0,
                          image_size=(28, 28))
    if dataset_kind == "cifar10":
        pdfs = {
            "s": Uniform(1.0, 2.0),
            # fraction of the s-dependent maximum shift S*(1 - 1/s)
            "ox_frac": Uniform(0.0, 1.0),
            "oy_frac": Uniform(0.0, 1.0),
            "flip": Categorical((0.5, 0.5), ("none", "flip")),
        }
        return DeformSpec("cifar10", pdfs, elastic_sigma=8.0, elastic_alpha=40.0,
                          image_size=(32, 32))
    raise ValueError(f"unknown dataset kind {dataset_kind!r}")


def identity_spec(dataset_kind: str) -> DeformSpec:
    """Delta PDFs at the identity deformation (useful for degeneracy tests)."""
    spec = default_spec(dataset_kind)
    if dataset_kind == "mnist":
        spec.pdfs = {k: Gaussian(1.0 if k in ("h11", "h22") else 0.0, 0.0)
                     for k in MNIST_H_KEYS}
        spec.pdfs["morph"] = Categorical((1.0,), ("none",))
        spec.elastic_alpha = 0.0
    else:
        spec.pdfs = {
            "s": Uniform(1.0, 1.0),
            "ox_frac": Uniform(0.0, 0.0),
            "oy_frac": Uniform(0.0, 0.0),
            "flip": Categorical((1.0,), ("none",)),
        }
        spec.elastic_alpha = 0.0
    return spec


# ---------------------------------------------------------------------------
# Sampling and application

def sample_theta(spec: DeformSpec, gen: np.random.Generator,
                 cls: int | None = None) -> DeformParams:
    """Draw one deformation parameter set.

    Draw order is fixed (dependent supports are sampled after what they
    depend on), so identical PDFs consume identical randomness regardless of
    class-distinctive mode.
    """
    if spec.class_distinctive and cls is None:
        raise ValueError("class index required for a class-distinctive spec")
    pdfs = spec.pdfs_for(cls)
    if spec.dataset_kind == "mnist":
        h = tuple(float(pdfs[k].draw(gen)) for k in MNIST_H_KEYS)
        mode = pdfs["morph"].draw(gen)
        seed = int(gen.integers(0, 2 ** 63))
        return MnistParams(h=h, morph_mode=mode, elastic_seed=seed)
    if spec.dataset_kind == "cifar10":
        hgt, wid = spec.image_size
        s = float(pdfs["s"].draw(gen))
        ox = float(pdfs["ox_frac"].draw(gen)) * wid * (1 - 1 / s)
        oy = float(pdfs["oy_frac"].draw(gen)) * hgt * (1 - 1 / s)
        flip = pdfs["flip"].draw(gen) == "flip"
        seed = int(gen.integers(0, 2 ** 63))
        return CifarParams(s=s, ox=ox, oy=oy, flip=flip, elastic_seed=seed)
    raise ValueError(f"unknown dataset kind {spec.dataset_kind!r}")


def _elastic_field(seed: int, h: int, w: int) -> np.ndarray:
    gen = generator_for(seed, (STREAM_ELASTIC_FIELD,), 0)
    return gen.uniform(-1.0, 1.0, size=(2, h, w))


def apply(spec: DeformSpec, params: DeformParams, img: np.ndarray) -> np.ndarray:
    """Compose the deformation operators in the dataset's fixed order.

    Operators whose parameters are exactly the identity are skipped, so
    delta-at-identity PDFs reproduce the input bit-exactly.
    """
    _, h, w = img.shape
    out = img
    if isinstance(params, MnistParams):
        if spec.dataset_kind != "mnist":
            raise ValueError("MNIST params applied with a non-MNIST spec")
        hm = params.h_matrix()
        if not np.array_equal(hm, augment.IDENTITY_H):
            out = augment.warp_homography(out, hm)
        if spec.elastic_alpha > 0:
            out = augment.elastic_distort(out, _elastic_field(params.elastic_seed, h, w),
                                          spec.elastic_sigma, spec.elastic_alpha)
        if params.morph_mode != "none":
            out = augment.morph(out, params.morph_mode)
    elif isinstance(params, CifarParams):
        if spec.dataset_kind != "cifar10":
            raise ValueError("CIFAR params applied with a non-CIFAR spec")
        if not (params.s == 1.0 and params.ox == 0.0 and params.oy == 0.0):
            out = augment.scale_crop(out, params.s, params.ox, params.oy)
        if spec.elastic_alpha > 0:
            out = augment.elastic_distort(out, _elastic_field(params.elastic_seed, h, w),
                                          spec.elastic_sigma, spec.elastic_alpha)
        if params.flip:
            out = augment.hflip(out)
    else:
        raise TypeError(f"unknown params type {type(params).__name__}")
    return out if out is not img else img.copy()
