"""First-layer weight-map export.

A weight map is one row of the first weight matrix (or one conv kernel
stack), rearranged to the input's 2-D form, min-max normalized per map,
and written as binary PGM (1 channel) or PPM (3 channels).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from apac.nn_core import Conv, Dense, Network
from apac.rng import generator_for


def write_pnm(img: np.ndarray, path) -> None:
    """img: (H, W) for PGM or (3, H, W) for PPM, values in [0, 1]."""
    data = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    if data.ndim == 2:
        header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n"
        body = data.tobytes()
    elif data.ndim == 3 and data.shape[0] == 3:
        header = f"P6\n{data.shape[2]} {data.shape[1]}\n255\n"
        body = data.transpose(1, 2, 0).tobytes()   # PPM interleaves RGB
    else:
        raise ValueError(f"cannot write shape {img.shape} as PGM/PPM")
    with open(path, "wb") as f:
        f.write(header.encode())
        f.write(body)


def _normalize(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi - lo == 0:
        return np.full_like(m, 0.5, dtype=np.float64)
    return (m.astype(np.float64) - lo) / (hi - lo)


def export_weight_maps(net: Network, count: int, seed: int, out_dir) -> list[Path]:
    """Export ``count`` randomly selected first-weight-layer maps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    first = next((i for i, s in enumerate(net.specs) if isinstance(s, (Dense, Conv))), None)
    if first is None:
        raise ValueError("network has no parametric layer")
    spec = net.specs[first]
    w = net.params[net._param_of_layer[first][0]].value
    if isinstance(spec, Dense):
        maps = w.reshape((w.shape[0],) + net.input_shape)
    else:
        maps = w      # (O, C, k, k)
    n_maps = maps.shape[0]
    chosen = generator_for(seed, (), 0).choice(n_maps, size=min(count, n_maps), replace=False)
    paths = []
    for i in sorted(int(c) for c in chosen):
        m = _normalize(maps[i])
        if m.shape[0] == 1:
            path = out_dir / f"weight_map_{i:04d}.pgm"
            write_pnm(m[0], path)
        elif m.shape[0] == 3:
            path = out_dir / f"weight_map_{i:04d}.ppm"
            write_pnm(m, path)
        else:
            path = out_dir / f"weight_map_{i:04d}.pgm"
            write_pnm(m.mean(axis=0), path)
        paths.append(path)
    return paths
