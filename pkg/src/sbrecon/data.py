"""Synthetic paired datasets: phantoms, coil maps, masks and simulated k-space."""

from __future__ import annotations

import numpy as np

from .io import PairedDataset
from .mri import make_coil_maps, make_mask, simulate_acquisition
from .phantoms import make_phantom_pair

_PHANTOM, _COILS, _MASK, _NOISE = range(4)


def sub_seed(seed: int, index: int, purpose: int) -> int:
    """Independent 32-bit seed for one (pair, purpose) combination."""
    return int(np.random.SeedSequence([seed, index, purpose]).generate_state(1)[0])


def r_label(r: float) -> str:
    return f"{float(r):g}"


def build_dataset(
    n_pairs: int,
    height: int = 64,
    width: int = 64,
    coils: int = 4,
    sigma_eps: float = 1e-3,
    r_values=(6.0,),
    pattern: str = "lattice",
    center=(16, 16),
    discrepancy: float = 0.0,
    seed: int = 0,
    precision: str = "float32",
) -> PairedDataset:
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if precision not in ("float32", "float64"):
        raise ValueError(f"precision must be float32 or float64, got {precision!r}")
    center = tuple(int(c) for c in center)
    targets, guides, csms = [], [], []
    for k in range(n_pairs):
        t, g = make_phantom_pair(sub_seed(seed, k, _PHANTOM), height, width, discrepancy)
        targets.append(t)
        guides.append(g)
        csms.append(make_coil_maps(coils, height, width, sub_seed(seed, k, _COILS)))
    masks, kspace, achieved = {}, {}, {}
    for r in r_values:
        label = r_label(r)
        ms, ys = [], []
        for k in range(n_pairs):
            m = make_mask(height, width, float(r), center, pattern, sub_seed(seed, k, _MASK))
            ms.append(m.mask)
            ys.append(simulate_acquisition(targets[k], csms[k], m, sigma_eps, sub_seed(seed, k, _NOISE)).data)
        masks[label] = np.stack(ms)
        kspace[label] = np.stack(ys)
        achieved[label] = float(np.mean([m.size / m.sum() for m in ms]))
    header = {
        "n_pairs": n_pairs,
        "height": height,
        "width": width,
        "coils": coils,
        "sigma_eps": float(sigma_eps),
        "seed": seed,
        "pattern": pattern,
        "center": list(center),
        "discrepancy": float(discrepancy),
        "precision": precision,
        "achieved_r": achieved,
    }
    return PairedDataset(np.stack(targets), np.stack(guides), np.stack(csms), masks, kspace, header)
