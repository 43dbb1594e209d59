"""Synthetic paired-contrast head phantoms.

Both images of a pair are painted from one label map, so they share geometry
exactly; only the per-tissue intensities differ between the "target" and
"guide" contrasts. A ``discrepancy`` level adds small lesions that appear in
exactly one of the two images.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

BACKGROUND, FAT, SKULL, GRAY, WHITE, CSF, NUCLEI = range(7)

# (target, guide) base intensities; neighbouring tissues differ by >= 0.15 in both
TISSUE_INTENSITY = {
    FAT: (0.45, 0.95),
    SKULL: (0.12, 0.22),
    GRAY: (0.75, 0.55),
    WHITE: (0.52, 0.82),
    CSF: (0.25, 0.30),
    NUCLEI: (0.92, 0.64),
}
LESION_TARGET = 1.1
LESION_GUIDE = 0.38
N_LESION_CANDIDATES = 3


def _ellipse(yy, xx, cy, cx, ay, ax, theta):
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def label_map(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    """Nested-ellipse head geometry with random shape parameters."""
    yy, xx = np.meshgrid(np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")
    labels = np.zeros((H, W), dtype=np.int8)
    ay = rng.uniform(0.82, 0.92)
    ax = rng.uniform(0.66, 0.78)
    theta = rng.uniform(-0.15, 0.15)
    cy, cx = rng.uniform(-0.04, 0.04, size=2)
    for tissue, scale in ((FAT, 1.0), (SKULL, 0.9), (GRAY, 0.82), (WHITE, 0.66)):
        labels[_ellipse(yy, xx, cy, cx, scale * ay, scale * ax, theta)] = tissue
    # ventricles: a mirrored pair of slanted ellipses
    vy = cy + rng.uniform(-0.12, 0.02)
    vsep = rng.uniform(0.08, 0.14)
    for sgn in (-1, 1):
        tilt = theta + sgn * rng.uniform(0.2, 0.45)
        labels[_ellipse(yy, xx, vy, cx + sgn * vsep, rng.uniform(0.16, 0.24), rng.uniform(0.05, 0.08), tilt)] = CSF
    # deep nuclei beside the ventricles
    ny = vy + rng.uniform(0.18, 0.26)
    for sgn in (-1, 1):
        labels[_ellipse(yy, xx, ny, cx + sgn * rng.uniform(0.22, 0.3), rng.uniform(0.07, 0.1), rng.uniform(0.05, 0.08), theta)] = NUCLEI
    # a few gray-matter islands in white matter
    for _ in range(rng.integers(1, 4)):
        r = rng.uniform(0.3, 0.5)
        a = rng.uniform(0, 2 * np.pi)
        blob = _ellipse(yy, xx, cy + r * ay * np.sin(a), cx + r * ax * np.cos(a), 0.06, 0.06, 0.0)
        labels[blob & (labels == WHITE)] = GRAY
    return labels


def _smooth_field(rng, H, W, corr: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal((H, W)), corr * H / 64, mode="wrap")
    return f / (np.abs(f).max() + 1e-12)


def make_phantom_pair(seed: int, H: int = 64, W: int = 64, discrepancy: float = 0.0, return_lesions: bool = False):
    """Return ``(target, guide)`` complex images, each scaled to max magnitude 1.

    With ``return_lesions`` a third element lists the inserted lesions as
    ``(row, col, radius, in_target)`` tuples.

    Every random quantity is drawn regardless of ``discrepancy`` so that pairs
    with the same seed differ only in lesion content.
    """
    if not 0.0 <= discrepancy <= 1.0:
        raise ValueError(f"discrepancy must lie in [0, 1], got {discrepancy}")
    rng = np.random.default_rng(seed)
    labels = label_map(rng, H, W)

    texture = _smooth_field(rng, H, W, corr=4.0)
    target = np.zeros((H, W))
    guide = np.zeros((H, W))
    for tissue, (t_val, g_val) in TISSUE_INTENSITY.items():
        jit_t, jit_g = 1.0 + rng.uniform(-0.04, 0.04, size=2)
        region = labels == tissue
        target[region] = t_val * jit_t * np.exp(0.06 * texture[region])
        guide[region] = g_val * jit_g * np.exp(0.04 * texture[region] + 0.02 * texture[region] ** 2)

    yy, xx = np.mgrid[0:H, 0:W]
    white = np.argwhere(labels == WHITE)
    lesions = []
    lesion_px = max(1.5, 2.5 * H / 64)
    for _ in range(N_LESION_CANDIDATES):
        present = rng.random() < discrepancy
        in_target = rng.random() < 0.5
        cy, cx = white[rng.integers(len(white))]
        radius = rng.uniform(0.8, 1.3) * lesion_px
        if not present:
            continue
        blob = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2) & (labels > SKULL)
        lesions.append((int(cy), int(cx), float(radius), bool(in_target)))
        if in_target:
            target[blob] = LESION_TARGET
        else:
            guide[blob] = LESION_GUIDE

    ramp = rng.uniform(-0.6, 0.6, size=2) * np.pi
    quad = rng.uniform(-0.4, 0.4) * np.pi
    v, u = np.meshgrid(np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")
    phase = np.exp(1j * (ramp[0] * v + ramp[1] * u + quad * (u**2 + v**2) + rng.uniform(-np.pi, np.pi)))

    target = target / target.max() * phase
    guide = guide / guide.max() * phase
    target = target.astype(np.complex128)
    guide = guide.astype(np.complex128)
    if return_lesions:
        return target, guide, lesions
    return target, guide

