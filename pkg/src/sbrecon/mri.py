"""Multi-coil Cartesian acquisition model, sampling masks and coil maps.

k-space arrays are centred (DC at index ``(H//2, W//2)``) and every Fourier
transform is unitary, so ``A^H A = I`` for a full mask and normalised coils.
Images may carry a leading batch axis: ``x`` is ``(..., H, W)``, coil maps
``(..., C, H, W)`` and masks ``(..., H, W)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bridge import Rng, complex_normal
from .errors import ConfigError


def fft2c(x: np.ndarray) -> np.ndarray:
    x = np.fft.ifftshift(x, axes=(-2, -1))
    return np.fft.fftshift(np.fft.fft2(x, axes=(-2, -1), norm="ortho"), axes=(-2, -1))


def ifft2c(k: np.ndarray) -> np.ndarray:
    k = np.fft.ifftshift(k, axes=(-2, -1))
    return np.fft.fftshift(np.fft.ifft2(k, axes=(-2, -1), norm="ortho"), axes=(-2, -1))


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def check_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate a (batch of) complex image(s): finite, power-of-two sides."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"{name} must have at least 2 dimensions, got shape {x.shape}")
    h, w = x.shape[-2:]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ValueError(f"{name} sides must be powers of two, got {h}x{w}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x.astype(np.complex128, copy=False)


@dataclass(frozen=True)
class SamplingMask:
    """Binary k-space mask with a fully sampled centre block."""

    mask: np.ndarray
    center: tuple[int, int]
    pattern: str = "lattice"

    @property
    def R(self) -> float:
        """Net acceleration: all locations over acquired locations."""
        return float(self.mask.size / np.count_nonzero(self.mask))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def _as_mask(mask) -> np.ndarray:
    if isinstance(mask, SamplingMask):
        mask = mask.mask
    return np.asarray(mask, dtype=bool)


def _check_shapes(x_shape, csm: np.ndarray, mask: np.ndarray) -> None:
    if csm.shape[-2:] != tuple(x_shape[-2:]) or mask.shape[-2:] != tuple(x_shape[-2:]):
        raise ValueError(
            f"shape mismatch: image {tuple(x_shape[-2:])}, coils {csm.shape[-2:]}, mask {mask.shape[-2:]}"
        )


def forward_A(x: np.ndarray, csm: np.ndarray, mask) -> np.ndarray:
    """y_c = M * F(csm_c * x) for every coil c; output ``(..., C, H, W)``."""
    x = np.asarray(x)
    csm = np.asarray(csm)
    m = _as_mask(mask)
    _check_shapes(x.shape, csm, m)
    return fft2c(csm * x[..., None, :, :]) * m[..., None, :, :]


def adjoint_A(y: np.ndarray, csm: np.ndarray, mask) -> np.ndarray:
    """Exact adjoint of :func:`forward_A`: sum_c conj(csm_c) * F^H(M y_c)."""
    y = np.asarray(y)
    csm = np.asarray(csm)
    m = _as_mask(mask)
    _check_shapes(y.shape, csm, m)
    if y.shape[-3] != csm.shape[-3]:
        raise ValueError(f"k-space has {y.shape[-3]} coils but csm has {csm.shape[-3]}")
    return np.sum(np.conj(csm) * ifft2c(y * m[..., None, :, :]), axis=-3)


@dataclass(frozen=True)
class AcquisitionModel:
    """Coil sensitivities, sampling mask and noise level defining A = M F csm."""

    csm: np.ndarray
    mask: np.ndarray
    sigma_eps: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "csm", np.asarray(self.csm, dtype=np.complex128))
        object.__setattr__(self, "mask", _as_mask(self.mask))
        if self.csm.shape[-2:] != self.mask.shape[-2:]:
            raise ValueError(f"csm {self.csm.shape} and mask {self.mask.shape} disagree")

    @property
    def image_shape(self) -> tuple[int, ...]:
        return self.csm.shape[:-3] + self.csm.shape[-2:]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return forward_A(x, self.csm, self.mask)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return adjoint_A(y, self.csm, self.mask)

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(x))


@dataclass(frozen=True)
class KSpaceData:
    """Measured multi-coil k-space together with the model that produced it."""

    data: np.ndarray
    model: AcquisitionModel

    @property
    def sigma_eps(self) -> float:
        return self.model.sigma_eps

    def zero_filled(self) -> np.ndarray:
        return self.model.adjoint(self.data)


def simulate_acquisition(x, csm, mask, sigma_eps: float = 0.0, seed: int | Rng = 0) -> KSpaceData:
    """A x plus circular complex noise of std ``sigma_eps`` on sampled entries only."""
    if sigma_eps < 0:
        raise ConfigError(f"sigma_eps must be >= 0, got {sigma_eps}")
    model = AcquisitionModel(csm, mask, float(sigma_eps))
    y = model.forward(check_image(x))
    if sigma_eps > 0:
        rng = np.random.default_rng(seed) if isinstance(seed, (int, np.integer)) else seed
        y = y + sigma_eps * complex_normal(rng, y.shape) * model.mask[..., None, :, :]
    return KSpaceData(y, model)


def residual(x: np.ndarray, kspace: KSpaceData) -> np.ndarray:
    """||y - A x|| over sampled entries (per batch item when batched)."""
    r = kspace.data - kspace.model.forward(x)
    return np.sqrt(np.sum(np.abs(r) ** 2, axis=(-3, -2, -1)))


def _center_slices(H: int, W: int, center: tuple[int, int]) -> tuple[slice, slice]:
    hc, wc = center
    r0 = H // 2 - hc // 2
    c0 = W // 2 - wc // 2
    return slice(r0, r0 + hc), slice(c0, c0 + wc)


def lattice_points(H: int, W: int, skip: int, offset: int) -> np.ndarray:
    """Sheared sampling lattice: (r, c) kept iff (c - offset*r) % skip == 0.

    Coordinates are relative to the k-space centre so DC is always a lattice
    point. Each row keeps one column in ``skip`` and successive rows shift by
    ``offset``, the 2D analogue of a CAIPI shifted-lattice pattern.
    """
    r = np.arange(H)[:, None] - H // 2
    c = np.arange(W)[None, :] - W // 2
    return (c - offset * r) % skip == 0


def default_lattice_offset(skip: int) -> int:
    """Shear that maximises the shortest lattice vector (most even spread)."""
    if skip <= 2:
        return skip - 1 if skip == 2 else 0
    best, best_len = 0, -1
    for off in range(skip):
        shortest = skip * skip
        for b in range(1, skip + 1):
            c = (off * b) % skip
            c = min(c, skip - c)
            shortest = min(shortest, b * b + c * c)
        if shortest > best_len:
            best, best_len = off, shortest
    return best


def _lattice_mask(H, W, center, skip, offset) -> np.ndarray:
    m = lattice_points(H, W, skip, offset)
    rs, cs = _center_slices(H, W, center)
    m[rs, cs] = True
    return m


def _variable_density_mask(H, W, center, target_R, rng: np.random.Generator, power: float = 2.0):
    rs, cs = _center_slices(H, W, center)
    m = np.zeros((H, W), dtype=bool)
    m[rs, cs] = True
    n_total = int(round(H * W / target_R))
    n_extra = n_total - int(m.sum())
    r = (np.arange(H)[:, None] - H // 2) / (H / 2)
    c = (np.arange(W)[None, :] - W // 2) / (W / 2)
    dist = np.sqrt(r**2 + c**2) / math.sqrt(2)
    density = (1.0 - dist) ** power + 0.02
    density[m] = 0.0
    candidates = np.flatnonzero(density)
    p = density.ravel()[candidates]
    picks = rng.choice(candidates, size=n_extra, replace=False, p=p / p.sum())
    m.ravel()[picks] = True
    return m


def make_mask(
    H: int,
    W: int,
    target_R: float,
    center: tuple[int, int] = (16, 16),
    pattern: str = "lattice",
    seed: int = 0,
    skip: int | None = None,
    offset: int | None = None,
) -> SamplingMask:
    """Undersampling mask with a fully sampled ``center`` block.

    ``pattern="lattice"`` searches the integer lattice skip whose net R is
    closest to ``target_R`` (an explicit ``skip`` bypasses the search);
    ``pattern="random"`` draws a variable-density pattern with exactly
    ``round(H*W/target_R)`` samples.
    """
    hc, wc = center
    if not (0 < hc <= H and 0 < wc <= W):
        raise ConfigError(f"centre block {center} does not fit in {H}x{W}")
    r_max = H * W / (hc * wc)
    if skip is None and not 1.0 <= target_R <= r_max * 1.1:
        raise ConfigError(f"target R={target_R} infeasible: achievable range is [1, {r_max:.3g}]")

    if pattern == "lattice":
        if skip is None:
            best = None
            for s in range(1, H * W + 1):
                m = _lattice_mask(H, W, center, s, default_lattice_offset(s) if offset is None else offset % s)
                R = m.size / m.sum()
                if best is None or abs(R - target_R) < abs(best[1] - target_R):
                    best = (m, R)
                if R >= target_R or R >= r_max:
                    break
            m, R = best
            if abs(R - target_R) > 0.1 * target_R:
                raise ConfigError(
                    f"target R={target_R} not reachable within 10% by a lattice "
                    f"(closest {R:.3g}; achievable range [1, {r_max:.3g}])"
                )
        else:
            if skip < 1:
                raise ConfigError(f"lattice skip must be >= 1, got {skip}")
            off = default_lattice_offset(skip) if offset is None else offset
            m = _lattice_mask(H, W, center, skip, off)
    elif pattern == "random":
        if target_R > r_max:
            raise ConfigError(f"target R={target_R} infeasible: achievable range is [1, {r_max:.3g}]")
        m = _variable_density_mask(H, W, center, target_R, np.random.default_rng(seed))
    else:
        raise ConfigError(f"unknown mask pattern {pattern!r}")
    m.setflags(write=False)
    return SamplingMask(m, (hc, wc), pattern)


def make_coil_maps(C: int, H: int, W: int, seed: int = 0) -> np.ndarray:
    """Smooth synthetic sensitivities, normalised so sum_c |csm_c|^2 = 1.

    Each coil is a broad Gaussian bump centred on a ring around the field of
    view with a gentle linear phase. Phases are referenced to coil 0, which
    makes a single coil real and equal to one.
    """
    if C < 1:
        raise ConfigError(f"coil count must be >= 1, got {C}")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")
    maps = np.empty((C, H, W), dtype=np.complex128)
    angle0 = rng.uniform(0, 2 * np.pi)
    for c in range(C):
        ang = angle0 + 2 * np.pi * c / C + rng.uniform(-0.2, 0.2)
        radius = rng.uniform(0.9, 1.3)
        cy, cx = radius * np.sin(ang), radius * np.cos(ang)
        width = rng.uniform(0.7, 1.0)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        ky, kx = rng.uniform(-0.5, 0.5, size=2)
        phase = np.pi * (ky * yy + kx * xx) + rng.uniform(-np.pi, np.pi)
        maps[c] = mag * np.exp(1j * phase)
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps *= np.exp(-1j * np.angle(maps[0]))
    return maps
