"""Discrete time grid and accumulated variances for the bridge.

The diffusion rate beta(t) is a symmetric triangle: it rises linearly from
``beta_min`` at t=0 to ``beta_max`` at t=0.5 and falls back to ``beta_min`` at
t=1. All variances are closed-form integrals of that polyline, so they are
exact at every grid node regardless of ``n_steps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


def _beta_integral(t: np.ndarray, beta_min: float, beta_max: float) -> np.ndarray:
    """Exact integral of the triangular beta polyline from 0 to t."""
    t = np.asarray(t, dtype=np.float64)
    slope = 2.0 * (beta_max - beta_min)
    first = beta_min * t + 0.5 * slope * t**2
    half = 0.5 * beta_min + 0.125 * slope
    u = t - 0.5
    second = half + beta_max * u - 0.5 * slope * u**2
    return np.where(t <= 0.5, first, second)


def beta_at(t, beta_min: float, beta_max: float) -> np.ndarray:
    """Pointwise value of the triangular rate at time(s) t."""
    t = np.asarray(t, dtype=np.float64)
    return beta_min + 2.0 * (beta_max - beta_min) * np.minimum(t, 1.0 - t)


@dataclass(frozen=True)
class NoiseSchedule:
    beta_min: float
    beta_max: float
    n_steps: int
    t_grid: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    sigma_sq: np.ndarray = field(repr=False)
    sigma_bar_sq: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.n_steps

    @property
    def total_variance(self) -> float:
        return float(self.sigma_sq[-1])

    def _check(self, n: int, upper: int) -> int:
        if isinstance(n, (bool, np.bool_)) or not isinstance(n, (int, np.integer)):
            raise TypeError(f"step index must be an integer, got {type(n).__name__}")
        if not 0 <= n <= upper:
            raise IndexError(f"step index {n} outside [0, {upper}]")
        return int(n)

    def sigma(self, n: int) -> float:
        return float(np.sqrt(self.sigma_sq[self._check(n, self.n_steps)]))

    def sigma_bar(self, n: int) -> float:
        return float(np.sqrt(self.sigma_bar_sq[self._check(n, self.n_steps)]))

    def alpha_sq(self, n: int) -> float:
        """Variance accumulated over the interval [t_n, t_{n+1}]."""
        n = self._check(n, self.n_steps - 1)
        return float(self.sigma_sq[n + 1] - self.sigma_sq[n])

    def descriptor(self) -> dict:
        return {
            "shape": "triangular",
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "n_steps": self.n_steps,
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "NoiseSchedule":
        if desc.get("shape", "triangular") != "triangular":
            raise ConfigError(f"unknown schedule shape {desc.get('shape')!r}")
        return make_schedule(float(desc["beta_min"]), float(desc["beta_max"]), int(desc["n_steps"]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return self.descriptor() == other.descriptor()

    def __hash__(self) -> int:
        return hash((self.beta_min, self.beta_max, self.n_steps))


def make_schedule(beta_min: float = 1e-5, beta_max: float = 0.3, n_steps: int = 100) -> NoiseSchedule:
    """Build a uniform-grid schedule with a symmetric triangular rate."""
    if isinstance(n_steps, bool) or int(n_steps) != n_steps or n_steps < 2:
        raise ConfigError(f"n_steps must be an integer >= 2, got {n_steps!r}")
    if not (np.isfinite(beta_min) and np.isfinite(beta_max)) or not 0 < beta_min <= beta_max:
        raise ConfigError(f"need 0 < beta_min <= beta_max, got beta_min={beta_min}, beta_max={beta_max}")
    n_steps = int(n_steps)
    t_grid = np.arange(n_steps + 1, dtype=np.float64) / n_steps
    sigma_sq = _beta_integral(t_grid, beta_min, beta_max)
    sigma_sq[0] = 0.0
    total = float(_beta_integral(1.0, beta_min, beta_max))
    sigma_sq[-1] = total
    sigma_bar_sq = total - sigma_sq
    sigma_bar_sq[-1] = 0.0
    beta = np.diff(sigma_sq) / np.diff(t_grid)
    for arr in (t_grid, beta, sigma_sq, sigma_bar_sq):
        arr.setflags(write=False)
    return NoiseSchedule(
        beta_min=float(beta_min),
        beta_max=float(beta_max),
        n_steps=n_steps,
        t_grid=t_grid,
        beta=beta,
        sigma_sq=sigma_sq,
        sigma_bar_sq=sigma_bar_sq,
    )
