"""Conjugate-gradient data consistency for denoised predictions.

Solves ``(A^H A + lam I) x = A^H y + lam x_prior`` starting from ``x_prior``.
Small ``lam`` lets the measurements dominate while keeping the system
positive definite; the prior then only fills what the data leaves
undetermined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .mri import KSpaceData


@dataclass(frozen=True)
class DCConfig:
    lam: float = 1e-3
    max_iters: int = 10
    tol: float = 1e-6

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lam must be finite and >= 0, got {self.lam}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.tol >= 0:
            raise ConfigError(f"tol must be >= 0, got {self.tol}")


@dataclass
class CGResult:
    x: np.ndarray
    residuals: np.ndarray  # normal-equation residual norm per iteration, shape (iters+1, *batch)
    data_residuals: np.ndarray  # ||y - A x_k|| for the same iterates
    iterations: int
    best_iteration: np.ndarray


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(np.conj(a) * b, axis=(-2, -1))


def _bcast(v: np.ndarray) -> np.ndarray:
    return v[..., None, None]


def cg_solve(x_prior: np.ndarray, kspace: KSpaceData, cfg: DCConfig = DCConfig()) -> CGResult:
    """Run CG and keep the per-item iterate with the smallest residual."""
    model = kspace.model
    x_prior = np.asarray(x_prior, dtype=np.complex128)
    if not np.all(np.isfinite(x_prior)):
        raise NumericalError("non-finite initial image passed to CG", step=0)
    if cfg.lam == 0 and not np.all(model.mask.reshape(*model.mask.shape[:-2], -1).any(axis=-1)):
        raise NumericalError("lam=0 with an empty sampling mask gives a singular system")

    lam = cfg.lam
    aty = model.adjoint(kspace.data)
    rhs_norm = np.sqrt(np.real(_dot(aty, aty)))
    stop_at = cfg.tol * rhs_norm

    x = x_prior.copy()
    ax = model.forward(x)
    data_res = kspace.data - ax
    r = model.adjoint(data_res)  # lam terms cancel at x = x_prior
    p = r.copy()
    rs = np.real(_dot(r, r))

    best_x = x.copy()
    best_res = np.sqrt(rs)
    best_it = np.zeros(best_res.shape, dtype=int)
    log = [np.sqrt(rs)]
    dlog = [np.sqrt(np.sum(np.abs(data_res) ** 2, axis=(-3, -2, -1)))]

    it = 0
    for it in range(1, cfg.max_iters + 1):
        if np.all(np.sqrt(rs) <= stop_at):
            it -= 1
            break
        ap = model.forward(p)
        q = model.adjoint(ap) + lam * p
        pq = np.real(_dot(p, q))
        active = (pq > 0) & (np.sqrt(rs) > stop_at)
        alpha = np.where(active, rs / np.where(active, pq, 1.0), 0.0)
        x = x + _bcast(alpha) * p
        data_res = data_res - alpha[..., None, None, None] * ap
        r = r - _bcast(alpha) * q
        rs_new = np.real(_dot(r, r))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(rs_new))):
            raise NumericalError("non-finite CG iterate", step=it)
        beta = np.where(active & (rs > 0), rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + _bcast(beta) * p
        rs = rs_new

        res = np.sqrt(rs)
        better = res < best_res
        best_x = np.where(_bcast(better), x, best_x)
        best_res = np.where(better, res, best_res)
        best_it = np.where(better, it, best_it)
        log.append(res)
        dlog.append(np.sqrt(np.sum(np.abs(data_res) ** 2, axis=(-3, -2, -1))))

    return CGResult(best_x, np.array(log), np.array(dlog), it, best_it)


def cg_correct(x_prior: np.ndarray, kspace: KSpaceData, cfg: DCConfig = DCConfig()) -> np.ndarray:
    """Pull ``x_prior`` toward agreement with the measured k-space."""
    return cg_solve(x_prior, kspace, cfg).x
