"""Guided and inversion reconstruction on top of the bridge kernels."""

from __future__ import annotations

import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bridge
from .dc import DCConfig, cg_solve
from .errors import ConfigError, NumericalError
from .metrics import MetricReport, evaluate
from .mri import AcquisitionModel, KSpaceData, check_image, residual
from .schedule import NoiseSchedule

NoiseFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class ReconConfig:
    dc: DCConfig | None = field(default_factory=DCConfig)
    deterministic: bool = False
    n_inversion: int | None = None  # None means all N steps
    seed: int | tuple[int, ...] = 0

    def snapshot(self) -> dict:
        d = asdict(self)
        d["seed"] = list(self.seed) if isinstance(self.seed, tuple) else self.seed
        return d


@dataclass
class ReconRecord:
    image: np.ndarray
    residuals: np.ndarray  # ||y - A x0|| after each CG correction, shape (steps, *batch)
    config: dict
    duration: float
    metrics: list[MetricReport] | None = None
    guided_image: np.ndarray | None = None


def _generators(seed, batch: int | None):
    if batch is None:
        if isinstance(seed, tuple):
            raise ConfigError("per-item seeds given for a single image")
        return np.random.default_rng(seed)
    seeds = seed if isinstance(seed, tuple) else tuple(int(seed) * 1_000_003 + i for i in range(batch))
    if len(seeds) != batch:
        raise ConfigError(f"{len(seeds)} seeds for a batch of {batch}")
    return [np.random.default_rng(s) for s in seeds]


def _finite(x: np.ndarray, what: str, step: int) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite {what}", step=step)
    return x


def _check_inputs(kspace: KSpaceData, guide: np.ndarray, schedule: NoiseSchedule, cfg: ReconConfig):
    guide = check_image(guide, "guide")
    if guide.shape != kspace.model.image_shape:
        raise ConfigError(f"guide shape {guide.shape} does not match acquisition {kspace.model.image_shape}")
    n_inv = schedule.n_steps if cfg.n_inversion is None else cfg.n_inversion
    if not 0 <= n_inv <= schedule.n_steps:
        raise ConfigError(f"n_inversion={n_inv} outside [0, {schedule.n_steps}]")
    batch = guide.shape[0] if guide.ndim == 3 else None
    return guide, n_inv, batch


def reverse_chain(
    x_start: np.ndarray,
    start: int,
    kspace: KSpaceData,
    eps_fn: NoiseFn,
    schedule: NoiseSchedule,
    cfg: ReconConfig,
    rng,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run states ``start`` down to 0: predict, correct with CG, step back."""
    x = x_start
    res_log = []
    for n in range(start, 0, -1):
        eps = _finite(np.asarray(eps_fn(x, n)), "noise prediction", n)
        x0 = bridge.predict_x0(schedule, x, eps, n)
        if cfg.dc is not None:
            x0 = cg_solve(x0, kspace, cfg.dc).x
        _finite(x0, "corrected prediction", n)
        res_log.append(residual(x0, kspace))
        x = _finite(bridge.posterior_step(schedule, x0, x, n - 1, rng, cfg.deterministic), "state", n - 1)
    return x, res_log


def invert(
    x0: np.ndarray, eps_fn: NoiseFn, schedule: NoiseSchedule, n_steps: int
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Deterministically carry a clean image up to state ``n_steps``.

    Returns the final state and, for each state m reached, the noise that a
    reverse step from m must see to land exactly back on state m-1.
    """
    x = x0
    implied: dict[int, np.ndarray] = {}
    if n_steps == 0:
        return x, implied
    # state 0 -> 1 reuses the step-1 evaluation (sigma_0 = 0 rules out step 0)
    eps = _finite(np.asarray(eps_fn(x, 1)), "noise prediction", 0)
    x = bridge.lift_first_step(schedule, x, eps)
    implied[1] = eps
    for n in range(1, n_steps):
        eps = _finite(np.asarray(eps_fn(x, n)), "noise prediction", n)
        implied[n + 1] = bridge.rescale_noise(schedule, eps, n)
        x = _finite(bridge.inversion_step(schedule, x, eps, n), "inverted state", n + 1)
    return x, implied


def _metrics(image, reference, batch) -> list[MetricReport] | None:
    if reference is None:
        return None
    if batch is None:
        return [evaluate(image, reference, "0")]
    return [evaluate(image[i], reference[i], str(i)) for i in range(batch)]


def guided_reconstruct(
    kspace: KSpaceData,
    guide: np.ndarray,
    eps_fn: NoiseFn,
    schedule: NoiseSchedule,
    cfg: ReconConfig = ReconConfig(),
    reference: np.ndarray | None = None,
) -> ReconRecord:
    """Reverse bridge sampling from the guide with CG data consistency at every step."""
    start = time.perf_counter()
    guide, _, batch = _check_inputs(kspace, guide, schedule, cfg)
    rng = _generators(cfg.seed, batch)
    x, log = reverse_chain(guide, schedule.n_steps, kspace, eps_fn, schedule, cfg, rng)
    return ReconRecord(
        image=x,
        residuals=np.array(log),
        config={"method": "guided", "schedule": schedule.descriptor(), **cfg.snapshot()},
        duration=time.perf_counter() - start,
        metrics=_metrics(x, reference, batch),
    )


def inversion_reconstruct(
    kspace: KSpaceData,
    guide: np.ndarray,
    eps_fn: NoiseFn,
    schedule: NoiseSchedule,
    cfg: ReconConfig = ReconConfig(),
    reference: np.ndarray | None = None,
) -> ReconRecord:
    """Guided pass, deterministic inversion up to state N_i, then a second guided pass from there."""
    start = time.perf_counter()
    guide, n_inv, batch = _check_inputs(kspace, guide, schedule, cfg)
    rng = _generators(cfg.seed, batch)
    first, log1 = reverse_chain(guide, schedule.n_steps, kspace, eps_fn, schedule, cfg, rng)
    lifted, _ = invert(first, eps_fn, schedule, n_inv)
    x, log3 = reverse_chain(lifted, n_inv, kspace, eps_fn, schedule, cfg, rng)
    return ReconRecord(
        image=x,
        residuals=np.array(log1 + log3),
        config={"method": "inversion", "schedule": schedule.descriptor(), **cfg.snapshot(), "n_inversion": n_inv},
        duration=time.perf_counter() - start,
        metrics=_metrics(x, reference, batch),
        guided_image=first,
    )


def zero_filled(kspace: KSpaceData) -> np.ndarray:
    """Adjoint reconstruction A^H y."""
    return kspace.zero_filled()


def oracle_noise(schedule: NoiseSchedule, truth: np.ndarray) -> NoiseFn:
    """Perfect predictor: returns (x_n - x0) / sigma_n using the true image."""

    def eps(x: np.ndarray, n: int) -> np.ndarray:
        return bridge.training_target(schedule, x, truth, n)

    return eps


def zero_noise(x: np.ndarray, n: int) -> np.ndarray:
    return np.zeros_like(x)


def recorded_noise(implied: dict[int, np.ndarray], fallback: NoiseFn | None = None) -> NoiseFn:
    """Replay noises recorded by :func:`invert` (for exact round-trip checks)."""

    def eps(x: np.ndarray, n: int) -> np.ndarray:
        if n in implied:
            return implied[n]
        if fallback is None:
            raise KeyError(f"no recorded noise for step {n}")
        return fallback(x, n)

    return eps


def batch_kspace(items: Sequence[KSpaceData]) -> KSpaceData:
    """Stack single-image acquisitions into one batched acquisition."""
    sig = {k.sigma_eps for k in items}
    model = AcquisitionModel(
        np.stack([k.model.csm for k in items]),
        np.stack([k.model.mask for k in items]),
        sig.pop() if len(sig) == 1 else float("nan"),
    )
    return KSpaceData(np.stack([k.data for k in items]), model)
