"""Schrödinger-bridge kernels on a discrete schedule.

Every function here is pure: inputs are numpy arrays of any shape (a leading
batch axis is fine) and randomness comes only from the generator passed in.
Complex noise is circular: real and imaginary parts are independent, each
carrying half the variance.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .schedule import NoiseSchedule

Rng = np.random.Generator | Sequence[np.random.Generator]


def complex_normal(rng: Rng, shape: tuple[int, ...]) -> np.ndarray:
    """Standard circular complex Gaussian draw (E|z|^2 = 1).

    ``rng`` may be a sequence of generators, one per item along the leading
    axis of ``shape``; each item's noise then depends only on its own
    generator, so results do not change with how cases are batched.
    """
    if isinstance(rng, np.random.Generator):
        re, im = rng.standard_normal((2, *shape))
        return (re + 1j * im) * np.sqrt(0.5)
    if len(rng) != shape[0]:
        raise ValueError(f"{len(rng)} generators for a batch of {shape[0]}")
    return np.stack([complex_normal(g, tuple(shape[1:])) for g in rng])


def marginal(schedule: NoiseSchedule, x0: np.ndarray, x1: np.ndarray, n: int) -> tuple[np.ndarray, float]:
    """Mean and per-pixel variance of q(x_n | x0, x1)."""
    x0 = np.asarray(x0)
    x1 = np.asarray(x1)
    if x0.shape != x1.shape:
        raise ValueError(f"x0 shape {x0.shape} != x1 shape {x1.shape}")
    s2 = schedule.sigma(n) ** 2
    sb2 = schedule.sigma_bar(n) ** 2
    total = s2 + sb2
    mean = (sb2 / total) * x0 + (s2 / total) * x1
    var = s2 * sb2 / total
    return mean, var


def sample_intermediate(
    schedule: NoiseSchedule, x0: np.ndarray, x1: np.ndarray, n: int, rng: Rng
) -> np.ndarray:
    """Draw x_n ~ q(x_n | x0, x1).

    At n=0 and n=N the variance vanishes and the endpoints come back exactly,
    but the generator is still advanced so draw streams stay aligned.
    """
    mean, var = marginal(schedule, x0, x1, n)
    z = complex_normal(rng, mean.shape)
    if var == 0.0:
        return mean.astype(np.complex128)
    return mean + np.sqrt(var) * z


def predict_x0(schedule: NoiseSchedule, x_n: np.ndarray, eps_hat: np.ndarray, n: int) -> np.ndarray:
    """Denoised estimate x_n - sigma_n * eps_hat. Undefined at n=0."""
    if n == 0:
        raise ValueError("predict_x0 is undefined at n=0 (sigma_0 = 0); callers must branch")
    return np.asarray(x_n) - schedule.sigma(n) * np.asarray(eps_hat)


def training_target(schedule: NoiseSchedule, x_n: np.ndarray, x0: np.ndarray, n: int) -> np.ndarray:
    """Regression target (x_n - x0) / sigma_n for the noise predictor."""
    if n == 0:
        raise ValueError("training target is undefined at n=0")
    return (np.asarray(x_n) - np.asarray(x0)) / schedule.sigma(n)


def posterior_weights(schedule: NoiseSchedule, n: int) -> tuple[float, float, float]:
    """(weight on x0, weight on x_{n+1}, variance) of p(x_n | x0, x_{n+1})."""
    a2 = schedule.alpha_sq(n)
    s2 = schedule.sigma(n) ** 2
    denom = a2 + s2
    return a2 / denom, s2 / denom, s2 * a2 / denom


def posterior_step(
    schedule: NoiseSchedule,
    x0: np.ndarray,
    x_next: np.ndarray,
    n: int,
    rng: Rng | None = None,
    deterministic: bool = False,
) -> np.ndarray:
    """Step from state n+1 to state n given a clean estimate x0.

    With ``deterministic=True`` the variance is dropped (probability-flow form)
    and no random numbers are consumed.
    """
    w0, w1, var = posterior_weights(schedule, n)
    x0 = np.asarray(x0)
    x_next = np.asarray(x_next)
    if x0.shape != x_next.shape:
        raise ValueError(f"x0 shape {x0.shape} != x_next shape {x_next.shape}")
    mean = w0 * x0 + w1 * x_next
    if deterministic:
        return mean
    if rng is None:
        raise ValueError("stochastic posterior_step needs a generator")
    z = complex_normal(rng, mean.shape)
    return mean + np.sqrt(var) * z


def _check_inner(schedule: NoiseSchedule, n: int) -> None:
    if not 1 <= n < schedule.n_steps:
        raise IndexError(f"step index {n} outside [1, {schedule.n_steps - 1}]")


def rescale_noise(schedule: NoiseSchedule, eps_n: np.ndarray, n: int) -> np.ndarray:
    """Carry a noise prediction at step n over to step n+1."""
    _check_inner(schedule, n)
    return (schedule.sigma(n + 1) / schedule.sigma(n)) * np.asarray(eps_n)


def inversion_coefficient(schedule: NoiseSchedule, n: int) -> float:
    _check_inner(schedule, n)
    a2 = schedule.alpha_sq(n)
    s_n = schedule.sigma(n)
    s_next = schedule.sigma(n + 1)
    return a2 * s_next**2 / (s_n * (a2 + s_n**2))


def inversion_step(schedule: NoiseSchedule, x_n: np.ndarray, eps_hat_n: np.ndarray, n: int) -> np.ndarray:
    """Deterministic move from state n to state n+1 using the step-n noise prediction."""
    return np.asarray(x_n) + inversion_coefficient(schedule, n) * np.asarray(eps_hat_n)


def lift_first_step(schedule: NoiseSchedule, x0: np.ndarray, eps_hat: np.ndarray) -> np.ndarray:
    """Deterministic move from state 0 to state 1: x_1 = x_0 + sigma_1 * eps.

    The inversion coefficient divides by sigma_0 = 0, so the first step instead
    inverts the denoised prediction ``x0 = x_1 - sigma_1 * eps`` directly.
    """
    return np.asarray(x0) + schedule.sigma(1) * np.asarray(eps_hat)
