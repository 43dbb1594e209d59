"""Noise predictor eps_theta(x_n, t_n) and its training loop.

Complex images enter the network as two real channels (real, imaginary).
The network is a plain residual conv stack with a sinusoidal time embedding
added inside every block; the output convolution starts at zero, so an
untrained model predicts no noise at all.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import bridge
from .errors import ConfigError, NumericalError
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DenoiserConfig:
    height: int = 64
    width: int = 64
    depth: int = 6
    channels: int = 32
    t_dim: int = 64
    groups: int = 8
    linear: bool = False  # drop activations and normalisation (gradient-check aid)

    def __post_init__(self):
        if self.depth < 0 or self.channels < 1 or self.t_dim < 2 or self.t_dim % 2:
            raise ConfigError(f"invalid denoiser architecture {self}")
        if not self.linear and self.channels % self.groups:
            raise ConfigError(f"channels={self.channels} not divisible by groups={self.groups}")


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    """Sinusoidal features of continuous times t in [0, 1]."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype) / half)
    args = 1000.0 * t[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class _ResBlock(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        c = cfg.channels
        self.norm1 = nn.Identity() if cfg.linear else nn.GroupNorm(cfg.groups, c)
        self.conv1 = nn.Conv2d(c, c, 3, padding=1)
        self.emb = nn.Linear(cfg.t_dim, c)
        self.norm2 = nn.Identity() if cfg.linear else nn.GroupNorm(cfg.groups, c)
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)
        self.act = nn.Identity() if cfg.linear else nn.SiLU()

    def forward(self, h, emb):
        out = self.conv1(self.act(self.norm1(h)))
        out = out + self.emb(emb)[:, :, None, None]
        out = self.conv2(self.act(self.norm2(out)))
        return h + out


class NoisePredictor(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        act = nn.Identity() if cfg.linear else nn.SiLU()
        self.time_mlp = nn.Sequential(nn.Linear(cfg.t_dim, cfg.t_dim), act, nn.Linear(cfg.t_dim, cfg.t_dim))
        self.conv_in = nn.Conv2d(2, cfg.channels, 3, padding=1)
        self.blocks = nn.ModuleList(_ResBlock(cfg) for _ in range(cfg.depth))
        self.norm_out = nn.Identity() if cfg.linear else nn.GroupNorm(cfg.groups, cfg.channels)
        self.act_out = act
        self.conv_out = nn.Conv2d(cfg.channels, 2, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(t, self.cfg.t_dim).to(x.dtype))
        h = self.conv_in(x)
        for block in self.blocks:
            h = block(h, emb)
        return self.conv_out(self.act_out(self.norm_out(h)))


def build_model(cfg: DenoiserConfig, seed: int = 0) -> NoisePredictor:
    """Freshly initialised model; initialisation depends only on ``seed``."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = NoisePredictor(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return model


def to_channels(x: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    x = np.asarray(x)
    return torch.from_numpy(np.stack([x.real, x.imag], axis=-3)).to(dtype)


def from_channels(t: torch.Tensor) -> np.ndarray:
    a = t.detach().to(torch.float64).numpy()
    return a[..., 0, :, :] + 1j * a[..., 1, :, :]


def _times(schedule: NoiseSchedule, n, batch: int, dtype) -> torch.Tensor:
    n = np.broadcast_to(np.asarray(n), (batch,))
    if np.any(n < 1) or np.any(n > schedule.n_steps):
        raise ValueError(f"step index outside [1, {schedule.n_steps}]: {n}")
    return torch.as_tensor(schedule.t_grid[n], dtype=dtype)


def eval_model(model: NoisePredictor, schedule: NoiseSchedule, x: np.ndarray, n) -> np.ndarray:
    """Noise estimate for complex image(s) ``x`` of shape (H, W) or (B, H, W) at step(s) n."""
    x = np.asarray(x)
    cfg = model.cfg
    if x.shape[-2:] != (cfg.height, cfg.width) or x.ndim not in (2, 3):
        raise ValueError(f"expected image(s) of size {cfg.height}x{cfg.width}, got shape {x.shape}")
    single = x.ndim == 2
    xb = x[None] if single else x
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(to_channels(xb, dtype), _times(schedule, n, xb.shape[0], dtype))
    out = from_channels(out)
    return out[0] if single else out


class Denoiser:
    """Callable ``eps(x, n)`` binding a model to the schedule it was trained on."""

    def __init__(self, model: NoisePredictor, schedule: NoiseSchedule):
        self.model = model.eval()
        self.schedule = schedule

    @property
    def cfg(self) -> DenoiserConfig:
        return self.model.cfg

    def __call__(self, x: np.ndarray, n) -> np.ndarray:
        return eval_model(self.model, self.schedule, x, n)


@dataclass
class TrainBatch:
    x_t: np.ndarray  # (B, H, W) complex
    n: np.ndarray  # (B,) step indices >= 1
    target: np.ndarray  # (B, H, W) complex, (x_t - x0) / sigma_n

    def __len__(self) -> int:
        return len(self.n)


def make_batch(schedule: NoiseSchedule, x0: np.ndarray, x1: np.ndarray, n, rng: np.random.Generator) -> TrainBatch:
    """Draw x_t ~ q(x_t | x0, x1) item by item and attach regression targets."""
    n = np.asarray(n, dtype=int)
    if np.any(n < 1):
        raise ValueError("training steps must be >= 1 so that sigma_n > 0")
    xt = np.empty(x0.shape, dtype=np.complex128)
    target = np.empty(x0.shape, dtype=np.complex128)
    for i, ni in enumerate(n):
        xt[i] = bridge.sample_intermediate(schedule, x0[i], x1[i], int(ni), rng)
        target[i] = bridge.training_target(schedule, xt[i], x0[i], int(ni))
    return TrainBatch(xt, n, target)


def loss_tensor(model: NoisePredictor, schedule: NoiseSchedule, batch: TrainBatch) -> torch.Tensor:
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(batch.target)):
        raise ValueError("batch targets must be finite")
    dtype = next(model.parameters()).dtype
    pred = model(to_channels(batch.x_t, dtype), _times(schedule, batch.n, len(batch), dtype))
    diff = pred - to_channels(batch.target, dtype)
    # |complex error|^2 averaged over batch and pixels
    return diff.pow(2).sum(dim=1).mean()


def loss(model: NoisePredictor, schedule: NoiseSchedule, batch: TrainBatch) -> float:
    with torch.no_grad():
        return float(loss_tensor(model, schedule, batch))


@dataclass(frozen=True)
class OptConfig:
    lr: float = 2e-4
    batch_size: int = 8
    steps: int = 10_000
    seed: int = 0
    log_interval: int = 50
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.steps < 0 or self.log_interval < 1:
            raise ConfigError(f"invalid optimiser config {self}")


@dataclass
class TrainState:
    """Everything needed to continue training bit-for-bit."""

    model: NoisePredictor
    optimizer: torch.optim.Adam
    schedule: NoiseSchedule
    opt: OptConfig
    step: int = 0
    losses: list[float] = field(default_factory=list)

    def loss_log(self) -> list[tuple[int, float]]:
        """(step, mean loss over the preceding interval) rows."""
        k = self.opt.log_interval
        return [(s, float(np.mean(self.losses[s - k : s]))) for s in range(k, len(self.losses) + 1, k)]


class TrainingAborted(NumericalError):
    def __init__(self, message: str, step: int, last_good: TrainState):
        super().__init__(message, step)
        self.last_good = last_good


def init_state(cfg: DenoiserConfig, schedule: NoiseSchedule, opt: OptConfig) -> TrainState:
    model = build_model(cfg, opt.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=opt.lr)
    return TrainState(model, optimizer, schedule, opt)


def _snapshot(state: TrainState) -> TrainState:
    model = build_model(state.model.cfg)
    model.load_state_dict(state.model.state_dict())
    optimizer = torch.optim.Adam(model.parameters(), lr=state.opt.lr)
    optimizer.load_state_dict(state.optimizer.state_dict())
    return TrainState(model, optimizer, state.schedule, state.opt, state.step, list(state.losses))


def train_step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def train(
    targets: np.ndarray,
    guides: np.ndarray,
    schedule: NoiseSchedule,
    opt: OptConfig,
    cfg: DenoiserConfig | None = None,
    state: TrainState | None = None,
    until: int | None = None,
) -> TrainState:
    """Fit eps_theta on paired (target, guide) images.

    Each step draws pairs and step indices uniformly (n in 1..N) from a
    generator keyed on ``(opt.seed, step)``, so a run resumed from a saved
    state continues exactly where an unbroken run would be. ``until`` stops
    early at that step count.
    """
    targets = np.asarray(targets)
    guides = np.asarray(guides)
    if len(targets) == 0 or targets.shape != guides.shape:
        raise ValueError(f"need a non-empty paired dataset, got {targets.shape} / {guides.shape}")
    if state is None:
        if cfg is None:
            cfg = DenoiserConfig(height=targets.shape[-2], width=targets.shape[-1])
        state = init_state(cfg, schedule, opt)
    if (state.model.cfg.height, state.model.cfg.width) != targets.shape[-2:]:
        raise ConfigError("model image size does not match the dataset")
    model, optimizer = state.model, state.optimizer
    model.train()
    last_good = _snapshot(state)
    stop = opt.steps if until is None else min(until, opt.steps)
    while state.step < stop:
        rng = train_step_rng(opt.seed, state.step)
        idx = rng.integers(len(targets), size=opt.batch_size)
        n = rng.integers(1, schedule.n_steps + 1, size=opt.batch_size)
        batch = make_batch(schedule, targets[idx], guides[idx], n, rng)
        if not np.all(np.isfinite(batch.target)):
            raise TrainingAborted("non-finite training target", state.step, last_good)
        value = loss_tensor(model, schedule, batch)
        if not torch.isfinite(value):
            raise TrainingAborted("non-finite training loss", state.step, last_good)
        optimizer.zero_grad(set_to_none=True)
        value.backward()
        if opt.grad_clip:
            nn.utils.clip_grad_norm_(model.parameters(), opt.grad_clip)
        optimizer.step()
        if not all(torch.isfinite(p).all() for p in model.parameters()):
            raise TrainingAborted("non-finite parameters after optimiser step", state.step, last_good)
        state.losses.append(value.item())
        state.step += 1
        if state.step % opt.log_interval == 0:
            logger.info("step %d loss %.5f", state.step, np.mean(state.losses[-opt.log_interval :]))
            last_good = _snapshot(state)
    model.eval()
    return state


def grad_check(
    model: NoisePredictor,
    schedule: NoiseSchedule,
    batch: TrainBatch,
    h: float = 1e-5,
    n_params: int = 50,
    seed: int = 0,
) -> float:
    """Worst relative error between autograd and central differences.

    Runs on a float64 copy of ``model``; ``n_params`` scalar parameters are
    picked uniformly over all entries.
    """
    m64 = build_model(model.cfg).to(torch.float64)
    m64.load_state_dict({k: v.to(torch.float64) for k, v in model.state_dict().items()})
    params = [p for p in m64.parameters()]
    m64.zero_grad()
    loss_tensor(m64, schedule, batch).backward()

    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_params, offsets[-1]), replace=False)
    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            p = params[k].view(-1)
            j = int(flat - offsets[k])
            analytic = float(params[k].grad.view(-1)[j])
            orig = float(p[j])
            p[j] = orig + h
            up = float(loss_tensor(m64, schedule, batch))
            p[j] = orig - h
            down = float(loss_tensor(m64, schedule, batch))
            p[j] = orig
            numeric = (up - down) / (2 * h)
            scale = max(abs(analytic), abs(numeric))
            if scale > 0:
                worst = max(worst, abs(analytic - numeric) / scale)
    return worst


def config_dict(cfg: DenoiserConfig) -> dict:
    return asdict(cfg)
