"""Binary artifact containers, plain-text run configs and CSV helpers.

Every artifact file is laid out as::

    magic (4 bytes) | version (u16 LE) | header length (u32 LE) | header (UTF-8 JSON)
    | array payloads (little-endian) | CRC-32 of everything before (u32 LE)

Complex arrays are stored as interleaved real/imaginary floats. The JSON
header lists each array's name, dtype, shape and byte offset, and carries a
hash of the configuration that produced the file.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import struct
import zlib
from collections.abc import Iterable, Mapping
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

FORMAT_VERSION = 1
DATASET_MAGIC = b"SBDS"
CHECKPOINT_MAGIC = b"SBCK"
IMAGE_MAGIC = b"SBIM"

_REAL = {"float32": "<f4", "float64": "<f8", "uint8": "<u1", "int64": "<i8"}
_COMPLEX = {"complex64": "<f4", "complex128": "<f8"}


def config_hash(cfg: Mapping) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _encode(arr: np.ndarray, kind: str) -> bytes:
    if kind in _COMPLEX:
        a = np.asarray(arr, dtype=np.complex128)
        inter = np.stack([a.real, a.imag], axis=-1).astype(_COMPLEX[kind])
        return np.ascontiguousarray(inter).tobytes()
    return np.ascontiguousarray(np.asarray(arr).astype(_REAL[kind])).tobytes()


def _decode(buf: bytes, kind: str, shape: list[int]) -> np.ndarray:
    if kind in _COMPLEX:
        flat = np.frombuffer(buf, dtype=_COMPLEX[kind]).astype(np.float64)
        pairs = flat.reshape(*shape, 2)
        out = pairs[..., 0] + 1j * pairs[..., 1]
        return out.astype(np.complex64 if kind == "complex64" else np.complex128)
    return np.frombuffer(buf, dtype=_REAL[kind]).reshape(shape).copy()


def write_container(path, magic: bytes, header: dict, arrays: Iterable[tuple[str, np.ndarray, str]]) -> Path:
    """Write ``arrays`` given as ``(name, array, stored_kind)`` triples."""
    path = Path(path)
    chunks, index, offset = [], [], 0
    for name, arr, kind in arrays:
        if kind not in _REAL and kind not in _COMPLEX:
            raise ValueError(f"unsupported stored kind {kind!r}")
        data = _encode(arr, kind)
        index.append({"name": name, "kind": kind, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    head = json.dumps({**header, "arrays": index}, sort_keys=True).encode()
    body = magic + struct.pack("<HI", FORMAT_VERSION, len(head)) + head + b"".join(chunks)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    return path


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    if len(raw) < 14 or raw[:4] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise FormatError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    header = json.loads(raw[10 : 10 + hlen])
    base = 10 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        arrays[entry["name"]] = _decode(raw[start : start + entry["nbytes"]], entry["kind"], entry["shape"])
    return header, arrays


# ---- plain-text run configuration -------------------------------------------------

def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.replace(",", " ").split()]


def _center(s: str) -> list[int]:
    parts = s.lower().replace("x", " ").replace(",", " ").split()
    vals = [int(p) for p in parts]
    if len(vals) == 1:
        vals *= 2
    if len(vals) != 2:
        raise ValueError(f"centre must be 'N' or 'HxW', got {s!r}")
    return vals


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none", "all") else int(s)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "dataset": {
        "n_pairs": (int, 20),
        "height": (int, 64),
        "width": (int, 64),
        "coils": (int, 4),
        "sigma_eps": (float, 1e-3),
        "r": (_floats, [6.0]),
        "pattern": (str, "lattice"),
        "center": (_center, [16, 16]),
        "discrepancy": (float, 0.0),
        "seed": (int, 0),
        "precision": (str, "float32"),
    },
    "schedule": {
        "beta_min": (float, 1e-5),
        "beta_max": (float, 0.3),
        "n_steps": (int, 100),
    },
    "model": {
        "depth": (int, 6),
        "channels": (int, 32),
        "t_dim": (int, 64),
        "groups": (int, 8),
    },
    "train": {
        "dataset": (str, "dataset.bin"),
        "lr": (float, 2e-4),
        "batch_size": (int, 8),
        "steps": (int, 10_000),
        "log_interval": (int, 50),
        "grad_clip": (float, 1.0),
        "seed": (int, 0),
        "resume": (str, ""),
    },
    "recon": {
        "dataset": (str, "dataset.bin"),
        "checkpoint": (str, "checkpoint.bin"),
        "method": (str, "guided"),
        "r": (float, 6.0),
        "lam": (float, 1e-3),
        "max_iters": (int, 10),
        "tol": (float, 1e-6),
        "deterministic": (_bool, False),
        "n_inversion": (_opt_int, None),
        "seed": (int, 0),
        "workers": (int, 1),
        "batch": (int, 8),
        "cases": (str, "all"),
        "png": (_bool, True),
    },
    "eval": {
        "inputs": (str, ""),
    },
}


def default_config() -> dict[str, dict]:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config_text(text: str) -> dict[str, dict]:
    """Parse ``[section]`` / ``key = value`` text over the defaults; unknown keys are errors."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = default_config()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                cfg[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return cfg


def load_config(path: str | Path | None) -> dict[str, dict]:
    if path is None:
        return default_config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: Mapping[str, Mapping], sections: Iterable[str] | None = None) -> str:
    lines = []
    for sec in sections or cfg.keys():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in cfg[sec].items())
        lines.append("")
    return "\n".join(lines)


def write_csv(path, header: list[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# ---- datasets ----------------------------------------------------------------------

class PairedDataset:
    """Phantom pairs with coil maps, masks and simulated k-space for each R."""

    def __init__(self, targets, guides, csm, masks: dict, kspace: dict, header: dict):
        self.targets = targets
        self.guides = guides
        self.csm = csm
        self.masks = masks  # label -> (K, H, W) bool
        self.kspace = kspace  # label -> (K, C, H, W) complex
        self.header = header

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def r_labels(self) -> list[str]:
        return list(self.masks)

    def label_for(self, r: float) -> str:
        for label in self.masks:
            if abs(float(label) - r) < 1e-9:
                return label
        raise ConfigError(f"dataset has no masks for R={r}; available: {', '.join(self.masks)}")

    def acquisition(self, r: float, cases=None):
        from .mri import AcquisitionModel, KSpaceData

        label = self.label_for(r)
        idx = slice(None) if cases is None else cases
        model = AcquisitionModel(self.csm[idx], self.masks[label][idx], float(self.header["sigma_eps"]))
        return KSpaceData(self.kspace[label][idx].astype(np.complex128), model)


def save_dataset(path, ds: PairedDataset) -> Path:
    kind = "complex64" if ds.header.get("precision", "float32") == "float32" else "complex128"
    arrays = []
    for k in range(len(ds)):
        arrays += [(f"target/{k}", ds.targets[k], kind), (f"guide/{k}", ds.guides[k], kind), (f"csm/{k}", ds.csm[k], kind)]
        for label in ds.masks:
            arrays += [
                (f"mask/{label}/{k}", ds.masks[label][k].astype(np.float32), "float32"),
                (f"y/{label}/{k}", ds.kspace[label][k], kind),
            ]
    header = {**ds.header, "r_labels": ds.r_labels}
    return write_container(path, DATASET_MAGIC, header, arrays)


def load_dataset(path) -> PairedDataset:
    header, arrays = read_container(path, DATASET_MAGIC)
    K = int(header["n_pairs"])

    def stack(prefix):
        return np.stack([arrays[f"{prefix}/{k}"] for k in range(K)]).astype(np.complex128)

    masks = {lab: np.stack([arrays[f"mask/{lab}/{k}"] for k in range(K)]) > 0.5 for lab in header["r_labels"]}
    kspace = {lab: stack(f"y/{lab}") for lab in header["r_labels"]}
    header = {k: v for k, v in header.items() if k != "arrays"}
    return PairedDataset(stack("target"), stack("guide"), stack("csm"), masks, kspace, header)


# ---- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, state, extra: dict | None = None) -> Path:
    """Model weights, Adam moments and loss history as float32 payloads."""
    from dataclasses import asdict

    model, opt_state = state.model, state.optimizer.state_dict()
    names = [n for n, _ in model.named_parameters()]
    arrays = [(f"param/{n}", p.detach().numpy(), "float32") for n, p in model.named_parameters()]
    adam_steps = {}
    for i, n in enumerate(names):
        s = opt_state["state"].get(i)
        if s is None:
            continue
        adam_steps[n] = float(s["step"])
        arrays += [(f"exp_avg/{n}", s["exp_avg"].numpy(), "float32"), (f"exp_avg_sq/{n}", s["exp_avg_sq"].numpy(), "float32")]
    arrays.append(("losses", np.asarray(state.losses, dtype=np.float32), "float32"))
    header = {
        "architecture": asdict(model.cfg),
        "schedule": state.schedule.descriptor(),
        "opt": asdict(state.opt),
        "step": state.step,
        "param_names": names,
        "adam_steps": adam_steps,
        **(extra or {}),
    }
    return write_container(path, CHECKPOINT_MAGIC, header, arrays)


def load_checkpoint(path):
    """Rebuild a :class:`~sbrecon.denoiser.TrainState` from a checkpoint file."""
    import torch

    from .denoiser import DenoiserConfig, OptConfig, TrainState, build_model
    from .schedule import NoiseSchedule

    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    cfg = DenoiserConfig(**header["architecture"])
    opt = OptConfig(**header["opt"])
    schedule = NoiseSchedule.from_descriptor(header["schedule"])
    model = build_model(cfg, opt.seed)
    names = header["param_names"]
    state_dict = model.state_dict()
    for n in names:
        state_dict[n] = torch.from_numpy(arrays[f"param/{n}"].copy())
    model.load_state_dict(state_dict)
    optimizer = torch.optim.Adam(model.parameters(), lr=opt.lr)
    if header["adam_steps"]:
        sd = optimizer.state_dict()
        sd["state"] = {
            i: {
                "step": torch.tensor(header["adam_steps"][n]),
                "exp_avg": torch.from_numpy(arrays[f"exp_avg/{n}"].copy()),
                "exp_avg_sq": torch.from_numpy(arrays[f"exp_avg_sq/{n}"].copy()),
            }
            for i, n in enumerate(names)
            if n in header["adam_steps"]
        }
        optimizer.load_state_dict(sd)
    losses = [float(v) for v in arrays["losses"]]
    state = TrainState(model.eval(), optimizer, schedule, opt, int(header["step"]), losses)
    return state, {k: v for k, v in header.items() if k != "arrays"}


# ---- reconstructed images ----------------------------------------------------------

def save_image(path, image: np.ndarray, header: dict) -> Path:
    return write_container(path, IMAGE_MAGIC, header, [("image", image, "complex128")])


def load_image(path) -> tuple[np.ndarray, dict]:
    header, arrays = read_container(path, IMAGE_MAGIC)
    return arrays["image"], {k: v for k, v in header.items() if k != "arrays"}


def save_png(path, image: np.ndarray) -> tuple[Path, float]:
    """8-bit magnitude scaled by its own maximum; the scale goes to a JSON sidecar."""
    from PIL import Image

    mag = np.abs(image)
    scale = float(mag.max()) or 1.0
    pix = np.clip(np.round(mag / scale * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pix, mode="L").save(path, optimize=False)
    Path(str(path) + ".json").write_text(json.dumps({"scale": scale, "max_value": 255}) + "\n")
    return path, scale
