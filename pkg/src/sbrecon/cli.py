"""Command-line entry point: make-dataset, train, recon, eval.

Exit codes: 0 success, 2 configuration/format error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sio
from .data import build_dataset, r_label, sub_seed
from .dc import DCConfig
from .denoiser import Denoiser, DenoiserConfig, OptConfig, TrainingAborted, init_state, train
from .errors import ConfigError, FormatError, NumericalError
from .metrics import evaluate
from .pipeline import ReconConfig, guided_reconstruct, inversion_reconstruct, zero_filled
from .schedule import make_schedule

logger = logging.getLogger("sbrecon")

METHODS = ("guided", "inversion", "zero_filled")
_RECON_SEED = 7


def _write_effective(out: Path, name: str, cfg: dict, sections: list[str]) -> str:
    used = {s: cfg[s] for s in sections}
    digest = sio.config_hash(used)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.ini").write_text(f"# config_hash = {digest}\n" + sio.dump_config(used))
    return digest


def cmd_make_dataset(cfg: dict, out: Path) -> Path:
    d = cfg["dataset"]
    digest = _write_effective(out, "make-dataset", cfg, ["dataset"])
    try:
        ds = build_dataset(
            d["n_pairs"], d["height"], d["width"], d["coils"], d["sigma_eps"], d["r"],
            d["pattern"], d["center"], d["discrepancy"], d["seed"], d["precision"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ds.header["config_hash"] = digest
    path = sio.save_dataset(out / "dataset.bin", ds)
    for label, r in ds.header["achieved_r"].items():
        print(f"R target {label}: achieved net R = {r:.3f}")
    return path


def _schedule(cfg: dict):
    s = cfg["schedule"]
    return make_schedule(s["beta_min"], s["beta_max"], s["n_steps"])


def cmd_train(cfg: dict, out: Path) -> Path:
    t = cfg["train"]
    digest = _write_effective(out, "train", cfg, ["schedule", "model", "train"])
    ds = sio.load_dataset(t["dataset"])
    schedule = _schedule(cfg)
    opt = OptConfig(t["lr"], t["batch_size"], t["steps"], t["seed"], t["log_interval"], t["grad_clip"])
    m = cfg["model"]
    arch = DenoiserConfig(ds.header["height"], ds.header["width"], m["depth"], m["channels"], m["t_dim"], m["groups"])
    if t["resume"]:
        state, header = sio.load_checkpoint(t["resume"])
        if state.model.cfg != arch or state.schedule != schedule or state.opt.seed != opt.seed:
            raise ConfigError("resume checkpoint does not match the configured model/schedule/seed")
        state.opt = opt
    else:
        state = init_state(arch, schedule, opt)
    try:
        state = train(ds.targets, ds.guides, schedule, opt, state=state)
    except TrainingAborted as exc:
        sio.save_checkpoint(out / "checkpoint_last_good.bin", exc.last_good, {"config_hash": digest})
        raise
    path = sio.save_checkpoint(out / "checkpoint.bin", state, {"config_hash": digest})
    sio.write_csv(out / "loss.csv", ["step", "loss"], state.loss_log())
    return path


def _cases(spec: str, n: int) -> list[int]:
    if spec.strip().lower() in ("", "all"):
        return list(range(n))
    start, _, stop = spec.partition(":")
    idx = list(range(int(start or 0), int(stop) if stop else n))
    if not idx or idx[-1] >= n:
        raise ConfigError(f"cases {spec!r} out of range for {n} pairs")
    return idx


def cmd_recon(cfg: dict, out: Path) -> Path:
    rc = cfg["recon"]
    method = rc["method"]
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    digest = _write_effective(out, "recon", cfg, ["schedule", "recon"])
    ds = sio.load_dataset(rc["dataset"])
    label = ds.label_for(rc["r"])
    cases = _cases(rc["cases"], len(ds))

    denoiser = schedule = None
    if method != "zero_filled":
        state, _ = sio.load_checkpoint(rc["checkpoint"])
        if (state.model.cfg.height, state.model.cfg.width) != ds.targets.shape[-2:]:
            raise ConfigError("checkpoint architecture does not match the dataset image size")
        schedule = state.schedule
        if schedule != _schedule(cfg):
            raise ConfigError(f"checkpoint schedule {schedule.descriptor()} differs from configured schedule")
        denoiser = Denoiser(state.model, schedule)
    dc = DCConfig(rc["lam"], rc["max_iters"], rc["tol"])

    def run_chunk(chunk: list[int]):
        kspace = ds.acquisition(rc["r"], chunk)
        guide = ds.guides[chunk]
        if method == "zero_filled":
            return zero_filled(kspace), None
        seeds = tuple(sub_seed(rc["seed"], k, _RECON_SEED) for k in chunk)
        rcfg = ReconConfig(dc, rc["deterministic"], rc["n_inversion"], seeds)
        fn = guided_reconstruct if method == "guided" else inversion_reconstruct
        rec = fn(kspace, guide, denoiser, schedule, rcfg)
        return rec.image, rec.residuals

    chunks = [cases[i : i + rc["batch"]] for i in range(0, len(cases), rc["batch"])]
    with ThreadPoolExecutor(max_workers=max(1, rc["workers"])) as pool:
        results = list(pool.map(run_chunk, chunks))

    metric_rows, res_rows = [], []
    for chunk, (images, residuals) in zip(chunks, results):
        for j, k in enumerate(chunk):
            img = images[j]
            name = f"{method}_R{label}_case{k:04d}"
            header = {"case": k, "method": method, "r": label, "seed": rc["seed"], "config_hash": digest,
                      "dataset_hash": ds.header.get("config_hash", "")}
            sio.save_image(out / "images" / f"{name}.bin", img, header)
            if rc["png"]:
                sio.save_png(out / "images" / f"{name}.png", img)
            rep = evaluate(img, ds.targets[k], name)
            metric_rows.append([f"{digest}-{k:04d}", method, label, rc["seed"], rep.nmse, rep.psnr, rep.ssim])
            if residuals is not None:
                res_rows.extend([k, i, float(v)] for i, v in enumerate(residuals[:, j]))
    path = sio.write_csv(out / "metrics.csv", ["run_id", "method", "R", "seed", "nmse", "psnr_db", "ssim"], metric_rows)
    sio.write_csv(out / "residuals.csv", ["case", "step", "residual"], res_rows)
    return path


def _metric_files(spec: str) -> list[Path]:
    paths = []
    for item in spec.replace(",", " ").split():
        p = Path(item)
        paths.append(p / "metrics.csv" if p.is_dir() else p)
    if not paths:
        raise ConfigError("[eval] inputs lists no metrics files")
    for p in paths:
        if not p.exists():
            raise ConfigError(f"metrics file {p} not found")
    return paths


def cmd_eval(cfg: dict, out: Path) -> Path:
    _write_effective(out, "eval", cfg, ["eval"])
    groups: dict[tuple[str, float], list[dict]] = {}
    for path in _metric_files(cfg["eval"]["inputs"]):
        for row in sio.read_csv(path):
            groups.setdefault((row["method"], float(row["R"])), []).append(row)
    summary, curves = [], []
    print(f"{'method':<12}{'R':>6}{'n':>4}  {'NMSE (%)':>18}  {'PSNR (dB)':>16}  {'SSIM (%)':>16}")
    for (method, r) in sorted(groups):
        rows = groups[(method, r)]
        stats = {}
        for key in ("nmse", "psnr_db", "ssim"):
            vals = np.array([float(x[key]) for x in rows])
            stats[key] = (float(vals.mean()), float(vals.std()))
            curves.append([r, method, key, stats[key][0], stats[key][1]])
        summary.append([method, r, len(rows), *stats["nmse"], *stats["psnr_db"], *stats["ssim"]])
        print(
            f"{method:<12}{r:>6g}{len(rows):>4}  {100 * stats['nmse'][0]:>8.3f} ± {100 * stats['nmse'][1]:<7.3f}"
            f"  {stats['psnr_db'][0]:>7.2f} ± {stats['psnr_db'][1]:<5.2f}  {100 * stats['ssim'][0]:>7.2f} ± {100 * stats['ssim'][1]:<5.2f}"
        )
    sio.write_csv(
        out / "summary.csv",
        ["method", "R", "n", "nmse_mean", "nmse_std", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"],
        summary,
    )
    sio.write_csv(out / "curves.csv", ["R", "method", "metric", "mean", "std"], curves)
    return out / "summary.csv"


COMMANDS = {"make-dataset": cmd_make_dataset, "train": cmd_train, "recon": cmd_recon, "eval": cmd_eval}


def _bool_flag(s: str) -> bool:
    try:
        return sio._bool(s)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbrecon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value config file with [section] headers")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--r", type=float, help="acceleration (recon) or the single R to generate (make-dataset)")
        p.add_argument("--deterministic", type=_bool_flag)
        p.add_argument("--ni", type=int, help="number of inversion steps")
        p.add_argument("--workers", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def apply_overrides(cfg: dict, command: str, args: argparse.Namespace) -> dict:
    section = {"make-dataset": "dataset", "train": "train", "recon": "recon", "eval": "eval"}[command]
    if args.seed is not None and "seed" in cfg[section]:
        cfg[section]["seed"] = args.seed
    if args.r is not None:
        if command == "make-dataset":
            cfg["dataset"]["r"] = [args.r]
        else:
            cfg["recon"]["r"] = args.r
    for flag, key in (("method", "method"), ("deterministic", "deterministic"), ("ni", "n_inversion"), ("workers", "workers")):
        value = getattr(args, flag)
        if value is not None:
            cfg["recon"][key] = value
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = apply_overrides(sio.load_config(args.config), args.command, args)
        COMMANDS[args.command](cfg, args.out)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
