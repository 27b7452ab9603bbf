"""Command line: train, denoise, eval and gradcheck workflows.

Configuration is resolved in three layers: dataclass defaults, then the
``--config`` KEY=value file, then individual flags. A ``seed`` applies to
both the model (weight init) and the training plan (shuffling, noise).

Every command that writes files drops a ``run_manifest.json`` next to its
outputs before the work starts, atomically, holding the fully resolved
configuration, the seed, a version string and the output names; the end
timestamp is filled in on completion. A run is reproducible from its
manifest alone.

Exit codes: 0 success, 1 configuration or checkpoint problem, 2 data
problem, 3 numerical abort (non-finite training loss).
"""

import argparse
import json
import os
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .data import (ImageBuffer, ImageFormatError, PatchDataset, add_awgn,
                   load_image, quantize_u8, save_image, to_chw)
from .engine import DTYPES, Tensor
from .gradcheck import run_standard_suite
from .metrics import QualityReport, psnr, ssim
from .model import ModelConfig, MwdcnnModel, parse_config_text
from .training import NonFiniteLossError, TrainPlan, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")


class CliError(Exception):
    """User-facing failure carrying its process exit code."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def version_string() -> str:
    """`git describe` output when run from a checkout, else the package version."""
    try:
        proc = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5)
        described = proc.stdout.strip()
        if proc.returncode == 0 and described:
            return described
    except OSError:
        pass
    return "v" + __version__


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Resolved settings and outputs of one command, as a JSON file.

    Written atomically (temp file, then rename) at run start so a crashed
    run still leaves a valid manifest; `finish` fills the end timestamp.
    """

    def __init__(self, command: str, config: dict, seed: int, outputs: dict):
        self.path = None
        self.payload = {
            "command": command,
            "version": version_string(),
            "seed": seed,
            "config": config,
            "outputs": outputs,
            "started": _utc_now(),
            "ended": None,
        }

    def write(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.payload, indent=2, sort_keys=True) + "\n",
                       newline="\n")
        os.replace(tmp, path)
        self.path = path

    def finish(self) -> None:
        self.payload["ended"] = _utc_now()
        self.write(self.path)


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

_MODEL_FIELDS = set(ModelConfig.__dataclass_fields__)
_PLAN_FIELDS = set(TrainPlan.__dataclass_fields__)

# flags that feed ModelConfig directly (flag name == field name)
_MODEL_FLAGS = ("in_channels", "base_channels", "kernel_size", "dyn_kernels",
                "fe_growth", "precision", "temperature")
# (args attribute, TrainPlan field)
_PLAN_FLAGS = (("epochs", "epochs"), ("batch", "batch_size"), ("loss", "loss"),
               ("sigma", "sigma"), ("blind", "blind"), ("max_iters", "max_iters"))


def _read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config file: {exc}")
    try:
        return parse_config_text(text)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: {exc}")


def _resolve_config(args):
    """Defaults, then the config file, then flags; returns (ModelConfig, TrainPlan)."""
    model_kv, plan_kv = {}, {}
    if getattr(args, "config", None):
        for key, value in _read_config_file(args.config).items():
            known = False
            if key in _MODEL_FIELDS:
                model_kv[key] = value
                known = True
            if key in _PLAN_FIELDS:  # "seed" lands in both
                plan_kv[key] = value
                known = True
            if not known:
                raise CliError(EXIT_CONFIG, f"unknown config key: {key}")
    for name in _MODEL_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            model_kv[name] = value
    for attr, key in _PLAN_FLAGS:
        value = getattr(args, attr, None)
        if value is not None:
            plan_kv[key] = value
    if getattr(args, "seed", None) is not None:
        model_kv["seed"] = args.seed
        plan_kv["seed"] = args.seed
    try:
        return ModelConfig.from_mapping(model_kv), TrainPlan.from_mapping(plan_kv)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc))


def _plan_dict(plan: TrainPlan) -> dict:
    out = dict(plan.__dict__)
    out["lr_table"] = [list(band) for band in plan.lr_table]
    out["blind_range"] = list(plan.blind_range)
    return out


# ---------------------------------------------------------------------------
# shared data / inference helpers
# ---------------------------------------------------------------------------

def _scan_image_dir(dirpath):
    root = Path(dirpath)
    if not root.is_dir():
        raise CliError(EXIT_DATA, f"image directory not found: {root}")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not paths:
        raise CliError(EXIT_DATA, f"no PNG/PGM/PPM images in {root}")
    return paths


def _load_images(paths):
    images = []
    for p in paths:
        try:
            images.append(load_image(p))
        except (ImageFormatError, OSError) as exc:
            raise CliError(EXIT_DATA, f"{p}: {exc}")
    return images


def _load_one_image(path) -> ImageBuffer:
    try:
        return load_image(path)
    except (ImageFormatError, OSError) as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}")


def _chw_to_hwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(x, (1, 2, 0)))


def _noise_key(seed: int, *slots) -> int:
    # 64 bits of seed up top, the call-site slots packed below; pure and
    # collision-free for slot values under 2**32
    key = seed & 0xFFFFFFFFFFFFFFFF
    for slot in slots:
        key = (key << 32) | (slot & 0xFFFFFFFF)
    return key


def _infer(model: MwdcnnModel, x_chw: np.ndarray) -> np.ndarray:
    """One forward pass without a tape; odd H/W reflect-pad to even, crop back."""
    c, h, w = x_chw.shape
    if h < 8 or w < 8:
        raise CliError(EXIT_DATA, f"image too small to denoise: {w}x{h} (need 8x8)")
    pad_h, pad_w = h % 2, w % 2
    if pad_h or pad_w:
        x_chw = np.pad(x_chw, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    dtype = DTYPES[model.config.precision]
    out = model.forward(Tensor(x_chw[None], dtype=dtype)).data[0]
    return np.asarray(out, dtype=np.float64)[:, :h, :w]


def _quantized(x_chw: np.ndarray) -> np.ndarray:
    """CHW floats to HWC uint8 values, as float64 for the metrics."""
    return quantize_u8(_chw_to_hwc(x_chw)).astype(np.float64)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg, plan = _resolve_config(args)
    paths = _scan_image_dir(args.data)
    images = _load_images(paths)
    count = args.patches if args.patches is not None else 256 * len(images)

    try:
        dataset = PatchDataset(images, count, size=args.patch_size,
                               channels=cfg.in_channels, sigma=plan.sigma,
                               blind=plan.blind, blind_range=plan.blind_range,
                               seed=plan.seed)
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        "train",
        config={"model": cfg.to_dict(), "train": _plan_dict(plan),
                "data": {"dir": str(args.data), "patches": count,
                         "patch_size": args.patch_size,
                         "images": [p.name for p in paths]}},
        seed=plan.seed,
        outputs={"dir": str(out_dir), "log": "train_log.csv",
                 "dataset_manifest": "dataset_manifest.csv",
                 "checkpoints": "epoch_*.ckpt"})
    manifest.write(out_dir / "run_manifest.json")
    dataset.save_manifest(out_dir / "dataset_manifest.csv")

    model = MwdcnnModel(cfg)
    rows = train(plan, model, dataset, out_dir=out_dir)
    manifest.finish()

    last_iter, last_epoch, _, last_loss = rows[-1]
    print(f"trained {last_iter} iteration(s) over {last_epoch} epoch(s), "
          f"final loss {last_loss:.6g}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except (CheckpointError, OSError) as exc:
        raise CliError(EXIT_CONFIG, f"{args.checkpoint}: {exc}")
    if args.sigma is not None and args.clean:
        raise CliError(EXIT_CONFIG,
                       "--sigma treats the input as clean; --clean is redundant")

    buf = _load_one_image(args.input)
    channels = model.config.in_channels
    x = to_chw(buf.pixels, channels)

    reference = None
    if args.sigma is not None:
        reference = x
        x = add_awgn(x, args.sigma, key=_noise_key(args.seed, 0))
    elif args.clean:
        reference = to_chw(_load_one_image(args.clean).pixels, channels)
        if reference.shape != x.shape:
            raise CliError(EXIT_DATA, "clean reference size differs from the input")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = Path(args.input).suffix.lower()
    if suffix == ".pgm" and channels != 1:
        suffix = ".ppm"
    elif suffix == ".ppm" and channels != 3:
        suffix = ".pgm"
    elif suffix not in _IMAGE_SUFFIXES:
        suffix = ".png"
    out_path = out_dir / (Path(args.input).stem + "_denoised" + suffix)

    manifest = RunManifest(
        "denoise",
        config={"model": model.config.to_dict(), "checkpoint": str(args.checkpoint),
                "input": str(args.input), "sigma": args.sigma,
                "clean": str(args.clean) if args.clean else None},
        seed=args.seed,
        outputs={"dir": str(out_dir), "image": out_path.name})
    manifest.write(out_dir / "run_manifest.json")

    denoised = _infer(model, x)
    save_image(ImageBuffer(quantize_u8(_chw_to_hwc(denoised))), out_path)
    manifest.finish()

    if reference is not None:
        q_ref = _quantized(reference)
        print(f"noisy    PSNR {psnr(_quantized(x), q_ref):6.2f} dB")
        print(f"denoised PSNR {psnr(_quantized(denoised), q_ref):6.2f} dB")
    print(out_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except (CheckpointError, OSError) as exc:
        raise CliError(EXIT_CONFIG, f"{args.checkpoint}: {exc}")
    try:
        sigmas = [float(s) for s in str(args.sigma).split(",") if s.strip()]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad sigma list: {args.sigma!r}")
    if not sigmas or any(s < 0 for s in sigmas):
        raise CliError(EXIT_CONFIG, f"sigma list must be non-negative: {args.sigma!r}")

    paths = _scan_image_dir(args.data)
    images = _load_images(paths)
    channels = model.config.in_channels

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_names = [f"eval_sigma{s:g}.csv" for s in sigmas]
    manifest = RunManifest(
        "eval",
        config={"model": model.config.to_dict(), "checkpoint": str(args.checkpoint),
                "sigmas": sigmas,
                "data": {"dir": str(args.data), "images": [p.name for p in paths]}},
        seed=args.seed,
        outputs={"dir": str(out_dir), "reports": report_names})
    manifest.write(out_dir / "run_manifest.json")

    for si, sigma in enumerate(sigmas):
        report = QualityReport()
        for idx, (path, buf) in enumerate(zip(paths, images)):
            clean = to_chw(buf.pixels, channels)
            noisy = add_awgn(clean, sigma, key=_noise_key(args.seed, si + 1, idx))
            denoised = _infer(model, noisy)
            q_ref = _quantized(clean)
            q_out = _quantized(denoised)
            report.add(path.name, psnr(q_out, q_ref), ssim(q_out, q_ref))
        report.save(out_dir / report_names[si])
        print(f"sigma {sigma:g}: mean PSNR {report.mean_psnr:.2f} dB, "
              f"mean SSIM {report.mean_ssim:.4f} over {len(images)} image(s)")
    manifest.finish()
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    base_channels = args.base_channels
    seed = args.seed
    if args.config:
        file_kv = _read_config_file(args.config)
        model_kv = {k: v for k, v in file_kv.items() if k in _MODEL_FIELDS}
        try:
            cfg = ModelConfig.from_mapping(model_kv)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc))
        if base_channels is None:
            base_channels = cfg.base_channels
        if seed is None:
            seed = cfg.seed
    if base_channels is None:
        base_channels = 8  # toy width keeps the sweep fast
    if seed is None:
        seed = 0

    try:
        report = run_standard_suite(seed=seed, tolerance=args.tolerance,
                                    base_channels=base_channels)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    text = "\n".join(report.lines())
    print(text)

    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(
            "gradcheck",
            config={"seed": seed, "tolerance": args.tolerance,
                    "base_channels": base_channels},
            seed=seed,
            outputs={"dir": str(out_dir), "report": "gradcheck_report.txt"})
        manifest.write(out_dir / "run_manifest.json")
        (out_dir / "gradcheck_report.txt").write_text(text + "\n", newline="\n")
        manifest.finish()
    return EXIT_OK if report.passed else 1


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def _add_model_flags(p) -> None:
    p.add_argument("--config", metavar="PATH", help="KEY=value config file")
    p.add_argument("--seed", type=int, metavar="N",
                   help="seed for weights, shuffling and noise")
    p.add_argument("--base-channels", dest="base_channels", type=int, metavar="N")
    p.add_argument("--in-channels", dest="in_channels", type=int, choices=(1, 3))
    p.add_argument("--kernel-size", dest="kernel_size", type=int, metavar="K")
    p.add_argument("--dyn-kernels", dest="dyn_kernels", type=int, metavar="K")
    p.add_argument("--fe-growth", dest="fe_growth", type=int, metavar="N")
    p.add_argument("--temperature", type=float, metavar="T")
    p.add_argument("--precision", type=int, choices=(32, 64))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwdcnn",
        description="Train and run the wavelet + dynamic-convolution denoiser.")
    parser.add_argument("--version", action="version",
                        version="%(prog)s " + version_string())
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    tr = sub.add_parser("train", help="train on a directory of images")
    tr.add_argument("--data", required=True, metavar="DIR",
                    help="directory of PNG/PGM/PPM training images")
    _add_model_flags(tr)
    tr.add_argument("--sigma", type=float, metavar="F",
                    help="noise level on the 8-bit scale")
    tr.add_argument("--blind", action="store_true", default=None,
                    help="draw sigma ~ U[0,55] per patch instead of --sigma")
    tr.add_argument("--epochs", type=int, metavar="N")
    tr.add_argument("--batch", type=int, metavar="N", help="mini-batch size")
    tr.add_argument("--loss", choices=("mse", "charbonnier"))
    tr.add_argument("--max-iters", dest="max_iters", type=int, metavar="N",
                    help="stop after N iterations regardless of epochs")
    tr.add_argument("--patches", type=int, metavar="N",
                    help="total patch count (default 256 per image)")
    tr.add_argument("--patch-size", dest="patch_size", type=int, default=48,
                    metavar="N")
    tr.add_argument("--out", default="runs/train", metavar="DIR")
    tr.set_defaults(func=cmd_train)

    de = sub.add_parser("denoise", help="denoise one image with a checkpoint")
    de.add_argument("input", metavar="IMAGE")
    de.add_argument("--checkpoint", required=True, metavar="PATH")
    de.add_argument("--sigma", type=float, metavar="F",
                    help="synthesize noise at this level, treating the input as clean")
    de.add_argument("--clean", metavar="PATH", help="clean reference for PSNR")
    de.add_argument("--seed", type=int, default=0, metavar="N")
    de.add_argument("--out", default="denoised", metavar="DIR")
    de.set_defaults(func=cmd_denoise)

    ev = sub.add_parser("eval", help="per-sigma PSNR/SSIM over an image directory")
    ev.add_argument("--checkpoint", required=True, metavar="PATH")
    ev.add_argument("--data", required=True, metavar="DIR")
    ev.add_argument("--sigma", default="15,25,50", metavar="LIST",
                    help="comma-separated noise levels (default 15,25,50)")
    ev.add_argument("--seed", type=int, default=0, metavar="N")
    ev.add_argument("--out", default="eval", metavar="DIR")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck",
                        help="finite-difference check of every backward rule")
    gc.add_argument("--config", metavar="PATH", help="read base_channels/seed from here")
    gc.add_argument("--seed", type=int, metavar="N")
    gc.add_argument("--base-channels", dest="base_channels", type=int, metavar="N")
    gc.add_argument("--tolerance", type=float, default=1e-5, metavar="TOL")
    gc.add_argument("--out", metavar="DIR", help="also write the report there")
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
