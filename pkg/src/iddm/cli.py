"""Command-line entry point: synth | train-denoiser | train-htnet | dehaze |
eval | verify.

Every command echoes its effective configuration as one JSON line at startup
so any run can be reproduced from its log. Exit codes: 0 success, 1 check or
training failure, 2 usage error, 3 I/O error. IDDM_SEED overrides the
default seed when --seed is not given.
"""

import argparse
import concurrent.futures
import json
import os
import sys
import time

import numpy as np

from .errors import CheckpointError, IddmError, TrainingDivergedError
from .io import generate_scene, load_image, save_depth_png, save_image
from .metrics import psnr, ssim, write_report
from .nets import load_checkpoint
from .physics import HazeParams, synthesize_hazy
from .sampler import SamplerConfig, export_trace, restore, sample, stabilize_haze
from .schedule import make_schedule, subsequence
from .training import (
    TrainConfig,
    export_loss_csv,
    load_scene_pool,
    make_scene_pool,
    train_stage1,
    train_stage2,
)
from .verify import SUITES, format_result, run_suites


def _default_seed() -> int:
    return int(os.environ.get("IDDM_SEED", "0"))


def _echo_config(command: str, params: dict) -> None:
    print(json.dumps({"command": command, **params}, sort_keys=True))


def _parse_range(text: str) -> tuple[float, float]:
    lo, _, hi = text.partition(":")
    return (float(lo), float(hi))


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, default=64, help="procedural scene count")
    p.add_argument("--scene-size", type=int, default=32)
    p.add_argument("--manifest", help="JSON-lines dataset manifest instead of procedural scenes")
    p.add_argument("--full-scale", action="store_true", help="start from the published settings")
    for flag, typ in (
        ("--iters", int), ("--lr", float), ("--batch", int), ("--T", int),
        ("--patch", int), ("--seed", int), ("--base-width", int),
        ("--beta-start", float), ("--beta-end", float), ("--depth-scale", float),
    ):
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--airlight", type=_parse_range, default=None, metavar="LO:HI")
    p.add_argument("--sigma", type=_parse_range, default=None, metavar="LO:HI")
    p.add_argument("--htnet-inputs", choices=("xt", "xt_hazy"), default=None)


def _build_config(args, stage: int) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_json(args.config)
    elif args.full_scale:
        cfg = TrainConfig.full_scale()
    else:
        cfg = TrainConfig()
    overrides = {
        "lr": args.lr, "batch": args.batch, "T": args.T, "patch": args.patch,
        "seed": args.seed, "base_width": args.base_width,
        "beta_start": args.beta_start, "beta_end": args.beta_end,
        "depth_scale": args.depth_scale, "airlight_range": args.airlight,
        "sigma_range": args.sigma, "htnet_inputs": args.htnet_inputs,
        ("iters_stage1" if stage == 1 else "iters_stage2"): args.iters,
    }
    fields = {k: v for k, v in overrides.items() if v is not None}
    if args.seed is None and "IDDM_SEED" in os.environ:
        fields["seed"] = _default_seed()
    from dataclasses import asdict

    merged = asdict(cfg)
    merged.update(fields)
    merged["airlight_range"] = tuple(merged["airlight_range"])
    merged["sigma_range"] = tuple(merged["sigma_range"])
    return TrainConfig(**merged)


def _scene_source(args):
    if args.manifest:
        return load_scene_pool(args.manifest)
    return make_scene_pool(args.scenes, seed=_default_seed(), size=args.scene_size)


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    airlight = args.airlight or (0.7, 1.0)
    sigma = args.sigma or (0.4, 1.5)
    _echo_config(
        "synth",
        {
            "procedural": args.procedural, "manifest": args.manifest, "seed": seed,
            "size": args.size, "airlight": list(airlight), "sigma": list(sigma),
            "depth_scale": args.depth_scale, "out": args.out,
        },
    )
    os.makedirs(args.out, exist_ok=True)
    if args.manifest:
        pool = load_scene_pool(args.manifest)
    else:
        pool = make_scene_pool(args.procedural, seed=seed, size=args.size)
    rng = np.random.default_rng(seed)
    for i, (clear, raw_depth) in enumerate(pool):
        p = HazeParams(
            airlight=float(rng.uniform(*airlight)), scattering=float(rng.uniform(*sigma))
        )
        # span [0, 1] exactly so the load_depth normalization round-trips
        span = raw_depth.max() - raw_depth.min()
        depth01 = (raw_depth - raw_depth.min()) / span if span > 0 else np.zeros_like(raw_depth)
        depth = depth01 * args.depth_scale
        dec = synthesize_hazy(clear, depth, p)
        stem = os.path.join(args.out, f"pair_{i:04d}")
        save_image(clear, f"{stem}.clear.png")
        save_depth_png(depth01, f"{stem}.depth.png")
        save_image(dec.hazy, f"{stem}.hazy.png")
        save_image(dec.haze_total, f"{stem}.haze.png")
        with open(f"{stem}.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"airlight": p.airlight, "sigma": p.scattering, "depth_scale": args.depth_scale},
                fh,
            )
    print(f"wrote {len(pool)} pairs to {args.out}")
    return 0


def cmd_train_denoiser(args) -> int:
    cfg = _build_config(args, stage=1)
    from dataclasses import asdict

    _echo_config("train-denoiser", {"out": args.out, **asdict(cfg)})
    source = _scene_source(args)
    os.makedirs(args.out, exist_ok=True)
    _, losses = train_stage1(cfg, source, out_dir=args.out)
    export_loss_csv(os.path.join(args.out, "stage1_loss.csv"), losses)
    cfg.to_json(os.path.join(args.out, "train_config.json"))
    print(f"stage-1 done: final loss {losses[-1]:.5f}, checkpoint {args.out}/denoiser.ckpt")
    return 0


def cmd_train_htnet(args) -> int:
    cfg = _build_config(args, stage=2)
    from dataclasses import asdict

    _echo_config("train-htnet", {"out": args.out, "denoiser": args.denoiser, **asdict(cfg)})
    frozen, meta = load_checkpoint(args.denoiser)
    if meta.get("role") not in (None, "denoiser"):
        raise CheckpointError(f"{args.denoiser}: expected a denoiser checkpoint")
    source = _scene_source(args)
    os.makedirs(args.out, exist_ok=True)
    _, losses = train_stage2(cfg, frozen, source, out_dir=args.out)
    export_loss_csv(os.path.join(args.out, "stage2_loss.csv"), losses)
    print(f"stage-2 done: final loss {losses[-1]:.5f}, checkpoint {args.out}/htnet.ckpt")
    return 0


def _gather_inputs(path: str) -> list[str]:
    if os.path.isfile(path):
        return [path]
    if not os.path.isdir(path):
        raise FileNotFoundError(path)
    names = sorted(os.listdir(path))
    hazy = [n for n in names if n.endswith(".hazy.png")]
    chosen = hazy if hazy else [n for n in names if n.endswith(".png")]
    return [os.path.join(path, n) for n in chosen]


def _dehaze_one(src, denoiser, htnet, s, cfg, seed, out_dir, want_trace):
    stem = os.path.basename(src)
    for suffix in (".hazy.png", ".png"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    hazy = load_image(src)
    if hazy.shape[2] == 1:
        hazy = np.repeat(hazy, 3, axis=2)
    t0 = time.perf_counter()
    trace = sample(hazy, denoiser, htnet, s, cfg, seed=seed)
    h_stab = stabilize_haze(np.maximum(trace.haze_estimate, 0.0), cfg)
    restored = restore(trace.x0, h_stab, cfg)
    runtime = time.perf_counter() - t0
    save_image(restored, os.path.join(out_dir, f"{stem}.restored.png"))
    save_image(np.clip(trace.haze_estimate, 0.0, 1.0), os.path.join(out_dir, f"{stem}.hazemap.png"))
    with open(os.path.join(out_dir, f"{stem}.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "input": src, "seed": seed, "runtime_s": runtime,
                "steps": [int(t) for t in cfg.subsequence],
                "blur_sigma": cfg.blur_sigma, "denominator_floor": cfg.denominator_floor,
            },
            fh,
        )
    if want_trace:
        export_trace(trace, os.path.join(out_dir, f"trace_{stem}"))
    return stem


def cmd_dehaze(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    denoiser, meta_d = load_checkpoint(args.denoiser)
    htnet, meta_h = load_checkpoint(args.htnet)
    if denoiser.arch.in_channels != 9:
        raise CheckpointError(f"{args.denoiser}: not a denoiser checkpoint (wrong input width)")
    if htnet.arch.in_channels not in (3, 6) or htnet.arch.out_activation != "softplus":
        raise CheckpointError(f"{args.htnet}: not a haze-estimator checkpoint")
    T = args.T or int(meta_d.get("T", 1000))
    if meta_h.get("T") not in (None, T) or meta_d.get("T") not in (None, T):
        raise CheckpointError("checkpoints were trained with different schedule horizons")
    s = make_schedule(
        T, meta_d.get("beta_start", 1e-4), meta_d.get("beta_end", 0.02)
    )
    cfg = SamplerConfig(
        subsequence=subsequence(T, args.steps),
        blur_sigma=args.blur_sigma,
        denominator_floor=args.floor,
        x0_clip=args.x0_clip,
    )
    _echo_config(
        "dehaze",
        {
            "input": args.input, "denoiser": args.denoiser, "htnet": args.htnet,
            "out": args.out, "steps": args.steps, "T": T, "seed": seed,
            "threads": args.threads, "blur_sigma": args.blur_sigma, "floor": args.floor,
            "x0_clip": list(args.x0_clip) if args.x0_clip else None,
        },
    )
    sources = _gather_inputs(args.input)
    if not sources:
        raise FileNotFoundError(f"no PNG inputs under {args.input}")
    os.makedirs(args.out, exist_ok=True)
    workers = args.threads or os.cpu_count() or 1
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                _dehaze_one, src, denoiser, htnet, s, cfg, seed + i, args.out, args.trace
            )
            for i, src in enumerate(sources)
        ]
        for f in futures:
            print(f"restored {f.result()}")
    return 0


def cmd_eval(args) -> int:
    _echo_config("eval", {"restored": args.restored, "reference": args.reference, "out": args.out})
    refs = {}
    for name in sorted(os.listdir(args.reference)):
        if name.endswith(".png"):
            refs[name.split(".")[0]] = os.path.join(args.reference, name)
            if name.endswith(".clear.png"):  # prefer clear images when present
                refs[name.split(".")[0]] = os.path.join(args.reference, name)
    rows = []
    for name in sorted(os.listdir(args.restored)):
        if not name.endswith(".png"):
            continue
        key = name.split(".")[0]
        if key not in refs or name.endswith(".hazemap.png"):
            continue
        a = load_image(os.path.join(args.restored, name))
        b = load_image(refs[key])
        if a.shape != b.shape:
            continue
        rows.append({"image": key, "psnr": psnr(a, b), "ssim": ssim(a, b)})
    if not rows:
        raise IddmError("no matching image pairs between the two directories")
    os.makedirs(args.out, exist_ok=True)
    write_report(
        os.path.join(args.out, "report.csv"), os.path.join(args.out, "report.json"), rows
    )
    finite = [r["psnr"] for r in rows if np.isfinite(r["psnr"])]
    mean_psnr = float(np.mean(finite)) if finite else float("inf")
    mean_ssim = float(np.mean([r["ssim"] for r in rows]))
    print(f"{len(rows)} pairs: mean PSNR {mean_psnr:.3f} dB, mean SSIM {mean_ssim:.4f}")
    return 0


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    _echo_config("verify", {"suite": args.suite, "corrupt_schedule": args.corrupt_schedule})
    ok, results = run_suites(names, corrupt_schedule=args.corrupt_schedule)
    for r in results:
        print(format_result(r))
    print("verification " + ("PASSED" if ok else "FAILED"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iddm",
        description="Physics-guided dehazing diffusion: synthesis, training, "
        "sampling, evaluation and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="materialize a synthetic hazy dataset")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--procedural", type=int, metavar="N", help="generate N scenes")
    group.add_argument("--manifest", help="JSON-lines manifest of clear/depth pairs")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--airlight", type=_parse_range, default=None, metavar="LO:HI")
    p.add_argument("--sigma", type=_parse_range, default=None, metavar="LO:HI")
    p.add_argument("--depth-scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-denoiser", help="stage 1: train the noise predictor")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_denoiser)

    p = sub.add_parser("train-htnet", help="stage 2: train the haze estimator")
    _add_train_flags(p)
    p.add_argument("--denoiser", required=True, help="frozen stage-1 checkpoint")
    p.set_defaults(func=cmd_train_htnet)

    p = sub.add_parser("dehaze", help="restore hazy images with trained checkpoints")
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--htnet", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=10, help="sampling subsequence length")
    p.add_argument("--T", type=int, default=None, help="override the schedule horizon")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--blur-sigma", type=float, default=3.0)
    p.add_argument("--floor", type=float, default=0.1)
    p.add_argument(
        "--x0-clip", type=_parse_range, default=None, metavar="LO:HI",
        help="clamp the base-state estimate during sampling",
    )
    p.add_argument("--trace", action="store_true", help="export per-step traces")
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("eval", help="full-reference metrics over paired directories")
    p.add_argument("--restored", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the closed-form identity and oracle checks")
    p.add_argument(
        "--suite",
        choices=sorted(SUITES) + ["all"],
        default="all",
    )
    p.add_argument("--corrupt-schedule", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, OSError, IddmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
