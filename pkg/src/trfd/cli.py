"""Command-line interface.

Subcommands: inpaint, denoise, superres, pointcloud, analyze, eval,
gen-mask, info. Exit codes: 0 success, 2 configuration error, 3 runtime or
numeric error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, io
from .errors import ConfigError, TrfdError
from .metrics import nrmse, psnr, ssim
from .model import (ModelConfig, build_cores, eval_points, init_model,
                    load_checkpoint, save_checkpoint)
from .objectives import RegWeights
from .tensor import TRCores, lowpass_cores, tr_contract
from .trainer import RecoveryTask, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _model_config_from(cfg: dict, task: str, dims) -> ModelConfig:
    defaults = io.TASK_DEFAULTS[task]
    d = len(dims)
    ranks = cfg.get("ranks") or [defaults["rank"]] * d
    if len(ranks) != d:
        raise ConfigError(f"need {d} ranks for a {d}-mode model, got {len(ranks)}")
    layers = cfg.get("layers") or defaults["layers"]
    if len(layers) != d:
        raise ConfigError(f"need {d} branch layer counts, got {len(layers)}")
    return ModelConfig(
        dims=tuple(dims), ranks=tuple(ranks),
        variant=cfg.get("variant", "reptrfd"),
        beta=cfg.get("beta", defaults["beta"]),
        omega0=float(cfg.get("omega0", defaults["omega0"])),
        layers=tuple(layers), hidden=cfg.get("hidden", 256),
        seed=cfg.get("seed", 0),
        shared_embedding=cfg.get("shared_embedding", True),
        basis_scheme=cfg.get("basis_scheme", "xavier"),
        basis_scale=cfg.get("basis_scale"),
        basis_trainable=cfg.get("basis_trainable", False),
    )


def _final_metrics(recon, ground_truth) -> dict:
    out = {}
    if ground_truth is None:
        return out
    out["psnr"] = psnr(recon, ground_truth, peak=1.0)
    out["nrmse"] = nrmse(recon, ground_truth)
    try:
        out["ssim"] = ssim(recon, ground_truth)
    except TrfdError:
        pass
    return out


def run_task(kind: str, config_path: str) -> int:
    cfg = io.load_task_config(config_path)
    if cfg["task"] != kind:
        raise ConfigError(
            f"config declares task {cfg['task']!r} but subcommand is {kind!r}")
    defaults = io.TASK_DEFAULTS[kind]
    seed = cfg.get("seed", 0)
    out_dir = Path(cfg["output_dir"])
    reg = RegWeights(gamma1=float(cfg.get("gamma1", defaults["gamma1"])),
                     gamma2=float(cfg.get("gamma2", defaults["gamma2"])))
    iterations = cfg.get("iterations", defaults["iterations"])
    lr = float(cfg.get("lr", io.DEFAULT_LR))
    eval_every = cfg.get("eval_every", 100)
    ground_truth = (io.load_observation(cfg["ground_truth"])
                    if "ground_truth" in cfg else None)

    if kind == "pointcloud":
        points = io.load_pointcloud(cfg["observation"])
        dims = (1, 1, 1, 1)
        model = init_model(_model_config_from(cfg, kind, dims))
        task = RecoveryTask(kind=kind, observation=points, reg=reg,
                            iterations=iterations, seed=seed,
                            eval_every=eval_every)
        model, trace = train(task, model, lr=lr)
        predictions = eval_points(model, points.coords)
        io.save_pointcloud(points, predictions, out_dir / "reconstruction.txt")
        metrics = {"final_loss": trace.entries[-1][1] if trace.entries else None,
                   "nrmse": nrmse(predictions, points.values)}
    else:
        obs = io.load_observation(cfg["observation"])
        mask = None
        scale = None
        if kind == "inpaint":
            mask = io.load_tensor(cfg["mask"])
        if kind == "denoise" and "noise_sd" in cfg:
            obs = io.add_noise(obs, float(cfg["noise_sd"]), seed)
        dims = obs.shape
        if kind == "superres":
            scale = cfg["scale"]
            dims = (obs.shape[0] * scale, obs.shape[1] * scale) + obs.shape[2:]
        model = init_model(_model_config_from(cfg, kind, dims))
        task = RecoveryTask(kind=kind, observation=obs, mask=mask, scale=scale,
                            reg=reg, iterations=iterations, seed=seed,
                            eval_every=eval_every, ground_truth=ground_truth)
        model, trace = train(task, model, lr=lr)
        recon = tr_contract(build_cores(model, task.grids))
        io.save_tensor(recon, out_dir / "reconstruction.rten")
        metrics = {"final_loss": trace.entries[-1][1] if trace.entries else None}
        metrics.update(_final_metrics(recon, ground_truth))

    save_checkpoint(model, out_dir / "model.rtrf")
    io.atomic_write_bytes(out_dir / "trace.csv", trace.to_csv().encode("utf-8"))
    io.write_json(metrics, out_dir / "metrics.json")
    print(f"wrote outputs to {out_dir}")
    return EXIT_OK


def _fmt_psnr(value: float) -> str:
    return "Inf" if np.isinf(value) else f"{value:.2f}"


def run_eval(args) -> int:
    a = io.load_observation(args.reconstruction)
    b = io.load_observation(args.reference)
    print(f"PSNR: {_fmt_psnr(psnr(a, b, peak=args.peak))}")
    try:
        print(f"SSIM: {ssim(a, b):.3f}")
    except TrfdError as exc:
        print(f"SSIM: n/a ({exc})")
    print(f"NRMSE: {nrmse(a, b):.4f}")
    return EXIT_OK


def run_gen_mask(args) -> int:
    shape = tuple(int(s) for s in args.shape.split(","))
    mask = io.generate_mask(shape, args.sr, args.seed)
    io.save_tensor(mask, args.out)
    print(f"wrote mask {shape} (observed fraction {mask.mean():.4f}) to {args.out}")
    return EXIT_OK


def run_info(args) -> int:
    for path in args.files:
        with open(path, "rb") as fh:
            magic = fh.read(4)
        if magic == io.TENSOR_MAGIC:
            x = io.load_tensor(path)
            print(f"{path}: RTEN tensor, shape {x.shape}, "
                  f"min {x.min():.6g}, max {x.max():.6g}")
        elif magic == b"RTRF":
            model = load_checkpoint(path)
            cfg = model.config
            print(f"{path}: model checkpoint, variant {cfg.variant}, "
                  f"dims {cfg.dims}, ranks {cfg.ranks}, beta {cfg.beta}, "
                  f"omega0 {cfg.omega0}")
        elif magic[:2] == b"\x89P":
            x = io.load_png(path)
            print(f"{path}: PNG image, shape {x.shape}")
        else:
            print(f"{path}: unrecognized format (magic {magic!r})")
    return EXIT_OK


def _random_cores(dims, ranks, seed) -> TRCores:
    rng = np.random.default_rng(seed)
    d = len(dims)
    return TRCores(tuple(
        rng.standard_normal((ranks[k], dims[k], ranks[(k + 1) % d]))
        for k in range(d)))


def run_analyze(args) -> int:
    out_dir = Path(args.out)
    dims = tuple(int(s) for s in args.dims.split(","))
    ranks = tuple(int(s) for s in args.ranks.split(","))
    ran_any = False
    if args.spectral:
        cores = _random_cores(dims, ranks, args.seed)
        cutoffs = [min(args.cutoff, n // 2) for n in dims]
        report = analysis.spectral_bound_check(lowpass_cores(cores, cutoffs),
                                               cutoffs)
        analysis.write_report(report, out_dir / "spectral_report.json")
        drop = analysis.lowpass_attenuation_experiment(cores, 0, cutoffs[0])
        io.write_json(drop, out_dir / "lowpass_attenuation.json")
        print(f"spectral bound holds: {report.all_bounds_hold}; "
              f"out-of-band energy drop: {drop['drop_orders']:.1f} orders")
        ran_any = True
    if args.grad_ratio:
        report = analysis.gradient_ratio_experiment(
            dims=dims, ranks=ranks, beta=args.beta,
            pairs=[(args.omega_low, args.omega_high)], seed=args.seed)
        analysis.write_report(report, out_dir / "gradient_ratio_report.json")
        for pair in report.pairs:
            print(f"omega ({pair.omega_low}, {pair.omega_high}): "
                  f"G-space mean ratio {pair.g_space_mean:.4g}, "
                  f"C-space mean ratio {pair.c_space_mean:.4g}"
                  + (" [degenerate]" if pair.degenerate else ""))
        ran_any = True
    if args.variance:
        report = analysis.variance_preservation_check(
            r=args.r, R=args.R, scheme=args.scheme, trials=args.trials,
            seed=args.seed)
        analysis.write_report(report, out_dir / "variance_report.json")
        print(f"forward {report.forward_measured:.4f} vs "
              f"{report.forward_predicted:.4f}; backward "
              f"{report.backward_measured:.4f} vs {report.backward_predicted:.4f}")
        ran_any = True
    if args.lipschitz:
        if args.checkpoint:
            model = load_checkpoint(args.checkpoint)
        else:
            model = init_model(ModelConfig(
                dims=dims, ranks=ranks, beta=args.beta, omega0=30.0,
                layers=(1,) * len(dims), hidden=32, seed=args.seed))
        report = analysis.lipschitz_check(model, n_pairs=args.pairs,
                                          seed=args.seed)
        analysis.write_report(report, out_dir / "lipschitz_report.json")
        print(f"delta {report.delta:.6g}, max quotient {report.max_quotient:.6g}, "
              f"violations {report.violations}/{report.pairs_checked}")
        ran_any = True
    if not ran_any:
        raise ConfigError("analyze needs at least one of --spectral, "
                          "--grad-ratio, --variance, --lipschitz")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trfd",
        description="Tensor ring functional decomposition for signal recovery")
    sub = parser.add_subparsers(dest="command", required=True)

    for kind in ("inpaint", "denoise", "superres", "pointcloud"):
        p = sub.add_parser(kind, help=f"run the {kind} recovery task")
        p.add_argument("--config", required=True, help="JSON task config")

    p = sub.add_parser("analyze", help="run analysis harnesses")
    p.add_argument("--spectral", action="store_true")
    p.add_argument("--grad-ratio", action="store_true")
    p.add_argument("--variance", action="store_true")
    p.add_argument("--lipschitz", action="store_true")
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("--dims", default="8,8,3")
    p.add_argument("--ranks", default="2,2,2")
    p.add_argument("--beta", type=int, default=10)
    p.add_argument("--cutoff", type=int, default=1)
    p.add_argument("--omega-low", type=int, default=1)
    p.add_argument("--omega-high", type=int, default=3)
    p.add_argument("--r", type=int, default=20)
    p.add_argument("--R", type=int, default=200)
    p.add_argument("--scheme", default="xavier", choices=("xavier", "kaiming"))
    p.add_argument("--trials", type=int, default=10 ** 6)
    p.add_argument("--pairs", type=int, default=10 ** 4)
    p.add_argument("--checkpoint", help="model checkpoint for --lipschitz")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="compare two tensor/image files")
    p.add_argument("reconstruction")
    p.add_argument("reference")
    p.add_argument("--peak", type=float, default=1.0)

    p = sub.add_parser("gen-mask", help="generate a Bernoulli observation mask")
    p.add_argument("--shape", required=True, help="comma-separated dims")
    p.add_argument("--sr", type=float, required=True, help="sampling ratio")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("info", help="print file headers")
    p.add_argument("files", nargs="+")
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("inpaint", "denoise", "superres", "pointcloud"):
            return run_task(args.command, args.config)
        if args.command == "analyze":
            return run_analyze(args)
        if args.command == "eval":
            return run_eval(args)
        if args.command == "gen-mask":
            return run_gen_mask(args)
        return run_info(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrfdError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
