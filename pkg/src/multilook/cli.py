"""Command-line front end.

Five subcommands chain the pipeline: simulate writes a dataset bundle,
reconstruct turns a bundle into a reflectivity volume plus a diagnostics
trace, evaluate scores a reconstruction against the bundled ground truth,
validate-theory runs the toy-problem convergence checks, and config-dump
prints the fully resolved configuration.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Progress goes to
standard error; machine-readable outputs go to disk.  Every run writes the
resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import engine, io, metrics, theory
from .priors import PRIOR_KINDS
from .simulate import make_operator, make_phantom, simulate_looks, estimate_snr_db
from .volume import as_pad_factor, set_fft_workers


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems exit 1; argparse's default of 2 is reserved for
        # runtime failures here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def build_parser() -> _Parser:
    parser = _Parser(prog="multilook", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", type=Path, help="configuration file")
        p.add_argument(
            "--out", type=Path, required=out_required, help="output directory"
        )

    p = sub.add_parser("simulate", help="generate a synthetic dataset bundle")
    common(p)
    p.add_argument("--looks", type=int, help="override number of looks")
    p.add_argument("--seed", type=int, help="override the simulation seed")
    p.add_argument("--q", help="override the pad factor (1, 3/2, or 2)")
    p.add_argument("--threads", type=int, help="FFT worker cap")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct a dataset bundle")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset bundle directory")
    p.add_argument("--prior", choices=PRIOR_KINDS, help="override the prior agent")
    p.add_argument("--sigma2", type=float, help="override the proximal strength")
    p.add_argument("--iters", type=int, help="override the iteration count")
    p.add_argument(
        "--no-aperture",
        action="store_true",
        help="replace the aperture mask with all ones (ablation)",
    )
    p.add_argument("--threads", type=int, help="FFT worker cap")
    p.set_defaults(fn=_cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score a reconstruction against ground truth")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset bundle directory")
    p.add_argument("--recon", type=Path, required=True, help="reconstruction volume")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("validate-theory", help="run the toy convergence checks")
    common(p)
    p.add_argument("--problems", type=int, default=50, help="number of random problems")
    p.add_argument("--seed", type=int, default=0, help="problem generator seed")
    p.add_argument("--iters", type=int, default=2000, help="iterations per problem")
    p.set_defaults(fn=_cmd_validate_theory)

    p = sub.add_parser("config-dump", help="print the fully resolved configuration")
    common(p, out_required=False)
    p.set_defaults(fn=_cmd_config_dump)
    return parser


def _load_config(args) -> io.RunConfig:
    if getattr(args, "config", None) is not None:
        return io.load_config(args.config)
    return io.parse_config("", origin="<defaults>")


def _apply_overrides(cfg: io.RunConfig, args) -> io.RunConfig:
    updates = {
        ("sim", "looks"): getattr(args, "looks", None),
        ("em", "sigma2"): getattr(args, "sigma2", None),
        ("prior", "kind"): getattr(args, "prior", None),
        ("forward", "threads"): getattr(args, "threads", None),
    }
    # --seed and --iters mean different things to validate-theory, which
    # consumes them directly
    if getattr(args, "fn", None) is _cmd_simulate:
        updates[("sim", "seed")] = getattr(args, "seed", None)
    if getattr(args, "fn", None) is _cmd_reconstruct:
        updates[("engine", "max_iters")] = getattr(args, "iters", None)
    q = getattr(args, "q", None)
    sections = {name: dict(keys) for name, keys in cfg.sections.items()}
    if q is not None:
        try:
            sections["sim"]["q"] = as_pad_factor(q)
        except ValueError as e:
            raise io.ConfigError(f"--q: {e}") from e
    for (section, key), value in updates.items():
        if value is not None:
            sections[section][key] = value
    # reparse the dumped text so overrides pass the same validation as files
    return io.parse_config(io.dump_config(io.RunConfig(sections)), origin="<cli>")


def _write_resolved(cfg: io.RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.cfg").write_text(io.dump_config(cfg))


def _cmd_simulate(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    set_fft_workers(cfg["forward"]["threads"])
    sim = cfg.sim_params()
    truth = make_phantom(cfg.phantom(sim.dims))
    op = make_operator(sim)
    _log(
        f"simulate: grid {sim.dims.shape}, q = {sim.dims.q}, looks = {sim.looks}, "
        f"light fraction = {op.alpha:.4f}"
    )
    ys = simulate_looks(truth, sim, op)
    snr = estimate_snr_db(ys, op, sim.noise_var)
    _log(f"simulate: estimated in-aperture SNR = {snr:.1f} dB")
    io.save_bundle(args.out, sim, ys, op.mask, truth, cfg.geometry())
    _write_resolved(cfg, args.out)
    _log(f"simulate: bundle written to {args.out}")
    return 0


def _resolve_sigma_w2(cfg: io.RunConfig, bundle) -> float:
    v = cfg["forward"]["sigma_w2"]
    return bundle.sim.noise_var if v == "auto" else v


def _cmd_reconstruct(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    set_fft_workers(cfg["forward"]["threads"])
    bundle = io.load_bundle(args.data)
    sigma_w2 = _resolve_sigma_w2(cfg, bundle)
    op = bundle.operator(sigma_w2)
    if args.no_aperture:
        op = op.without_aperture()
        _log("reconstruct: aperture model disabled (mask = all ones)")
    em = replace(cfg.em_params(), sigma_w2=sigma_w2)
    engine_cfg = cfg.engine_config()
    _log(
        f"reconstruct: {len(bundle.ys)} looks on {bundle.dims.shape}, "
        f"prior = {cfg['prior']['kind']}, prox = {em.prox_kind}, "
        f"sigma2 = {em.sigma2}, iterations <= {engine_cfg.max_iters}"
    )
    started = time.perf_counter()

    def progress(row):
        if row.iteration % 25 == 0 or row.iteration == 1:
            _log(
                f"  iter {row.iteration:4d}  convergence {row.convergence_error:.3e}"
                f"  residual {row.mean_residual:.3e}"
            )

    result = engine.reconstruct(
        bundle.ys, op, cfg.prior_config(), em, engine_cfg, progress
    )
    elapsed = time.perf_counter() - started
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_volume(args.out / "recon.vol", result.volume, bundle.dims.q)
    io.write_trace(args.out / "trace.tsv", result.trace)
    _write_resolved(cfg, args.out)
    final = result.trace[-1]
    _log(
        f"reconstruct: {final.iteration} iterations in {elapsed:.1f} s, "
        f"final convergence error {final.convergence_error:.3e}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    bundle = io.load_bundle(args.data)
    if bundle.truth is None:
        raise ValueError(f"bundle {args.data} carries no ground truth to evaluate against")
    recon, _ = io.read_volume(args.recon, expect="real")
    if recon.shape != bundle.dims.shape:
        raise ValueError(
            f"reconstruction shape {recon.shape} does not match bundle {bundle.dims.shape}"
        )
    sigma_w2 = _resolve_sigma_w2(cfg, bundle)
    geo = bundle.geometry
    t = cfg["metrics"]["threshold"]
    threshold = sigma_w2 / bundle.mask.alpha if t == "auto" else t
    c = cfg["metrics"]["cutoff"]
    cutoff = metrics.rayleigh_cutoff(geo) if c == "auto" else c

    psnr_db, beta_vol = metrics.psnr_scaled(recon, bundle.truth)
    cloud = metrics.to_point_cloud(recon, threshold, geo.pitch_m)
    truth_cloud = metrics.to_point_cloud(bundle.truth, 0.0, geo.pitch_m)
    cm = metrics.cloud_metrics(cloud, truth_cloud, cutoff)

    args.out.mkdir(parents=True, exist_ok=True)
    report = [
        f"psnr_db = {psnr_db:.17g}",
        f"psnr_beta = {beta_vol:.17g}",
        f"euclid_m = {cm.euclid_m:.17g}",
        f"fp_rate = {cm.fp_rate:.17g}",
        f"nrmse = {cm.nrmse:.17g}",
        f"nrmse_beta = {cm.beta:.17g}",
        f"points_retained = {cm.n_retained}",
        f"points_removed = {cm.n_removed}",
        f"threshold = {threshold:.17g}",
        f"cutoff_m = {cutoff:.17g}",
    ]
    (args.out / "metrics.txt").write_text("\n".join(report) + "\n")
    io.write_point_cloud(args.out / "cloud.txt", cloud)
    _write_resolved(cfg, args.out)
    _log(
        f"evaluate: PSNR {psnr_db:.2f} dB, mean NN distance "
        f"{cm.euclid_m * 100 if cm.n_retained else float('nan'):.3f} cm, "
        f"fp rate {cm.fp_rate:.3f}, NRMSE {cm.nrmse:.3f}"
    )
    return 0


def _cmd_validate_theory(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    if args.problems < 1:
        raise ValueError(f"--problems must be >= 1, got {args.problems}")
    rng = np.random.default_rng(args.seed)
    lines = [f"problems = {args.problems}", f"seed = {args.seed}", f"iters = {args.iters}"]
    worst_kkt = 0.0
    worst_gap = 0.0
    all_monotone = True
    for i in range(args.problems):
        n_agents = int(rng.integers(2, 5))
        dim = int(rng.integers(1, 9))
        problem = theory.random_consensus_problem(rng, n_agents, dim)
        report = theory.validate_consensus_theory(problem, args.iters, args.iters)
        worst_kkt = max(worst_kkt, report.kkt_distance)
        worst_gap = max(worst_gap, report.fixed_point_gap)
        all_monotone = all_monotone and report.lyapunov_monotone
        lines.append(f"problem {i:02d}: {report.summary()}")
        if (i + 1) % 10 == 0:
            _log(f"validate-theory: {i + 1}/{args.problems} problems done")
    lines.append(f"worst_kkt_distance = {worst_kkt:.17g}")
    lines.append(f"worst_fixed_point_gap = {worst_gap:.17g}")
    lines.append(f"all_energy_monotone = {'true' if all_monotone else 'false'}")
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "theory.txt").write_text("\n".join(lines) + "\n")
    _write_resolved(cfg, args.out)
    _log(
        f"validate-theory: worst KKT distance {worst_kkt:.3e}, "
        f"worst fixed-point gap {worst_gap:.3e}, "
        f"energy monotone on all problems: {all_monotone}"
    )
    return 0


def _cmd_config_dump(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    text = io.dump_config(cfg)
    sys.stdout.write(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "config.cfg").write_text(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except engine.AgentError as e:
        _log(f"error: agent failure: {e}")
        return 2
    except io.ConfigError as e:
        _log(f"error: configuration: {e}")
        return 2
    except io.VolumeFormatError as e:
        _log(f"error: volume file: {e}")
        return 2
    except FileNotFoundError as e:
        _log(f"error: missing file: {e}")
        return 2
    except (ValueError, RuntimeError, OSError) as e:
        _log(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
