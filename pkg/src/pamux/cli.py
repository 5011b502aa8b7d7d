"""Command-line interface.

Subcommands::

    pamux simulate   [--config C] [--seed S] [--out DIR]
    pamux reduce     [--config C] [--seed S] [--out DIR] [--tau LIST] [--single-arm]
    pamux experiment [--config C] [--seed S] [--out DIR] [--tau LIST] [--single-arm]
    pamux gainmap    [--out DIR] [--epsilon LIST] [--beta-z LIST]

``simulate`` writes the per-arm mean and variance tables (CSV
``x,y,arm,value``), one noisy readout, and the ground-truth image.
``reduce`` reconstructs a single simulated readout at each requested
threshold. ``experiment`` runs the Monte Carlo comparison of the all-arms
and best-single-arm pipelines. ``gainmap`` tabulates the axial gain over an
(epsilon, beta·z) grid together with the two critical-length curves.

``--seed`` overrides the configured base seed; ``--tau`` overrides the
threshold list; ``--out`` overrides the output directory; ``--single-arm``
restricts reconstruction to the single best arm.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, default_config, load_config
from .errors import PamuxError, ParameterError
from .experiment import (
    build_models,
    build_object,
    run_experiment,
    seed_generator,
)
from .measurement import simulate_measurement
from .metrics import metrics
from .optics import gain_map
from .pgm import ensure_dir, save_image, write_arm_values_csv
from .photon_stats import co_registered_counts
from .reduction import reduce_with_sparsity_multi


def _fmt(value: float) -> str:
    return repr(float(value))


def _parse_tau_list(text: str) -> tuple[float, ...]:
    try:
        taus = tuple(float(v.strip()) for v in text.split(","))
    except ValueError as exc:
        raise ParameterError(f"--tau: cannot parse {text!r}") from exc
    if not taus or any(t < 0.0 for t in taus):
        raise ParameterError(f"--tau values must be >= 0, got {text!r}")
    return taus


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed_base=int(args.seed))
    if getattr(args, "tau", None) is not None:
        taus = _parse_tau_list(args.tau)
        config = replace(config, taus=taus,
                         reduction=replace(config.reduction, tau=taus[0]))
    if getattr(args, "out", None) is not None:
        config = replace(config, output_dir=str(args.out))
    return config


def _cmd_simulate(args) -> int:
    config = _resolve_config(args)
    obj = build_object(config)
    model, _, _, _ = build_models(config, obj)
    g = co_registered_counts(obj).reshape(-1)
    truth = g.reshape(obj.dims) / obj.photons_per_pixel

    sigma = model.noise_covariance(g) if config.noise_scale > 0 else None
    rng = seed_generator(config.seed_base, 0)
    xi = simulate_measurement(g, model.forward, sigma, rng,
                              noise_scale=config.noise_scale)

    out = ensure_dir(config.output_dir)
    h, w = obj.dims
    k = len(model.arms)
    means = np.stack(
        [(model.conversion_diags[i] * g).reshape(h, w) for i in range(k)]
    )
    variances = np.stack(
        [(model.cov_coefficients[:, i, i] * g).reshape(h, w) for i in range(k)]
    )
    write_arm_values_csv(out / "means.csv", means, arms=model.arms)
    write_arm_values_csv(out / "variances.csv", variances, arms=model.arms)
    save_image(out / "ground_truth.pgm", truth)

    lines = ["arm,sensor,value"]
    start = 0
    for i, arm in enumerate(model.arms):
        rows = model.sensor_mats[i].shape[0]
        for s in range(rows):
            lines.append(f"{arm},{s},{_fmt(xi[start + s])}")
        block = xi[start : start + rows]
        if rows == h * w:
            peak = float(np.max(np.abs(block)))
            scale = peak if peak > 0 else 1.0
            save_image(out / f"readout_arm{arm}.pgm",
                       np.clip(block.reshape(h, w) / scale, 0.0, 1.0))
        start += rows
    (out / "readout.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"simulate: wrote readout of dimension {xi.size} to {out}")
    return 0


def _cmd_reduce(args) -> int:
    config = _resolve_config(args)
    obj = build_object(config)
    model, single, arm, (lo, hi) = build_models(config, obj)
    g = co_registered_counts(obj).reshape(-1)
    truth = g.reshape(obj.dims) / obj.photons_per_pixel

    sigma = model.noise_covariance(g) if config.noise_scale > 0 else None
    rng = seed_generator(config.seed_base, 0)
    xi = simulate_measurement(g, model.forward, sigma, rng,
                              noise_scale=config.noise_scale)
    if args.single_arm:
        mdl, readout, label = single, xi[lo:hi], f"single_arm{arm}"
    else:
        mdl, readout, label = model, xi, "all_arms"

    outcomes = reduce_with_sparsity_multi(readout, mdl, config.reduction,
                                          config.taus)
    out = ensure_dir(config.output_dir)
    save_image(out / "ground_truth.pgm", truth)
    lines = ["pipeline,tau,mse,snr,ssim,thresholded_fraction,iterations,converged"]
    for tau, outcome in zip(config.taus, outcomes):
        estimate = outcome.estimate.reshape(obj.dims)
        mse, snr, ssim = metrics(estimate, truth)
        lines.append(
            f"{label},{_fmt(tau)},{_fmt(mse)},{_fmt(snr)},{_fmt(ssim)},"
            f"{_fmt(outcome.thresholded_fraction)},{outcome.iterations},"
            f"{str(outcome.converged).lower()}"
        )
        save_image(out / f"estimate_{label}_tau{tau:g}.pgm",
                   np.clip(estimate, 0.0, 1.0))
    (out / "reduce_metrics.csv").write_text("\n".join(lines) + "\n",
                                            encoding="utf-8")
    print(f"reduce: wrote {len(config.taus)} estimate(s) ({label}) to {out}")
    return 0


def _cmd_experiment(args) -> int:
    config = _resolve_config(args)
    pipelines = ("single_arm",) if args.single_arm else ("all_arms", "single_arm")
    report = run_experiment(config, pipelines=pipelines)
    out = Path(config.output_dir)
    print(
        f"experiment: {report.seeds_count} seeds, best single arm "
        f"{report.best_arm}, {len(report.failures)} failure(s); report in {out}"
    )
    for s in report.summary:
        print(
            f"  {s.pipeline:>10s} tau={s.tau:g}: "
            f"MSE {s.mse_mean:.6g} ± {s.mse_se:.2g}, "
            f"SNR {s.snr_mean:.3f} dB, SSIM {s.ssim_mean:.4f}"
        )
    return 0


def _cmd_gainmap(args) -> int:
    if args.epsilon:
        eps = [float(v) for v in args.epsilon.split(",")]
    else:
        eps = np.round(np.arange(0.05, 0.951, 0.05), 10)
    if args.beta_z:
        bz = [float(v) for v in args.beta_z.split(",")]
    else:
        bz = np.round(np.arange(0.0, 5.0001, 0.05), 10)
    result = gain_map(eps, bz)

    out = ensure_dir(args.out or "out")
    lines = ["eps,beta_z,gain"]
    for i, e in enumerate(result.epsilons):
        for j, b in enumerate(result.beta_z):
            lines.append(f"{_fmt(e)},{_fmt(b)},{_fmt(result.gain[i, j])}")
    (out / "gain_map.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["eps,beta_z0,beta_zm"]
    for i, e in enumerate(result.epsilons):
        lines.append(f"{_fmt(e)},{_fmt(result.beta_z0[i])},{_fmt(result.beta_zm[i])}")
    (out / "critical_lengths.csv").write_text("\n".join(lines) + "\n",
                                              encoding="utf-8")
    print(
        f"gainmap: {result.epsilons.size} x {result.beta_z.size} grid "
        f"written to {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pamux",
        description="Parametric multiplexing simulator and measurement-reduction "
                    "reconstructor.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tau=False, single=False):
        p.add_argument("--config", type=str, default=None,
                       help="config file (flat key = value format)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the base seed")
        p.add_argument("--out", type=str, default=None,
                       help="override the output directory")
        if tau:
            p.add_argument("--tau", type=str, default=None,
                           help="comma-separated threshold multipliers")
        if single:
            p.add_argument("--single-arm", action="store_true",
                           dest="single_arm",
                           help="use only the best single arm")

    p_sim = sub.add_parser("simulate", help="simulate one noisy readout")
    common(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_red = sub.add_parser("reduce", help="simulate and reconstruct one readout")
    common(p_red, tau=True, single=True)
    p_red.set_defaults(func=_cmd_reduce)

    p_exp = sub.add_parser("experiment", help="run the Monte Carlo comparison")
    common(p_exp, tau=True, single=True)
    p_exp.set_defaults(func=_cmd_experiment)

    p_gm = sub.add_parser("gainmap", help="tabulate the axial gain map")
    p_gm.add_argument("--out", type=str, default=None)
    p_gm.add_argument("--epsilon", type=str, default=None,
                      help="comma-separated epsilon grid")
    p_gm.add_argument("--beta-z", type=str, default=None, dest="beta_z",
                      help="comma-separated beta*z grid")
    p_gm.set_defaults(func=_cmd_gainmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PamuxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
