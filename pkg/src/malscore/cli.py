"""Command-line driver: simulate / train / sample / score-check /
nonlinear-score / verify / metrics.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, NumericFailure, VerificationFailure

EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="malscore",
                description="Score functions of SDE marginals via variation "
                            "processes, with score-based toy-data sampling.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None,
                        help="JSON config file or 'preset:<name>' "
                             "(bundled: gmm8_vp, ou_vp, vp_fig2_integer)")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", default=None, help="override output directory")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker cap for path-parallel stages; 1 = strictly "
                             "sequential (bitwise reproducible)")

    sp = sub.add_parser("simulate", help="forward paths + covariance track dumps")
    common(sp)

    sp = sub.add_parser("train", help="train the conditional-mean regressor")
    common(sp)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")

    sp = sub.add_parser("sample", help="reverse-SDE sampling + metrics report")
    common(sp)
    sp.add_argument("--field", default=None,
                    choices=["oracle", "mlp", "nonlinear-mc"],
                    help="score field (overrides config)")
    sp.add_argument("--schedule", default=None, choices=["ve", "vp", "subvp"],
                    help="schedule kind override (keeps config parameters)")
    sp.add_argument("--steps", type=int, default=None,
                    help="reverse steps override")
    sp.add_argument("--n", type=int, default=None,
                    help="number of samples override")
    sp.add_argument("--checkpoint", default=None, help="regressor checkpoint path")
    sp.add_argument("--trajectories", action="store_true",
                    help="dump full reverse trajectories")

    sp = sub.add_parser("score-check",
                        help="closed-form vs transition-density score table")
    common(sp)
    sp.add_argument("--schedule", default="all", choices=["all", "ve", "vp", "subvp"])
    sp.add_argument("--x0", type=float, default=1.0)

    sp = sub.add_parser("nonlinear-score",
                        help="Monte Carlo score of the cubic SDE")
    common(sp)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--horizon", type=float, default=1.0)
    sp.add_argument("--paths", type=int, default=50_000)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--bandwidth", type=float, default=None)
    sp.add_argument("--grid", default="-1.5:1.5:13",
                    help="query grid lo:hi:count")

    sp = sub.add_parser("verify", help="run a verification suite")
    common(sp)
    sp.add_argument("suite", choices=["linear-equivalence", "covering", "lemma35",
                                      "singularity", "nonlinear", "all"])

    sp = sub.add_parser("metrics", help="two-sample metrics between two CSVs")
    common(sp)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--prior", default=None,
                    help="optional prior-draw CSV for the baseline MMD")
    return p


def _load_config(args) -> ExperimentConfig:
    cfg = (ExperimentConfig.load(args.config) if args.config
           else ExperimentConfig())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    return cfg


def _outdir(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_x0(cfg, dataset_points=None):
    from .sde import data_x0, gaussian_x0, point_mass

    mode = cfg.simulate.x0
    if mode == "dataset":
        if dataset_points is None:
            raise ConfigError("simulate.x0 = 'dataset' needs a dataset section")
        return data_x0(dataset_points)
    if mode == "zero":
        return point_mass(np.zeros(cfg.dimension))
    if mode == "std_normal":
        return gaussian_x0(0.0, 1.0, m=cfg.dimension)
    raise ConfigError(f"unknown simulate.x0 mode {cfg.simulate.x0!r}")


def _simulate_ensemble(cfg, store_trajectories=True):
    from .sde import linear_sde, simulate_forward

    sched = cfg.schedule.build()
    grid = cfg.grid.build()
    spec = linear_sde(sched, m=cfg.dimension)
    pts = cfg.dataset.build().generate() if cfg.simulate.x0 == "dataset" else None
    x0 = _build_x0(cfg, pts)
    ens = simulate_forward(spec, grid, x0, cfg.simulate.n_paths, cfg.seed,
                           store_trajectories=store_trajectories)
    return sched, grid, spec, ens


def cmd_simulate(args) -> int:
    from .io import write_gamma_csv, write_manifest, write_paths_csv
    from .variation import malliavin_matrix, propagate_first_variation

    cfg = _load_config(args)
    out = _outdir(cfg)
    sched, grid, spec, ens = _simulate_ensemble(cfg)
    track = propagate_first_variation(ens)
    mall = malliavin_matrix(track, spec)
    write_paths_csv(out / "paths.csv", ens)
    write_gamma_csv(out / "gamma.csv", mall)
    write_manifest(out / "manifest.json", cfg.to_dict(),
                   {"paths": "paths.csv", "gamma": "gamma.csv",
                    "n_paths": ens.n_paths, "n_diverged": ens.n_diverged,
                    "orthogonality_drift": track.orthogonality_drift()})
    print(f"simulate: {ens.n_paths} paths x {grid.n_steps} steps -> {out}")
    if ens.n_diverged:
        print(f"  warning: {ens.n_diverged} diverged paths flagged")
    return 0


def cmd_train(args) -> int:
    from .io import write_csv, write_manifest
    from .mlp import (TrainConfig, build_training_set, init_model,
                      load_checkpoint, save_checkpoint, train, validation_loss)

    cfg = _load_config(args)
    out = _outdir(cfg)
    _, _, _, ens = _simulate_ensemble(cfg)
    data = build_training_set(ens, max_examples=cfg.training.max_examples,
                              seed=cfg.training.seed)
    stages = cfg.training.stages or [[cfg.training.epochs, cfg.training.lr]]
    if args.resume:
        model = load_checkpoint(args.resume)
    else:
        model = init_model(cfg.dimension + 1, cfg.dimension,
                           hidden=tuple(cfg.training.hidden), seed=cfg.training.seed)
    curve = np.empty(0)
    for i, (epochs, lr) in enumerate(stages):
        tc = TrainConfig(epochs=int(epochs), batch_size=cfg.training.batch_size,
                         lr=float(lr), weight_decay=cfg.training.weight_decay,
                         seed=cfg.training.seed + i)
        model, part = train(model, data, tc)
        curve = np.concatenate([curve, part])
    vloss = validation_loss(model, data)
    save_checkpoint(model, out / "checkpoint.bin",
                    config={"training": cfg.to_dict()["training"]})
    write_csv(out / "loss_curve.csv", ["epoch", "train_mse"],
              ((i, v) for i, v in enumerate(curve)))
    write_manifest(out / "manifest_train.json", cfg.to_dict(),
                   {"checkpoint": "checkpoint.bin", "loss_curve": "loss_curve.csv",
                    "final_train_mse": float(curve[-1]),
                    "validation_mse": vloss, "n_examples": len(data)})
    print(f"train: {len(data)} examples, {len(curve)} epochs, "
          f"final mse {curve[-1]:.3e} (val {vloss:.3e}) -> {out}")
    return 0


def cmd_sample(args) -> int:
    from .io import write_csv, write_manifest, write_points_csv
    from .linear import oracle_field, quadrature_providers, regressor_field, GaussianMixturePrior
    from .metrics import assemble_report
    from .mlp import load_checkpoint
    from .rng import aux_generator
    from .sampler import ReverseRun, default_prior_for, reverse_sample
    from .sde import TimeGrid, cubic_sde, linear_sde, point_mass, simulate_forward
    from .variation import malliavin_matrix, propagate_first_variation

    cfg = _load_config(args)
    out = _outdir(cfg)
    field_kind = args.field or cfg.sampler.field
    if args.schedule is not None:
        cfg.schedule.kind = args.schedule
        if args.schedule == "ve" and cfg.schedule.sigma_min is None:
            cfg.schedule.sigma_min, cfg.schedule.sigma_max = 0.01, 50.0
        if args.schedule in ("vp", "subvp") and cfg.schedule.beta_min is None:
            cfg.schedule.beta_min = 0.1
    if args.steps is not None:
        cfg.sampler.steps = args.steps
    if args.n is not None:
        cfg.sampler.n_samples = args.n
    sched = cfg.schedule.build()
    grid = cfg.grid.build()
    keep = args.trajectories or cfg.sampler.trajectories

    if field_kind == "nonlinear-mc":
        from .nonlinear import NonlinearMCField

        if cfg.dimension != 1:
            raise ConfigError("nonlinear-mc sampling is bundled for dimension 1")
        spec = cubic_sde(sigma=1.0)
        field = NonlinearMCField(spec, grid, np.array([0.0]),
                                 n_paths=10_000, seed=cfg.seed + 1)
        run = ReverseRun(spec=spec, field=field, steps=cfg.sampler.steps,
                         seed=cfg.seed, prior="std_normal", keep_trajectory=keep)
    else:
        spec = linear_sde(sched, m=cfg.dimension)
        if field_kind == "oracle":
            if cfg.dataset.kind != "gmm8":
                raise ConfigError("oracle field is bundled for the gmm8 dataset")
            prior = GaussianMixturePrior.ring(radius=cfg.dataset.radius,
                                              std=cfg.dataset.component_std)
            field = oracle_field(sched, prior, m=cfg.dimension,
                                 t_floor=0.5 * grid.t_end / cfg.sampler.steps)
        else:
            ckpt = args.checkpoint or (out / "checkpoint.bin")
            if not Path(ckpt).exists():
                raise ConfigError(f"checkpoint {ckpt} not found; run train first")
            model = load_checkpoint(ckpt)
            # covariance and flow factors from the quadrature track, nearest node
            ens = simulate_forward(spec, grid, point_mass(np.zeros(cfg.dimension)),
                                   1, cfg.seed, store_trajectories=False)
            track = propagate_first_variation(ens)
            mall = malliavin_matrix(track, spec)
            gi, yt = quadrature_providers(track, mall, eps=None)
            field = regressor_field(sched, model, cfg.dimension, gamma_inv=gi,
                                    y_t=yt,
                                    t_floor=0.5 * grid.t_end / cfg.sampler.steps,
                                    integer_mode=grid.integer_mode)
        run = ReverseRun(spec=spec, field=field, steps=cfg.sampler.steps,
                         seed=cfg.seed,
                         prior=cfg.sampler.prior or default_prior_for(sched),
                         keep_trajectory=keep)

    samples, traj = reverse_sample(run, cfg.sampler.n_samples,
                                   grid=TimeGrid(grid.t0, grid.t_end,
                                                 cfg.sampler.steps,
                                                 grid.integer_mode))
    write_points_csv(out / "samples.csv", samples)
    if keep and traj is not None:
        rows = ((s, k, *traj[k, s]) for s in range(traj.shape[1])
                for k in range(traj.shape[0]))
        write_csv(out / "trajectories.csv",
                  ["sample", "step"] + [f"x_{i}" for i in range(spec.m)], rows)

    # metrics against fresh truth and prior draws
    ds = cfg.dataset.build()
    ds.seed = cfg.metrics.truth_seed
    ds.n_points = cfg.metrics.n_truth
    truth = ds.generate() if cfg.dimension == 2 and ds.kind in (
        "gmm8", "swissroll", "checkerboard") else None
    report_doc = None
    if truth is not None:
        rng = aux_generator(cfg.seed + 17)
        prior_draws = rng.standard_normal((cfg.metrics.n_truth, cfg.dimension))
        if run.prior == "ve":
            prior_draws *= sched.sigma_max
        means = ds.mode_means() if ds.kind == "gmm8" else None
        rep = assemble_report(samples, truth, prior_draws,
                              n_projections=cfg.metrics.n_projections,
                              seed=cfg.seed,
                              mode_means=means, mode_std=ds.component_std)
        report_doc = rep.to_json()
        with open(out / "report.json", "w") as fh:
            json.dump({"config": cfg.to_dict(), "metrics": report_doc}, fh,
                      indent=1, sort_keys=True)
        header, vals = rep.to_csv_row()
        write_csv(out / "report.csv", header, [vals])
    write_manifest(out / "manifest_sample.json", cfg.to_dict(),
                   {"samples": "samples.csv", "n_samples": len(samples),
                    "report": report_doc})
    print(f"sample: {len(samples)} draws with {field_kind} field -> {out}")
    if report_doc:
        print(f"  mmd={report_doc['mmd']:.4g} (prior baseline "
              f"{report_doc['mmd_prior_baseline']:.4g}), "
              f"sw={report_doc['sliced_wasserstein']:.4g}, "
              f"modes={report_doc['mode_coverage']}/{report_doc['mode_total']}")
    return 0


def cmd_score_check(args) -> int:
    from .io import write_csv
    from .linear import fokker_planck_score_oracle, point_mass_field, score_linear
    from .sde import make_schedule

    cfg = _load_config(args)
    out = _outdir(cfg)
    kinds = ["ve", "vp", "subvp"] if args.schedule == "all" else [args.schedule]
    rows = []
    worst = 0.0
    for kind in kinds:
        sched = (make_schedule("ve", sigma_min=0.01, sigma_max=50.0, T=1.0)
                 if kind == "ve" else make_schedule(kind, beta_min=0.1, T=1.0))
        field = point_mass_field(sched, args.x0)
        for t in (0.1, 0.25, 0.5, 0.75, 1.0):
            for y in np.linspace(-2.0, 2.0, 9):
                mb = float(score_linear(field, t, np.array([y]))[0])
                fp = float(fokker_planck_score_oracle(sched, t, y, args.x0))
                abs_err = abs(mb - fp)
                rel = abs_err / max(abs(fp), 1e-300)
                worst = max(worst, rel)
                rows.append((kind, t, y, mb, fp, abs_err, rel))
    write_csv(out / "score_check.csv",
              ["schedule", "t", "y", "score_mb", "score_fp", "abs_err", "rel_err"],
              rows)
    print(f"score-check: {len(rows)} points, max rel err {worst:.3e} -> "
          f"{out / 'score_check.csv'}")
    return 0


def cmd_nonlinear_score(args) -> int:
    from .io import write_csv, write_delta_csv
    from .nonlinear import (ConditionalEstimator, conditional_score,
                            skorokhod_nonlinear)
    from .sde import TimeGrid, cubic_sde

    cfg = _load_config(args)
    out = _outdir(cfg)
    lo, hi, count = args.grid.split(":")
    ys = np.linspace(float(lo), float(hi), int(count))
    spec = cubic_sde(sigma=args.sigma)
    grid = TimeGrid(0.0, args.horizon, int(round(args.horizon / args.dt)))
    samples = skorokhod_nonlinear(spec, grid, np.array([0.0]), args.paths, cfg.seed)
    est = ConditionalEstimator(
        bandwidth=None if args.bandwidth is None else np.array([args.bandwidth]),
        seed=cfg.seed)
    res = conditional_score(samples, ys[:, None], est)
    write_delta_csv(out / "delta_samples.csv", samples)
    write_csv(out / "nonlinear_score.csv",
              ["y", "score", "se", "ess", "flagged"],
              ((ys[i], res["score"][i, 0], res["se"][i, 0], res["ess"][i],
                int(res["flagged"][i])) for i in range(len(ys))))
    print(f"nonlinear-score: {args.paths} paths, horizon {args.horizon} -> {out}")
    for i in range(len(ys)):
        print(f"  y={ys[i]:+.3f}  score={res['score'][i, 0]:+.4f} "
              f"+- {res['se'][i, 0]:.4f}  ess={res['ess'][i]:.0f}")
    return 0


def cmd_verify(args) -> int:
    from .io import write_csv
    from .verify import SUITES, run_suite

    cfg = _load_config(args)
    out = _outdir(cfg)
    names = list(SUITES) if args.suite == "all" else [args.suite]
    all_rows = []
    for name in names:
        all_rows.extend(run_suite(name))
    width = max(len(f"{r.suite}/{r.name}") for r in all_rows)
    failed = 0
    for r in all_rows:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"[{status}] {r.suite + '/' + r.name:<{width}}  "
              f"value={r.value:.6g}  target {r.target}")
    write_csv(out / f"verify_{args.suite}.csv",
              ["suite", "check", "value", "target", "passed"],
              ((r.suite, r.name, r.value, r.target, int(r.passed))
               for r in all_rows))
    if failed:
        print(f"verify: {failed}/{len(all_rows)} checks failed")
        return EXIT_VERIFY
    print(f"verify: all {len(all_rows)} checks passed")
    return 0


def cmd_metrics(args) -> int:
    from .io import read_points_csv, write_csv
    from .metrics import assemble_report
    from .rng import aux_generator

    cfg = _load_config(args)
    out = _outdir(cfg)
    samples = read_points_csv(args.samples)
    truth = read_points_csv(args.truth)
    if args.prior:
        prior = read_points_csv(args.prior)
    else:
        prior = aux_generator(cfg.seed + 17).standard_normal(truth.shape)
    rep = assemble_report(samples, truth, prior,
                          n_projections=cfg.metrics.n_projections, seed=cfg.seed)
    with open(out / "report.json", "w") as fh:
        json.dump({"config": cfg.to_dict(), "metrics": rep.to_json()}, fh,
                  indent=1, sort_keys=True)
    header, vals = rep.to_csv_row()
    write_csv(out / "report.csv", header, [vals])
    print(f"metrics: mmd={rep.mmd:.5g} sw={rep.sliced_wasserstein:.5g} -> {out}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "sample": cmd_sample,
    "score-check": cmd_score_check,
    "nonlinear-score": cmd_nonlinear_score,
    "verify": cmd_verify,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
