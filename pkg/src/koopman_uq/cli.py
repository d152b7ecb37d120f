"""``koopman-uq`` command line: simulate | train | mc | evaluate | compare."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .artifacts import sha256, write_json
from .dynamics import augment, simulate
from .errors import CaseError, ConfigError, NumericalError
from .koopman import load_model, save_model
from .study import StudyConfig, build_scenario, evaluation_samples, train_surrogate
from .uq import compare, kde, load_ensemble, moments, run_mc, run_surrogate, save_ensemble

log = logging.getLogger("koopman_uq")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _versions() -> dict:
    return {"koopman_uq": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _finish(out: Path, command: str, cfg: StudyConfig | None, outputs: list[str], timing: dict,
            extra: dict | None = None) -> None:
    """Write ``timing.json`` and the deterministic ``manifest.json``."""
    write_json(out / "timing.json", timing)
    manifest = {
        "command": command,
        "config": cfg.to_dict() if cfg else None,
        "seed": cfg.seed if cfg else None,
        "versions": _versions(),
        "outputs": {name: sha256(out / name) for name in sorted(outputs)},
        "timing_file": "timing.json",
    }
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)


def _table_line(training: float, realization: float) -> str:
    return (f"Koopman: Training / Realization / Total = "
            f"{training:.2f} / {realization:.2f} / {training + realization:.2f} s")


def _write_statistics(out: Path, ens, cfg: StudyConfig) -> list[str]:
    save_ensemble(ens, out / "ensemble.npz")
    files = ["ensemble.npz"]
    if ens.n_samples >= 2:
        moments(ens, max_order=min(4, ens.n_samples)).to_csv(out / "moments.csv")
        files.append("moments.csv")
    vals = ens.at_time(cfg.kde_time) if cfg.kde_time <= ens.times[-1] else None
    if vals is not None and vals.size >= 2 and np.ptp(vals) > 0:
        kde(vals).to_csv(out / "density.csv")
        files.append("density.csv")
    return files


def cmd_simulate(cfg: StudyConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = build_scenario(cfg)
    t0 = time.perf_counter()
    traj = simulate(augment(sc.x0_true, sc.nominal_m), sc.net, cfg.horizon, cfg.dt_int, cfg.dt_snap,
                    sc.uncertain)
    wall = time.perf_counter() - t0
    traj.to_csv(out / "trajectory.csv")
    _finish(out, "simulate", cfg, ["trajectory.csv"], {"simulate": wall})
    print(f"wrote {out / 'trajectory.csv'} ({len(traj)} snapshots)")
    return EXIT_OK


def cmd_train(cfg: StudyConfig, model_path: str | None = None) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = build_scenario(cfg)
    res = train_surrogate(cfg, sc)
    model_file = Path(model_path) if model_path else out / "model.kpm"
    # wall times live in timing.json so the model archive stays byte-identical across reruns
    save_model(res.model, model_file, extra={"config": cfg.to_dict()})
    res.samples.to_csv(out / "training_samples.csv")
    report = {"n_d": res.model.n_d, "rank": res.model.rank, "fit_residual": res.model.residual,
              "eigvec_condition": res.model.condition, "n_t": cfg.n_t, "dictionary": cfg.dictionary,
              "max_abs_mu": float(np.abs(res.model.mu).max()), "positivity_redraws": res.samples.redraws}
    write_json(out / "training_report.json", report)
    outputs = ["training_samples.csv", "training_report.json"]
    if model_file.parent.resolve() == out.resolve():
        outputs.append(model_file.name)
    _finish(out, "train", cfg, outputs,
            {"training": res.training_time, "training_simulation": res.simulation_time,
             "training_fit": res.fit_time})
    print(f"model {model_file}: n_d = {res.model.n_d}, rank = {res.model.rank}, "
          f"fit residual = {res.model.residual:.3e}")
    print(f"training wall time {res.training_time:.2f} s")
    return EXIT_OK


def cmd_mc(cfg: StudyConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = build_scenario(cfg)
    samples = evaluation_samples(cfg, sc)
    samples.to_csv(out / "samples.csv")
    ens = run_mc(sc.net, sc.x0_true, samples, cfg.horizon, cfg.dt_int, cfg.dt_snap, sc.qoi,
                 sc.uncertain, workers=cfg.threads)
    files = ["samples.csv"] + _write_statistics(out, ens, cfg)
    _finish(out, "mc", cfg, files, {"mc": ens.wall_time},
            {"excluded_samples": list(ens.excluded)})
    print(f"MC: {ens.n_samples} samples, {len(ens.excluded)} excluded, wall time {ens.wall_time:.2f} s")
    return EXIT_OK


def _training_time(model_path: Path) -> float:
    """Training wall time recorded by ``train`` next to the model, 0 if absent."""
    timing_file = model_path.parent / "timing.json"
    if timing_file.is_file():
        return float(json.loads(timing_file.read_text()).get("training", 0.0))
    return 0.0


def cmd_evaluate(cfg: StudyConfig, model_path: str) -> int:
    if not Path(model_path).is_file():
        raise FileNotFoundError(f"model file not found: {model_path}")
    model, _ = load_model(model_path)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = build_scenario(cfg)
    if model.dictionary.n_m != len(sc.uncertain) or model.dictionary.n_g != sc.net.n_gen:
        raise ConfigError("model dimensions do not match the configured scenario")
    if abs(model.dt - cfg.dt_snap) > 1e-12:
        raise ConfigError(f"model dt {model.dt} differs from dt_snap {cfg.dt_snap}")
    samples = evaluation_samples(cfg, sc)
    samples.to_csv(out / "samples.csv")
    ens = run_surrogate(model, sc.x0_true, samples, cfg.k_max, sc.qoi)
    files = ["samples.csv"] + _write_statistics(out, ens, cfg)
    training = _training_time(Path(model_path))
    _finish(out, "evaluate", cfg, files,
            {"training": training, "realization": ens.wall_time, "total": training + ens.wall_time},
            {"model_sha256": sha256(model_path), "excluded_samples": list(ens.excluded)})
    print(f"surrogate: {ens.n_samples} samples, {len(ens.excluded)} excluded")
    print(_table_line(training, ens.wall_time))
    return EXIT_OK


def _load_run(path: Path):
    timing_file = path / "timing.json"
    timing = json.loads(timing_file.read_text()) if timing_file.is_file() else {}
    if "mc" in timing:
        wall, training = timing["mc"], 0.0
    else:
        wall, training = timing.get("realization", 0.0), timing.get("training", 0.0)
    return load_ensemble(path / "ensemble.npz", wall_time=wall), training


def cmd_compare(bench_dir: str, test_dir: str, window, ks_times, out_file: str | None) -> int:
    bench, _ = _load_run(Path(bench_dir))
    test, training = _load_run(Path(test_dir))
    report = compare(bench, test, tuple(window), ks_times, training_time=training)
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_file:
        Path(out_file).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON study config; flags override its keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker processes for sample-parallel phases")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--case", help="case JSON (default: bundled 39-bus system)")
    common.add_argument("--outage", help="comma-separated branch ids to open at t = 0")
    common.add_argument("--dist", choices=["gaussian", "uniform"])
    common.add_argument("--spread", type=float)
    common.add_argument("--sampler", choices=["lhs", "iid"])
    common.add_argument("--n-t", dest="n_t", type=int)
    common.add_argument("--n-mc", dest="n_mc", type=int)
    common.add_argument("--dictionary", choices=["linear", "hermite2", "hermite2_trig"])
    common.add_argument("--horizon", type=float)
    common.add_argument("--samples", help="CSV of evaluation samples (overrides the seeded draw)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="koopman-uq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="nominal-parameter trajectory CSV")
    tr = sub.add_parser("train", parents=[common], help="fit and save the Koopman surrogate")
    tr.add_argument("--out", help="model path (default <out-dir>/model.kpm)")
    sub.add_parser("mc", parents=[common], help="Monte Carlo benchmark ensemble")
    ev = sub.add_parser("evaluate", parents=[common], help="surrogate ensemble from a saved model")
    ev.add_argument("--model", required=True)
    cp = sub.add_parser("compare", help="compare two run directories")
    cp.add_argument("bench")
    cp.add_argument("test")
    cp.add_argument("--window", type=float, nargs=2, default=[0.0, 5.0])
    cp.add_argument("--ks-times", type=float, nargs="*", default=[1.0, 2.0, 3.0, 4.0, 5.0])
    cp.add_argument("--out", help="write the JSON report here as well")
    cp.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> StudyConfig:
    keys = ("seed", "threads", "out_dir", "case", "dist", "spread", "sampler", "n_t", "n_mc",
            "dictionary", "horizon", "samples")
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    if args.outage is not None:
        overrides["outage"] = [s for s in args.outage.split(",") if s]
    if args.config:
        return StudyConfig.from_file(args.config, **overrides)
    return StudyConfig.from_dict(overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            return cmd_compare(args.bench, args.test, args.window, args.ks_times, args.out)
        cfg = _config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "mc":
            return cmd_mc(cfg)
        return cmd_evaluate(cfg, args.model)
    except (ConfigError, CaseError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
