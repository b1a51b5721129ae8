"""Command-line front end: simulate, featurize, train, evaluate, quantify,
config.

Exit codes: 0 success, 2 usage error, 3 data-format error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

__version__ = "0.1.0"


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="dasleak",
        description="Fiber-optic DAS water-pipe leak detection pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file overlaying defaults")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--threads", type=int,
                       help="BLAS/OpenMP thread count (best effort)")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty output directory")

    p = sub.add_parser("config", help="print the effective configuration")
    common(p)
    p.add_argument("--print-defaults", action="store_true")

    p = sub.add_parser("simulate", help="generate the synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--cases", help="comma-separated case numbers, e.g. 1,9")
    p.add_argument("--duration", type=float, help="seconds per case")

    p = sub.add_parser("featurize", help="extract labeled feature cubes")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--z", type=int, help="cube depth (odd)")

    p = sub.add_parser("train", help="train a leak classifier")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=["cnn2d", "cnn3d"])
    p.add_argument("--z", type=int)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("evaluate", help="probability maps and metrics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("quantify", help="leak level quantification")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--range-model", dest="range_model",
                   help="existing range-model JSON; fitted here when absent")

    return parser.parse_args(argv)


def _ensure_out_dir(path, force: bool):
    from .errors import UsageError
    os.makedirs(path, exist_ok=True)
    if os.listdir(path) and not force:
        raise UsageError(f"output directory {path} is not empty "
                         "(use --force to overwrite)")


def _write_run_manifest(out_dir, cfg, inputs, outputs, started):
    from . import fileio
    digests = {}
    for p in inputs:
        if os.path.isfile(p):
            digests[os.path.basename(p)] = fileio.file_digest(p)
    fileio.write_json(os.path.join(out_dir, "run_manifest.json"), {
        "tool_version": __version__,
        "config_sha256": cfg.digest(),
        "input_digests": digests,
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "wall_clock_s": round(time.time() - started, 3),
    })


def cmd_config(args):
    from .config import load_config, default_config
    cfg = default_config() if args.print_defaults else load_config(args.config)
    sys.stdout.write(cfg.dump())
    return 0


def cmd_simulate(args):
    from .config import load_config
    from . import simulate
    started = time.time()
    cfg = load_config(args.config)
    _ensure_out_dir(args.out, args.force)
    duration = args.duration or cfg.getfloat("simulate", "duration_s")
    seed = args.seed if args.seed is not None \
        else cfg.getint("simulate", "base_seed")
    cases = simulate.reference_cases(
        duration=duration, base_seed=seed, pipe=cfg.pipe_spec(),
        leak_position=cfg.getfloat("simulate", "leak_position_m"))
    if args.cases:
        wanted = {f"case{int(n):02d}" for n in args.cases.split(",")}
        cases = [c for c in cases if c.case_id in wanted]
        if not cases:
            from .errors import UsageError
            raise UsageError(f"no cases match --cases {args.cases}")
    manifest = simulate.build_dataset(cases, cfg.das_config(),
                                      cfg.pipe_spec(), args.out)
    outputs = [e["recording"] for e in manifest["cases"]] + ["manifest.json"]
    _write_run_manifest(args.out, cfg, [], outputs, started)
    print(f"simulated {len(cases)} case(s) into {args.out}")
    return 0


def cmd_featurize(args):
    from .config import load_config
    from . import pipeline
    started = time.time()
    cfg = load_config(args.config)
    _ensure_out_dir(args.out, args.force)
    z = args.z if args.z is not None else cfg.getint("model", "z")
    manifest = pipeline.featurize_dataset(args.dataset, args.out, cfg, z)
    outputs = [c["cubes"] for c in manifest["cases"]]
    _write_run_manifest(args.out, cfg,
                        [os.path.join(args.dataset, "manifest.json")],
                        outputs, started)
    total = sum(c["n_windows"] for c in manifest["cases"])
    print(f"featurized {len(manifest['cases'])} case(s), Z={z}, "
          f"{total} windows total")
    return 0


def cmd_train(args):
    from .config import load_config
    from . import fileio, pipeline
    from .neural import checkpoint, init_model, train
    started = time.time()
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    x, y = pipeline.build_training_arrays(args.features, cfg)
    manifest = fileio.read_json(
        os.path.join(args.features, pipeline.FEATURES_MANIFEST))
    z = args.z if args.z is not None else manifest["z"]
    if z != manifest["z"]:
        from .errors import UsageError
        raise UsageError(f"--z {z} does not match feature set Z={manifest['z']}")
    spec = cfg.architecture(variant=args.variant, z=z)
    init_seed = args.seed if args.seed is not None \
        else cfg.getint("train", "init_seed")
    model = init_model(spec, seed=init_seed)
    history = train(model, x, y, cfg.train_config(epochs=args.epochs),
                    seed=cfg.getint("train", "train_seed"))
    ckpt_path = os.path.join(args.out, f"{spec.variant}_z{z}.dasm")
    checkpoint.save(model, ckpt_path)
    fileio.write_json(os.path.join(args.out, "training_history.json"), history)
    _write_run_manifest(args.out, cfg, [], [ckpt_path,
                                            "training_history.json"], started)
    epochs_run = len(history["train_loss"])
    print(f"trained {spec.variant} Z={z} on {len(y)} cubes "
          f"({epochs_run} epoch(s), best epoch {history['best_epoch']}); "
          f"checkpoint: {ckpt_path}")
    return 0


def cmd_evaluate(args):
    from .config import load_config
    from . import pipeline
    from .neural import checkpoint
    started = time.time()
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    model = checkpoint.load(args.checkpoint)
    report, _ = pipeline.evaluate_dataset(model, args.features, cfg,
                                          out_dir=args.out)
    outputs = [f"{row['case_id']}_map.csv" for row in report["cases"]]
    _write_run_manifest(args.out, cfg, [args.checkpoint],
                        outputs + ["evaluation_report.json"], started)
    for row in report["cases"]:
        tpr = "-" if row["tpr"] is None else f"{100 * row['tpr']:5.1f}%"
        far = "-" if row["far"] is None else f"{100 * row['far']:5.2f}%"
        err = ("-" if row["location_error_m"] is None
               else f"{row['location_error_m']:.2f} m")
        print(f"{row['case_id']}  level={row['leak_level']:<12} TPR={tpr} "
              f"FAR={far} declared={row['declared']} loc_err={err}")
    return 0


def cmd_quantify(args):
    from .config import load_config
    from . import fileio, pipeline, quantify
    from .neural import checkpoint
    started = time.time()
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    model = checkpoint.load(args.checkpoint)
    _, details = pipeline.evaluate_dataset(model, args.features, cfg)
    manifest = fileio.read_json(
        os.path.join(args.features, pipeline.FEATURES_MANIFEST))
    if args.range_model:
        range_model = quantify.RangeModel.from_dict(
            fileio.read_json(args.range_model))
    else:
        range_model = pipeline.fit_range_model_from_details(
            details, manifest, cfg)
        fileio.write_json(os.path.join(args.out, "range_model.json"),
                          range_model.to_dict())
    pipe = cfg.pipe_spec()
    pressure = cfg.getfloat("quantify", "gauge_pressure_pa")
    cd = cfg.getfloat("quantify", "discharge_coefficient")
    threshold = cfg.getfloat("detect", "threshold")
    predictions = []
    reports = {}
    for case in manifest["cases"]:
        pmap = details[case["case_id"]]["pmap"]
        gauge = (case["leak"]["gauge_pressure_pa"]
                 if case["leak"] is not None else pressure)
        result = quantify.quantify_from_map(
            pmap, range_model, pipe, case["pipe_flow_rate_m3s"], gauge,
            cd, threshold)
        reports[case["case_id"]] = result.to_dict()
        true_level = pipeline.level_from_name(case["leak_level"])
        if case["leak"] is not None:
            predictions.append((true_level, result.level))
    out = {"range_model": range_model.to_dict(), "cases": reports}
    table = None
    if predictions:
        # An estimated range at/below the intercept quantifies as no-leak;
        # for the 3-class table that counts as the lowest level.
        from .hydraulics import LeakLevel
        folded = [(t, LeakLevel.SMALL if p is LeakLevel.NO_LEAK else p)
                  for t, p in predictions]
        table = quantify.truth_table(folded)
        out["truth_table"] = table
    fileio.write_json(os.path.join(args.out, "quantification_report.json"),
                      out)
    _write_run_manifest(args.out, cfg, [args.checkpoint],
                        ["quantification_report.json"], started)
    print(f"range model: a={range_model.slope:.3f} m/ratio, "
          f"b={range_model.intercept:.3f} m, R^2={range_model.r_squared:.4f}")
    if table is not None:
        print(f"three-level accuracy: {100 * table['overall_accuracy']:.1f}%")
    return 0


_COMMANDS = {
    "config": cmd_config,
    "simulate": cmd_simulate,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "quantify": cmd_quantify,
}


def main(argv=None) -> int:
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    from .errors import DataFormatError, NumericalError, UsageError
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
