"""Command-line front end: dataset generation, benchmark training, evaluation.

    operon generate [--config cfg.json] [--seed N] [--desk] [--out DIR]
    operon train    [--config cfg.json] [--variant NAME] [--seed N] [--desk]
                    [--data DIR] [--out DIR]
    operon evaluate --model M.donm [M2.donm ...] --test T.donl [--out CSV]

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 I/O or file-format error. All randomness flows from the configured seed;
repeating a command with the same seed rewrites byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import VARIANT_DATA, VARIANTS, ExperimentConfig, config_from_dict, load_config
from .datasets import DatasetFormatError, read_dataset, sha256_file, write_dataset
from .integrate import (
    IntegrationError,
    downsample_time,
    generate_trajectories,
    resolve_workers,
)
from .metrics import DegenerateTargetError
from .nn import ConfigError, NumericError
from .training import log_to_csv_rows
from .variants import (
    ModelFormatError,
    evaluate_bundle,
    load_model,
    metrics_csv_rows,
    save_model,
    train_variant,
)

MANIFEST_NAME = "manifest.json"


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def dataset_filenames(equation: str) -> dict[str, str]:
    return {tag: f"{equation}_{tag}.donl" for tag in ("high", "low", "test")}


def cmd_generate(args) -> int:
    cfg = _load_cli_config(args)
    seed = cfg.seeds[0]
    out_dir = args.out or cfg.data_dir
    os.makedirs(out_dir, exist_ok=True)
    spec = cfg.equation_spec()
    ratio = int(round(cfg.dt_low / cfg.dt_high))
    names = dataset_filenames(cfg.equation)

    # global sample layout: [test][high][low]; test indices never move, so test
    # membership is identical across dataset-size sweeps with the same seed
    blocks = [("test", cfg.n_test, 0),
              ("high", cfg.n_high, cfg.n_test),
              ("low", cfg.n_low, cfg.n_test + cfg.n_high)]
    workers = resolve_workers(max(cfg.n_test + cfg.n_high + cfg.n_low, 1))
    files = {}
    for tag, count, offset in blocks:
        _log(f"generating {count} {cfg.equation} trajectories ({tag}, dt={cfg.dt_high}, "
             f"{workers} worker{'s' if workers > 1 else ''})")
        traj = generate_trajectories(spec, cfg.grid, count, cfg.t_end, cfg.dt_high,
                                     cfg.integrator, seed=seed, sample_offset=offset,
                                     workers=workers, resolution="high")
        if tag == "low":
            traj = downsample_time(traj, ratio)
        path = os.path.join(out_dir, names[tag])
        write_dataset(path, traj)
        files[tag] = {"name": names[tag], "sha256": sha256_file(path)}
        _log(f"wrote {path} (N={traj.n}, n_t={traj.n_t}, n_x={traj.n_x})")

    manifest = {
        "format": 1, "equation": cfg.equation, "seed": seed, "desk": cfg.desk,
        "t_end": cfg.t_end, "dt_high": cfg.dt_high, "dt_low": cfg.dt_low,
        "sizes": {"n_test": cfg.n_test, "n_high": cfg.n_high, "n_low": cfg.n_low},
        "grid": {"n_x": cfg.grid.n_x, "period": cfg.grid.period, "origin": cfg.grid.origin},
        "equation_params": cfg.equation_params,
        "integrator": {"dt_internal": cfg.integrator.dt_internal,
                       "newton_tol": cfg.integrator.newton_tol,
                       "max_newton_iter": cfg.integrator.max_newton_iter},
        "files": files,
    }
    _write_text(os.path.join(out_dir, MANIFEST_NAME),
                json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    _log(f"wrote {os.path.join(out_dir, MANIFEST_NAME)}")
    return 0


def _verify_manifest(cfg: ExperimentConfig, data_dir: str, needed: tuple[str, ...]) -> dict:
    manifest_path = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise DatasetFormatError(f"no {MANIFEST_NAME} in {data_dir}; run `operon generate` first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("equation") != cfg.equation:
        raise ConfigError(
            f"data in {data_dir} is for equation {manifest.get('equation')!r}, "
            f"config wants {cfg.equation!r}")
    sizes = manifest.get("sizes", {})
    for key, want in (("n_high", cfg.n_high), ("n_low", cfg.n_low), ("n_test", cfg.n_test)):
        if sizes.get(key) != want:
            raise ConfigError(
                f"data in {data_dir} has {key}={sizes.get(key)}, config wants {want}; regenerate")
    for tag in needed + ("test",):
        entry = manifest["files"][tag]
        path = os.path.join(data_dir, entry["name"])
        if not os.path.exists(path):
            raise DatasetFormatError(f"dataset file missing: {path}")
        actual = sha256_file(path)
        if actual != entry["sha256"]:
            raise DatasetFormatError(
                f"checksum mismatch for {path}: manifest {entry['sha256'][:12]}..., "
                f"file {actual[:12]}...; refusing to train on stale data")
    return manifest


def _train_one_seed(payload) -> str:
    cfg_obj, variant, data_paths, seed, out_dir = payload
    data = {tag: read_dataset(path) for tag, path in data_paths.items()}
    bundle, log = train_variant(variant, data, cfg_obj, seed)
    model_path = os.path.join(out_dir, f"{variant}_seed{seed}.donm")
    log_path = os.path.join(out_dir, f"{variant}_seed{seed}_log.csv")
    save_model(model_path, bundle)
    _write_text(log_path, "\n".join(log_to_csv_rows(log)) + "\n")
    best = bundle.meta.get("best_val_mse")
    return f"{variant} seed {seed}: best val MSE {best:.6e} -> {model_path}"


def cmd_train(args) -> int:
    cfg = _load_cli_config(args)
    data_dir = args.data or cfg.data_dir
    out_dir = args.out or cfg.out_dir
    variant = cfg.variant
    needed = VARIANT_DATA[variant]
    _verify_manifest(cfg, data_dir, needed)
    os.makedirs(out_dir, exist_ok=True)

    names = dataset_filenames(cfg.equation)
    data_paths = {tag: os.path.join(data_dir, names[tag]) for tag in needed}
    payloads = [(cfg, variant, data_paths, seed, out_dir) for seed in cfg.seeds]
    workers = resolve_workers(len(payloads))
    if workers == 1 or len(payloads) == 1:
        summaries = [_train_one_seed(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_train_one_seed, payloads))
    for line in summaries:
        _log(line)
    return 0


def cmd_evaluate(args) -> int:
    test = read_dataset(args.test)
    entries = []
    for model_path in args.model:
        bundle = load_model(model_path)
        report = evaluate_bundle(bundle, test)
        entries.append((bundle, report))

    rows = metrics_csv_rows(entries)
    if args.out:
        _write_text(args.out, "\n".join(rows) + "\n")
    else:
        for row in rows:
            print(row)

    for name in ("mae", "rmse", "rse"):
        values = np.array([report.mean(name) for _, report in entries])
        spread = 0.0 if np.all(values == values[0]) else float(np.std(values))
        print(f"{name}: {float(np.mean(values)):.6f} +/- {spread:.6f} "
              f"({len(values)} model{'s' if len(values) != 1 else ''})")
    return 0


def _load_cli_config(args) -> ExperimentConfig:
    desk = True if args.desk else None
    if args.config:
        cfg = load_config(args.config, desk=desk, seed=args.seed)
    else:
        cfg = config_from_dict({}, desk=desk, seed=args.seed)
    if getattr(args, "variant", None):
        if args.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {args.variant!r}; valid names: {', '.join(VARIANTS)}")
        from dataclasses import replace
        cfg = replace(cfg, variant=args.variant)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="operon",
        description="Multi-resolution operator-network surrogates for 1-D periodic PDEs")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate trajectory datasets and write them to disk")
    gen.add_argument("--config", help="JSON experiment config")
    gen.add_argument("--seed", type=int, help="override the config seed")
    gen.add_argument("--desk", action="store_true", help="desk-scale preset (small and fast)")
    gen.add_argument("--out", help="output directory (default: config data_dir)")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train one benchmark variant on generated datasets")
    tr.add_argument("--config", help="JSON experiment config")
    tr.add_argument("--variant", help=f"one of: {', '.join(VARIANTS)}")
    tr.add_argument("--seed", type=int, help="override the config seeds with one seed")
    tr.add_argument("--desk", action="store_true", help="desk-scale preset (small and fast)")
    tr.add_argument("--data", help="directory holding generated datasets")
    tr.add_argument("--out", help="output directory for models and logs")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate trained models on a test dataset")
    ev.add_argument("--model", nargs="+", required=True, help="trained model file(s)")
    ev.add_argument("--test", required=True, help="test dataset file")
    ev.add_argument("--out", help="write the metric rows to this CSV (default: stdout)")
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        _log(f"configuration error: {err}")
        return 2
    except (NumericError, IntegrationError, DegenerateTargetError) as err:
        _log(f"numeric failure: {err}")
        return 3
    except (DatasetFormatError, ModelFormatError, OSError) as err:
        _log(f"file error: {err}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
