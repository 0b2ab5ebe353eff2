"""Command-line entry point: train, eval, infer, bench, synth.

Option precedence is CLI flag > JSON config file > built-in default. The
--threads flag (or the FVPY_THREADS environment variable) parallelizes
across landmarks when training and across images when evaluating; work
within one landmark's training run stays sequential so seeded runs are
byte-reproducible at any thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from fovea.bench import DEFAULT_SIDES, run_bench
from fovea.dataset import (
    DatasetError,
    SyntheticConfig,
    gen_synthetic,
    load_isbi,
    split_challenge,
    write_dataset,
)
from fovea.metrics import EvalReport, iov, mre, radial_errors, sdr
from fovea.model import load_params, save_params
from fovea.pyramid import build_pyramid, load_gray_image
from fovea.trainer import TrainConfig, infer, train

EXIT_BAD_INPUT = 2


class CliError(RuntimeError):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_BAD_INPUT)
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args, file_cfg, key, default):
    """CLI flag beats config file beats default."""
    cli_val = getattr(args, key, None)
    if cli_val is not None:
        return cli_val
    if key in file_cfg:
        return file_cfg[key]
    return default


def _resolve_threads(args, file_cfg):
    value = _resolve(args, file_cfg, "threads", None)
    if value is None:
        value = os.environ.get("FVPY_THREADS", "1")
    threads = int(value)
    if threads < 1:
        raise CliError(f"--threads must be >= 1, got {threads}")
    return threads


def _int_pair(text, flag):
    try:
        parts = [p.strip() for p in str(text).split(",")]
        return tuple(int(p) for p in parts)
    except ValueError:
        raise CliError(f"{flag} expects comma-separated integers, got {text!r}")


def _float_list(text, flag):
    try:
        return tuple(float(p) for p in str(text).split(","))
    except ValueError:
        raise CliError(f"{flag} expects comma-separated numbers, got {text!r}")


def _select_landmarks(selection, n_landmarks):
    if selection is None or str(selection) == "all":
        return list(range(n_landmarks))
    indices = [int(p) for p in str(selection).split(",")]
    for i in indices:
        if not 0 <= i < n_landmarks:
            raise CliError(f"landmark index {i} out of range 0..{n_landmarks - 1}")
    return indices


def _load_dataset(root):
    if root is None:
        raise CliError("--data is required", EXIT_BAD_INPUT)
    if not Path(root).is_dir():
        raise CliError(f"data directory not found: {root}", EXIT_BAD_INPUT)
    return load_isbi(root)


def _model_path(out_dir, li):
    return Path(out_dir) / f"landmark_{li:02d}.fvpy"


def cmd_train(args):
    file_cfg = _load_config_file(args.config)
    records, meta = _load_dataset(_resolve(args, file_cfg, "data", None))
    landmarks = _select_landmarks(_resolve(args, file_cfg, "landmark", "all"),
                                  meta.n_landmarks)
    threads = _resolve_threads(args, file_cfg)
    out_dir = Path(_resolve(args, file_cfg, "out", "models"))
    out_dir.mkdir(parents=True, exist_ok=True)

    base = dict(
        epochs=_int_pair(_resolve(args, file_cfg, "epochs", "20,20"), "--epochs"),
        learning_rates=_float_list(
            _resolve(args, file_cfg, "learning_rates", "1e-4,1e-5"), "--lrs"),
        batch_size=int(_resolve(args, file_cfg, "batch_size", 2)),
        iterations_train=int(_resolve(args, file_cfg, "iterations_train", 10)),
        iterations_infer=int(_resolve(args, file_cfg, "iterations_infer", 10)),
        seed=int(_resolve(args, file_cfg, "seed", 0)),
        preset=_resolve(args, file_cfg, "preset", "tiny"),
    )

    def run_one(li):
        config = TrainConfig(landmark_index=li, **base)
        model, log = train(records, config,
                           landmark_name=meta.landmark_names[li],
                           px_per_mm=meta.px_per_mm)
        save_params(model, _model_path(out_dir, li))
        log.to_csv(out_dir / f"landmark_{li:02d}_log.csv")
        return li, log.rows[-1]["mean_radial_error_px"] if log.rows else float("nan")

    if threads == 1 or len(landmarks) == 1:
        results = [run_one(li) for li in landmarks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, landmarks))
    for li, err in results:
        print(f"trained landmark {li} ({meta.landmark_names[li]}): "
              f"final training radial error {err:.2f} px")
    print(f"wrote {len(results)} model file(s) to {out_dir}")
    return 0


def _split_records(records, name):
    if name == "all":
        return records
    groups = dict(zip(("train", "test1", "test2"), split_challenge(records)))
    if name not in groups:
        raise CliError(f"unknown split {name!r}; use train, test1, test2, or all")
    return groups[name]


def _predict(records, model, iterations, threads):
    def one(rec):
        return infer(build_pyramid(rec.image()), model, iterations=iterations)

    if threads == 1:
        return np.array([one(r) for r in records])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(one, records)))


def cmd_eval(args):
    file_cfg = _load_config_file(args.config)
    records, meta = _load_dataset(_resolve(args, file_cfg, "data", None))
    subset = _split_records(records, _resolve(args, file_cfg, "split", "all"))
    models_dir = Path(_resolve(args, file_cfg, "models", "models"))
    if not models_dir.is_dir():
        raise CliError(f"models directory not found: {models_dir}", EXIT_BAD_INPUT)
    landmarks = _select_landmarks(_resolve(args, file_cfg, "landmark", "all"),
                                  meta.n_landmarks)
    iters = _int_pair(_resolve(args, file_cfg, "iters", "3,10"), "--iters")
    threads = _resolve_threads(args, file_cfg)
    out_dir = Path(_resolve(args, file_cfg, "out", "reports"))
    out_dir.mkdir(parents=True, exist_ok=True)

    models = {}
    for li in landmarks:
        path = _model_path(models_dir, li)
        if not path.exists():
            raise CliError(f"model file not found: {path}", EXIT_BAD_INPUT)
        models[li] = load_params(path)

    reports = {}
    for T in iters:
        report = EvalReport()
        for li in landmarks:
            preds = _predict(subset, models[li], T, threads)
            truths = np.array([r.gt[li] for r in subset])
            annot = (np.array([r.junior[li] for r in subset]),
                     np.array([r.senior[li] for r in subset]))
            report.add_landmark(
                name=meta.landmark_names[li],
                errors_mm=radial_errors(preds, truths, meta.px_per_mm),
                iov_mm=iov(annot[0], annot[1], meta.px_per_mm))
        reports[T] = report
        (out_dir / f"report_T{T}.json").write_text(report.to_json())
        (out_dir / f"report_T{T}.txt").write_text(report.to_text())
        print(f"--- T_infer = {T} ---")
        print(report.to_text())

    if len(iters) == 2:
        a, b = iters
        delta = reports[b].average["mre"] - reports[a].average["mre"]
        print(f"delta MRE (T={b} vs T={a}): {delta:+.4f} mm")
    print(f"wrote reports to {out_dir}")
    return 0


def cmd_infer(args):
    file_cfg = _load_config_file(args.config)
    model_path = _resolve(args, file_cfg, "model", None)
    image_path = _resolve(args, file_cfg, "image", None)
    if model_path is None or image_path is None:
        raise CliError("--model and --image are required", EXIT_BAD_INPUT)
    if not Path(model_path).exists():
        raise CliError(f"model file not found: {model_path}", EXIT_BAD_INPUT)
    try:
        image = load_gray_image(image_path)
    except (FileNotFoundError, OSError) as exc:
        raise CliError(f"cannot read image {image_path}: {exc}", EXIT_BAD_INPUT)
    model = load_params(model_path)
    iterations = _resolve(args, file_cfg, "iterations", None)
    if iterations is None:
        iterations = int(model.meta.get("iterations_infer", 10))
    point = infer(build_pyramid(image), model, iterations=int(iterations))
    name = str(model.meta.get("landmark_name", "landmark")).replace(" ", "_")
    print(f"{name} {point[0]:.2f} {point[1]:.2f}")
    return 0


def cmd_bench(args):
    file_cfg = _load_config_file(args.config)
    sides_text = _resolve(args, file_cfg, "sides",
                          ",".join(str(s) for s in DEFAULT_SIDES))
    sides = _int_pair(sides_text, "--sides")
    report = run_bench(
        sides=sides,
        iterations=int(_resolve(args, file_cfg, "iterations", 100)),
        preset=_resolve(args, file_cfg, "preset", "tiny"),
        seed=int(_resolve(args, file_cfg, "seed", 0)))
    print(report.to_text())
    out = _resolve(args, file_cfg, "out", None)
    if out is not None:
        Path(out).write_text(report.to_json())
        print(f"wrote {out}")
    return 0


def cmd_synth(args):
    file_cfg = _load_config_file(args.config)
    out = _resolve(args, file_cfg, "out", None)
    if out is None:
        raise CliError("--out is required", EXIT_BAD_INPUT)
    cfg = SyntheticConfig(
        side=int(_resolve(args, file_cfg, "side", 1024)),
        count=int(_resolve(args, file_cfg, "count", 64)),
        seed=int(_resolve(args, file_cfg, "seed", 0)),
        noise=float(_resolve(args, file_cfg, "noise", 0.03)),
        distractor_count=int(_resolve(args, file_cfg, "distractors", 2)))
    records, meta = gen_synthetic(cfg)
    write_dataset(records, meta, out)
    print(f"wrote {len(records)} images ({cfg.side}x{cfg.side}, "
          f"seed {cfg.seed}) to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fovea",
        description="Foveated landmark regression: train, evaluate, infer, "
                    "benchmark, and generate synthetic data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int,
                       help="worker threads (default: FVPY_THREADS or 1)")

    p = sub.add_parser("train", help="train one model per landmark")
    common(p)
    p.add_argument("--data")
    p.add_argument("--landmark", help='index, comma list, or "all"')
    p.add_argument("--preset", choices=("tiny", "resnet34-trunc"))
    p.add_argument("--epochs", help="per-phase epochs, e.g. 10,10")
    p.add_argument("--lrs", dest="learning_rates",
                   help="per-phase learning rates, e.g. 1e-4,1e-5")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--iterations", dest="iterations_train", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained models on a split")
    common(p)
    p.add_argument("--data")
    p.add_argument("--models")
    p.add_argument("--landmark")
    p.add_argument("--split", choices=("train", "test1", "test2", "all"))
    p.add_argument("--iters", help="inference iteration counts, e.g. 3,10")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="locate the landmark in one image")
    common(p)
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="per-iteration cost versus image side")
    common(p)
    p.add_argument("--sides", help="comma list, default 256,...,4096")
    p.add_argument("--iterations", type=int)
    p.add_argument("--preset", choices=("tiny", "resnet34-trunc"))
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out")
    p.add_argument("--count", type=int)
    p.add_argument("--side", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--distractors", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"fovea {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except DatasetError as exc:
        print(f"fovea {args.command}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"fovea {args.command}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
