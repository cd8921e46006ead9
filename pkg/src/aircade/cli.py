"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import ConfigError, ModelConfig, TrainConfig, config_digest, format_config, load_config
from .data import (
    DataError,
    NormStats,
    generate_synthetic,
    load_series,
    read_aqds_header,
    series_from_csv,
    write_series,
)
from .metrics import DEFAULT_THRESHOLD, METRIC_FIELDS
from .model import AirCadeModel, count_parameters
from .prompt import project_embeddings_2d
from .train import NumericError, evaluate, noisy, predict_windows, prepare_data, train, write_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

ABLATIONS = ("no_prompt", "no_adp", "no_agg", "no_diff", "no_cade", "no_es", "no_intv")

log = logging.getLogger("aircade")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aircade", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-data", help="write a synthetic AQDS series")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stations", type=int, default=10)
    p.add_argument("--steps", type=int, default=1000, help="series length T_total")
    p.add_argument("--aqi-channels", type=int, default=1)
    p.add_argument("--met-channels", type=int, default=13)
    p.add_argument("--step-seconds", type=int, default=10800)
    p.add_argument("--start-epoch", type=int, default=1_483_228_800)

    p = sub.add_parser("convert", help="long-format CSVs -> AQDS (+ channel sidecar)")
    p.add_argument("--aqi", required=True)
    p.add_argument("--met", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model on an AQDS series")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], type=_key_value,
                   metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--out-dir", required=True)
    for flag in ABLATIONS:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--sigma", type=float, help="future-weather noise (default: training value)")
    p.add_argument("--out-json")
    p.add_argument("--out-csv")

    p = sub.add_parser("predict", help="predictions for one window as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, required=True, help="index into all windows")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-embeddings", help="2-D PCA projections of the prompt tables")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("inspect", help="dump a dataset or checkpoint header as JSON")
    p.add_argument("path")
    return parser


# --- subcommands -----------------------------------------------------------


def cmd_generate(args) -> int:
    series = generate_synthetic(
        args.stations, args.steps, args.aqi_channels, args.met_channels, args.seed,
        args.step_seconds, args.start_epoch,
    )
    write_series(args.out, series)
    print(f"wrote {args.out}: T_total={series.T_total} N={series.N} c={series.c} f={series.f}")
    return EXIT_OK


def cmd_convert(args) -> int:
    series, manifest = series_from_csv(args.aqi, args.met)
    write_series(args.out, series)
    Path(str(args.out) + ".channels.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {args.out}: T_total={series.T_total} N={series.N} c={series.c} f={series.f}")
    return EXIT_OK


def cmd_train(args) -> int:
    series = load_series(args.data)
    items = dict(args.overrides)
    if args.seed is not None:
        items["seed"] = str(args.seed)
    if args.max_epochs is not None:
        items["max_epochs"] = str(args.max_epochs)
    for flag in ABLATIONS:
        if getattr(args, flag):
            items[flag] = "true"
    file_items = {}
    if args.config:
        from .config import parse_config_text

        file_items = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
    defaults = {"N": series.N, "c": series.c, "f": series.f}
    try:
        defaults["N_T"] = series.N_T
    except DataError:
        pass
    for key, value in defaults.items():
        if key not in items and key not in file_items:
            items[key] = str(value)
    model_cfg, train_cfg = load_config(args.config, items)

    data = prepare_data(series, model_cfg, train_cfg)
    model = AirCadeModel(model_cfg, seed=train_cfg.seed)
    log.info("model has %d parameters; %d/%d/%d windows", count_parameters(model),
             len(data.train), len(data.val), len(data.test))
    result = train(model, data.train, data.val, train_cfg)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "norm": data.stats.to_dict(),
        "train": dataclasses.asdict(train_cfg),
        "best_epoch": result.best_epoch,
        "digest": config_digest(model_cfg, train_cfg),
    }
    ckpt.save_checkpoint(out / "checkpoint.acde", model, meta)
    write_log(result.log, out / "train_log.csv")
    (out / "config.txt").write_text(format_config(model_cfg, train_cfg), encoding="utf-8")
    print(f"trained {result.steps} steps; best epoch {result.best_epoch}, "
          f"val MAE {result.best_val_mae:.6f}; wrote {out}")
    return EXIT_OK


def _load_for_eval(checkpoint_path, data_path):
    model, meta = ckpt.load_checkpoint(checkpoint_path)
    train_cfg = TrainConfig(**meta.get("train", {}))
    series = load_series(data_path)
    data = prepare_data(series, model.config, train_cfg)
    stats = NormStats.from_dict(meta["norm"]) if "norm" in meta else data.stats
    return model, meta, train_cfg, series, data, stats


def cmd_evaluate(args) -> int:
    model, meta, train_cfg, _, data, stats = _load_for_eval(args.checkpoint, args.data)
    samples = {"train": data.train, "val": data.val, "test": data.test, "all": data.windows}[args.split]
    sigma = train_cfg.noise_sigma if args.sigma is None else args.sigma
    report = evaluate(model, samples, stats, args.threshold, sigma, train_cfg.seed)
    row = {k: getattr(report, k) for k in METRIC_FIELDS}
    row.update(
        event_threshold=report.event_threshold, count=report.count, hits=report.hits,
        misses=report.misses, false_alarms=report.false_alarms, flags=";".join(report.flags),
        split=args.split, sigma=sigma,
        config_digest=meta.get("digest", config_digest(model.config)),
    )
    text = json.dumps(row, indent=2)
    if args.out_json:
        Path(args.out_json).write_text(text + "\n", encoding="utf-8")
    if args.out_csv:
        with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            writer.writeheader()
            writer.writerow(row)
    print(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _, train_cfg, series, data, stats = _load_for_eval(args.checkpoint, args.data)
    if not 0 <= args.window < len(data.windows):
        raise DataError(f"window {args.window} outside [0, {len(data.windows)})")
    sample = noisy([data.windows[args.window]], args.sigma, train_cfg.seed)
    pred = stats.denormalize_aqi(predict_windows(model, sample)[0])
    truth = stats.denormalize_aqi(sample[0].y)
    t_first = sample[0].t0 + model.config.T
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "time_epoch", "station", "channel", "prediction", "truth"])
        for t, n, ch in np.ndindex(pred.shape):
            when = series.start_epoch_seconds + (t_first + t) * series.step_seconds
            writer.writerow([t, when, series.station_ids[n], ch, repr(float(pred[t, n, ch])),
                             repr(float(truth[t, n, ch]))])
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    model, _ = ckpt.load_checkpoint(args.checkpoint)
    if model.emb is None:
        raise DataError("checkpoint was trained without prompt embeddings")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("e_D", "e_D_future", "e_S", "e_S_future"):
        coords = project_embeddings_2d(getattr(model.emb, name))
        with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "x", "y"])
            for i, (x, y) in enumerate(coords):
                writer.writerow([i, repr(float(x)), repr(float(y))])
    print(f"wrote projections to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    buf = Path(args.path).read_bytes()
    if buf[:4] == ckpt.MAGIC:
        meta, manifest, _ = ckpt.read_header(buf)
        info = {
            "kind": "checkpoint",
            "version": ckpt.VERSION,
            "metadata": meta,
            "parameters": [{"name": n, "shape": list(s), "offset": o} for n, s, o in manifest],
            "parameter_count": int(sum(int(np.prod(s)) for _, s, _ in manifest)),
        }
    else:
        header, _ = read_aqds_header(buf)
        info = {"kind": "aqds", **header}
    print(json.dumps(info, indent=2))
    return EXIT_OK


COMMANDS = {
    "generate-data": cmd_generate,
    "convert": cmd_convert,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "export-embeddings": cmd_export_embeddings,
    "inspect": cmd_inspect,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as err:
        print(f"aircade: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as err:
        print(f"aircade: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ckpt.CheckpointError, OSError, KeyError, ValueError) as err:
        print(f"aircade: data error: {err}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
