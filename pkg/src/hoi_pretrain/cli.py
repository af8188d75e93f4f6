"""Command-line entry point: ``hoi-pretrain <command> ...``.

Exit codes: 0 success, 1 bad input data (config, manifest, log, checkpoint
or a non-finite loss), 2 usage or internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from typing import List, Optional

import numpy as np

OUTPUT_ROOT_ENV = "HOI_PRETRAIN_OUTPUT"

EXIT_OK, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2

log = logging.getLogger("hoi_pretrain")


class DataError(Exception):
    """Wraps any input problem that should map to exit code 1."""


def resolve_output(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _load_image(path: str) -> np.ndarray:
    from .data.manifest import _load_media

    try:
        return _load_media(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands

def cmd_pretrain(args) -> int:
    import torch

    from .config import dump_run_config, load_run_config
    from .training import LOSS_LOG, Trainer, evaluate

    config = load_run_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.steps is not None:
        config.optim.total_steps = args.steps
    if args.fusion_mode is not None:
        config.fusion_mode = args.fusion_mode
    if args.output is not None:
        config.output_dir = args.output
    config.check()
    out_dir = resolve_output(config.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    torch.set_num_threads(1)
    dump_run_config(config, os.path.join(out_dir, "config.yaml"))
    trainer = Trainer(config, output_dir=out_dir)
    log_path = os.path.join(out_dir, LOSS_LOG)
    log.info("training %d steps, config hash %s", config.optim.total_steps, trainer.config_hash)
    trainer.train(log_path=log_path)
    trainer.save(os.path.join(out_dir, "final.ckpt"))
    records = [r for recs in trainer.datasets.values() for r in recs]
    metrics = evaluate(trainer.model, records, config.loss)
    summary = {"steps": trainer.state.steps, "processed": trainer.state.processed,
               "skipped": trainer.state.skipped, "skips": dict(trainer.state.skips),
               "config_hash": trainer.config_hash, "metrics": metrics}
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _model_from_checkpoint(path: str):
    from .config import ModelConfig
    from .model import HOIPretrainModel
    from .transfer import load_checkpoint

    ckpt = load_checkpoint(path)
    if "model_config" not in ckpt.metadata:
        raise DataError(f"{path}: checkpoint carries no model_config")
    model = HOIPretrainModel(ModelConfig.from_dict(ckpt.metadata["model_config"]))
    dtype = next(iter(ckpt.parameters.values())).dtype
    model.to(dtype)
    model.load_state_dict(ckpt.parameters)
    return model


def cmd_probe(args) -> int:
    import torch

    from .training import probe

    model = _model_from_checkpoint(args.checkpoint)
    image = _load_image(args.image)
    record = probe(model, torch.as_tensor(image), args.threshold)
    record["checkpoint"] = args.checkpoint
    record["image"] = args.image
    text = json.dumps(record, sort_keys=True)
    if args.output:
        out = resolve_output(args.output)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if record["empty_rpq"]:
        log.warning("no query scored above the threshold %.6g; verb outputs are empty", record["threshold"])
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import overlay_tables, plot_convergence, read_loss_log, smoothed_table, table_to_csv

    runs = {}
    for i, path in enumerate(args.logs):
        name = args.labels[i] if args.labels and i < len(args.labels) else os.path.basename(os.path.dirname(os.path.abspath(path))) or f"run{i}"
        if name in runs:
            name = f"{name}-{i}"
        runs[name] = smoothed_table(read_loss_log(path), args.smoothing)
    out_dir = resolve_output(args.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    png = os.path.join(out_dir, "convergence.png")
    csv_path = os.path.join(out_dir, "convergence.csv")
    if len(runs) == 1:
        table = next(iter(runs.values()))
        plot_convergence(runs, png, args.columns)
    else:
        table = overlay_tables(runs, args.columns[0] if args.columns else "total")
        plot_convergence(runs, png, args.columns or ["total"])
    text = table_to_csv(table)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    if args.print_table:
        sys.stdout.write(text)
    print(json.dumps({"image": png, "table": csv_path, "rows": int(len(table["step"]))}))
    return EXIT_OK


def cmd_parse_captions(args) -> int:
    from .captions.io import parse_caption_file

    out = resolve_output(args.output)
    n_cap, n_trip = parse_caption_file(args.input, out)
    print(json.dumps({"captions": n_cap, "triplets": n_trip, "output": out}))
    return EXIT_OK


def cmd_build_bank(args) -> int:
    from .captions.bank import build_negative_bank
    from .captions.io import read_triplet_records
    from .captions.text import HashingTextEncoder, embed_texts

    records = read_triplet_records(args.triplets)
    if not records:
        raise DataError(f"{args.triplets}: no triplets to build a bank from")
    ids = [r["triplet_id"] for r in records]
    prompts = [r["prompt"] for r in records]
    emb = embed_texts(prompts, HashingTextEncoder(args.dim))
    bank = build_negative_bank(emb, args.clusters, args.per_cluster, args.seed, ids, prompts)
    out = resolve_output(args.output)
    bank.save(out)
    sizes = [len(v) for v in bank.per_cluster_samples.values()]
    print(json.dumps({"triplets": len(ids), "clusters": bank.num_clusters, "sampled": sum(sizes),
                      "output": out}))
    return EXIT_OK


def cmd_transfer(args) -> int:
    import torch

    from .config import ModelConfig, load_run_config
    from .model import HOIPretrainModel
    from .transfer import Checkpoint, apply_init_strategy, load_checkpoint, save_checkpoint

    source = load_checkpoint(args.source)
    if args.target:
        target = load_checkpoint(args.target)
    else:
        if args.target_config:
            model_cfg = load_run_config(args.target_config).model
        else:
            model_cfg = ModelConfig.from_dict(source.metadata.get("model_config", {}))
        torch.manual_seed(args.seed)
        target = Checkpoint.from_model(HOIPretrainModel(model_cfg))
    params, report = apply_init_strategy(source, target, args.strategy)
    meta = dict(target.metadata)
    meta.update({"init_strategy": args.strategy, "init_source": os.path.abspath(args.source)})
    out = resolve_output(args.output)
    save_checkpoint(Checkpoint(params, target.component_tags, meta), out)
    report_dict = report.to_dict()
    report_dict["copied_tags"] = sorted(report.copied_tags(target.component_tags))
    if args.report:
        with open(resolve_output(args.report), "w", encoding="utf-8") as fh:
            json.dump(report_dict, fh, indent=2, sort_keys=True)
    print(json.dumps({"output": out, "copied": len(report.copied), "skipped": len(report.skipped),
                      "shape_mismatches": len(report.shape_mismatches),
                      "copied_tags": report_dict["copied_tags"],
                      "fallback_interaction_from_detection": report.fallback_interaction_from_detection}))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .transfer import STRATEGIES

    parser = argparse.ArgumentParser(prog="hoi-pretrain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run mixed-batch pre-training from a YAML run config")
    p.add_argument("config")
    p.add_argument("--output", help=f"run directory (relative paths resolve under ${OUTPUT_ROOT_ENV})")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--fusion-mode", choices=("max", "avg", "none"))
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="export RPQs, verb scores and attention maps for one image")
    p.add_argument("checkpoint")
    p.add_argument("image", help=".npy [H, W, C] array or an image file")
    p.add_argument("--threshold", type=float)
    p.add_argument("--output")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("plot", help="convergence curves and table from one or more loss logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--smoothing", type=int, default=1)
    p.add_argument("--labels", nargs="*")
    p.add_argument("--columns", nargs="*")
    p.add_argument("--output-dir", default="plots")
    p.add_argument("--print-table", action="store_true")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("parse-captions", help="extract HOI triplets from a JSONL caption file")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_parse_captions)

    p = sub.add_parser("build-bank", help="cluster triplet prompts and sample the negative bank")
    p.add_argument("triplets")
    p.add_argument("output")
    p.add_argument("--clusters", type=int, default=100)
    p.add_argument("--per-cluster", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=64)
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("transfer", help="initialize a downstream layout from a pre-trained checkpoint")
    p.add_argument("source")
    p.add_argument("output")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--target", help="checkpoint whose layout and values are the target initialization")
    p.add_argument("--target-config", help="run config whose model section defines a fresh target")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_transfer)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    from .captions.io import RecordError
    from .captions.text import TextEncodingError
    from .config import ConfigError
    from .data.manifest import ManifestError
    from .losses import NonFiniteLossError
    from .plotting import LogFormatError
    from .transfer import CheckpointError, TransferError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    data_errors = (DataError, ConfigError, ManifestError, RecordError, TextEncodingError, LogFormatError,
                   CheckpointError, TransferError, NonFiniteLossError, FileNotFoundError, IsADirectoryError)
    try:
        return args.func(args)
    except data_errors as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001 - last-resort mapping to the internal-error exit code
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
