"""Command-line entry points: embed, synth-data, train, eval, bench, export.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, OVLWError

log = logging.getLogger("ovlw_detr")


def _read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None


def _read_vocab(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"vocabulary file not found: {path}")
    return [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


def _encoder_fn(spec: str, dim: int, seed: int, template: str):
    from .text_embedding import TableEncoder, load_embedding_table, make_encoder

    if spec.startswith("file:"):
        return TableEncoder(load_embedding_table(spec[5:]), template), f"file:{spec[5:]}"
    return make_encoder(spec, dim=dim, seed=seed), spec


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# -- commands ---------------------------------------------------------------

def cmd_embed(args) -> int:
    from .text_embedding import VocabularySpec, encode_vocabulary, save_embedding_table

    names = _read_vocab(args.vocab)
    vocab = VocabularySpec(tuple(names), args.template)
    fn, tag = _encoder_fn(args.encoder, args.dim, args.seed, args.template)
    table = encode_vocabulary(vocab, fn, source_tag=tag)
    save_embedding_table(table, args.out)
    print(f"wrote {len(table)} x {table.dim} table to {args.out}")
    return 0


def cmd_synth_data(args) -> int:
    from .data.synthetic import SyntheticShapesSpec, write_shapes_dataset

    spec = SyntheticShapesSpec.from_dict(_read_json(args.spec)) if args.spec else SyntheticShapesSpec()
    if args.seed is not None:
        spec.seed = args.seed
    paths = write_shapes_dataset(spec, args.out)
    print(json.dumps(paths, sort_keys=True))
    return 0


def _run_config(args):
    from .config import ModelConfig, RunConfig, preset

    base = preset(args.preset)
    cfg = RunConfig.from_dict(_read_json(args.config), base=base) if args.config else base
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    if args.encoder:
        cfg.encoder = args.encoder
    model = cfg.model.to_dict()
    if args.groups is not None:
        model["num_groups"] = args.groups
    if args.queries is not None:
        model["num_queries"] = args.queries
    cfg.model = ModelConfig.from_dict(model)
    if args.init_checkpoint:
        cfg.init_checkpoint = args.init_checkpoint
    return cfg


def cmd_train(args) -> int:
    from .train import Trainer

    cfg = _run_config(args)
    cfg.validate()
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    _write_json(Path(cfg.output_dir) / "run_config.json", cfg.to_dict())
    trainer = Trainer(cfg)
    if args.resume:
        trainer.resume(args.resume)
    history = trainer.fit(max_steps=args.max_steps)
    trainer.save(Path(cfg.output_dir) / "last.pt")
    if history:
        print(f"trained {len(history)} steps, final loss {history[-1]['total']:.4f}")
    return 0


def _eval_table(args, model):
    from .text_embedding import VocabularySpec, encode_vocabulary, load_embedding_table

    if args.table:
        table = load_embedding_table(args.table)
    elif args.vocab:
        fn, tag = _encoder_fn(args.encoder or "toy", model.cfg.text_dim, args.seed or 0, args.template)
        table = encode_vocabulary(VocabularySpec(tuple(_read_vocab(args.vocab)), args.template), fn, tag)
    else:
        raise ConfigError("eval needs --table or --vocab")
    if table.dim != model.cfg.text_dim:
        raise ConfigError(f"table dim {table.dim} does not match the checkpoint head dim {model.cfg.text_dim}")
    return table


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .detector import count_parameters
    from .evaluation.ap import assign_frequency_buckets, detections_to_results
    from .pipeline import category_image_counts, evaluate_model, load_source, oracle_detections

    model, payload = load_checkpoint(args.checkpoint)
    table = _eval_table(args, model)
    samples = load_source(args.data, args.format)
    buckets = None
    if args.train_data:
        counts = category_image_counts(load_source(args.train_data, args.format), table.names)
        buckets = assign_frequency_buckets(counts, args.r_max, args.c_max)
    dets = oracle_detections(samples, table) if args.oracle else None
    report, dets = evaluate_model(model, samples, table, top_n=args.topn, buckets=buckets, detections=dets)
    report.size_tag = model.cfg.size_tag
    report.params = count_parameters(model)
    report.extras["config_hash"] = payload["config_hash"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(f"OVLW-DETR-{model.cfg.size_tag}"), encoding="utf-8")
    _write_json(out / "detections.json", detections_to_results(dets))
    print(report.to_table(f"OVLW-DETR-{model.cfg.size_tag}"), end="")
    return 0


def cmd_bench(args) -> int:
    import numpy as np
    import torch

    from .checkpoint import load_checkpoint
    from .detector import count_parameters
    from .evaluation.latency import benchmark_latency
    from .pipeline import load_source, sample_image

    model, payload = load_checkpoint(args.checkpoint)
    table = _eval_table(args, model)
    if args.data:
        images = [sample_image(s) for s in load_source(args.data, args.format)[: max(1, args.trials)]]
    else:
        gen = torch.Generator().manual_seed(args.seed or 0)
        size = model.cfg.image_size
        images = [torch.rand(size, size, 3, generator=gen).numpy().astype(np.float32) for _ in range(4)]
    stats = benchmark_latency(model, table, images, trials=args.trials, warmup=args.warmup, top_n=args.topn)
    report = stats.to_dict()
    report["checkpoint_config_hash"] = payload["config_hash"]
    report["params"] = count_parameters(model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "latency.json", report)
    print(f"{stats.size_tag}: mean {stats.mean_ms:.2f} ms, median {stats.median_ms:.2f} ms, "
          f"p90 {stats.p90_ms:.2f} ms over {stats.trials} trials, {stats.flops / 1e9:.3f} GFLOPs")
    return 0


def cmd_export(args) -> int:
    from .checkpoint import export_weights

    print(json.dumps(export_weights(args.checkpoint, args.out), sort_keys=True))
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ovlw-detr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("embed", help="encode a vocabulary file into an embedding table")
    e.add_argument("vocab", help="text file, one category phrase per line")
    e.add_argument("--encoder", default="toy", help="toy, random or file:<table>")
    e.add_argument("--dim", type=int, default=256)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--template", default="a photo of a {}")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    s = sub.add_parser("synth-data", help="write the synthetic shapes dataset")
    s.add_argument("--config", dest="spec", help="JSON SyntheticShapesSpec")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_data)

    t = sub.add_parser("train", help="train a detector")
    t.add_argument("--config", help="JSON run config, merged over the preset")
    t.add_argument("--preset", choices=["paper-scale", "desk-scale"], default="desk-scale")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--encoder")
    t.add_argument("--groups", type=int)
    t.add_argument("--queries", type=int)
    t.add_argument("--init-checkpoint")
    t.add_argument("--resume", help="training checkpoint to continue from")
    t.add_argument("--max-steps", type=int)
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("eval", cmd_eval, "zero-shot AP evaluation"),
                               ("bench", cmd_bench, "batch-1 latency benchmark")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("checkpoint")
        c.add_argument("--table", help="embedding table file")
        c.add_argument("--vocab", help="vocabulary file to encode on the fly")
        c.add_argument("--encoder", help="encoder for --vocab: toy, random or file:<table>")
        c.add_argument("--template", default="a photo of a {}")
        c.add_argument("--seed", type=int)
        c.add_argument("--data", required=name == "eval", help="coco-like annotation file")
        c.add_argument("--format", default="coco", choices=["coco", "odvg"])
        c.add_argument("--topn", type=int, default=300)
        c.add_argument("--out", required=True)
        c.set_defaults(func=fn)
        if name == "eval":
            c.add_argument("--train-data", help="training annotations for frequency buckets")
            c.add_argument("--r-max", type=int, default=10)
            c.add_argument("--c-max", type=int, default=100)
            c.add_argument("--oracle", action="store_true", help="score ground truth as detections")
        else:
            c.add_argument("--trials", type=int, default=20)
            c.add_argument("--warmup", type=int, default=5)

    x = sub.add_parser("export", help="export checkpoint weights as config.json + weights.npz")
    x.add_argument("checkpoint")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OVLWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
