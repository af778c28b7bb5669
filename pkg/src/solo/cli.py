"""Command line entry point: ``solo {ingest,account,pack,train,inspect}``."""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .encoding import Patch, span_geometry, vision_spans
from .errors import ConfigurationError, SoloError
from .ingest import CORPUS_FILE, ingest
from .mixture import account_tokens, load_mixture_spec, plan_schedule
from .model import ModelConfig, TrainConfig
from .packfile import read_corpus, read_packed, write_packed
from .packing import pack_examples
from .preprocess import PreprocessConfig
from .tokenizer import load_tokenizer
from .train import train

logger = logging.getLogger("solo")


def _common(parser):
    parser.add_argument("--patch-size", type=int, default=32)
    parser.add_argument("--max-resolution", type=int, default=1024)
    parser.add_argument("--seq-len", type=int, default=32768)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--stage", type=int, choices=(1, 2, 3), default=None)
    parser.add_argument("--text-blend-multiplier", type=float, default=None)
    parser.add_argument("--tokenizer", default=None, help="JSON vocabulary file; byte tokenizer if omitted")
    parser.add_argument("--out", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="solo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="decode, resize, patchify and tokenize a manifest")
    _common(p)
    p.add_argument("manifest")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-failures", type=int, default=None,
                   help="exit nonzero when more records than this fail")

    p = sub.add_parser("account", help="text/vision token accounting for a mixture spec")
    _common(p)
    p.add_argument("spec")

    p = sub.add_parser("pack", help="pack ingested corpora into fixed-length sequences")
    _common(p)
    p.add_argument("--corpus", action="append", required=True, help="ingested corpus directory")
    p.add_argument("--mixture", default=None, help="mixture spec ordering the draws")
    p.add_argument("--num-examples", type=int, default=None)
    p.add_argument("--mode", choices=("pretrain", "supervised"), default="pretrain")

    p = sub.add_parser("train", help="train the toy model on packed sequences")
    _common(p)
    p.add_argument("packed", nargs="+")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--peak-lr", type=float, default=5e-5)
    p.add_argument("--min-lr", type=float, default=5e-6)
    p.add_argument("--warmup-steps", type=int, default=200)
    p.add_argument("--weight-decay", type=float, default=0.1)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--ffn-dim", type=int, default=256)

    p = sub.add_parser("inspect", help="human-readable dump of a packed file")
    _common(p)
    p.add_argument("packed")
    p.add_argument("--json", action="store_true", help="print machine-readable output")
    return parser


def _preprocess_config(args):
    return PreprocessConfig(args.patch_size, args.max_resolution)


def cmd_ingest(args):
    if not args.out:
        raise ConfigurationError("ingest requires --out")
    tok = load_tokenizer(args.tokenizer)
    _, summary = ingest(args.manifest, args.out, tok, _preprocess_config(args), args.workers)
    for name, stats in summary.datasets.items():
        print(f"{name}: {stats['records']} records, {stats['failures']} failures, "
              f"{stats['elements']} elements")
    print(f"total: {summary.records} records, {summary.failure_count} failures")
    if args.max_failures is not None and summary.failure_count > args.max_failures:
        logger.error("%d failures exceed --max-failures %d", summary.failure_count, args.max_failures)
        return 1
    return 0


def _load_spec(args):
    spec = load_mixture_spec(args.spec if args.command == "account" else args.mixture)
    changes = {}
    if args.stage is not None:
        changes["stage"] = args.stage
    if args.text_blend_multiplier is not None:
        changes["text_blend_multiplier"] = args.text_blend_multiplier
    if args.seed is not None:
        changes["seed"] = args.seed
    return replace(spec, **changes) if changes else spec


def cmd_account(args):
    spec = _load_spec(args)
    account = account_tokens(spec.entries, load_tokenizer(args.tokenizer), _preprocess_config(args))
    print(f"stage {spec.stage}")
    print(account.format_table())
    report = {"stage": spec.stage, **account.to_dict()}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return 0


def cmd_pack(args):
    if not args.out:
        raise ConfigurationError("pack requires --out")
    examples = []
    patch_size = None
    for d in args.corpus:
        ps, exs = read_corpus(os.path.join(d, CORPUS_FILE))
        if patch_size is not None and ps != patch_size:
            raise ConfigurationError(f"corpus {d} has patch size {ps}, expected {patch_size}")
        patch_size = ps
        examples.extend(exs)
    if args.mixture:
        spec = _load_spec(args)
        by_name = {}
        for ex in examples:
            by_name.setdefault(ex.source_dataset, []).append(ex)
        missing = [e.name for e in spec.entries if e.weight > 0 and e.name not in by_name]
        if missing:
            raise ConfigurationError(f"no ingested examples for datasets {missing}")
        total = args.num_examples or len(examples)
        sizes = {name: len(v) for name, v in by_name.items()}
        ordered = [by_name[d.dataset][d.index] for d in plan_schedule(spec, total, sizes)]
    else:
        ordered = examples[:args.num_examples] if args.num_examples else examples
    seqs = list(pack_examples(ordered, args.seq_len, args.mode))
    write_packed(args.out, seqs, patch_size or args.patch_size)
    print(f"packed {len(ordered)} examples into {len(seqs)} sequences of {args.seq_len}")
    return 0


def cmd_train(args):
    if not args.out:
        raise ConfigurationError("train requires --out")
    seqs = []
    patch_size = None
    for path in args.packed:
        ps, s = read_packed(path)
        patch_size = ps
        seqs.extend(s)
    if not seqs:
        raise ConfigurationError("packed input holds no sequences")
    vocab = load_tokenizer(args.tokenizer).vocab_size
    mc = ModelConfig(args.d_model, args.n_layers, args.n_heads, args.ffn_dim, vocab,
                     patch_size, max(len(s) for s in seqs))
    tc = TrainConfig(args.peak_lr, args.min_lr, args.warmup_steps, args.steps, args.weight_decay,
                     args.batch_size, checkpoint_every=args.checkpoint_every, dtype=args.dtype)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "loss_log.jsonl")
    result = train(seqs, mc, tc, seed=args.seed or 0, out_dir=args.out, log_path=log_path)
    last = result.loss_log[-1]
    print(f"trained {tc.total_steps} steps; final loss {last['loss']:.4f}; "
          f"checkpoint {result.checkpoints[-1]}; log {log_path}")
    return 0


def describe_sequence(seq):
    spans = []
    for start, end in vision_spans(seq.elements):
        rows, cols = span_geometry(seq.elements, start, end)
        spans.append({"start": start, "end": end, "rows": rows, "cols": cols,
                      "elements": end - start + 1})
    segments = []
    for sid, start, stop in seq.segments():
        segments.append({
            "segment": sid, "start": start, "length": stop - start,
            "patches": sum(isinstance(e, Patch) for e in seq.elements[start:stop]),
            "loss_positions": sum(seq.loss_mask[start:stop]),
        })
    n_pad = int(seq.pad_flags.sum())
    return {
        "length": len(seq),
        "padding": n_pad,
        "loss_mask_density": sum(seq.loss_mask) / len(seq) if len(seq) else 0.0,
        "segments": segments,
        "vision_spans": spans,
    }


def cmd_inspect(args):
    patch_size, seqs = read_packed(args.packed)
    info = [describe_sequence(s) for s in seqs]
    if args.json:
        print(json.dumps({"patch_size": patch_size, "sequences": info}, indent=2))
        return 0
    print(f"{args.packed}: {len(seqs)} sequences, patch size {patch_size}")
    for i, d in enumerate(info):
        print(f"sequence {i}: length {d['length']}, padding {d['padding']}, "
              f"{len(d['segments'])} segments, loss-mask density {d['loss_mask_density']:.4f}, "
              f"{len(d['vision_spans'])} vision spans")
        for s in d["segments"]:
            print(f"  segment {s['segment']}: [{s['start']}, {s['start'] + s['length']}) "
                  f"{s['patches']} patches, {s['loss_positions']} loss positions")
        for v in d["vision_spans"]:
            print(f"  span [{v['start']}, {v['end']}]: {v['rows']}x{v['cols']} grid, "
                  f"{v['elements']} span elements")
    return 0


COMMANDS = {"ingest": cmd_ingest, "account": cmd_account, "pack": cmd_pack,
            "train": cmd_train, "inspect": cmd_inspect}


def main(argv=None):
    logging.basicConfig(level=os.environ.get("SOLO_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (SoloError, OSError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
