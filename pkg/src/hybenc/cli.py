"""Command-line entry point.

One subcommand per run: train, finetune, eval, probe-padding, bench,
inspect-checkpoint, gen-corpus. Flag precedence is flags > config file >
built-in defaults. Progress and the resolved configuration are emitted as
line-delimited JSON, both to stderr and to a run.log next to the outputs.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint
from .data import RESERVED, load_corpus, save_corpus, synthetic_corpus
from .diagnostics import PSM_MODES, emit_report, length_scaling_bench, padding_drift_probe
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ClassifierModel, MLMModel, load_state
from .optim import TrainConfig
from .train import evaluate_classifier, finetune_loop, train_loop

_POOL_NAMES = {"map": "MAP", "attn": "ATTN", "cls": "CLS", "maskedmean": "MaskedMean"}
_DTYPES = {"f32": "float32", "f64": "float64"}


class _Logger:
    """Line-delimited JSON events to stderr and (if set) a log file."""

    def __init__(self, path: str | None):
        self.f = open(path, "a", encoding="utf-8") if path else None

    def __call__(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True)
        print(line, file=sys.stderr)
        if self.f:
            self.f.write(line + "\n")
            self.f.flush()

    def close(self) -> None:
        if self.f:
            self.f.close()


def _csv_ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x]


def _csv_strs(s: str) -> list[str]:
    return [x for x in s.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybenc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")
        if config:
            sp.add_argument("--config", default=None, help="JSON config file (flags override it)")
            sp.add_argument("--pattern", default=None, help="layer pattern over {M,T}, e.g. MMTMMT")
            sp.add_argument("--dtype", choices=("f32", "f64"), default=None, help="compute dtype")

    t = sub.add_parser("train", help="MLM pretraining on a corpus (synthetic by default)")
    common(t)
    t.add_argument("--steps", type=int, default=None, help="optimizer steps (default 2000)")
    t.add_argument("--corpus", default=None, help="corpus file; omitted: synthetic copy-grammar")
    t.add_argument("--out", default="runs/train", help="output directory (default runs/train)")

    f = sub.add_parser("finetune", help="classification fine-tune from a pretrained checkpoint")
    common(f, config=False)
    f.add_argument("--checkpoint", required=True, help="pretrained MLM checkpoint")
    f.add_argument("--steps", type=int, default=200, help="fine-tune steps (default 200)")
    f.add_argument("--pool", choices=sorted(_POOL_NAMES), default="map", help="pooling mode (default map)")
    f.add_argument("--out", default="runs/finetune", help="output directory (default runs/finetune)")

    e = sub.add_parser("eval", help="evaluate a fine-tuned classifier checkpoint")
    common(e, config=False)
    e.add_argument("--checkpoint", required=True, help="classifier checkpoint from finetune")
    e.add_argument("--n", type=int, default=256, help="held-out examples (default 256)")

    pr = sub.add_parser("probe-padding", help="padding-drift probe over psm modes and pad lengths")
    common(pr)
    pr.add_argument("--pads", type=_csv_ints, default=[0, 8, 16, 32, 64], help="pad counts (default 0,8,16,32,64)")
    pr.add_argument("--psm", type=_csv_strs, default=list(PSM_MODES), help="psm modes (default all four)")
    pr.add_argument("--samples", type=int, default=8, help="sequences per cell (default 8)")
    pr.add_argument("--init-std", type=float, default=None, help="override weight init std")
    pr.add_argument("--out", default="drift.csv", help="report path (default drift.csv)")
    pr.add_argument("--format", choices=("csv", "json"), default=None, help="report format (default by extension)")

    b = sub.add_parser("bench", help="forward wall-time scaling over sequence lengths")
    common(b)
    b.add_argument("--patterns", type=_csv_strs, default=["MMMMMMMMMMMM", "TTTTTTTTTTTT", "MMTMMTMMTMMT"],
                   help="layer patterns to time")
    b.add_argument("--lengths", type=_csv_ints, default=[128, 512, 1024, 2048, 4096], help="sequence lengths")
    b.add_argument("--repeats", type=int, default=20, help="timed repeats per cell (default 20, min 20)")
    b.add_argument("--warmups", type=int, default=5, help="warmup runs per cell (default 5, min 5)")
    b.add_argument("--out", default="scaling.csv", help="report path (default scaling.csv)")
    b.add_argument("--format", choices=("csv", "json"), default=None, help="report format (default by extension)")

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint's manifest and config")
    i.add_argument("--checkpoint", required=True, help="checkpoint path")

    g = sub.add_parser("gen-corpus", help="write a synthetic corpus file")
    g.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")
    g.add_argument("--kind", choices=("copy-grammar", "bigram"), default="copy-grammar",
                   help="corpus family (default copy-grammar)")
    g.add_argument("--n", type=int, default=2000, help="number of sequences (default 2000)")
    g.add_argument("--vocab", type=int, default=64, help="vocabulary size incl. reserved ids (default 64)")
    g.add_argument("--out", default="corpus.txt", help="output file (default corpus.txt)")
    return p


def resolve_config(args) -> tuple[EncoderConfig, dict]:
    """Merge built-in defaults, an optional config file, then flags."""
    enc: dict = {}
    train: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            raw = json.load(f)
        if "encoder" in raw or "train" in raw:
            enc = dict(raw.get("encoder", {}))
            train = dict(raw.get("train", {}))
        else:
            enc = dict(raw)
    if getattr(args, "pattern", None):
        enc["pattern"] = args.pattern
        enc["depth"] = len(args.pattern)
    if getattr(args, "dtype", None):
        enc["dtype"] = _DTYPES[args.dtype]
    if getattr(args, "init_std", None):
        enc["init_std"] = args.init_std
    if getattr(args, "steps", None) is not None:
        train["total_steps"] = args.steps
    train["seed"] = args.seed
    return EncoderConfig.from_dict(enc), train


def _fmt_for(path: str, flag: str | None) -> str:
    if flag:
        return flag
    return "json" if path.endswith(".json") else "csv"


def cmd_train(args) -> int:
    config, train_kw = resolve_config(args)
    tcfg = TrainConfig(**train_kw)
    os.makedirs(args.out, exist_ok=True)
    log = _Logger(os.path.join(args.out, "run.log"))
    log({"event": "config", "encoder": json.loads(config.to_json()), "train": vars(tcfg)})
    if args.corpus:
        seqs, pre_encoded = load_corpus(args.corpus)
        if not pre_encoded:
            raise ConfigError("text corpora must be pre-encoded integer lines for train")
    else:
        seqs = synthetic_corpus("copy-grammar", config.V, 2000, args.seed)
    model = MLMModel(config, seed=args.seed)
    result = train_loop(model, seqs, tcfg, args.out, log=lambda ev: log({"event": "step", **ev}))
    log({"event": "done", **result})
    log.close()
    return 0


def cmd_finetune(args) -> int:
    arrays, cfg_dict, _ = checkpoint.load(args.checkpoint)
    config = EncoderConfig.from_dict(cfg_dict["encoder"])
    os.makedirs(args.out, exist_ok=True)
    log = _Logger(os.path.join(args.out, "run.log"))
    log({"event": "config", "encoder": json.loads(config.to_json()), "pool": args.pool})
    model = ClassifierModel(config, n_classes=2, seed=args.seed, pooling=_POOL_NAMES[args.pool])
    # initialize the encoder from the pretrained arrays; heads start fresh
    enc_names = set(model.encoder.named_parameters())
    for name, p in model.encoder.named_parameters().items():
        if name in arrays:
            p.data = arrays[name].astype(p.data.dtype, copy=True)
    missing = enc_names - set(arrays)
    if missing:
        raise ConfigError(f"checkpoint lacks encoder arrays: {sorted(missing)[:3]}")
    examples = _classification_examples(config.V, 1024, args.seed)
    tcfg = TrainConfig(total_steps=args.steps, seed=args.seed)
    result = finetune_loop(model, examples, tcfg, args.out, log=lambda ev: log({"event": "step", **ev}))
    log({"event": "done", **result})
    log.close()
    return 0


def _classification_examples(V: int, n: int, seed: int) -> list[tuple[list[int], int]]:
    """Synthetic binary task: the label is the parity of the first token."""
    seqs = synthetic_corpus("copy-grammar", V, n, seed)
    return [(s, s[0] % 2) for s in seqs]


def cmd_eval(args) -> int:
    arrays, cfg_dict, extra = checkpoint.load(args.checkpoint)
    config = EncoderConfig.from_dict(cfg_dict["encoder"])
    if "n_classes" not in extra:
        raise ConfigError("eval expects a classifier checkpoint produced by finetune")
    model = ClassifierModel(config, n_classes=int(extra["n_classes"]), seed=args.seed,
                            pooling=extra.get("pooling", "MAP"))
    load_state(model, arrays)
    examples = _classification_examples(config.V, args.n, args.seed + 1)
    acc = evaluate_classifier(model, examples)
    print(json.dumps({"event": "eval", "n": len(examples), "accuracy": acc}))
    return 0


def cmd_probe(args) -> int:
    config, _ = resolve_config(args)
    for mode in args.psm:
        if mode not in PSM_MODES:
            raise ConfigError(f"--psm entries must be in {PSM_MODES}, got {mode!r}")
    log = _Logger(os.path.splitext(args.out)[0] + ".log")
    log({"event": "config", "encoder": json.loads(config.to_json()), "pads": args.pads, "psm": args.psm})
    rows = padding_drift_probe(config, pads=args.pads, psm_modes=args.psm,
                               n_samples=args.samples, seed=args.seed)
    emit_report(rows, args.out, _fmt_for(args.out, args.format))
    log({"event": "done", "rows": len(rows), "out": args.out})
    log.close()
    return 0


def cmd_bench(args) -> int:
    base = None
    if args.config or args.dtype:
        base, _ = resolve_config(args)
    log = _Logger(os.path.splitext(args.out)[0] + ".log")
    log({"event": "config", "patterns": args.patterns, "lengths": args.lengths,
         "repeats": args.repeats, "warmups": args.warmups,
         "encoder": json.loads(base.to_json()) if base else "bench-defaults"})
    rows = length_scaling_bench(args.patterns, args.lengths, repeats=args.repeats,
                                warmups=args.warmups, config_base=base, seed=args.seed)
    emit_report(rows, args.out, _fmt_for(args.out, args.format))
    log({"event": "done", "rows": len(rows), "out": args.out})
    log.close()
    return 0


def cmd_inspect(args) -> int:
    print(json.dumps(checkpoint.inspect(args.checkpoint), indent=2))
    return 0


def cmd_gen_corpus(args) -> int:
    seqs = synthetic_corpus(args.kind, args.vocab, args.n, args.seed)
    save_corpus(args.out, seqs)
    print(json.dumps({"event": "gen-corpus", "out": args.out, "n": len(seqs),
                      "vocab": args.vocab, "reserved": len(RESERVED)}))
    return 0


_COMMANDS = {
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "probe-padding": cmd_probe,
    "bench": cmd_bench,
    "inspect-checkpoint": cmd_inspect,
    "gen-corpus": cmd_gen_corpus,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help, 2 for usage errors; report usage as 1
        return 0 if e.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # runtime failure contract: report and exit 2
        print(json.dumps({"event": "error", "type": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
