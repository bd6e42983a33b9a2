"""Command line entry point: ``cake <command> ...``."""

from __future__ import annotations

import os

_threads = os.environ.get("CAKE_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from .corpus import (  # noqa: E402
    CONTEXT_CAP, CorpusError, RawDialogue, SyntheticSpec, Turn, Vocabulary, build_vocab, encode_corpus,
    encode_example, generate_synthetic, load_jsonl, requires_copy, save_jsonl, tokenize,
)
from .metrics import MetricReport, evaluate_corpus  # noqa: E402

log = logging.getLogger("cake")


class CommandError(Exception):
    pass


def _need_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"{what} not found: {path}")
    return p


def _load_config(path):
    from .training import TrainConfig

    if path is None:
        return TrainConfig()
    try:
        obj = json.loads(_need_file(path, "config").read_text())
    except json.JSONDecodeError as e:
        raise CommandError(f"config is not valid JSON: line {e.lineno}: {e.msg}") from None
    if not isinstance(obj, dict):
        raise CommandError("config must be a JSON object")
    try:
        return TrainConfig.from_dict(obj)
    except (TypeError, ValueError) as e:
        raise CommandError(str(e)) from None


def _vocab_for(ckpt_path, vocab_path):
    path = Path(vocab_path) if vocab_path else Path(ckpt_path).with_name("vocab.txt")
    return Vocabulary.load(_need_file(path, "vocabulary"))


def _load_model(ckpt_path, vocab_path=None):
    from .training import CheckpointError, load_checkpoint

    _need_file(ckpt_path, "checkpoint")
    vocab = _vocab_for(ckpt_path, vocab_path)
    try:
        ck = load_checkpoint(ckpt_path)
        return ck.build_model(vocab), ck.config, vocab
    except (CheckpointError, KeyError, ValueError) as e:
        raise CommandError(f"cannot load checkpoint {ckpt_path}: {e}") from None


# --------------------------------------------------------------------------


def cmd_preprocess(args):
    src = _need_file(args.input, "corpus")
    corpus = load_jsonl(src)
    if args.vocab:
        vocab = Vocabulary.load(_need_file(args.vocab, "vocabulary"))
    else:
        vocab = build_vocab(corpus, args.vocab_cap)
    examples = encode_corpus(corpus, vocab, args.background_mode, args.context_cap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.vocab:
        vocab.save(out / "vocab.txt")
    stats = {
        "examples": len(examples),
        "vocab_size": len(vocab),
        "mean_background_len": sum(len(e.background_ids) for e in examples) / len(examples),
        "mean_context_len": sum(len(e.context_ids) for e in examples) / len(examples),
        "responses_needing_copy": sum(any(i >= len(vocab) for i in e.response_ids) for e in examples),
        "background_mode": args.background_mode,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(json.dumps(stats, sort_keys=True))


def cmd_gen_synthetic(args):
    sizes = [int(s) for s in args.split.split(",")]
    if len(sizes) != 3 or min(sizes) < 1:
        raise CommandError("--split needs three positive sizes, e.g. 2000,200,200")
    spec = SyntheticSpec(num_examples=sum(sizes), facts_per_background=args.facts, seed=args.seed,
                         span_length=args.span_length, oov_rate=args.oov_rate)
    corpus = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    a, b = sizes[0], sizes[0] + sizes[1]
    for name, part in (("train", corpus[:a]), ("dev", corpus[a:b]), ("test", corpus[b:])):
        save_jsonl(part, out / f"{name}.jsonl")
    print(json.dumps({"train": sizes[0], "dev": sizes[1], "test": sizes[2], "seed": args.seed,
                      "copy_fraction": sum(map(requires_copy, corpus)) / len(corpus)}, sort_keys=True))


def _train_inputs(args, config):
    train_raw = load_jsonl(_need_file(args.train, "train corpus"))
    dev_raw = load_jsonl(_need_file(args.dev, "dev corpus"))
    vocab = build_vocab(train_raw, config.vocab_cap)
    enc = lambda c: encode_corpus(c, vocab, config.background_mode, config.context_cap)
    return enc(train_raw), enc(dev_raw), vocab


def cmd_train(args):
    from dataclasses import replace

    from .training import save_checkpoint, train

    config = _load_config(args.config)
    if args.variant:
        config = replace(config, variant=args.variant)
        config.validate()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    train_set, dev_set, vocab = _train_inputs(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    def report(rec):
        d = rec["dev"]
        print(f"epoch {rec['epoch']} loss {rec['train_loss']:.4f} dev BLEU {d['BLEU']:.2f} "
              f"ROUGE-1 {d['ROUGE-1']:.2f} ROUGE-L {d['ROUGE-L']:.2f}", flush=True)

    res = train(config, train_set, dev_set, vocab, log_path=out / "log.jsonl", on_epoch=report)
    save_checkpoint(out / "model.ckpt", res.model, config, res.optimizer,
                    [{k: r[k] for k in ("epoch", "train_loss", "score")} for r in res.log],
                    {"best_epoch": res.best_epoch})
    print(json.dumps({"checkpoint": str(out / "model.ckpt"), "best_epoch": res.best_epoch,
                      "best_score": res.best_score}))


def _read_lines(path):
    return [tokenize(line) for line in _need_file(path, "file").read_text(encoding="utf-8").splitlines()]


def cmd_eval(args):
    mode = args.mode
    if args.hyp:
        if not args.ref:
            raise CommandError("--hyp needs at least one --ref file")
        hyps = _read_lines(args.hyp)
        ref_files = [_read_lines(r) for r in args.ref]
        if any(len(r) != len(hyps) for r in ref_files):
            raise CommandError("hypothesis and reference files differ in line count")
        refs = [list(rs) for rs in zip(*ref_files)]
    elif args.checkpoint and args.corpus:
        from .generator import decode
        from .training import decode_corpus

        model, config, vocab = _load_model(args.checkpoint, args.vocab)
        raw = load_jsonl(_need_file(args.corpus, "corpus"))
        examples = encode_corpus(raw, vocab, args.background_mode or config.background_mode, config.context_cap)
        if args.beam > 1:
            hyps = [decode(model, ex, "beam", args.beam, config.max_decode_len)[0] for ex in examples]
        else:
            hyps = decode_corpus(model, examples, config.eval_batch_size, config.max_decode_len)
        refs = [ex.references for ex in examples]
        if args.out:
            Path(args.out).write_text("\n".join(" ".join(h) for h in hyps) + "\n")
    else:
        raise CommandError("give either --hyp/--ref or --checkpoint/--corpus")
    if not hyps:
        raise CommandError("nothing to evaluate")
    report = MetricReport(meta={"mode": mode})
    report.add("system", mode, evaluate_corpus(hyps, refs, mode))
    print(json.dumps(report.rows["system"][mode.upper()], sort_keys=True))


def cmd_compare(args):
    from .ablations import run_comparison

    config = _load_config(args.config)
    train_set, dev_set, vocab = _train_inputs(args, config)
    test_raw = load_jsonl(_need_file(args.test, "test corpus"))
    test_set = encode_corpus(test_raw, vocab, config.background_mode, config.context_cap)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    variants = tuple(args.variants.split(","))
    for v in variants:
        if v not in ("cake", "gttp", "s2sa"):
            raise CommandError(f"unknown variant {v!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    report, _ = run_comparison(config, train_set, dev_set, test_set, vocab, seeds, variants, out)
    print(report.render())


class ChatSession:
    """Greedy chat over one background; the context keeps the newest tokens."""

    def __init__(self, model, vocab, background: str, context_cap: int = CONTEXT_CAP, max_len: int = 30):
        if not tokenize(background):
            raise CommandError("background is empty after tokenization")
        self.model, self.vocab, self.background = model, vocab, background
        self.context_cap, self.max_len = context_cap, max_len
        self.turns: list[Turn] = []
        self.last_trace = None

    def reset(self):
        self.turns = []
        self.last_trace = None

    def reply(self, line: str) -> str:
        from .generator import decode

        self.turns.append(Turn(0, line))
        raw = RawDialogue(self.background, tuple(self.turns), "", ("",), )
        ex = encode_example(raw, self.vocab, "oracle", self.context_cap)
        toks, self.last_trace = decode(self.model, ex, "greedy", max_len=self.max_len, trace=True)
        text = " ".join(toks)
        self.turns.append(Turn(1, text))
        return text


def cmd_chat(args, stdin=None, stdout=None):
    from .viz import save_trace

    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    model, config, vocab = _load_model(args.checkpoint, args.vocab)
    bg = args.background
    if Path(bg).is_file():
        bg = Path(bg).read_text(encoding="utf-8")
    session = ChatSession(model, vocab, bg, config.context_cap, config.max_decode_len)
    trace_dir = Path(args.out or ".")
    n_traces = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            break
        if line == ":reset":
            session.reset()
            print("[context cleared]", file=stdout, flush=True)
            continue
        if line == ":trace":
            if session.last_trace is None:
                print("[no trace yet]", file=stdout, flush=True)
                continue
            trace_dir.mkdir(parents=True, exist_ok=True)
            n_traces += 1
            path = trace_dir / f"trace_{n_traces}.json"
            save_trace(session.last_trace, path)
            print(f"[trace written to {path}]", file=stdout, flush=True)
            continue
        print(session.reply(line), file=stdout, flush=True)


def cmd_viz(args):
    from .viz import load_trace, write_panels

    obj = load_trace(_need_file(args.trace, "trace"))
    if args.baseline:
        obj["baseline"] = load_trace(_need_file(args.baseline, "baseline trace"))
    written = write_panels(obj, args.out)
    print(json.dumps({"panels": [p.name for p in written]}))


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cake", description="Background-grounded response generation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    modes = ("oracle", "truncate256")

    p = sub.add_parser("preprocess", help="tokenize a corpus, build the vocabulary, report stats")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-cap", type=int, default=45000)
    p.add_argument("--vocab", help="reuse an existing vocabulary file")
    p.add_argument("--background-mode", choices=modes, default="oracle")
    p.add_argument("--context-cap", type=int, default=CONTEXT_CAP)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("gen-synthetic", help="write train/dev/test synthetic copy-task corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--split", default="2000,200,200")
    p.add_argument("--facts", type=int, default=4)
    p.add_argument("--span-length", type=int, default=2)
    p.add_argument("--oov-rate", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("cake", "gttp", "s2sa"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score outputs (files or a checkpoint on a corpus)")
    p.add_argument("--hyp")
    p.add_argument("--ref", action="append", default=[])
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--corpus")
    p.add_argument("--mode", choices=("sr", "mr"), default="sr")
    p.add_argument("--background-mode", choices=modes)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--out", help="write decoded outputs here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train all variants over seeds and report medians")
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--variants", default="cake,gttp,s2sa")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("chat", help="interactive session over a background")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--background", required=True, help="file path or literal text")
    p.add_argument("--out", help="directory for :trace dumps")
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("viz-attention", help="knowledge-selection heatmaps from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--baseline", help="trace of a baseline model for panel (d)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (CommandError, CorpusError, ValueError, OSError, RuntimeError) as e:
        msg = " ".join(str(e).split())
        print(f"error: {args.command}: {type(e).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
