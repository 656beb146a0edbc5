"""Command-line entry point.

Subcommands: gen-data, train, eval, gradcheck, signtest. Exit codes are
a stable contract: 0 success, 1 check failure, 2 input error, 3 runtime
divergence. Every artifact gets a sibling .manifest.json naming the
resolved config, seeds, and input digests; reruns with identical inputs
produce byte-identical outputs.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import models as M
from . import tensor as T
from .config import (ConfigError, build_manifest, derive_seed, load_config,
                     write_manifest)
from .data import SchemaError, load_dataset, save_dataset, tokenize
from .metrics import per
from .phonetics import g2p, load_confusion, load_lexicon, make_noisy_corpus
from .training import (DivergenceError, average_accuracy, discordant,
                       evaluate, render_table, sign_test, train)

INPUT_ERRORS = (ValueError, OSError)  # config/schema/lexicon/checkpoint/file


def _workers() -> int:
    return max(1, int(os.environ.get("CASLU_THREADS", "1")))


def _load_clean_corpus(path):
    """Tab-separated "text<TAB>label" lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise SchemaError(f"{path}:{lineno}: expected text<TAB>label")
            out.append((parts[0].strip(), parts[1].strip()))
    return out


def cmd_gen_data(args) -> int:
    corpus = _load_clean_corpus(args.corpus)
    lexicon = load_lexicon(args.lexicon)
    cm = load_confusion(args.confusion)
    examples = make_noisy_corpus(corpus, lexicon, cm,
                                 keep_only_errors=args.keep_only_errors,
                                 seed=derive_seed(args.seed, "data"),
                                 beam=args.beam, workers=_workers())
    save_dataset(args.out, examples)
    manifest = build_manifest(
        {"seed": args.seed, "keep_only_errors": args.keep_only_errors,
         "beam": args.beam},
        [args.seed],
        {"corpus": args.corpus, "lexicon": args.lexicon,
         "confusion": args.confusion})
    write_manifest(args.out + ".manifest.json", manifest)
    if not examples:
        print("warning: kept 0 examples (no ASR errors were produced)")
        return 0
    wers = [ex.wer for ex in examples]
    pers = [per(g2p(tokenize(ex.text_clean), lexicon), ex.phonemes_asr)
            for ex in examples]
    print(f"wrote {len(examples)}/{len(corpus)} examples to {args.out}")
    print(f"mean WER {float(np.mean(wers)):.4f}  mean PER {float(np.mean(pers)):.4f}")
    return 0


def cmd_train(args) -> int:
    overrides = {}
    if args.variant:
        overrides["variant"] = args.variant
    if args.seeds:
        overrides["seeds"] = args.seeds
    cfg = load_config(args.config, overrides)
    train_set = load_dataset(args.train)
    dev_set = load_dataset(args.dev)
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    os.makedirs(args.out, exist_ok=True)
    inputs = {"train": args.train, "dev": args.dev}
    if args.config:
        inputs["config"] = args.config
    if args.lexicon:
        inputs["lexicon"] = args.lexicon
    write_manifest(os.path.join(args.out, "manifest.json"),
                   build_manifest(cfg.resolved(), list(cfg.seeds), inputs))
    dev_accs = []
    for seed in cfg.seeds:
        metrics_path = os.path.join(args.out, f"metrics_seed{seed}.jsonl")
        with open(metrics_path, "w", encoding="utf-8") as fh:
            result = train(cfg, train_set, dev_set, seed=seed, lexicon=lexicon,
                           log=lambda h: fh.write(json.dumps(h) + "\n"))
        ckpt = os.path.join(args.out, f"model_seed{seed}.caslu")
        M.save_model(result.model, ckpt)
        dev_accs.append(result.best_dev_accuracy)
        print(f"seed {seed}: best epoch {result.best_epoch} "
              f"dev accuracy {result.best_dev_accuracy:.4f} -> {ckpt}")
    report = {"variant": cfg.variant, "seeds": list(cfg.seeds),
              "dev_accuracy_per_seed": dev_accs,
              "dev_accuracy_mean": sum(dev_accs) / len(dev_accs)}
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"mean dev accuracy {report['dev_accuracy_mean']:.4f}")
    return 0


def _trace_example(model, examples, example_id, out_path):
    matches = [ex for ex in examples if ex.id == example_id]
    if not matches:
        raise ConfigError(f"--trace: no example with id {example_id!r}")
    ex = matches[0]
    text_ids = model.text_vocab.encode(tokenize(ex.text_asr))
    phon_ids = model.phoneme_vocab.encode(ex.phonemes_asr)
    pred = M.forward(model, text_ids, phon_ids, trace=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(pred.trace.to_json() + "\n")


def cmd_eval(args) -> int:
    test_set = load_dataset(args.test)
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    boundaries = None
    if args.stratify:
        parts = [float(x) for x in args.stratify.split(",")]
        if len(parts) != 2:
            raise ConfigError("--stratify expects two boundaries like 0.3,0.6")
        boundaries = tuple(parts)
    fields = ("trans", "asr") if args.field == "both" else (args.field,)
    models = [M.load_model(path) for path in args.ckpt]
    variant = models[0].variant
    row = {"variant": variant, "trans": None, "asr": None}
    payload = {"variant": variant, "checkpoints": list(args.ckpt)}
    for field_name in fields:
        reports = [evaluate(model, test_set, field_name, lexicon=lexicon,
                            boundaries=boundaries) for model in models]
        avg = average_accuracy(reports)
        row[field_name] = avg["mean"]
        payload[field_name] = {
            "accuracy_mean": avg["mean"], "accuracy_per_seed": avg["per_seed"],
            "n": reports[0].n, "confusion": reports[0].confusion,
            "class_names": reports[0].class_names,
            "buckets": reports[0].buckets}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_manifest(args.out + ".manifest.json", build_manifest(
            {"field": args.field, "stratify": args.stratify},
            [], {"test": args.test, **{f"ckpt{i}": p
                                       for i, p in enumerate(args.ckpt)}}))
    if args.trace:
        trace_path = (args.out or "eval") + f".trace_{args.trace}.json"
        _trace_example(models[0], test_set, args.trace, trace_path)
        print(f"wrote attention trace to {trace_path}")
    print(render_table([row]))
    return 0


def cmd_gradcheck(args) -> int:
    def run():
        return M.gradcheck_variant(args.variant, eps=args.eps, seed=args.seed)

    if args.planted_bug:
        with T.planted_backward_bug():
            errors = run()
    else:
        errors = run()
    worst = 0.0
    for name, err in sorted(errors.items()):
        print(f"{name:<24} max rel err {err:.3e}")
        worst = max(worst, err)
    print(f"worst {worst:.3e} (threshold {args.threshold:.1e})")
    return 0 if worst < args.threshold else 1


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def cmd_signtest(args) -> int:
    pred_a = _read_lines(args.preds_a)
    pred_b = _read_lines(args.preds_b)
    labels = _read_lines(args.labels)
    if not len(pred_a) == len(pred_b) == len(labels):
        raise ConfigError("signtest: prediction and label files differ in length")
    n_a, n_b = discordant(pred_a, pred_b, labels)
    p = sign_test(pred_a, pred_b, labels)
    print(f"discordant a-better {n_a}  b-better {n_b}  p-value {p:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caslu",
        description="Phoneme-text cross-attention intent classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize an errorful corpus")
    g.add_argument("--corpus", required=True, help="clean text<TAB>label file")
    g.add_argument("--lexicon", required=True)
    g.add_argument("--confusion", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--keep-only-errors", action="store_true")
    g.add_argument("--beam", type=int, default=5)
    g.add_argument("--out", required=True, help="output JSONL path")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one variant over the seed list")
    t.add_argument("--config", default=None, help="key = value config file")
    t.add_argument("--train", required=True)
    t.add_argument("--dev", required=True)
    t.add_argument("--variant", default=None)
    t.add_argument("--seeds", default=None, help="comma-separated, e.g. 1,2,3")
    t.add_argument("--lexicon", default=None,
                   help="needed by CASLU_VAT and trans-field selection")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoints on a test set")
    e.add_argument("--ckpt", required=True, nargs="+",
                   help="one checkpoint per seed; accuracies are averaged")
    e.add_argument("--test", required=True)
    e.add_argument("--field", choices=("trans", "asr", "both"), default="asr")
    e.add_argument("--stratify", default=None, help="WER boundaries, e.g. 0.3,0.6")
    e.add_argument("--trace", default=None, metavar="ID",
                   help="dump the attention trace of one example")
    e.add_argument("--lexicon", default=None)
    e.add_argument("--out", default=None, help="report JSON path")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check")
    c.add_argument("--variant", default="CASLU")
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--threshold", type=float, default=1e-4)
    c.add_argument("--planted-bug", action="store_true",
                   help="corrupt one backward rule as a negative control")
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("signtest", help="paired exact binomial sign test")
    s.add_argument("--preds-a", required=True)
    s.add_argument("--preds-b", required=True)
    s.add_argument("--labels", required=True)
    s.set_defaults(func=cmd_signtest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except T.NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
