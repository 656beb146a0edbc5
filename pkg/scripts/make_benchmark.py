"""Generate the synthetic noisy-ASR benchmark splits as JSONL files.

Writes train/dev/test JSONL plus a manifest so reruns are checkable
byte for byte.
"""

import argparse
import os

from caslu.benchmark import CONFUSION_PATH, LEXICON_PATH, make_benchmark
from caslu.config import build_manifest, write_manifest
from caslu.data import save_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="benchmark", help="output directory")
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-dev", type=int, default=300)
    ap.add_argument("--n-test", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int,
                    default=int(os.environ.get("CASLU_THREADS", "1")))
    args = ap.parse_args()

    train, dev, test = make_benchmark(
        n_train=args.n_train, n_dev=args.n_dev, n_test=args.n_test,
        seed=args.seed, workers=args.workers)

    os.makedirs(args.out, exist_ok=True)
    for name, part in [("train", train), ("dev", dev), ("test", test)]:
        path = os.path.join(args.out, f"{name}.jsonl")
        save_dataset(path, part)
        mean_wer = sum(ex.wer for ex in part) / len(part)
        print(f"{path}: {len(part)} examples, mean WER {mean_wer:.3f}")

    manifest = build_manifest(
        {"n_train": args.n_train, "n_dev": args.n_dev, "n_test": args.n_test},
        seeds=[args.seed],
        inputs={"lexicon": LEXICON_PATH, "confusion": CONFUSION_PATH})
    write_manifest(os.path.join(args.out, "manifest.json"), manifest)


if __name__ == "__main__":
    main()
