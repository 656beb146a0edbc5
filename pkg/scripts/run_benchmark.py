"""Train the model grid on the synthetic benchmark and print the table.

Each variant trains once per seed; cells are test accuracies averaged
over seeds, on both transcript and ASR inputs. The defaults use a small
configuration that reproduces the headline ordering in a few minutes on
a laptop; pass --hidden/--epochs etc. to scale up.
"""

import argparse
import time

from caslu.benchmark import default_lexicon, make_benchmark
from caslu.config import TrainConfig
from caslu.training import average_accuracy, evaluate, render_table, train

GRID = ("TEXT_ONLY_TRS", "TEXT_ONLY_ASR", "MULTI_INPUT", "CASLU",
        "CASLU_WO_T", "CASLU_WO_P", "CASLU_VAT", "CASLU_NBEST")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", nargs="+", default=list(GRID))
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-dev", type=int, default=300)
    ap.add_argument("--n-test", type=int, default=500)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--arch", default="gru")
    ap.add_argument("--hidden", type=int, default=24)
    ap.add_argument("--d-w", type=int, default=24)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--lr", type=float, default=0.005)
    args = ap.parse_args()

    print("generating benchmark...")
    train_set, dev_set, test_set = make_benchmark(
        n_train=args.n_train, n_dev=args.n_dev, n_test=args.n_test,
        seed=args.data_seed)
    lexicon = default_lexicon()

    rows = []
    for variant in args.variants:
        cfg = TrainConfig(
            variant=variant, arch=args.arch, hidden=args.hidden,
            d_w=args.d_w, max_len_text=16, max_len_phonemes=32,
            batch_size=args.batch_size, epochs=args.epochs, lr=args.lr,
            seeds=tuple(args.seeds))
        trans, asr = [], []
        t0 = time.time()
        for seed in cfg.seeds:
            result = train(cfg, train_set, dev_set, seed=seed,
                           lexicon=lexicon)
            trans.append(evaluate(result.model, test_set, "trans",
                                  lexicon=lexicon))
            asr.append(evaluate(result.model, test_set, "asr",
                                lexicon=lexicon))
        rows.append({"variant": variant,
                     "trans": average_accuracy(trans)["mean"],
                     "asr": average_accuracy(asr)["mean"]})
        print(f"  {variant}: {time.time() - t0:.1f}s")

    print()
    print(render_table(rows))


if __name__ == "__main__":
    main()
