"""Train the default model on in-distribution synthetic data and report held-out metrics."""

import argparse
import logging

from archpredict.experiments import EndToEndConfig, end_to_end
from archpredict.model import save_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save", help="write the trained checkpoint here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = EndToEndConfig(n_train=args.train, n_test=args.test, epochs=args.epochs, seed=args.seed)
    res = end_to_end(cfg, eval_every_epoch=True)
    print(res.report.format())
    print(f"training took {res.train_seconds:.0f}s")
    if args.save:
        save_checkpoint(res.model, args.save)


if __name__ == "__main__":
    main()
