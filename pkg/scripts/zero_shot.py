"""Cross-platform zero shot: pretrain, finetune on three target pairs, score the held-out one.

The held-out pair is scored with its own template and with each training pair's template
swapped in, which removes the hardware description the model relies on.
"""

import argparse
import logging

from archpredict.experiments import EndToEndConfig, ZeroShotConfig, end_to_end, zero_shot
from archpredict.model import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--checkpoint", help="skip pretraining and start from this checkpoint")
    ap.add_argument("--held-out", default="beta-fp32")
    ap.add_argument("--pretrain-epochs", type=int, default=50)
    ap.add_argument("--finetune-epochs", type=int, default=10)
    ap.add_argument("--per-platform", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        model = end_to_end(EndToEndConfig(epochs=args.pretrain_epochs, seed=args.seed)).model
    cfg = ZeroShotConfig(held_out=args.held_out, per_platform=args.per_platform,
                         finetune_epochs=args.finetune_epochs, seed=args.seed)
    res = zero_shot(model, cfg)
    print(f"held-out {args.held_out}")
    print(res.report.format())
    for pid, m in res.swapped.items():
        print(f"with template of {pid:<12} MAPE {m:.2f}")


if __name__ == "__main__":
    main()
