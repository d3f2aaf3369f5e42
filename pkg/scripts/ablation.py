"""Gate and encoder ablations on a held-out architecture family, averaged over seeds."""

import argparse
import json

from archpredict.experiments import VARIANTS, AblationConfig, ablation, mean_acc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--held-out", default=AblationConfig.held_out)
    ap.add_argument("--platform", default=AblationConfig.platform)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=AblationConfig.epochs)
    ap.add_argument("--per-family", type=int, default=AblationConfig.per_family)
    ap.add_argument("--variants", default=",".join(VARIANTS))
    ap.add_argument("--json", help="write per-seed reports here")
    args = ap.parse_args()

    cfg = AblationConfig(
        held_out=args.held_out,
        platform=args.platform,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        epochs=args.epochs,
        per_family=args.per_family,
        variants=tuple(args.variants.split(",")),
    )

    def progress(name, seed, r):
        print(f"seed {seed} {name:<15} MAPE {r.mape_pct:7.2f}  Acc(10%) {r.acc_at_10_pct:6.2f}", flush=True)

    reports = ablation(cfg, progress)
    print()
    for name, rs in reports.items():
        print(f"{name:<15} mean Acc(10%) {mean_acc(rs):6.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"config": cfg.to_dict(),
                       "reports": {k: [r.to_dict() for r in v] for k, v in reports.items()}}, fh, indent=2)


if __name__ == "__main__":
    main()
