"""Train and evaluate on the Bibtex multi-label benchmark (159 labels, published split)."""

import argparse
import logging
from pathlib import Path

from ldrsp.experiments import bibtex_run
from ldrsp.infer import InferenceConfig
from ldrsp.train import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("data_dir", help="directory holding bibtex-train.arff and bibtex-test.arff")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--eta", type=float, default=0.02)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--out")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    root = Path(args.data_dir)
    res = bibtex_run(root / "bibtex-train.arff", root / "bibtex-test.arff",
                     config=TrainConfig(epochs=args.epochs, seed=args.seed),
                     infer_cfg=InferenceConfig(eta=args.eta, steps=args.steps), out_dir=args.out)
    print(f"raw F1 {res.raw:.2f}  refined F1 {res.refined:.2f}  delta {res.delta:+.2f}  "
          f"best epoch {res.best_epoch}  {res.seconds:.0f}s")


if __name__ == "__main__":
    main()
