"""Compare the regression discriminator with GAN, LSGAN and EBGAN on the synthetic task."""

import argparse
import logging

from ldrsp.experiments import PROTOCOL_SEEDS, median_delta, synthetic_gain
from ldrsp.infer import InferenceConfig
from ldrsp.train import VARIANTS, TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--variants", nargs="+", default=list(VARIANTS))
    p.add_argument("--seeds", type=int, nargs="+", default=list(PROTOCOL_SEEDS))
    p.add_argument("--epochs", type=int, default=100)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    print("variant,median_raw,median_refined,median_delta")
    for variant in args.variants:
        results = synthetic_gain(args.seeds, TrainConfig(epochs=args.epochs, variant=variant), InferenceConfig())
        raw = sorted(r.raw for r in results)[len(results) // 2]
        refined = sorted(r.refined for r in results)[len(results) // 2]
        print(f"{variant},{raw:.2f},{refined:.2f},{median_delta(results):+.2f}")


if __name__ == "__main__":
    main()
