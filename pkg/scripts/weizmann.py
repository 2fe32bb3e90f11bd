"""Train the FCN segmenter with a patch discriminator on a segmentation manifest.

The manifest has kind=segmentation with images (N,H,W,3) and one-hot masks
(N,H,W,2) TensorFiles. Expect many hours per run on one CPU core.
"""

import argparse
import logging

from ldrsp.data import load_manifest
from ldrsp.experiments import score_test_split
from ldrsp.infer import SEGMENTATION_DEFAULTS, InferenceConfig
from ldrsp.train import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--out")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = TrainConfig(task="segmentation", oracle="pixelwise_f1", lr_g=args.lr, lr_d=args.lr,
                      batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)
    res = score_test_split(load_manifest(args.manifest), cfg, InferenceConfig(**SEGMENTATION_DEFAULTS), args.out)
    print(f"raw IOU {res.raw:.2f}  refined IOU {res.refined:.2f}  delta {res.delta:+.2f}  {res.seconds:.0f}s")


if __name__ == "__main__":
    main()
