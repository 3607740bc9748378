"""Compare activations under Sobolev training on a grayscale image.

Each activation is trained with and without positional encoding (sine only
without); the final derivative loss shows how well each family can match
image gradients.

    python demos/05_activation_sweep.py [image.png] [--iters 1000]
"""

import argparse

import numpy as np

from sobolev_inr.io import read_png
from sobolev_inr.pipelines import image_config, sweep_activations

parser = argparse.ArgumentParser()
parser.add_argument("image", nargs="?")
parser.add_argument("--iters", type=int, default=1000)
args = parser.parse_args()
if args.image:
    img = read_png(args.image)
else:
    v, u = np.mgrid[0:48, 0:48] / 48
    img = 0.5 + 0.3 * np.sin(12 * u) * np.cos(7 * v)

runs = sweep_activations(img, image_config(iterations=args.iters, hidden_layers=3, width=32,
                                           log_interval=max(1, args.iters // 10)))
for r in sorted(runs, key=lambda r: r.final_deriv_loss):
    print(f"{r.label:12s} L_der {r.final_deriv_loss:10.4g}   PSNR {r.psnr:6.2f}")
