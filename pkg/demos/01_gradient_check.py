"""Check the mixed-mode Sobolev gradient against brute-force finite differences.

A small sine MLP is evaluated together with its input Jacobian (forward
tangents), the value-plus-derivative loss is formed, and one reverse sweep
returns parameter gradients.  Perturbing each parameter in turn and
re-evaluating the loss gives an independent estimate to compare against.
"""

import numpy as np

from sobolev_inr import init_params, sobolev_loss
from sobolev_inr.core_math import Rng
from sobolev_inr.network import backward_sobolev, forward_dual, input_seeds

rng = Rng(0)
params = init_params(2, 1, 2, 16, "sine", rng.spawn(0))
x = rng.uniform(-1, 1, (8, 2))
target = np.sin(3 * x[:, :1]) * np.cos(2 * x[:, 1:])
target_d = np.stack([3 * np.cos(3 * x[:, :1]) * np.cos(2 * x[:, 1:]),
                     -2 * np.sin(3 * x[:, :1]) * np.sin(2 * x[:, 1:])])


def loss_at(p):
    xe, seeds = input_seeds(p, x)
    return sobolev_loss(forward_dual(p, xe, seeds), target, target_d, 1.0).loss


xe, seeds = input_seeds(params, x)
pred = forward_dual(params, xe, seeds, keep_tape=True)
terms = sobolev_loss(pred, target, target_d, 1.0)
grads = backward_sobolev(params, xe, seeds, terms.value_residual, terms.tangent_residual, tape=pred.tape)
print(f"loss {terms.loss:.6f}  (values {terms.value_loss:.6f}, derivatives {terms.deriv_loss:.6f})")

h = 1e-6
fd = []
for a in params.arrays():
    est = np.zeros_like(a)
    flat, eflat = a.reshape(-1), est.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = loss_at(params)
        flat[i] = keep - h
        down = loss_at(params)
        flat[i] = keep
        eflat[i] = (up - down) / (2 * h)
    fd.append(est)
analytic = np.concatenate([g.ravel() for g in grads.arrays()])
numeric = np.concatenate([g.ravel() for g in fd])
err = np.abs(analytic - numeric).max() / np.abs(numeric).max()
print(f"{analytic.size} parameters, max deviation / max gradient = {err:.2e}")
