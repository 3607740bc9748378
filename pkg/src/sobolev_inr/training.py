"""Joint value/derivative objective, Adam, and the shared optimisation loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core_math import Rng
from .encoding import EncodingConfig
from .network import (
    ACTIVATIONS,
    Activation,
    DualBatch,
    MlpParams,
    backward_sobolev,
    forward_dual,
    init_params,
    input_seeds,
)

log = logging.getLogger(__name__)

FULL = None  # batch_size sentinel: every training sample in every step


@dataclass
class TrainConfig:
    lam: float = 1.0
    learning_rate: float = 1e-4
    iterations: int = 50_000
    batch_size: int | None = FULL
    seed: int = 0
    activation: str = "sine"
    omega0: float = 30.0
    use_positional_encoding: bool = False
    num_frequencies: int = 5
    use_sobolev: bool = True
    filter: str = "sobel"
    deriv_units: str = "normalized"
    hidden_layers: int = 4
    width: int = 256
    init_scheme: str | None = None
    log_interval: int = 100

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive or FULL")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if self.filter not in ("sobel", "vanilla"):
            raise ValueError(f"filter must be 'sobel' or 'vanilla', got {self.filter!r}")
        if self.deriv_units not in ("normalized", "raw"):
            raise ValueError(f"deriv_units must be 'normalized' or 'raw', got {self.deriv_units!r}")

    def encoding(self) -> EncodingConfig | None:
        if not self.use_positional_encoding:
            return None
        return EncodingConfig(self.num_frequencies, include_input=True)


@dataclass
class SampledSignal:
    """Training triple (coordinate, value, derivative) plus a train mask.

    ``derivs`` holds D*C columns ordered by axis then channel; ``shape`` is
    the sampling grid (e.g. ``(rows, cols)``) when the samples are dense.
    """

    coords: np.ndarray
    values: np.ndarray
    derivs: np.ndarray | None
    train_mask: np.ndarray
    shape: tuple = ()

    def __post_init__(self):
        n = self.coords.shape[0]
        if self.values.shape[0] != n or self.train_mask.shape != (n,):
            raise ValueError("coords, values and train_mask must share the sample count")
        if self.derivs is not None and self.derivs.shape != (
            n,
            self.coords.shape[1] * self.values.shape[1],
        ):
            raise ValueError(f"derivs shape {self.derivs.shape} != (N, D*C)")
        if not self.train_mask.any():
            raise ValueError("empty training split")

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def deriv_tangents(self, index=slice(None)) -> np.ndarray:
        """Derivative targets as (D, n, C) tangent grids."""
        d = self.derivs[index]
        return d.reshape(d.shape[0], self.dim, self.channels).transpose(1, 0, 2)


class LossTerms(NamedTuple):
    loss: float
    value_loss: float
    deriv_loss: float
    value_residual: np.ndarray
    tangent_residual: np.ndarray


def sobolev_loss(pred: DualBatch, target_values, target_derivs, lam: float) -> LossTerms:
    """mean_i |g_i - f_i|^2 + lam * mean_i |Dg_i - Df_i|^2 and its output gradients.

    ``target_derivs`` has the tangent layout (D, batch, C).  The derivative
    term sums over every partial and channel.  Residuals are exact
    derivatives of the loss (the factor 2 is included).
    """
    tv = np.asarray(target_values, dtype=np.float64)
    td = np.asarray(target_derivs, dtype=np.float64)
    if tv.shape != pred.primal.shape or td.shape != pred.tangents.shape:
        raise ValueError(
            f"target shapes {tv.shape}, {td.shape} do not match prediction "
            f"{pred.primal.shape}, {pred.tangents.shape}"
        )
    n = tv.shape[0]
    rv = pred.primal - tv
    rd = pred.tangents - td
    value_loss = float(np.sum(rv * rv)) / n
    deriv_loss = float(np.sum(rd * rd)) / n
    return LossTerms(
        value_loss + lam * deriv_loss,
        value_loss,
        deriv_loss,
        (2.0 / n) * rv,
        (2.0 * lam / n) * rd,
    )


def value_loss(pred: np.ndarray, target_values) -> LossTerms:
    """Value-only objective; derivative residuals are an empty tangent stack."""
    tv = np.asarray(target_values, dtype=np.float64)
    n = tv.shape[0]
    rv = pred - tv
    vl = float(np.sum(rv * rv)) / n
    return LossTerms(vl, vl, 0.0, (2.0 / n) * rv, np.empty((0,) + tv.shape))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: MlpParams) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(state: AdamState, params: MlpParams, grads: MlpParams, lr: float) -> MlpParams:
    """One bias-corrected Adam update, applied in place; returns ``params``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class MetricRow(NamedTuple):
    iteration: int
    loss_val: float
    loss_der: float
    psnr_eval: float


METRIC_FIELDS = MetricRow._fields


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, loss: float, log: list):
        super().__init__(f"loss became non-finite ({loss}) at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss
        self.log = log


def optimize(
    params: MlpParams,
    objective: Callable[[MlpParams, int], tuple[LossTerms, MlpParams]],
    iterations: int,
    learning_rate: float,
    log_interval: int = 100,
    evaluate: Callable[[MlpParams], float] | None = None,
) -> tuple[MlpParams, list]:
    """Run Adam on ``objective(params, step) -> (terms, grads)``.

    Every ``log_interval`` steps a :class:`MetricRow` is appended holding the
    step's loss terms and, if given, ``evaluate`` on the updated parameters.
    Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    state = AdamState.zeros(params)
    rows = []
    for step in range(1, iterations + 1):
        terms, grads = objective(params, step)
        if not math.isfinite(terms.loss):
            raise TrainingDiverged(step, terms.loss, rows)
        adam_step(state, params, grads, learning_rate)
        if step % log_interval == 0:
            psnr = evaluate(params) if evaluate else float("nan")
            rows.append(MetricRow(step, terms.value_loss, terms.deriv_loss, psnr))
            log.debug(
                "step %d loss_val %.4g loss_der %.4g psnr %.2f",
                step, terms.value_loss, terms.deriv_loss, psnr,
            )
    return params, rows


def default_model_factory(config: TrainConfig, dim: int, channels: int):
    def factory(rng: Rng) -> MlpParams:
        return init_params(
            dim,
            channels,
            config.hidden_layers,
            config.width,
            Activation(config.activation, config.omega0),
            rng,
            encoding=config.encoding(),
            scheme=config.init_scheme,
        )

    return factory


def train(
    config: TrainConfig,
    dataset: SampledSignal,
    model_factory: Callable[[Rng], MlpParams] | None = None,
    evaluate: Callable[[MlpParams], float] | None = None,
) -> tuple[MlpParams, list]:
    """Fit a coordinate network to the training split of ``dataset``."""
    rng = Rng(config.seed)
    factory = model_factory or default_model_factory(config, dataset.dim, dataset.channels)
    params = factory(rng.spawn(0))
    batch_rng = rng.spawn(1)

    idx = np.flatnonzero(dataset.train_mask)
    if config.use_sobolev and dataset.derivs is None:
        raise ValueError("Sobolev training needs derivative targets")

    # Inputs and seeds depend only on the coordinates; precompute them once.
    x_all, xd_all = input_seeds(params, dataset.coords[idx])
    v_all = dataset.values[idx]
    d_all = dataset.deriv_tangents(idx) if config.use_sobolev else None

    order = None
    cursor = 0

    def next_batch():
        nonlocal order, cursor
        if config.batch_size is None or config.batch_size >= len(idx):
            return slice(None)
        if order is None or cursor + config.batch_size > len(idx):
            order = batch_rng.permutation(len(idx))
            cursor = 0
        b = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        return b

    def objective(p: MlpParams, step: int):
        b = next_batch()
        x = x_all[b]
        if config.use_sobolev:
            xd = xd_all[:, b]
            pred = forward_dual(p, x, xd, keep_tape=True)
            terms = sobolev_loss(pred, v_all[b], d_all[:, b], config.lam)
        else:
            xd = xd_all[:0, b]
            pred = forward_dual(p, x, xd, keep_tape=True)
            terms = value_loss(pred.primal, v_all[b])
        grads = backward_sobolev(
            p, x, xd, terms.value_residual, terms.tangent_residual, tape=pred.tape
        )
        return terms, grads

    return optimize(
        params, objective, config.iterations, config.learning_rate, config.log_interval, evaluate
    )


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([int(r.iteration), repr(float(r.loss_val)), repr(float(r.loss_der)), repr(float(r.psnr_eval))])


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            MetricRow(int(r["iteration"]), float(r["loss_val"]), float(r["loss_der"]), float(r["psnr_eval"]))
            for r in reader
        ]
