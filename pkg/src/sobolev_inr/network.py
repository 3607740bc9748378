"""Coordinate MLP with joint value / input-derivative propagation.

The network is evaluated in mixed mode: input-direction tangents are pushed
forward alongside the primal activations (one tangent stream per input
coordinate), then a single reverse sweep over the combined graph yields the
parameter gradient of any loss on both the outputs and their input
derivatives.  The reverse sweep through a tangent stream needs the second
derivative of each activation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .core_math import Rng
from .encoding import EncodingConfig, encode, encode_jacobian, identity_tangents

ACTIVATIONS = ("relu", "elu", "selu", "sigmoid", "softplus", "tanh", "sine")

SELU_SCALE = 1.0507
SELU_ALPHA = 1.6733
ELU_ALPHA = 1.0


@dataclass(frozen=True)
class Activation:
    """Pointwise nonlinearity with its first and second derivatives.

    Conventions at the kinks: relu' (0) = 0, relu'' = 0 everywhere; elu and
    selu take the x <= 0 branch at the origin.  ``sine`` is sin(omega0 * x).
    """

    tag: str
    omega0: float = 30.0

    def __post_init__(self):
        if self.tag not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.tag!r}; choose from {ACTIVATIONS}")

    def value(self, z):
        return self.derivs(z, order=0)[0]

    def derivs(self, z, order: int = 2):
        """Return ``(f, f', f'')`` truncated to ``order + 1`` entries."""
        t = self.tag
        if t == "sine":
            w = self.omega0
            wz = w * z
            f = np.sin(wz)
            if order == 0:
                return (f,)
            return (f, w * np.cos(wz), -(w * w) * f)[: order + 1]
        if t == "relu":
            pos = z > 0
            f = np.where(pos, z, 0.0)
            if order == 0:
                return (f,)
            return (f, pos.astype(np.float64), np.zeros_like(z))[: order + 1]
        if t in ("elu", "selu"):
            scale, alpha = (1.0, ELU_ALPHA) if t == "elu" else (SELU_SCALE, SELU_ALPHA)
            pos = z > 0
            e = alpha * np.exp(np.minimum(z, 0.0))
            f = scale * np.where(pos, z, e - alpha)
            if order == 0:
                return (f,)
            d1 = scale * np.where(pos, 1.0, e)
            return (f, d1, scale * np.where(pos, 0.0, e))[: order + 1]
        if t == "sigmoid":
            f = expit(z)
            if order == 0:
                return (f,)
            d1 = f * (1.0 - f)
            return (f, d1, d1 * (1.0 - 2.0 * f))[: order + 1]
        if t == "softplus":
            f = np.logaddexp(0.0, z)
            if order == 0:
                return (f,)
            s = expit(z)
            return (f, s, s * (1.0 - s))[: order + 1]
        # tanh
        f = np.tanh(z)
        if order == 0:
            return (f,)
        d1 = 1.0 - f * f
        return (f, d1, -2.0 * f * d1)[: order + 1]


@dataclass
class MlpParams:
    """Weights ``(out, in)`` and biases ``(out,)`` per layer; last layer linear.

    ``in_dim`` is the raw coordinate dimension; when ``encoding`` is set the
    first layer consumes the encoded coordinates.
    """

    weights: list
    biases: list
    activation: Activation
    in_dim: int
    encoding: EncodingConfig | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: bias {b.shape} does not match weight {w.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} fan-in {w.shape[1]} != previous fan-out")
        if self.weights[0].shape[1] != self.enc_dim:
            raise ValueError(
                f"first layer fan-in {self.weights[0].shape[1]} != encoded width {self.enc_dim}"
            )

    @property
    def enc_dim(self) -> int:
        return self.encoding.out_dim(self.in_dim) if self.encoding else self.in_dim

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def width(self) -> int:
        return self.weights[0].shape[0] if self.hidden_layers else 0

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def zeros_like(self) -> "MlpParams":
        return replace(
            self,
            weights=[np.zeros_like(w) for w in self.weights],
            biases=[np.zeros_like(b) for b in self.biases],
        )


@dataclass
class DualBatch:
    """Primal values ``(batch, width)`` and tangents ``(D, batch, width)``."""

    primal: np.ndarray
    tangents: np.ndarray
    tape: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.tangents.shape[1:] != self.primal.shape:
            raise ValueError(
                f"tangent shape {self.tangents.shape} does not match primal {self.primal.shape}"
            )


INIT_SCHEMES = ("siren", "kaiming", "xavier", "normal", "zeros")
_DEFAULT_SCHEME = {
    "sine": "siren",
    "relu": "kaiming",
    "softplus": "kaiming",
    "sigmoid": "xavier",
    "tanh": "xavier",
    "elu": "normal",
    "selu": "normal",
}


def default_init_scheme(tag: str) -> str:
    return _DEFAULT_SCHEME[tag]


def _init_weight(scheme, rng, fan_out, fan_in, first, omega0):
    shape = (fan_out, fan_in)
    if scheme == "siren":
        if first:
            bound = 1.0 / fan_in
        else:
            bound = np.sqrt(6.0 / fan_in) / omega0
        return rng.uniform(-bound, bound, shape)
    if scheme == "kaiming":
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    if scheme == "xavier":
        return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), shape)
    if scheme == "normal":
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
    return np.zeros(shape)


def init_params(
    in_dim: int,
    out_dim: int,
    hidden_layers: int,
    width: int,
    activation: Activation | str,
    rng: Rng,
    encoding: EncodingConfig | None = None,
    scheme: str | None = None,
) -> MlpParams:
    """Draw initial parameters; biases start at zero.

    ``scheme`` defaults to the activation's customary initialisation
    (``default_init_scheme``); pass one of ``INIT_SCHEMES`` to override.
    """
    if isinstance(activation, str):
        activation = Activation(activation)
    if hidden_layers < 1:
        raise ValueError("need at least one hidden layer")
    scheme = scheme or default_init_scheme(activation.tag)
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    enc_dim = encoding.out_dim(in_dim) if encoding else in_dim
    dims = [enc_dim] + [width] * hidden_layers + [out_dim]
    weights, biases = [], []
    for k in range(len(dims) - 1):
        weights.append(_init_weight(scheme, rng, dims[k + 1], dims[k], k == 0, activation.omega0))
        biases.append(np.zeros(dims[k + 1]))
    return MlpParams(weights, biases, activation, in_dim, encoding)


def _check_inputs(params: MlpParams, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.weights[0].shape[1]:
        raise ValueError(
            f"inputs {inputs.shape} do not match first-layer fan-in {params.weights[0].shape[1]}"
        )
    return inputs


def forward(params: MlpParams, inputs) -> np.ndarray:
    """Plain evaluation on already-encoded inputs ``(batch, enc_dim)``."""
    h = _check_inputs(params, inputs)
    act = params.activation
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if k == last else act.value(z)
    return h


def forward_dual(params: MlpParams, inputs, input_tangents, keep_tape: bool = False) -> DualBatch:
    """Evaluate the network and its derivative along each input tangent.

    ``input_tangents`` has shape (D, batch, enc_dim); output tangents have
    shape (D, batch, out_dim).  With ``keep_tape`` the intermediates needed by
    ``backward_sobolev`` are retained on the result.
    """
    h = _check_inputs(params, inputs)
    hd = np.asarray(input_tangents, dtype=np.float64)
    if hd.ndim != 3 or hd.shape[1:] != h.shape:
        raise ValueError(f"input tangents {hd.shape} do not match inputs {h.shape}")
    act = params.activation
    n_dir = hd.shape[0]
    order = 2 if n_dir else 1
    last = len(params.weights) - 1
    tape = [] if keep_tape else None
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        if keep_tape:
            stacked = np.empty((n_dir + 1,) + h.shape)
            stacked[0] = h
            stacked[1:] = hd
            entry = {"x": stacked}
            tape.append(entry)
        z = h @ w.T + b
        zd = (hd.reshape(-1, w.shape[1]) @ w.T).reshape(n_dir, h.shape[0], w.shape[0])
        if k == last:
            h, hd = z, zd
            break
        derivs = act.derivs(z, order=order)
        h, d1 = derivs[0], derivs[1]
        hd = d1 * zd
        if keep_tape:
            entry["d1"] = d1
            if n_dir:
                entry["d2"] = derivs[2]
                entry["zd"] = zd
    return DualBatch(h, hd, tape)


def backward_sobolev(
    params: MlpParams,
    inputs,
    input_tangents,
    value_residual,
    tangent_residuals,
    tape: list | None = None,
) -> MlpParams:
    """Parameter gradient given dL/d(outputs) and dL/d(output tangents).

    Reverse-propagates through the primal chain and every tangent chain.
    ``tape`` (from ``forward_dual(..., keep_tape=True)``) skips recomputing
    the forward pass.
    """
    if tape is None:
        tape = forward_dual(params, inputs, input_tangents, keep_tape=True).tape
    gy = np.asarray(value_residual, dtype=np.float64)
    gyd = np.asarray(tangent_residuals, dtype=np.float64)
    n_dir = tape[0]["x"].shape[0] - 1
    batch = tape[0]["x"].shape[1]
    if gy.shape != (batch, params.out_dim) or gyd.shape != (n_dir, batch, params.out_dim):
        raise ValueError(
            f"residual shapes {gy.shape}, {gyd.shape} do not match "
            f"({batch}, {params.out_dim}) with {n_dir} tangents"
        )
    grads = params.zeros_like()
    g = np.empty((n_dir + 1, batch, params.out_dim))
    g[0] = gy
    g[1:] = gyd
    for k in range(len(params.weights) - 1, -1, -1):
        w = params.weights[k]
        x = tape[k]["x"]
        grads.weights[k] = g.reshape(-1, w.shape[0]).T @ x.reshape(-1, w.shape[1])
        grads.biases[k] = g[0].sum(axis=0)
        if k == 0:
            break
        gh = (g.reshape(-1, w.shape[0]) @ w).reshape(n_dir + 1, batch, w.shape[1])
        prev = tape[k - 1]
        d1 = prev["d1"]
        g = gh * d1
        if n_dir:
            # h_dot = f'(z) z_dot  =>  dz += g_hdot * f''(z) * z_dot
            g[0] += (gh[1:] * prev["zd"]).sum(axis=0) * prev["d2"]
    return grads


def input_seeds(params: MlpParams, coords) -> tuple[np.ndarray, np.ndarray]:
    """Encoded inputs and tangent seeds d(encoded)/d(coord_d) for raw coordinates."""
    coords = np.asarray(coords, dtype=np.float64)
    if params.encoding is None:
        return coords, identity_tangents(coords)
    return encode(params.encoding, coords), encode_jacobian(params.encoding, coords)


def predict(params: MlpParams, coords, chunk: int = 16384) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    out = []
    for s in range(0, coords.shape[0], chunk):
        c = coords[s : s + chunk]
        x = encode(params.encoding, c) if params.encoding else c
        out.append(forward(params, x))
    return np.concatenate(out, axis=0)


def predict_dual(params: MlpParams, coords, chunk: int = 8192) -> DualBatch:
    coords = np.asarray(coords, dtype=np.float64)
    prim, tang = [], []
    for s in range(0, coords.shape[0], chunk):
        x, xd = input_seeds(params, coords[s : s + chunk])
        res = forward_dual(params, x, xd)
        prim.append(res.primal)
        tang.append(res.tangents)
    return DualBatch(np.concatenate(prim, axis=0), np.concatenate(tang, axis=1))


# --- checkpoint file -------------------------------------------------------
#
# Little-endian layout:
#   magic   4s   b"SINR"
#   version u32  1
#   act     u32  index into ACTIVATIONS
#   omega0  f64
#   in_dim  u32  raw coordinate dimension
#   n_lay   u32
#   enc_L   i32  number of encoding frequencies, -1 when unencoded
#   enc_inc u32  encoding keeps raw inputs
#   n_lay x (out u32, in u32)
#   n_lay x (weights out*in f64 row-major, bias out f64)
#   meta    u32 length + UTF-8 JSON object (free-form run metadata)

MAGIC = b"SINR"
VERSION = 1
_HEAD = struct.Struct("<4sIIdIIiI")


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(params: MlpParams, meta: dict | None = None) -> bytes:
    enc = params.encoding
    parts = [
        _HEAD.pack(
            MAGIC,
            VERSION,
            ACTIVATIONS.index(params.activation.tag),
            float(params.activation.omega0),
            params.in_dim,
            len(params.weights),
            enc.num_frequencies if enc else -1,
            int(enc.include_input) if enc else 0,
        )
    ]
    for w in params.weights:
        parts.append(struct.pack("<II", *w.shape))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def save_checkpoint(path, params: MlpParams, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, meta))


def _read_body(data: bytes, n_lay: int):
    pos = _HEAD.size
    shapes = []
    for _ in range(n_lay):
        shapes.append(struct.unpack_from("<II", data, pos))
        pos += 8
    weights, biases = [], []
    for out, inp in shapes:
        n = out * inp
        weights.append(np.frombuffer(data, "<f8", n, pos).reshape(out, inp).astype(np.float64))
        pos += 8 * n
        biases.append(np.frombuffer(data, "<f8", out, pos).astype(np.float64))
        pos += 8 * out
    (n_meta,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + n_meta != len(data):
        raise ValueError(f"expected {pos + n_meta} bytes, found {len(data)}")
    return weights, biases, json.loads(data[pos:].decode("utf-8"))


def parse_checkpoint(data: bytes) -> tuple[MlpParams, dict]:
    if len(data) < _HEAD.size:
        raise CheckpointError("checkpoint truncated")
    magic, version, act, omega0, in_dim, n_lay, enc_l, enc_inc = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if act >= len(ACTIVATIONS):
        raise CheckpointError(f"unknown activation code {act}")
    try:
        weights, biases, meta = _read_body(data, n_lay)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"checkpoint truncated or corrupt: {exc}") from exc
    encoding = EncodingConfig(enc_l, bool(enc_inc)) if enc_l >= 0 else None
    try:
        params = MlpParams(weights, biases, Activation(ACTIVATIONS[act], omega0), in_dim, encoding)
    except ValueError as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}") from exc
    return params, meta


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
