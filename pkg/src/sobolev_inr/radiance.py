"""Simplified radiance-field inverse rendering with derivative supervision.

Pipeline per pixel (u, v): pinhole ray -> stratified points -> positional
encoding -> MLP (r, g, b, sigma logits) -> sigmoid / softplus -> volume
rendering quadrature.  Sample depths are held fixed with respect to (u, v),
so the pixel derivative flows only through the ray direction.  No
hierarchical sampling, view dependence or skip connections.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import filters
from .core_math import Rng
from .encoding import EncodingConfig, encode, encode_dual
from .metrics import RENDER_PROTOCOL, psnr, ssim
from .network import (
    Activation,
    DualBatch,
    MlpParams,
    backward_sobolev,
    forward,
    forward_dual,
    init_params,
)
from .training import optimize, sobolev_loss, value_loss

log = logging.getLogger(__name__)


# --- cameras ---------------------------------------------------------------


@dataclass
class CameraPose:
    """Camera-to-world ``c2w`` (3x4, OpenGL axes: x right, y up, looking -z)."""

    c2w: np.ndarray
    height: int
    width: int
    focal: float
    near: float
    far: float

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (3, 4):
            raise ValueError(f"c2w must be 3x4, got {self.c2w.shape}")
        rot = self.c2w[:, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6, rtol=0):
            raise ValueError("camera rotation is not orthonormal")
        if not 0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        if self.height < 1 or self.width < 1 or self.focal <= 0:
            raise ValueError("image size and focal length must be positive")

    def scaled(self, scale: float) -> "CameraPose":
        """Same camera at ``scale`` times the resolution."""
        return replace(
            self,
            height=int(round(self.height * scale)),
            width=int(round(self.width * scale)),
            focal=self.focal * scale,
        )


def load_llff_poses(path, llff_axes: bool = True) -> list:
    """Read an N x 17 pose/bounds array (``.npy`` or raw little-endian doubles).

    Each row is a flattened 3x5 matrix (3x4 pose, then [height, width, focal])
    followed by [near, far].  With ``llff_axes`` the rotation columns are taken
    as (down, right, back) and reordered to (right, up, back).
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
    else:
        arr = np.fromfile(path, dtype="<f8")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size % 17:
        raise ValueError(f"{path}: expected rows of 17 values, got {arr.size} values")
    arr = arr.reshape(-1, 17)
    poses = []
    for row in arr:
        m = row[:15].reshape(3, 5)
        c2w = m[:, :4].copy()
        if llff_axes:
            c2w = np.concatenate([m[:, 1:2], -m[:, 0:1], m[:, 2:4]], axis=1)
        h, w, f = m[:, 4]
        poses.append(CameraPose(c2w, int(round(h)), int(round(w)), float(f), float(row[15]), float(row[16])))
    return poses


def save_llff_poses(path, poses, llff_axes: bool = True) -> None:
    rows = []
    for p in poses:
        c2w = p.c2w
        if llff_axes:
            c2w = np.concatenate([-c2w[:, 1:2], c2w[:, 0:1], c2w[:, 2:4]], axis=1)
        m = np.concatenate([c2w, np.array([[p.height], [p.width], [p.focal]])], axis=1)
        rows.append(np.concatenate([m.ravel(), [p.near, p.far]]))
    np.save(path, np.array(rows))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=np.float64), back)
    right /= np.linalg.norm(right)
    upv = np.cross(back, right)
    return np.stack([right, upv, back, eye], axis=1)


def generate_ray(pose: CameraPose, u, v):
    """Ray origin, direction, and the direction's partials in u and v.

    Camera-space direction ``((u - W/2)/f, -(v - H/2)/f, -1)`` rotated to
    world space; it is affine in (u, v), so the partials are constant.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    rot = pose.c2w[:, :3]
    cam = np.stack(
        [(u - pose.width / 2.0) / pose.focal, -(v - pose.height / 2.0) / pose.focal, -np.ones_like(u)],
        axis=-1,
    )
    d = cam @ rot.T
    o = np.broadcast_to(pose.c2w[:, 3], d.shape).copy()
    return o, d, rot[:, 0] / pose.focal, -rot[:, 1] / pose.focal


def pixel_centers(pose: CameraPose):
    """Row-major pixel-centre coordinates (u, v) = (col + 0.5, row + 0.5)."""
    vv, uu = np.meshgrid(np.arange(pose.height) + 0.5, np.arange(pose.width) + 0.5, indexing="ij")
    return uu.ravel(), vv.ravel()


def stratified_depths(near, far, n_rays: int, samples: int, rng: Rng | None = None) -> np.ndarray:
    """Depths ``near + (far - near) * (i + xi) / S``; ``xi = 0.5`` without an rng."""
    near = np.broadcast_to(np.asarray(near, dtype=np.float64), (n_rays,))[:, None]
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (n_rays,))[:, None]
    xi = 0.5 if rng is None else rng.uniform(0.0, 1.0, (n_rays, samples))
    return near + (far - near) * (np.arange(samples) + xi) / samples


def segment_lengths(t: np.ndarray, far) -> np.ndarray:
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), t.shape[:1])
    return np.concatenate([np.diff(t, axis=1), far[:, None] - t[:, -1:]], axis=1)


# --- quadrature ------------------------------------------------------------


def _excl_cumsum(x):
    out = np.zeros_like(x)
    np.cumsum(x[..., :-1], axis=-1, out=out[..., 1:])
    return out


def _rev_excl_cumsum(x):
    # out[j] = sum_{k > j} x[k]
    out = np.zeros_like(x)
    out[..., :-1] = np.cumsum(x[..., :0:-1], axis=-1)[..., ::-1]
    return out


def composite(raw, delta):
    """Render colours from raw (R, S, 4) logits.

    Returns ``(rgb (R, 3), weights (R, S), residual_transmittance (R,))``.
    """
    c = expit(raw[..., :3])
    sigma = np.logaddexp(0.0, raw[..., 3])
    a = sigma * delta
    e = np.exp(-a)
    trans = np.exp(-_excl_cumsum(a))
    w = trans * (1.0 - e)
    rgb = np.einsum("rs,rsc->rc", w, c)
    return rgb, w, np.exp(-a.sum(axis=-1))


def composite_dual(raw, raw_t, delta):
    """``composite`` plus tangents; ``raw_t`` is (D, R, S, 4).

    Returns ``(rgb, rgb_t (D, R, 3), cache)`` where ``cache`` feeds
    :func:`composite_dual_backward`.
    """
    rgb, w, _ = composite(raw, delta)
    c = expit(raw[..., :3])
    dc = c * (1.0 - c)
    s3 = expit(raw[..., 3])
    a = np.logaddexp(0.0, raw[..., 3]) * delta
    e = np.exp(-a)
    trans = np.exp(-_excl_cumsum(a))
    c_t = dc * raw_t[..., :3]
    a_t = s3 * raw_t[..., 3] * delta
    acc_t = _excl_cumsum(a_t)
    w_t = trans * (e * a_t - acc_t * (1.0 - e))
    rgb_t = np.einsum("drs,rsc->drc", w_t, c) + np.einsum("rs,drsc->drc", w, c_t)
    cache = dict(raw_t=raw_t, delta=delta, c=c, dc=dc, c_t=c_t, s3=s3, e=e, trans=trans, w=w,
                 a_t=a_t, acc_t=acc_t, w_t=w_t)
    return rgb, rgb_t, cache


def composite_dual_backward(cache, g_rgb, g_rgb_t):
    """Gradients w.r.t. raw logits and their tangents from colour gradients."""
    c, dc, s3, e, trans, w = (cache[k] for k in ("c", "dc", "s3", "e", "trans", "w"))
    raw_t, delta, a_t, acc_t, w_t = (cache[k] for k in ("raw_t", "delta", "a_t", "acc_t", "w_t"))
    one_e = 1.0 - e

    gw = np.einsum("rc,rsc->rs", g_rgb, c) + np.einsum("drc,drsc->rs", g_rgb_t, cache["c_t"])
    gc = g_rgb[:, None, :] * w[..., None] + np.einsum("drc,drs->rsc", g_rgb_t, w_t)
    gw_t = np.einsum("drc,rsc->drs", g_rgb_t, c)
    gc_t = g_rgb_t[:, :, None, :] * w[None, :, :, None]

    g_trans = gw * one_e + np.sum(gw_t * (e * a_t - acc_t * one_e), axis=0)
    g_e = -gw * trans + np.sum(gw_t * (acc_t + a_t), axis=0) * trans
    g_acc_t = -gw_t * (trans * one_e)
    g_a_t = gw_t * (trans * e) + _rev_excl_cumsum(g_acc_t)
    g_a = -e * g_e + _rev_excl_cumsum(-trans * g_trans)

    g_sigma = g_a * delta
    g_sigma_t = g_a_t * delta
    g_raw = np.empty(c.shape[:2] + (4,))
    g_raw_t = np.empty(raw_t.shape)
    g_raw[..., 3] = g_sigma * s3 + np.sum(g_sigma_t * raw_t[..., 3], axis=0) * (s3 * (1.0 - s3))
    g_raw_t[..., 3] = g_sigma_t * s3
    g_raw[..., :3] = gc * dc + np.sum(gc_t * raw_t[..., :3], axis=0) * (dc * (1.0 - 2.0 * c))
    g_raw_t[..., :3] = gc_t * dc
    return g_raw, g_raw_t


# --- field -----------------------------------------------------------------


@dataclass
class RadianceField:
    """MLP from normalised position ``x / bound`` to (r, g, b, sigma) logits."""

    params: MlpParams
    bound: float = 1.0


@dataclass
class RenderTape:
    net: DualBatch
    enc: np.ndarray
    enc_t: np.ndarray
    cache: dict
    n_rays: int
    samples: int


def _points(field: RadianceField, origins, dirs, t):
    pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    return pts.reshape(-1, 3) / field.bound


def volume_render(field: RadianceField, origins, dirs, t, far) -> np.ndarray:
    """Colour of each ray (R, 3) given sample depths ``t`` (R, S)."""
    x = _points(field, origins, dirs, t)
    enc = encode(field.params.encoding, x) if field.params.encoding else x
    raw = forward(field.params, enc).reshape(t.shape + (4,))
    return composite(raw, segment_lengths(t, far))[0]


def volume_render_dual(field: RadianceField, origins, dirs, dir_tangents, t, far, keep_tape=False):
    """Rendered colours and their (u, v) derivatives as a :class:`DualBatch`.

    ``dir_tangents`` is (D, 3) or (D, R, 3): the ray-direction partials.
    """
    n_rays, samples = t.shape
    dt = np.asarray(dir_tangents, dtype=np.float64)
    if dt.ndim == 2:
        dt = np.broadcast_to(dt[:, None, :], (dt.shape[0], n_rays, 3))
    n_dir = dt.shape[0]
    x = _points(field, origins, dirs, t)
    x_t = (t[None, :, :, None] * dt[:, :, None, :]).reshape(n_dir, n_rays * samples, 3) / field.bound
    cfg = field.params.encoding
    if cfg:
        enc, enc_t = encode_dual(cfg, x, x_t)
    else:
        enc, enc_t = x, x_t
    net = forward_dual(field.params, enc, enc_t, keep_tape=keep_tape)
    raw = net.primal.reshape(n_rays, samples, 4)
    raw_t = net.tangents.reshape(n_dir, n_rays, samples, 4)
    rgb, rgb_t, cache = composite_dual(raw, raw_t, segment_lengths(t, far))
    tape = RenderTape(net, enc, enc_t, cache, n_rays, samples) if keep_tape else None
    return DualBatch(rgb, rgb_t, tape)


def render_backward(field: RadianceField, tape: RenderTape, g_rgb, g_rgb_t) -> MlpParams:
    g_raw, g_raw_t = composite_dual_backward(tape.cache, g_rgb, g_rgb_t)
    n_dir = g_raw_t.shape[0]
    return backward_sobolev(
        field.params,
        tape.enc,
        tape.enc_t,
        g_raw.reshape(-1, 4),
        g_raw_t.reshape(n_dir, tape.n_rays * tape.samples, 4),
        tape=tape.net.tape,
    )


def render_view(field: RadianceField, pose: CameraPose, samples: int, chunk: int = 1024) -> np.ndarray:
    """Render a full image (H, W, 3) with mid-bin depths."""
    u, v = pixel_centers(pose)
    out = np.empty((u.shape[0], 3))
    for s in range(0, u.shape[0], chunk):
        o, d, _, _ = generate_ray(pose, u[s : s + chunk], v[s : s + chunk])
        t = stratified_depths(pose.near, pose.far, o.shape[0], samples)
        out[s : s + chunk] = volume_render(field, o, d, t, pose.far)
    return out.reshape(pose.height, pose.width, 3)


# --- procedural scene ------------------------------------------------------


@dataclass
class SphereScene:
    """Lambertian sphere on a black background seen from a ring of cameras."""

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    albedo: tuple = (0.9, 0.55, 0.3)
    light_dir: tuple = (1.0, -1.0, 1.5)
    ambient: float = 0.2
    ring_radius: float = 4.0
    ring_height: float = 1.0
    n_poses: int = 16
    height: int = 48
    width: int = 48
    focal: float = 60.0
    near: float = 2.0
    far: float = 6.0
    bound: float = 4.5
    supersample: int = 4

    def poses(self) -> list:
        out = []
        for k in range(self.n_poses):
            ang = 2.0 * np.pi * k / self.n_poses
            eye = np.asarray(self.center) + np.array(
                [self.ring_radius * np.cos(ang), self.ring_radius * np.sin(ang), self.ring_height]
            )
            out.append(
                CameraPose(look_at(eye, self.center), self.height, self.width, self.focal, self.near, self.far)
            )
        return out

    def render(self, pose: CameraPose) -> np.ndarray:
        """Analytic ray-sphere image, box-filtered over a supersample grid per pixel."""
        s = self.supersample
        if s < 1:
            raise ValueError("supersample must be >= 1")
        if s > 1:
            fine = self._point_render(pose.scaled(s))
            return fine.reshape(pose.height, s, pose.width, s, 3).mean(axis=(1, 3))
        return self._point_render(pose)

    def _point_render(self, pose: CameraPose) -> np.ndarray:
        u, v = pixel_centers(pose)
        o, d, _, _ = generate_ray(pose, u, v)
        oc = o - np.asarray(self.center)
        a = np.sum(d * d, axis=1)
        b = np.sum(oc * d, axis=1)
        c = np.sum(oc * oc, axis=1) - self.radius**2
        disc = b * b - a * c
        hit = disc > 0
        t = (-b - np.sqrt(np.where(hit, disc, 0.0))) / a
        normal = (oc + t[:, None] * d) / self.radius
        light = np.asarray(self.light_dir, dtype=np.float64)
        light = light / np.linalg.norm(light)
        shade = self.ambient + (1.0 - self.ambient) * np.clip(normal @ light, 0.0, None)
        rgb = np.where(hit[:, None], shade[:, None] * np.asarray(self.albedo), 0.0)
        return rgb.reshape(pose.height, pose.width, 3)

    def views(self) -> list:
        return [(p, self.render(p)) for p in self.poses()]


def parse_scene_spec(text: str) -> SphereScene:
    """``key = value`` lines (``#`` comments); vectors are comma separated."""
    kwargs = {}
    fields = SphereScene.__dataclass_fields__
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"line {lineno}: unknown scene key {key!r}")
        default = fields[key].default
        if isinstance(default, tuple):
            kwargs[key] = tuple(float(x) for x in val.split(","))
        elif isinstance(default, int):
            kwargs[key] = int(val)
        else:
            kwargs[key] = float(val)
    return SphereScene(**kwargs)


# --- training --------------------------------------------------------------


@dataclass
class RenderConfig:
    lam: float = 1.0
    learning_rate: float = 5e-4
    iterations: int = 400_000
    batch_rays: int = 128
    samples: int = 64
    seed: int = 0
    activation: str = "sine"
    omega0: float = 1.0
    use_positional_encoding: bool = True
    num_frequencies: int = 10
    use_sobolev: bool = True
    filter: str = "sobel"
    hidden_layers: int = 8
    width: int = 256
    init_scheme: str | None = "kaiming"
    holdout_every: int = 8
    train_downscale: int = 1
    deriv_source: str = "train"
    bound: float | None = None
    log_interval: int = 1000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.deriv_source not in ("train", "full"):
            raise ValueError("deriv_source must be 'train' or 'full'")


@dataclass
class RenderReport:
    heldout_psnr: float
    heldout_ssim: float
    renders: list
    targets: list
    log: list
    train_views: list = field(default_factory=list)
    heldout_views: list = field(default_factory=list)


def split_views(n: int, holdout_every: int):
    held = [i for i in range(n) if i % holdout_every == 0]
    train = [i for i in range(n) if i % holdout_every != 0]
    return train, held


def _train_view(pose: CameraPose, image, cfg: RenderConfig):
    """Training-resolution pose, image and per-pixel derivative targets."""
    f = cfg.train_downscale
    kind = filters.get_filter(cfg.filter)
    small, _ = filters.downsample_nearest(image, f)
    tpose = replace(pose, height=small.shape[0], width=small.shape[1], focal=pose.focal / f)
    if cfg.deriv_source == "full" and f > 1:
        du, dv = filters.image_derivatives(image, kind)
        du, _ = filters.downsample_nearest(du, f)
        dv, _ = filters.downsample_nearest(dv, f)
        scale = f / kind.gain
    else:
        du, dv = filters.image_derivatives(small, kind)
        scale = 1.0 / kind.gain
    return tpose, small, du * scale, dv * scale


def default_bound(poses) -> float:
    reach = 0.0
    for p in poses:
        corner = np.array([p.width / 2.0 / p.focal, p.height / 2.0 / p.focal, 1.0])
        reach = max(reach, np.linalg.norm(p.c2w[:, 3]) + p.far * np.linalg.norm(corner))
    return float(reach)


def init_field(cfg: RenderConfig, rng: Rng, bound: float) -> RadianceField:
    enc = EncodingConfig(cfg.num_frequencies, True) if cfg.use_positional_encoding else None
    params = init_params(
        3, 4, cfg.hidden_layers, cfg.width, Activation(cfg.activation, cfg.omega0), rng, enc, cfg.init_scheme
    )
    return RadianceField(params, bound)


def train_inverse_rendering(views, config: RenderConfig, field: RadianceField | None = None):
    """Fit a radiance field to posed images; every ``holdout_every``-th view is held out.

    Each step draws ``batch_rays`` random pixels (with replacement) across the
    training views, renders them with fresh stratified depths, and takes an
    Adam step on the value (+ derivative) loss against pixel colours and
    filter-based image derivatives in per-pixel units.
    """
    if len(views) < 2:
        raise ValueError("need at least two views")
    cfg = config
    rng = Rng(cfg.seed)
    train_idx, held_idx = split_views(len(views), cfg.holdout_every)
    if not train_idx:
        raise ValueError("no training views left after hold-out")
    bound = cfg.bound or default_bound([views[i][0] for i in train_idx])
    if field is None:
        field = init_field(cfg, rng.spawn(0), bound)
    step_rng = rng.spawn(1)

    # Flatten every training pixel into one table.
    origins, dirs, dd_u, dd_v, colours, du_t, dv_t, nears, fars = ([] for _ in range(9))
    for i in train_idx:
        tpose, img, du, dv = _train_view(views[i][0], views[i][1], cfg)
        u, v = pixel_centers(tpose)
        o, d, pu, pv = generate_ray(tpose, u, v)
        n = u.shape[0]
        origins.append(o)
        dirs.append(d)
        dd_u.append(np.broadcast_to(pu, (n, 3)))
        dd_v.append(np.broadcast_to(pv, (n, 3)))
        colours.append(img.reshape(n, 3))
        du_t.append(du.reshape(n, 3))
        dv_t.append(dv.reshape(n, 3))
        nears.append(np.full(n, tpose.near))
        fars.append(np.full(n, tpose.far))
    origins, dirs, dd_u, dd_v, colours, du_t, dv_t, nears, fars = (
        np.concatenate(a) for a in (origins, dirs, dd_u, dd_v, colours, du_t, dv_t, nears, fars)
    )
    dir_t = np.stack([dd_u, dd_v])
    deriv_t = np.stack([du_t, dv_t])
    total = origins.shape[0]

    def objective(p, step):
        b = step_rng.integers(0, total, cfg.batch_rays)
        t = stratified_depths(nears[b], fars[b], b.shape[0], cfg.samples, step_rng)
        if cfg.use_sobolev:
            pred = volume_render_dual(field, origins[b], dirs[b], dir_t[:, b], t, fars[b], keep_tape=True)
            terms = sobolev_loss(pred, colours[b], deriv_t[:, b], cfg.lam)
        else:
            pred = volume_render_dual(field, origins[b], dirs[b], dir_t[:0, b], t, fars[b], keep_tape=True)
            terms = value_loss(pred.primal, colours[b])
        return terms, render_backward(field, pred.tape, terms.value_residual, terms.tangent_residual)

    def held_out_renders():
        return [render_view(field, views[i][0], cfg.samples) for i in held_idx]

    def evaluate(_p):
        if not held_idx:
            return float("nan")
        return float(np.mean([psnr(r, views[i][1], RENDER_PROTOCOL) for r, i in zip(held_out_renders(), held_idx)]))

    _, history = optimize(
        field.params, objective, cfg.iterations, cfg.learning_rate, cfg.log_interval, evaluate
    )
    renders = held_out_renders()
    targets = [views[i][1] for i in held_idx]
    if held_idx:
        hp = float(np.mean([psnr(r, g, RENDER_PROTOCOL) for r, g in zip(renders, targets)]))
        hs = float(np.mean([ssim(r, g, RENDER_PROTOCOL) for r, g in zip(renders, targets)]))
    else:
        hp = hs = float("nan")
    return field, RenderReport(hp, hs, renders, targets, history, train_idx, held_idx)
