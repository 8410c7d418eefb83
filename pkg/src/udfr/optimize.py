"""Losses, exact reverse-mode gradients through the quadrature, and Adam fitting.

Parameters are a softplus UDF grid (raw node values), an RGB node grid on the
same lattice and a scalar ``log s``.  Sample positions along each ray are
treated as constants of the loss: gradients flow through the densities and
colors at the given samples, not through where the sampler put them.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .density import DEFAULT_BETA, DEFAULT_C, DensityParams
from ._kernels import adam_update
from .fields import SoftplusGrid, VoxelGrid, grid_nodes, load_grid, save_grid, softplus
from .geometry import camera_rays, sphere_bounds
from .render import GridColor
from .sampling import SamplingConfig, hierarchical_sample_batch, segment_lengths

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
# Raw distance parameters are kept above this value so that the softplus slope
# (about e^{-5} here) never underflows and zero-distance plateaus can still move.
# The smallest representable distance becomes softplus(-0.05) = 6.7e-5.
UDF_RAW_FLOOR = -0.05


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1  # Eikonal
    lambda2: float = 0.01  # iso-surface regularizer
    lambda3: float = 0.001  # s penalty
    tau: float = 5.0
    use_s_penalty: bool = True

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.tau) < 0:
            raise ValueError("loss weights must be non-negative")


def color_loss(pred, gt):
    """Mean absolute error over all rays and channels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.size == 0:
        raise ValueError(f"color batches differ in shape: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.abs(pred - gt)))


def eikonal_loss(field, points):
    """Mean of ``(|grad f| - 1)^2`` over ``points``."""
    g = field.gradient(np.asarray(points, dtype=np.float64))
    return float(np.mean((np.linalg.norm(g, axis=-1) - 1.0) ** 2))


def reg_loss(f_values, tau=5.0):
    """Mean of ``exp(-tau f)``; discourages zero distances away from the surface."""
    f = np.asarray(f_values, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("distances must be non-negative")
    return float(np.mean(np.exp(-tau * f)))


def s_penalty(s_values):
    """Mean reciprocal sharpness over all samples."""
    s = np.asarray(s_values, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("s values must be positive")
    return float(np.mean(1.0 / s))


def total_loss(components, weights: LossWeights = LossWeights()):
    """``color + l1*eik + l2*reg + l3*s``; the s term is dropped unless enabled."""
    total = (components["color"] + weights.lambda1 * components["eik"]
             + weights.lambda2 * components["reg"])
    if weights.use_s_penalty:
        total += weights.lambda3 * components["s"]
    return float(total)


@dataclass
class TrainState:
    """Trainable parameters, Adam moments and the loss history."""

    resolution: tuple
    params: dict
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    beta: float = DEFAULT_BETA
    c: float = DEFAULT_C
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))

    @classmethod
    def create(cls, resolution=(64, 64, 64), init_distance=0.3, s_init=30.0, color_init=0.5,
               bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)), beta=DEFAULT_BETA, c=DEFAULT_C):
        raw = inverse_softplus(init_distance, beta)
        n = int(np.prod(resolution))
        params = {"udf": np.full(n, raw), "color": np.full((n, 3), float(color_init)),
                  "log_s": np.array([np.log(s_init)])}
        return cls(tuple(resolution), params, bounds, beta, c)

    @property
    def s(self) -> float:
        return float(np.exp(self.params["log_s"][0]))

    def density_params(self) -> DensityParams:
        return DensityParams(s=self.s, c=self.c, beta=self.beta)

    def udf_grid(self) -> VoxelGrid:
        return VoxelGrid.wrap(self.params["udf"], self.resolution, self.bounds)

    def udf_field(self) -> SoftplusGrid:
        return SoftplusGrid(self.udf_grid(), self.beta)

    def color_field(self) -> GridColor:
        col = GridColor(self.resolution, bounds=self.bounds)
        col.data = self.params["color"]
        return col

    def upsample(self, resolution):
        """Resample every grid parameter and its Adam moments onto a finer grid, in place.

        Raw values are interpolated trilinearly, so the new field matches the old one
        wherever the old softplus was locally linear.
        """
        resolution = tuple(int(r) for r in resolution)
        nodes = grid_nodes(resolution, self.bounds).reshape(-1, 3, order="F")

        def resample(flat):
            return VoxelGrid.wrap(np.ascontiguousarray(flat), self.resolution,
                                  self.bounds).value(nodes)

        for store in (self.params, self.m, self.v):
            store["udf"] = resample(store["udf"])
            store["color"] = np.stack([resample(store["color"][:, k]) for k in range(3)], 1)
        self.resolution = resolution
        return self


def inverse_softplus(y, beta=DEFAULT_BETA):
    y = float(y)
    return y + np.log(-np.expm1(-beta * y)) / beta


@dataclass
class RayBatch:
    origins: np.ndarray  # (R, 3)
    dirs: np.ndarray  # (R, 3)
    t: np.ndarray  # (R, N) sorted sample arc lengths
    far: np.ndarray  # (R,)
    gt: np.ndarray  # (R, 3)


def _scatter(n, idx, vals):
    return np.bincount(idx.ravel(), weights=vals.ravel(), minlength=n)


def _eikonal_terms(grid: VoxelGrid, beta, points, lambda1, need_grad=True):
    """Eikonal loss of ``softplus(grid)`` and ``lambda1`` times its node gradient."""
    q = np.asarray(points, dtype=np.float64)
    data = grid.data
    eidx, ew, edw = grid.stencil(q, with_grad=True)
    evals = data[eidx]
    er = np.sum(evals * ew, axis=-1)
    gsp = expit(beta * er)
    graw = np.einsum("pk,pkj->pj", evals, edw)
    g = gsp[:, None] * graw
    gn = np.linalg.norm(g, axis=-1)
    loss = float(np.mean((gn - 1.0) ** 2))
    if not need_grad:
        return loss, None
    d_gn = lambda1 * 2.0 * (gn - 1.0) / len(q)
    d_g = (d_gn / np.where(gn > 0, gn, 1.0))[:, None] * g
    d_gsp = np.sum(d_g * graw, axis=-1)
    d_graw = d_g * gsp[:, None]
    d_er = d_gsp * beta * gsp * (1.0 - gsp)
    node = d_er[:, None] * ew + np.einsum("pj,pkj->pk", d_graw, edw)
    return loss, _scatter(data.size, eidx, node)


def loss_and_grad(state: TrainState, batch: RayBatch, eik_points, weights: LossWeights,
                  background=(1.0, 1.0, 1.0), need_grad=True):
    """Forward pass of the total loss and, optionally, its exact gradients.

    Returns ``(components, grads)``; ``components`` holds the four loss terms,
    ``total`` and the rendered ``rgb``; ``grads`` maps parameter names to
    arrays shaped like ``state.params``.
    """
    grid = state.udf_grid()
    data, cdata = state.params["udf"], state.params["color"]
    n_nodes = data.size
    beta, c = state.beta, state.c
    log_s = state.params["log_s"][0]
    s = np.exp(log_s)
    bg = np.asarray(background, dtype=np.float64)

    o, d, t = batch.origins, batch.dirs, batch.t
    n_rays, n_samp = t.shape
    pts = o[:, None, :] + t[..., None] * d[:, None, :]
    delta = segment_lengths(t, batch.far)
    idx, tw, _ = grid.stencil(pts, with_grad=False)
    raw = np.sum(data[idx] * tw, axis=-1)
    f = softplus(raw, beta)
    e = expit(-s * f)
    sigma = c * s * e
    tau = sigma * delta
    depth = np.cumsum(tau, axis=1)
    T_after = np.exp(-depth)
    T = np.exp(-(depth - tau))
    w = T * -np.expm1(-tau)
    col_raw = np.einsum("rnk,rnkc->rnc", tw, cdata[idx])
    col = np.clip(col_raw, 0.0, 1.0)
    T_end = T_after[:, -1]
    rgb = np.einsum("rn,rnc->rc", w, col) + T_end[:, None] * bg
    resid = rgb - batch.gt
    l_color = float(np.mean(np.abs(resid)))
    reg_terms = np.exp(-weights.tau * f)
    l_reg = float(np.mean(reg_terms))
    l_s = float(1.0 / s)

    l_eik, g_eik = _eikonal_terms(grid, beta, eik_points, weights.lambda1, need_grad)

    comps = {"color": l_color, "eik": l_eik, "reg": l_reg, "s": l_s}
    comps["total"] = total_loss(comps, weights)
    comps["rgb"] = rgb
    if not need_grad:
        return comps, None

    d_rgb = np.sign(resid) / resid.size
    # Color behind sample i, as seen from just past it: sum_{j>i} w_j c_j + T_end bg.
    wc = w[..., None] * col
    behind = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1] - wc + (T_end[:, None, None] * bg)
    d_tau = np.einsum("rc,rnc->rn", d_rgb, T_after[..., None] * col - behind)
    d_sigma = d_tau * delta
    one_m_e = 1.0 - e
    d_f = d_sigma * (-c * s * s * e * one_m_e)
    d_f += weights.lambda2 * (-weights.tau * reg_terms) / reg_terms.size
    d_raw = d_f * expit(beta * raw)
    g_udf = _scatter(n_nodes, idx, d_raw[..., None] * tw)

    d_col = w[..., None] * d_rgb[:, None, :]
    d_col = np.where((col_raw >= 0.0) & (col_raw <= 1.0), d_col, 0.0)
    cw = d_col[..., None, :] * tw[..., None]  # (R, N, 8, 3)
    g_color = np.stack([_scatter(n_nodes, idx, cw[..., ch]) for ch in range(3)], axis=1)

    d_log_s = float(np.sum(d_sigma * sigma * (1.0 - s * f * one_m_e)))
    if weights.use_s_penalty:
        d_log_s += weights.lambda3 * (-1.0 / s)

    g_udf += g_eik

    grads = {"udf": g_udf, "color": g_color, "log_s": np.array([d_log_s])}
    return comps, grads


def fast_loss_and_grad(state: TrainState, batch: RayBatch, eik_points, weights: LossWeights,
                       background=(1.0, 1.0, 1.0)):
    """Same contract as :func:`loss_and_grad` (with gradients), via compiled loops."""
    from ._kernels import render_loss_grad

    grid = state.udf_grid()
    res = np.asarray(state.resolution, dtype=np.int64)
    scale = (res - 1) / (grid.hi - grid.lo)
    g_udf = np.zeros_like(state.params["udf"])
    g_color = np.zeros_like(state.params["color"])
    l_color, l_reg, d_log_s, rgb = render_loss_grad(
        grid.data, state.params["color"], res, grid.lo, scale, state.beta, state.c,
        float(state.params["log_s"][0]), batch.origins, batch.dirs, batch.t, batch.far,
        batch.gt, np.asarray(background, dtype=np.float64), weights.tau, weights.lambda2,
        g_udf, g_color)
    l_eik, g_eik = _eikonal_terms(grid, state.beta, eik_points, weights.lambda1)
    g_udf += g_eik
    l_s = 1.0 / state.s
    if weights.use_s_penalty:
        d_log_s += weights.lambda3 * (-l_s)
    comps = {"color": l_color, "eik": l_eik, "reg": l_reg, "s": l_s}
    comps["total"] = total_loss(comps, weights)
    comps["rgb"] = rgb
    grads = {"udf": g_udf, "color": g_color, "log_s": np.array([d_log_s])}
    return comps, grads


def backward(state, batch, weights, eik_points, background=(1.0, 1.0, 1.0)):
    """Gradients of the total loss with respect to every parameter."""
    return loss_and_grad(state, batch, eik_points, weights, background)[1]


class NonFiniteGradient(RuntimeError):
    pass


def adam_step(state: TrainState, grads, lr=5e-4, lrs=None):
    """Bias-corrected Adam update in place; returns ``state``.

    ``lrs`` optionally overrides the learning rate per parameter name.  After
    the step colors are clipped to [0, 1] and raw distances to ``UDF_RAW_FLOOR``.  A
    non-finite gradient rejects the whole step and raises
    :class:`NonFiniteGradient`.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k!r} at step {state.step}")
    state.step += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.step
    bc2 = 1.0 - ADAM_BETA2 ** state.step
    for k, g in grads.items():
        rate = (lrs or {}).get(k, lr)
        adam_update(state.params[k], np.ascontiguousarray(g, dtype=np.float64), state.m[k],
                    state.v[k], rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, bc1, bc2)
    if "color" in state.params:
        np.clip(state.params["color"], 0.0, 1.0, out=state.params["color"])
    if "udf" in grads:
        np.maximum(state.params["udf"], UDF_RAW_FLOOR, out=state.params["udf"])
    return state


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20000  # full scale: 300000
    batch_rays: int = 512
    lr: float = 5e-4
    lr_udf: float | None = 5e-3  # None: use lr
    lr_color: float | None = None
    lr_s: float | None = 5e-3
    resolution: int = 64
    # Fractions of the run at which the grid doubles; training starts at
    # resolution / 2**len(upsample_at) nodes per axis.  Empty: fixed resolution.
    # The UDF rate is given for the starting grid and shrinks with the cell size.
    upsample_at: tuple = (0.1, 0.25)
    init_distance: float = 0.3
    s_init: float = 30.0
    eik_points: int = 1024
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    background: tuple = (1.0, 1.0, 1.0)
    roi_radius: float = 1.0
    seed: int = 0
    log_every: int = 500

    def __post_init__(self):
        object.__setattr__(self, "upsample_at", tuple(sorted(float(f) for f in self.upsample_at)))
        if any(not 0.0 < f < 1.0 for f in self.upsample_at):
            raise ValueError("upsample_at fractions must lie strictly between 0 and 1")

    def resolution_schedule(self):
        """``[(iteration, nodes per axis), ...]`` starting at iteration 0."""
        n = len(self.upsample_at)
        res = [max(2, -(-self.resolution // 2 ** (n - i))) for i in range(n)] + [self.resolution]
        starts = [0] + [int(round(f * self.iterations)) for f in self.upsample_at]
        return list(zip(starts, res))

    def learning_rates(self):
        return {"udf": self.lr_udf if self.lr_udf is not None else self.lr,
                "color": self.lr_color if self.lr_color is not None else self.lr,
                "log_s": self.lr_s if self.lr_s is not None else self.lr}


class FitDiverged(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def build_ray_table(images, cameras, roi_radius=1.0):
    """All pixel rays that meet the region of interest, with their colors."""
    if len(images) != len(cameras):
        raise ValueError("need one image per camera")
    os_, ds, gts = [], [], []
    for img, cam in zip(images, cameras):
        if (img.width, img.height) != (cam.width, cam.height):
            raise ValueError("image size does not match its camera")
        o, d = camera_rays(cam)
        os_.append(o)
        ds.append(d)
        gts.append(img.rgb.reshape(-1, 3))
    o, d, gt = np.concatenate(os_), np.concatenate(ds), np.concatenate(gts)
    near, far, hit = sphere_bounds(o, d, roi_radius)
    return o[hit], d[hit], near[hit], far[hit], gt[hit]


def sample_batch(state, table, rows, sampling: SamplingConfig, rng):
    o, d, near, far, gt = (a[rows] for a in table)
    udf = state.udf_field()
    t, _ = hierarchical_sample_batch(udf, o, d, near, far, state.density_params(),
                                     sampling, rng)
    return RayBatch(o, d, t, far, gt)


def fit(images, cameras, cfg: TrainConfig = TrainConfig(), state: TrainState | None = None,
        callback=None, dump_dir=None) -> TrainState:
    """Fit the grid UDF, color grid and ``s`` to posed images."""
    if len(cameras) < 2:
        raise ValueError("fitting needs at least two views")
    if len({(c.width, c.height) for c in cameras}) != 1:
        raise ValueError("all views must share one image size")
    table = build_ray_table(images, cameras, cfg.roi_radius)
    n_table = len(table[0])
    if n_table == 0:
        raise ValueError("no camera ray meets the region of interest")
    schedule = {}
    if state is None:
        schedule = dict(cfg.resolution_schedule())
        r = schedule.pop(0)
        state = TrainState.create((r, r, r), cfg.init_distance, cfg.s_init)
    rng = np.random.default_rng(cfg.seed)
    lrs = cfg.learning_rates()
    base_udf_rate, r0 = lrs["udf"], state.resolution[0]
    lo, hi = np.asarray(state.bounds[0]), np.asarray(state.bounds[1])
    start = time.perf_counter()
    for it in range(cfg.iterations):
        if it in schedule:
            r = schedule[it]
            state.upsample((r, r, r))
            lrs["udf"] = base_udf_rate * (r0 - 1) / (r - 1)
            log.info("iter %d: grid upsampled to %d^3", it, r)
        rows = rng.integers(0, n_table, size=min(cfg.batch_rays, n_table))
        batch = sample_batch(state, table, rows, cfg.sampling, rng)
        eik = rng.uniform(lo, hi, size=(cfg.eik_points, 3))
        comps, grads = fast_loss_and_grad(state, batch, eik, cfg.weights, cfg.background)
        finite = all(np.all(np.isfinite(g)) for g in grads.values())
        if not np.isfinite(comps["total"]) or not finite:
            diag = {"iteration": state.step, "s": state.s,
                    **{k: comps[k] for k in ("color", "eik", "reg", "s", "total")}}
            if dump_dir is not None:
                save_checkpoint(dump_dir, state)
            raise FitDiverged(f"loss diverged at iteration {state.step}: {diag}", diag)
        adam_step(state, grads, cfg.lr, lrs)
        state.history.append((state.step, comps["color"], comps["eik"], comps["reg"],
                              comps["s"], comps["total"], state.s))
        if cfg.log_every and state.step % cfg.log_every == 0:
            log.info("iter %d loss %.5f color %.5f eik %.4f s %.1f (%.0fs)", state.step,
                     comps["total"], comps["color"], comps["eik"], state.s,
                     time.perf_counter() - start)
        if callback is not None:
            callback(state, comps)
    return state


HISTORY_HEADER = ("iteration", "L_color", "L_eik", "L_reg", "L_s", "total", "s")


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(HISTORY_HEADER)
        for row in history:
            wr.writerow([row[0]] + [f"{v:.9g}" for v in row[1:]])


def save_checkpoint(directory, state: TrainState) -> None:
    """Grid files for the UDF and each color channel, ``meta.txt`` and ``loss.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_grid(directory / "udf.grid", state.udf_grid())
    for ch, name in enumerate("rgb"):
        g = VoxelGrid.wrap(state.params["color"][:, ch].copy(), state.resolution, state.bounds)
        save_grid(directory / f"color_{name}.grid", g)
    last = state.history[-1][5] if state.history else float("nan")
    with open(directory / "meta.txt", "w") as fh:
        fh.write(f"s {float(state.s)!r}\nlog_s {float(state.params['log_s'][0])!r}\n")
        fh.write(f"iteration {int(state.step)}\nloss {float(last)!r}\n")
        fh.write(f"beta {float(state.beta)!r}\nc {float(state.c)!r}\n")
    write_history(directory / "loss.csv", state.history)


def load_checkpoint(directory) -> TrainState:
    directory = Path(directory)
    meta = {}
    with open(directory / "meta.txt") as fh:
        for line in fh:
            if line.strip():
                key, val = line.split(None, 1)
                meta[key] = val.strip()
    udf = load_grid(directory / "udf.grid")
    color = np.stack([load_grid(directory / f"color_{n}.grid").data for n in "rgb"], axis=1)
    params = {"udf": udf.data.copy(), "color": color,
              "log_s": np.array([float(meta["log_s"])])}
    state = TrainState(udf.resolution, params, (tuple(udf.lo), tuple(udf.hi)),
                       float(meta["beta"]), float(meta["c"]))
    state.step = int(meta["iteration"])
    hist_path = directory / "loss.csv"
    if hist_path.exists():
        with open(hist_path) as fh:
            rows = list(csv.reader(fh))[1:]
        state.history = [(int(r[0]), *map(float, r[1:])) for r in rows]
    return state
