"""Gradient-based fitting of a Gaussian scene to a target occupancy grid.

Each iteration splats the current scene, evaluates the voxel losses, pulls
the loss gradient back through the splatting equations to the raw Gaussian
parameters, and applies a refinement step: the mean is updated residually
while scale, rotation and semantics are substituted with their proposed
values (the proposals here come from a decoupled-weight-decay adaptive-moment
optimizer instead of a learned network).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import GaussianScene, _rotation_jacobian, quat_to_rotation, sigmoid, softmax
from .errors import DivergenceError, UndefinedMetricError
from .grid import GridSpec, OccupancyGrid
from .losses import voxel_losses
from .metrics import confusion, miou, scene_completion_iou
from .splat import SplatIndex, build_splat_index, splat

PARAM_KEYS = ("means", "raw_scales", "rotations", "raw_logits")


@dataclass
class FitConfig:
    iterations: int = 100
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    s_min: float = 0.01
    s_max: float = 0.3
    cutoff_sigma: float | None = 3.0  # None = exact mode (full-coverage neighborhoods)
    loss_weights: tuple[float, float] = (1.0, 1.0)  # (ce, lovasz)
    seed: int = 0
    lr_schedule: str = "constant"  # "constant" or "cosine"
    warmup_iters: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not (0 < self.s_min < self.s_max):
            raise ValueError("need 0 < s_min < s_max")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, iteration: int) -> float:
        lr = self.learning_rate
        if self.warmup_iters > 0 and iteration < self.warmup_iters:
            return lr * (iteration + 1) / self.warmup_iters
        if self.lr_schedule == "cosine":
            span = max(1, self.iterations - self.warmup_iters)
            t = (iteration - self.warmup_iters) / span
            return lr * 0.5 * (1.0 + math.cos(math.pi * t))
        return lr


@dataclass
class IterationRecord:
    iteration: int
    ce_loss: float
    lovasz_loss: float
    total_loss: float
    miou: float
    sc_iou: float
    millis: float


@dataclass
class FitReport:
    records: list[IterationRecord]
    scene: GaussianScene

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.total_loss for r in self.records])


@dataclass
class RawGaussianParams:
    """Pre-activation parameterization: raw scale (pre-sigmoid), raw logits
    (pre-softmax), ambient quaternion renormalized every step."""

    means: np.ndarray  # (P, 3) float64
    raw_scales: np.ndarray  # (P, 3) float64
    rotations: np.ndarray  # (P, 4) float64
    raw_logits: np.ndarray  # (P, C) float64

    def __post_init__(self):
        for key in PARAM_KEYS:
            setattr(self, key, np.ascontiguousarray(getattr(self, key), dtype=np.float64))

    @classmethod
    def from_scene(cls, scene: GaussianScene, s_min: float, s_max: float) -> "RawGaussianParams":
        frac = (scene.scales.astype(np.float64) - s_min) / (s_max - s_min)
        frac = np.clip(frac, 1e-6, 1.0 - 1e-6)
        raw_scales = np.log(frac / (1.0 - frac))
        sem = np.clip(scene.logits.astype(np.float64), 1e-12, None)
        return cls(
            means=scene.means.astype(np.float64),
            raw_scales=raw_scales,
            rotations=scene.rotations.astype(np.float64),
            raw_logits=np.log(sem),
        )

    def activate(self, s_min: float, s_max: float, class_names=None) -> GaussianScene:
        scales = s_min + sigmoid(self.raw_scales) * (s_max - s_min)
        norms = np.sqrt(np.sum(self.rotations ** 2, axis=1, keepdims=True))
        return GaussianScene(
            self.means.astype(np.float32),
            scales.astype(np.float32),
            (self.rotations / norms).astype(np.float32),
            softmax(self.raw_logits, axis=1).astype(np.float32),
            class_names,
        )

    def copy(self) -> "RawGaussianParams":
        return RawGaussianParams(*(getattr(self, k).copy() for k in PARAM_KEYS))


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer over the raw params.

    ``deltas`` returns the update to add to each parameter array; it does not
    mutate the parameters, so the fit loop can route the step through the
    residual-mean / substitute-others refinement rule.
    """

    def __init__(self, params: RawGaussianParams, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay: float = 0.0):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(getattr(params, k)) for k in PARAM_KEYS}
        self.v = {k: np.zeros_like(getattr(params, k)) for k in PARAM_KEYS}

    def deltas(self, params: RawGaussianParams, grads: dict, lr: float) -> dict:
        self.t += 1
        out = {}
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in PARAM_KEYS:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            step = m_hat / (np.sqrt(v_hat) + self.eps)
            out[k] = -lr * (step + self.weight_decay * getattr(params, k))
        return out


def backward_splat(
    params: RawGaussianParams,
    index: SplatIndex,
    spec: GridSpec,
    d_scores: np.ndarray,
    s_min: float,
    s_max: float,
    centers: np.ndarray | None = None,
) -> dict:
    """Chain the per-voxel score gradient back to the raw Gaussian parameters.

    Each gaussian accumulates only over its own neighborhood pairs, in
    ascending voxel order, mirroring the forward sparsity.  The rotation
    gradient is projected onto the unit-quaternion tangent.
    """
    if centers is None:
        centers = spec.voxel_centers()
    p = len(params.means)
    grads = {k: np.zeros_like(getattr(params, k)) for k in PARAM_KEYS}
    span = s_max - s_min
    for g in range(p):
        a, b = index.gaussian_starts[g], index.gaussian_starts[g + 1]
        if a == b:
            continue
        vox = index.gaussian_voxels[a:b]
        gup = d_scores[vox]  # (n, C)

        m = params.means[g]
        sig = sigmoid(params.raw_scales[g])
        s = s_min + sig * span
        q = params.rotations[g]
        q = q / np.sqrt(np.dot(q, q))
        r = quat_to_rotation(q)
        sem = softmax(params.raw_logits[g])

        d = centers[vox] - m
        u = d @ r
        us = u / (s * s)
        w = np.exp(-0.5 * np.sum(u * us, axis=1))

        d_w = gup @ sem  # dL/dw per voxel
        cw = d_w * w

        grads["means"][g] = (cw[:, None] * us).sum(axis=0) @ r.T
        d_scale = ((cw[:, None] * u * u).sum(axis=0)) / (s ** 3)
        grads["raw_scales"][g] = d_scale * sig * (1.0 - sig) * span

        jac = _rotation_jacobian(q)
        gq = -np.einsum("v,va,kab,vb->k", cw, d, jac, us)
        grads["rotations"][g] = gq - np.dot(gq, q) * q

        d_sem = w @ gup  # dL/d(semantics)
        grads["raw_logits"][g] = sem * (d_sem - np.dot(d_sem, sem))
    return grads


@dataclass
class Proposals:
    """Per-gaussian refinement proposals: a residual for the mean, full
    replacement values for everything else."""

    mean_residual: np.ndarray
    raw_scales: np.ndarray
    rotations: np.ndarray
    raw_logits: np.ndarray


def refine_step(params: RawGaussianParams, proposals: Proposals) -> RawGaussianParams:
    """Apply the refinement rule: mean += residual, others substituted.

    The substituted rotation is renormalized.  Mutates and returns ``params``.
    """
    params.means += proposals.mean_residual
    params.raw_scales = np.ascontiguousarray(proposals.raw_scales, dtype=np.float64)
    rot = np.ascontiguousarray(proposals.rotations, dtype=np.float64)
    params.rotations = rot / np.sqrt(np.sum(rot ** 2, axis=1, keepdims=True))
    params.raw_logits = np.ascontiguousarray(proposals.raw_logits, dtype=np.float64)
    return params


@dataclass
class SceneInit:
    """Initialization request used when ``fit`` is not given a scene."""

    mode: str  # "uniform" or "jittered-grid"
    count: int
    jitter: float = 0.5  # lattice jitter in cells, jittered-grid only


def init_scene(
    mode: str,
    count: int,
    bounds: GridSpec,
    seed: int,
    class_count: int,
    s_min: float = 0.01,
    s_max: float = 0.3,
    jitter: float = 0.5,
) -> GaussianScene:
    """Deterministic scene initialization inside a grid volume.

    ``uniform`` draws means i.i.d. in the volume; ``jittered-grid`` places
    them on a near-regular lattice plus Gaussian jitter (in cells).  Scales
    start mid-range, rotations at identity, semantics uniform.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    origin = np.asarray(bounds.origin)
    cell = np.asarray(bounds.cell_size)
    extent = cell * np.asarray(bounds.dims)

    if mode == "uniform":
        means = origin + rng.random((count, 3)) * extent
    elif mode == "jittered-grid":
        # Near-cubic lattice with per-axis counts proportional to extent.
        geo = float(np.prod(extent)) ** (1.0 / 3.0)
        n = np.maximum(1, np.round((count ** (1.0 / 3.0)) * extent / geo).astype(int))
        while int(np.prod(n)) < count:
            n[int(np.argmin(n * geo / extent))] += 1
        spacing = extent / n
        idx = np.stack(
            np.meshgrid(np.arange(n[0]), np.arange(n[1]), np.arange(n[2]), indexing="ij"),
            axis=-1,
        ).reshape(-1, 3)[:count]
        means = origin + (idx + 0.5) * spacing
        if jitter > 0:
            means = means + rng.normal(0.0, jitter, (count, 3)) * cell
    else:
        raise ValueError(f"unknown init mode {mode!r}")

    scales = np.full((count, 3), 0.5 * (s_min + s_max), dtype=np.float32)
    rotations = np.zeros((count, 4), dtype=np.float32)
    rotations[:, 0] = 1.0
    logits = np.full((count, class_count), 1.0 / class_count, dtype=np.float32)
    return GaussianScene(means.astype(np.float32), scales, rotations, logits)


def fit(
    initial: GaussianScene | SceneInit,
    truth: OccupancyGrid,
    config: FitConfig,
    threads: int = 1,
    log_fn=None,
) -> FitReport:
    """Iteratively refine a scene against a target grid.

    Runs ``config.iterations`` rounds of splat, loss, backward, optimizer and
    refinement, recording losses and metrics per iteration.  ``log_fn``, when
    given, receives each IterationRecord as it is produced.
    """
    if np.count_nonzero(truth.labels != 255) == 0:
        raise ValueError("truth grid has no non-ignore voxel")
    if isinstance(initial, SceneInit):
        initial = init_scene(
            initial.mode, initial.count, truth.spec, config.seed,
            truth.class_count, config.s_min, config.s_max, initial.jitter,
        )
    if initial.class_count != truth.class_count:
        raise ValueError("scene and truth class counts differ")

    params = RawGaussianParams.from_scene(initial, config.s_min, config.s_max)
    opt = AdamW(params, weight_decay=config.weight_decay)
    centers = truth.spec.voxel_centers()
    records: list[IterationRecord] = []

    for it in range(config.iterations):
        t0 = time.perf_counter()
        scene = params.activate(config.s_min, config.s_max)
        index = build_splat_index(scene, truth.spec, config.cutoff_sigma, threads=threads)
        grid = splat(scene, truth.spec, index=index)
        lb = voxel_losses(grid, truth, config.loss_weights)
        if not math.isfinite(lb.total):
            raise DivergenceError(it)

        grads = backward_splat(
            params, index, truth.spec, lb.d_scores, config.s_min, config.s_max, centers
        )
        deltas = opt.deltas(params, grads, config.lr_at(it))
        refine_step(
            params,
            Proposals(
                mean_residual=deltas["means"],
                raw_scales=params.raw_scales + deltas["raw_scales"],
                rotations=params.rotations + deltas["rotations"],
                raw_logits=params.raw_logits + deltas["raw_logits"],
            ),
        )

        try:
            cm = confusion(grid, truth)
            _, mean_iou = miou(cm)
            sc = scene_completion_iou(cm)
        except UndefinedMetricError:
            mean_iou, sc = float("nan"), float("nan")
        rec = IterationRecord(
            iteration=it,
            ce_loss=lb.ce,
            lovasz_loss=lb.lovasz,
            total_loss=lb.total,
            miou=mean_iou,
            sc_iou=sc,
            millis=(time.perf_counter() - t0) * 1e3,
        )
        records.append(rec)
        if log_fn is not None:
            log_fn(rec)

    return FitReport(records=records, scene=params.activate(config.s_min, config.s_max))
