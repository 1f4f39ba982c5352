from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .binfmt import Writer, pack_file, unpack_file, write_bytes
from .data_io import PlaneWaveStack
from .encoding import EncodedBatch, grid_coords, positional_encode
from .errors import ContractError, FormatError, NumericalError, TrainingDiverged
from .event_log import EventLogger
from .loss_monitor import LossMonitor
from .model import (
    WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
    ModelArch,
    ModelParams,
    init_params,
    parameter_count,
    read_params,
    trace_forward,
    weights_to_bytes,
)
from .numerics import Precision, Tape, backward
from .objective import LossConfig, trace_combined_loss
from .render import PsfKernel, make_kernel

CHECKPOINT_MAGIC = b"PWCK"
CHECKPOINT_VERSION = 1
VIEW_COUNTS = (14, 25, 38, 74)


@dataclass(slots=True)
class TrainConfig:
    iterations: int = 10_000
    stripes_per_image: int = 10
    learning_rate: float = 5e-4
    final_learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # view count, "all", or an explicit tuple of angles in degrees
    views: int | str | tuple[float, ...] = "all"
    holdout_orthogonal: bool = False
    checkpoint_every: int = 0
    arch: ModelArch = field(default_factory=ModelArch)
    loss: LossConfig = field(default_factory=LossConfig)
    psf_axial_sigma: float = 2.0
    psf_lateral_sigma: float = 4.0
    psf_size: int = 11
    precision: str = "float32"
    deterministic: bool = True
    log_every: int = 100

    def validate(self) -> "TrainConfig":
        if self.iterations < 1:
            raise ContractError(f"iterations must be >= 1, got {self.iterations}")
        if self.stripes_per_image < 1:
            raise ContractError(f"stripes_per_image must be >= 1, got {self.stripes_per_image}")
        if self.learning_rate < 0 or self.final_learning_rate < 0:
            raise ContractError("learning rates must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractError(f"adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        Precision(self.precision)
        self.arch.validate()
        self.loss.validate()
        return self

    def kernel(self) -> PsfKernel:
        return make_kernel(self.psf_axial_sigma, self.psf_lateral_sigma, self.psf_size)

    def learning_rate_at(self, iteration: int) -> float:
        """Exponential decay from learning_rate to final_learning_rate at the last iteration."""
        if self.learning_rate == 0.0:
            return 0.0
        if self.final_learning_rate == 0.0:
            return self.learning_rate if iteration < self.iterations - 1 else 0.0
        progress = min(iteration, self.iterations - 1) / max(1, self.iterations - 1)
        return self.learning_rate * (self.final_learning_rate / self.learning_rate) ** progress

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "stripes_per_image": self.stripes_per_image,
            "learning_rate": self.learning_rate,
            "final_learning_rate": self.final_learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "views": list(self.views) if isinstance(self.views, tuple) else self.views,
            "holdout_orthogonal": self.holdout_orthogonal,
            "checkpoint_every": self.checkpoint_every,
            "arch": self.arch.to_dict(),
            "loss": {
                "lam": self.loss.lam,
                "ssim_window": self.loss.ssim_window,
                "ssim_sigma": self.loss.ssim_sigma,
                "k1": self.loss.k1,
                "k2": self.loss.k2,
                "data_range": self.loss.data_range,
            },
            "psf": {"axial_sigma": self.psf_axial_sigma, "lateral_sigma": self.psf_lateral_sigma, "size": self.psf_size},
            "precision": self.precision,
            "deterministic": self.deterministic,
        }


def select_views(
    total: int,
    requested: int,
    holdout_orthogonal: bool = False,
    orthogonal_index: int | None = None,
) -> list[int]:
    """Periodically spaced view indices; the orthogonal view is dropped first when held out."""
    if total < 1:
        raise ContractError(f"total angles must be >= 1, got {total}")
    ortho = (total - 1) // 2 if orthogonal_index is None else orthogonal_index
    if not 0 <= ortho < total:
        raise ContractError(f"orthogonal index {ortho} outside 0..{total - 1}")
    eligible = [i for i in range(total) if not (holdout_orthogonal and i == ortho)]
    if requested < 1 or requested > len(eligible):
        raise ContractError(f"requested {requested} views but only {len(eligible)} are available")
    if requested == len(eligible):
        return eligible
    if requested == 1:
        return [eligible[0]]
    stride = (len(eligible) - 1) / (requested - 1)
    return [eligible[int(math.floor(k * stride + 0.5))] for k in range(requested)]


def resolve_views(stack: PlaneWaveStack, cfg: TrainConfig) -> list[int]:
    ortho = stack.orthogonal_index()
    views = cfg.views
    if isinstance(views, str):
        if views.strip().lower() != "all":
            raise ContractError(f"views must be a count, 'all' or a list of angles, got {views!r}")
        return select_views(stack.num_angles, stack.num_angles - int(cfg.holdout_orthogonal), cfg.holdout_orthogonal, ortho)
    if isinstance(views, int):
        return select_views(stack.num_angles, views, cfg.holdout_orthogonal, ortho)
    among = [i for i in range(stack.num_angles) if not (cfg.holdout_orthogonal and i == ortho)]
    picked = sorted({stack.nearest_index(float(angle), among=among) for angle in views})
    if not picked:
        raise ContractError("explicit view list is empty")
    return picked


def stripe_bounds(height: int, count: int) -> list[tuple[int, int]]:
    count = max(1, min(count, height))
    edges = np.floor(np.linspace(0.0, float(height), count + 1) + 0.5).astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(count)]


@dataclass(frozen=True, slots=True)
class StripeBatch:
    angle_index: int
    stripe_index: int
    rows: tuple[int, int]
    region_rows: tuple[int, int]
    encoded_rows: tuple[int, int]
    gamma: EncodedBatch
    gt: np.ndarray

    @property
    def key(self) -> tuple[int, int]:
        return self.angle_index, self.stripe_index


def build_batch(
    stack: PlaneWaveStack,
    angle_index: int,
    stripe_index: int,
    cfg: TrainConfig,
    kernel: PsfKernel | None = None,
) -> StripeBatch:
    """Encode one stripe plus halo: SSIM rows around the interior, then PSF rows around those."""
    kernel = kernel or cfg.kernel()
    r0, r1 = stripe_bounds(stack.height, cfg.stripes_per_image)[stripe_index]
    ssim_halo = cfg.loss.window_radius
    g0, g1 = max(0, r0 - ssim_halo), min(stack.height, r1 + ssim_halo)
    e0, e1 = max(0, g0 - kernel.radius), min(stack.height, g1 + kernel.radius)
    precision = Precision(cfg.precision)
    coords = grid_coords(stack.height, stack.width, (e0, e1), stack.alpha_norm(angle_index))
    gamma = positional_encode(coords, cfg.arch.embedding_size, precision)
    gt = stack.normalized(angle_index)[g0:g1].astype(precision.dtype)
    return StripeBatch(
        angle_index=angle_index,
        stripe_index=stripe_index,
        rows=(r0, r1),
        region_rows=(g0, g1),
        encoded_rows=(e0, e1),
        gamma=gamma,
        gt=gt,
    )


def trace_stripe_loss(tape: Tape, params: ModelParams, batch: StripeBatch, cfg: TrainConfig, kernel: PsfKernel) -> int:
    e0, e1 = batch.encoded_rows
    g0, g1 = batch.region_rows
    r0, r1 = batch.rows
    width = batch.gt.shape[1]
    o = tape.reshape(trace_forward(tape, params, batch.gamma), (e1 - e0, width))
    rendered = tape.conv2d_separable(o, kernel)
    if (g0, g1) != (e0, e1):
        rendered = tape.rows(rendered, g0 - e0, g1 - e0)
    gt = tape.constant(batch.gt)
    return trace_combined_loss(tape, rendered, gt, cfg.loss, rows=(r0 - g0, r1 - g0))


@dataclass(slots=True)
class TrainState:
    params: ModelParams
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    rng: np.random.Generator
    view_indices: tuple[int, ...]
    iteration: int = 0
    order: list[int] = field(default_factory=list)
    cursor: int = 0
    losses: list[float] = field(default_factory=list)

    def pairs(self, stripes: int) -> list[tuple[int, int]]:
        return [(a, s) for a in self.view_indices for s in range(stripes)]

    def _ensure_order(self, count: int) -> None:
        if self.cursor >= len(self.order):
            self.order = [int(i) for i in self.rng.permutation(count)]
            self.cursor = 0

    def peek_pair(self, pairs: Sequence[tuple[int, int]]) -> tuple[int, int]:
        self._ensure_order(len(pairs))
        return pairs[self.order[self.cursor]]

    def take_pair(self, pairs: Sequence[tuple[int, int]]) -> tuple[int, int]:
        pair = self.peek_pair(pairs)
        self.cursor += 1
        return pair


def init_state(stack: PlaneWaveStack, cfg: TrainConfig, view_indices: Sequence[int] | None = None) -> TrainState:
    cfg.validate()
    params = init_params(cfg.arch, cfg.seed).astype(cfg.precision)
    views = tuple(view_indices) if view_indices is not None else tuple(resolve_views(stack, cfg))
    return TrainState(
        params=params,
        m={name: np.zeros_like(p) for name, p in params.named().items()},
        v={name: np.zeros_like(p) for name, p in params.named().items()},
        rng=np.random.default_rng([cfg.seed, 1]),
        view_indices=views,
    )


def adam_update(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    m: dict[str, np.ndarray],
    v: dict[str, np.ndarray],
    step: int,
    lr: float,
    cfg: TrainConfig,
) -> tuple[ModelParams, dict[str, np.ndarray], dict[str, np.ndarray]]:
    bias1 = 1.0 - cfg.beta1**step
    bias2 = 1.0 - cfg.beta2**step
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, value in params.named().items():
        grad = grads[name].astype(value.dtype, copy=False)
        m_t = cfg.beta1 * m[name] + (1.0 - cfg.beta1) * grad
        v_t = cfg.beta2 * v[name] + (1.0 - cfg.beta2) * grad * grad
        update = (m_t / bias1) / (np.sqrt(v_t / bias2) + cfg.eps)
        new_params[name] = (value - lr * update).astype(value.dtype, copy=False)
        new_m[name] = m_t.astype(value.dtype, copy=False)
        new_v[name] = v_t.astype(value.dtype, copy=False)
    return ModelParams.from_named(params.arch, new_params, params.seed), new_m, new_v


def train_step(
    state: TrainState,
    stack: PlaneWaveStack,
    cfg: TrainConfig,
    kernel: PsfKernel | None = None,
    batch: StripeBatch | None = None,
) -> tuple[TrainState, float]:
    kernel = kernel or cfg.kernel()
    pairs = state.pairs(len(stripe_bounds(stack.height, cfg.stripes_per_image)))
    angle_index, stripe_index = state.take_pair(pairs)
    if batch is None or batch.key != (angle_index, stripe_index):
        batch = build_batch(stack, angle_index, stripe_index, cfg, kernel)

    tape = Tape(cfg.precision)
    try:
        loss_node = trace_stripe_loss(tape, state.params, batch, cfg, kernel)
        loss = float(tape.value(loss_node))
        if not math.isfinite(loss):
            raise TrainingDiverged(state.iteration, angle_index, stripe_index, f"loss={loss}")
        grads = backward(tape, loss_node)
    except TrainingDiverged:
        raise
    except (NumericalError, FloatingPointError) as exc:
        raise TrainingDiverged(state.iteration, angle_index, stripe_index, str(exc)) from exc

    lr = cfg.learning_rate_at(state.iteration)
    state.params, state.m, state.v = adam_update(state.params, grads, state.m, state.v, state.iteration + 1, lr, cfg)
    state.iteration += 1
    state.losses.append(loss)
    return state, loss


def checkpoint_to_bytes(state: TrainState) -> bytes:
    weights = weights_to_bytes(state.params.astype(Precision.FLOAT32))
    writer = Writer()
    writer.u64(len(weights))
    writer.raw(weights)
    for moments in (state.m, state.v):
        for name in state.params.named():
            writer.array_f32(moments[name])
    meta = json.dumps(
        {
            "iteration": state.iteration,
            "cursor": state.cursor,
            "order": state.order,
            "view_indices": list(state.view_indices),
            "rng_state": state.rng.bit_generator.state,
            "losses": state.losses,
        },
        ensure_ascii=True,
    ).encode("ascii")
    writer.u64(len(meta))
    writer.raw(meta)
    return pack_file(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, writer.payload())


def checkpoint_from_bytes(data: bytes) -> TrainState:
    _, reader = unpack_file(data, CHECKPOINT_MAGIC, {CHECKPOINT_VERSION})
    (weights_len,) = reader.u64(what="weights length")
    weights_offset = reader.offset
    _, inner = unpack_file(reader.raw(weights_len, what="weights"), WEIGHTS_MAGIC, {WEIGHTS_VERSION})
    inner.base_offset = weights_offset + inner.base_offset
    params = read_params(inner)
    inner.expect_end()
    moments: list[dict[str, np.ndarray]] = [{}, {}]
    for slot, label in ((0, "adam m"), (1, "adam v")):
        for name, value in params.named().items():
            moments[slot][name] = reader.array_f32(value.shape, what=f"{label} {name}")
    (meta_len,) = reader.u64(what="metadata length")
    meta_offset = reader.offset
    try:
        meta = json.loads(reader.raw(meta_len, what="metadata").decode("ascii"))
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
        state = TrainState(
            params=params,
            m=moments[0],
            v=moments[1],
            rng=rng,
            view_indices=tuple(int(i) for i in meta["view_indices"]),
            iteration=int(meta["iteration"]),
            order=[int(i) for i in meta["order"]],
            cursor=int(meta["cursor"]),
            losses=[float(x) for x in meta["losses"]],
        )
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid checkpoint metadata: {exc}", offset=meta_offset) from exc
    reader.expect_end()
    return state


def save_checkpoint(state: TrainState, path: str | Path) -> int:
    return write_bytes(path, checkpoint_to_bytes(state))


def load_checkpoint(path: str | Path) -> TrainState:
    return checkpoint_from_bytes(Path(path).read_bytes())


@dataclass(slots=True)
class TrainingReport:
    losses: list[float]
    wall_time_s: float
    parameter_count: int
    view_indices: tuple[int, ...]
    holdout_index: int | None
    iterations: int
    stripes: int

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_loss": self.losses[-1] if self.losses else None,
            "wall_time_s": self.wall_time_s,
            "parameter_count": self.parameter_count,
            "view_indices": list(self.view_indices),
            "holdout_index": self.holdout_index,
            "stripes": self.stripes,
        }


@dataclass(slots=True)
class TrainResult:
    params: ModelParams
    report: TrainingReport
    state: TrainState


def write_loss_csv(path: str | Path, losses: Sequence[float]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss"])
        for index, loss in enumerate(losses, start=1):
            writer.writerow([index, repr(float(loss))])
    return target


def train(
    stack: PlaneWaveStack,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    events: EventLogger | None = None,
    resume_from: str | Path | None = None,
    verbose: bool = True,
) -> TrainResult:
    cfg.validate()
    kernel = cfg.kernel()
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.params.arch != cfg.arch:
            raise ContractError(f"checkpoint architecture {state.params.arch} does not match {cfg.arch}")
        state.params = state.params.astype(cfg.precision)
        state.m = {k: v.astype(Precision(cfg.precision).dtype) for k, v in state.m.items()}
        state.v = {k: v.astype(Precision(cfg.precision).dtype) for k, v in state.v.items()}
    else:
        state = init_state(stack, cfg)
    stripes = len(stripe_bounds(stack.height, cfg.stripes_per_image))
    pairs = state.pairs(stripes)
    holdout = stack.orthogonal_index() if cfg.holdout_orthogonal else None
    monitor = LossMonitor(window_size=max(1, min(100, cfg.iterations)))
    for loss in state.losses[-monitor.window_size :]:
        monitor.record(0, loss)

    if events is not None:
        events.write(
            "train_started",
            {
                "iterations": cfg.iterations,
                "start_iteration": state.iteration,
                "view_indices": list(state.view_indices),
                "holdout_index": holdout,
                "stripes": stripes,
                "parameter_count": parameter_count(cfg.arch),
                "config": cfg.to_dict(),
            },
        )
    if verbose:
        print(
            f"Starting training views={len(state.view_indices)} stripes={stripes} "
            f"iterations={cfg.iterations} params={parameter_count(cfg.arch)} start={state.iteration}"
        )

    pool = None if cfg.deterministic else ThreadPoolExecutor(max_workers=1)
    pending: Future[StripeBatch] | None = None
    started = time.perf_counter()
    try:
        while state.iteration < cfg.iterations:
            batch = pending.result() if pending is not None else None
            pending = None
            iteration = state.iteration
            try:
                state, loss = train_step(state, stack, cfg, kernel, batch)
            except TrainingDiverged as exc:
                if events is not None:
                    events.write(
                        "train_aborted",
                        {
                            "iteration": exc.iteration,
                            "angle_index": exc.angle_index,
                            "stripe_index": exc.stripe_index,
                            "reason": str(exc),
                        },
                    )
                raise
            if pool is not None and state.iteration < cfg.iterations:
                a, s = state.peek_pair(pairs)
                pending = pool.submit(build_batch, stack, a, s, cfg, kernel)
            monitor.record(iteration, loss)

            step = state.iteration
            if cfg.log_every > 0 and (step % cfg.log_every == 0 or step == cfg.iterations):
                stats = monitor.stats()
                lr = cfg.learning_rate_at(iteration)
                if verbose:
                    print(f"iter={step} loss={loss:.6f} mean={stats['mean']:.6f} p95={stats['p95']:.6f} lr={lr:.2e}")
                if events is not None:
                    events.write("train_progress", {"iteration": step, "loss": loss, "lr": lr, "window": stats})
                warning = monitor.plateau_warning()
                if warning:
                    if events is not None:
                        events.write("train_warning", {"iteration": step, "message": warning})
                    if verbose:
                        print(f"warning: {warning}")
            if out_dir is not None and cfg.checkpoint_every > 0 and step % cfg.checkpoint_every == 0:
                path = Path(out_dir) / f"checkpoint_{step:06d}.pwck"
                size = save_checkpoint(state, path)
                if events is not None:
                    events.write("checkpoint_saved", {"iteration": step, "path": str(path), "bytes": size})
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    wall = time.perf_counter() - started
    report = TrainingReport(
        losses=list(state.losses),
        wall_time_s=wall,
        parameter_count=state.params.parameter_count(),
        view_indices=state.view_indices,
        holdout_index=holdout,
        iterations=state.iteration,
        stripes=stripes,
    )
    if events is not None:
        events.write("train_ended", report.to_dict())
    if verbose:
        print(f"Training done iterations={state.iteration} final_loss={state.losses[-1]:.6f} wall_time_s={wall:.1f}")
    return TrainResult(params=state.params, report=report, state=state)
