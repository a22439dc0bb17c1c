"""Single-process simulation of a sharded FP32 exponential moving average.

A flat parameter vector of length P is split into N contiguous shards, one per
logical worker. Each step every worker folds its slice of the current
parameters into its own EMA shard; nothing else is exchanged until the final
gather. The update is elementwise, so the gathered result must match a
monolithic EMA bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .imagecore import counter_rng

DEFAULT_DECAY = 0.999
BYTES_PER_FP32 = 4
GIB = 2**30

# Philox streams used by the trajectory generator.
_STREAM_INIT = 0
_STREAM_TARGET = 1
_STREAM_WALK = 2


@dataclass(frozen=True)
class ShardLayout:
    total_params: int
    workers: int
    ranges: tuple[tuple[int, int], ...]

    def sizes(self) -> list[int]:
        return [stop - start for start, stop in self.ranges]


def partition(total_params: int, workers: int) -> ShardLayout:
    """Contiguous near-equal split; the first ``P mod N`` shards get one extra."""
    if total_params < 1:
        raise ValueError(f"total_params must be >= 1, got {total_params}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if workers > total_params:
        raise ValueError(f"cannot split {total_params} params across {workers} workers")
    base, extra = divmod(total_params, workers)
    ranges = []
    start = 0
    for rank in range(workers):
        stop = start + base + (1 if rank < extra else 0)
        ranges.append((start, stop))
        start = stop
    return ShardLayout(total_params, workers, tuple(ranges))


@dataclass(frozen=True)
class EmaConfig:
    decay: float = DEFAULT_DECAY
    steps: int = 100
    update_every: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.update_every < 1:
            raise ValueError(f"update_every must be >= 1, got {self.update_every}")

    def updates_at(self, step: int) -> bool:
        """Whether the EMA is updated after 0-based ``step``."""
        return (step + 1) % self.update_every == 0


def ema_rate(decay: float) -> np.float32:
    """The single FP32 coefficient ``1 - decay`` used by every update."""
    return np.float32(1.0 - decay)


def effective_decay(decay: float) -> float:
    """Decay actually applied by the FP32 update: ``1 - float32(1 - decay)``."""
    return 1.0 - float(ema_rate(decay))


def _update(ema: np.ndarray, params: np.ndarray, decay: float) -> np.ndarray:
    # Same value as decay*ema + (1-decay)*params, written so that
    # params == ema leaves ema bit-identical under FP32 rounding.
    return ema - ema_rate(decay) * (ema - params)


@dataclass(frozen=True, eq=False)
class EmaWorkerState:
    worker_id: int
    range: tuple[int, int]
    ema_shard: np.ndarray

    def __post_init__(self) -> None:
        start, stop = self.range
        shard = np.asarray(self.ema_shard)
        if shard.dtype != np.float32:
            raise TypeError(f"EMA shard must be float32, got {shard.dtype}")
        if shard.shape != (stop - start,):
            raise ValueError(f"shard length {shard.shape} does not match range {self.range}")


def ema_step(worker: EmaWorkerState, params_shard: np.ndarray, decay: float) -> EmaWorkerState:
    """One update ``ema <- decay * ema + (1 - decay) * param`` on this shard.

    Evaluated as ``ema - (1 - decay) * (ema - param)`` in FP32.
    """
    params_shard = np.asarray(params_shard, dtype=np.float32)
    if params_shard.shape != worker.ema_shard.shape:
        raise ValueError(
            f"worker {worker.worker_id}: params length {params_shard.shape[0]} "
            f"!= shard length {worker.ema_shard.shape[0]}"
        )
    return EmaWorkerState(worker.worker_id, worker.range, _update(worker.ema_shard, params_shard, decay))


def shard_state(layout: ShardLayout, full: np.ndarray) -> list[EmaWorkerState]:
    full = np.asarray(full, dtype=np.float32)
    if full.shape != (layout.total_params,):
        raise ValueError(f"vector length {full.shape} does not match layout P={layout.total_params}")
    return [
        EmaWorkerState(rank, (start, stop), full[start:stop].copy())
        for rank, (start, stop) in enumerate(layout.ranges)
    ]


def gather(layout: ShardLayout, workers: Sequence[EmaWorkerState]) -> np.ndarray:
    """Concatenate worker shards in range order into one FP32 vector."""
    ordered = sorted(workers, key=lambda w: w.range)
    cursor = 0
    for worker in ordered:
        start, stop = worker.range
        if start < cursor:
            raise ValueError(f"worker {worker.worker_id} overlaps range ending at {cursor}")
        if start > cursor:
            raise ValueError(f"no worker covers [{cursor}, {start})")
        cursor = stop
    if cursor != layout.total_params:
        raise ValueError(f"no worker covers [{cursor}, {layout.total_params})")
    if not ordered:
        raise ValueError("no workers to gather")
    return np.concatenate([w.ema_shard for w in ordered]).astype(np.float32, copy=False)


def monolithic_ema(initial: np.ndarray, trajectory: Iterable[np.ndarray], config: EmaConfig) -> np.ndarray:
    """Reference EMA over the full vector; no sharding involved."""
    ema = np.array(initial, dtype=np.float32)
    for step, params in enumerate(trajectory):
        if step >= config.steps:
            break
        params = np.asarray(params, dtype=np.float32)
        if params.shape != ema.shape:
            raise ValueError(f"step {step}: params length {params.shape} != {ema.shape}")
        if config.updates_at(step):
            ema = _update(ema, params, config.decay)
    return ema


# -- trajectories ---------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySpec:
    """Deterministic parameter trajectory replayed identically for every N.

    ``random_walk``: params start at a Philox-seeded normal vector and take a
    Gaussian step of ``step_scale`` each iteration. ``constant``: params are a
    fixed vector different from the initial EMA. ``precision="fp16"`` rounds
    each emitted parameter vector through half precision, mimicking a
    low-precision training copy feeding the FP32 average.
    """

    total_params: int
    seed: int = 0
    mode: str = "random_walk"
    step_scale: float = 1e-2
    precision: str = "fp32"

    def __post_init__(self) -> None:
        if self.mode not in ("random_walk", "constant"):
            raise ValueError(f"unknown trajectory mode {self.mode!r}")
        if self.precision not in ("fp32", "fp16"):
            raise ValueError(f"unknown precision {self.precision!r}")

    def initial(self) -> np.ndarray:
        return counter_rng(self.seed, _STREAM_INIT).standard_normal(self.total_params, dtype=np.float32)

    def constant_target(self) -> np.ndarray:
        return self._emit(counter_rng(self.seed, _STREAM_TARGET).standard_normal(self.total_params, dtype=np.float32))

    def _emit(self, params: np.ndarray) -> np.ndarray:
        if self.precision == "fp16":
            return params.astype(np.float16).astype(np.float32)
        return params

    def __iter__(self) -> Iterator[np.ndarray]:
        if self.mode == "constant":
            target = self.constant_target()
            while True:
                yield target
        rng = counter_rng(self.seed, _STREAM_WALK)
        params = self.initial()
        scale = np.float32(self.step_scale)
        while True:
            params = params + scale * rng.standard_normal(self.total_params, dtype=np.float32)
            yield self._emit(params)


# -- reports --------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryReport:
    total_params: int
    workers: int
    per_worker_bytes: tuple[int, ...]
    total_bytes: int
    max_per_worker_bytes: int
    formula_check: bool

    @property
    def per_worker_gib(self) -> float:
        return self.max_per_worker_bytes / GIB

    @property
    def per_worker_gb(self) -> float:
        return self.max_per_worker_bytes / 1e9

    def to_dict(self) -> dict:
        return {
            "total_params": self.total_params,
            "workers": self.workers,
            "total_bytes": self.total_bytes,
            "max_per_worker_bytes": self.max_per_worker_bytes,
            "min_per_worker_bytes": min(self.per_worker_bytes),
            "per_worker_gb": self.per_worker_gb,
            "per_worker_gib": self.per_worker_gib,
            "formula_check": self.formula_check,
        }


def memory_report(layout: ShardLayout) -> MemoryReport:
    """FP32 EMA bytes held per worker; arithmetic only, nothing is allocated."""
    per_worker = tuple(size * BYTES_PER_FP32 for size in layout.sizes())
    max_bytes = max(per_worker)
    ceil_share = -(-layout.total_params // layout.workers)
    return MemoryReport(
        total_params=layout.total_params,
        workers=layout.workers,
        per_worker_bytes=per_worker,
        total_bytes=sum(per_worker),
        max_per_worker_bytes=max_bytes,
        formula_check=max_bytes == ceil_share * BYTES_PER_FP32
        and sum(per_worker) == layout.total_params * BYTES_PER_FP32,
    )


@dataclass(frozen=True)
class ComputeReport:
    total_params: int
    workers: int
    elements_per_step: tuple[int, ...]
    updates: int

    @property
    def max_fraction(self) -> float:
        """Largest per-worker share of the monolithic per-step work."""
        return max(self.elements_per_step) / self.total_params

    def to_dict(self) -> dict:
        return {
            "total_params": self.total_params,
            "workers": self.workers,
            "max_elements_per_worker_per_step": max(self.elements_per_step),
            "min_elements_per_worker_per_step": min(self.elements_per_step),
            "max_fraction": self.max_fraction,
            "ema_updates": self.updates,
        }


def compute_report(layout: ShardLayout, config: EmaConfig) -> ComputeReport:
    updates = sum(1 for step in range(config.steps) if config.updates_at(step))
    return ComputeReport(layout.total_params, layout.workers, tuple(layout.sizes()), updates)


@dataclass(frozen=True, eq=False)
class SimulationResult:
    sharded_result: np.ndarray
    monolithic_result: np.ndarray
    bitwise_equal: bool
    memory: MemoryReport
    compute: ComputeReport
    workers: list[EmaWorkerState] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "bitwise_equal": self.bitwise_equal,
            "memory": self.memory.to_dict(),
            "compute": self.compute.to_dict(),
        }


def bitwise_equal(a: np.ndarray, b: np.ndarray) -> bool:
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def simulate(
    total_params: int,
    workers: int,
    config: EmaConfig,
    trajectory_seed: int,
    *,
    mode: str = "random_walk",
    precision: str = "fp32",
    concurrency: int = 1,
) -> SimulationResult:
    """Run the sharded EMA in lock step and compare with the monolithic oracle.

    Within a step, shard updates touch disjoint ranges and may run on up to
    ``concurrency`` threads; the step boundary is a barrier.
    """
    layout = partition(total_params, workers)
    trajectory = TrajectorySpec(total_params, trajectory_seed, mode=mode, precision=precision)
    initial = trajectory.initial()
    states = shard_state(layout, initial)

    pool = ThreadPoolExecutor(max_workers=concurrency) if concurrency > 1 else None
    try:
        steps = iter(trajectory)
        for step in range(config.steps):
            params = next(steps)
            if not config.updates_at(step):
                continue
            jobs = [(s, params[s.range[0] : s.range[1]]) for s in states]
            if pool is None:
                states = [ema_step(s, shard, config.decay) for s, shard in jobs]
            else:
                states = list(pool.map(lambda job: ema_step(job[0], job[1], config.decay), jobs))
    finally:
        if pool is not None:
            pool.shutdown()

    sharded = gather(layout, states)
    monolithic = monolithic_ema(initial, iter(trajectory), config)
    return SimulationResult(
        sharded_result=sharded,
        monolithic_result=monolithic,
        bitwise_equal=bitwise_equal(sharded, monolithic),
        memory=memory_report(layout),
        compute=compute_report(layout, config),
        workers=states,
    )


def closed_form_constant(e0: np.ndarray, target: np.ndarray, decay: float, k: int) -> np.ndarray:
    """``p + decay**k * (e0 - p)`` in float64, using the decay the FP32 update applies."""
    beta = effective_decay(decay)
    e0 = np.asarray(e0, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return target + beta**k * (e0 - target)


def convergence_check(total_params: int, decay: float, steps: int, seed: int = 0) -> dict:
    """Worst deviation of the FP32 EMA from its closed form on a constant target.

    Error is measured relative to the per-element magnitude scale
    ``max(|e0|, |p|)`` and tracked at every step ``1..steps``.
    """
    trajectory = TrajectorySpec(total_params, seed, mode="constant")
    e0 = trajectory.initial()
    target = trajectory.constant_target()
    scale = np.maximum(np.abs(e0), np.abs(target)).astype(np.float64)
    scale[scale == 0] = 1.0
    ema = e0.copy()
    worst = 0.0
    worst_step = 0
    for k in range(1, steps + 1):
        ema = _update(ema, target, decay)
        err = float((np.abs(ema - closed_form_constant(e0, target, decay, k)) / scale).max())
        if err > worst:
            worst, worst_step = err, k
    return {"decay": decay, "steps": steps, "max_rel_error": worst, "worst_step": worst_step}


def fp32_rounding_bound(decay: float, k: int) -> float:
    """Relative bound on accumulated FP32 rounding after ``k`` updates.

    With ``|ema|, |p| <= S`` and ``c = 1 - decay``, one update rounds
    ``ema - p`` (at most ``2uS``), the product (``2ucS``) and the final
    subtraction (``uS``), where ``u = 2**-24``. The first two are scaled by
    ``c`` on the way in, so each step adds at most ``uS(1 + 4c)``, and earlier
    errors shrink by ``decay`` per step. A final ``u`` covers the float64
    closed form.
    """
    c = float(ema_rate(decay))
    beta = 1.0 - c
    u = 2.0**-24
    return u * (1.0 + 4.0 * c) * (1.0 + 2 * u) * (1.0 - beta**k) / c + u


def decimal_gb_per_worker(total_params: float, workers: int) -> float:
    """``params * 4 / N`` in units of 10**9 bytes."""
    return total_params * BYTES_PER_FP32 / workers / 1e9


__all__ = [
    "ComputeReport",
    "EmaConfig",
    "EmaWorkerState",
    "MemoryReport",
    "ShardLayout",
    "SimulationResult",
    "TrajectorySpec",
    "bitwise_equal",
    "closed_form_constant",
    "compute_report",
    "convergence_check",
    "ema_rate",
    "effective_decay",
    "ema_step",
    "fp32_rounding_bound",
    "gather",
    "memory_report",
    "monolithic_ema",
    "partition",
    "shard_state",
    "simulate",
]
