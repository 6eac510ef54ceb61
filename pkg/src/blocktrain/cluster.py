"""Simulated N-worker cluster with barrier-synchronized block training.

Workers are long-lived threads that exchange data only through queues: the
coordinator hands out block commands, workers train on their own shard
stream, models are aggregated (either by the coordinator or peer-to-peer in
shards), the filtered global update runs, and the new global model is
broadcast back before the next block may start. A serial mode drives the
same worker objects in ascending index order and produces bit-identical
results, because every reduction sums in the same fixed order.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import Batch, ModelSpec, backward
from .numerics import ParamVector, frozen, mean_reduce
from .optim import SgdState, sgd_step
from .sync import ShadowState, SyncState, bmuf_apply, shadow_update

__all__ = [
    "ClusterConfig",
    "ShardPlan",
    "WorkerState",
    "Cluster",
    "make_shard_plan",
    "decentralized_aggregate",
]

TRANSPORTS = ("centralized", "decentralized")


@dataclass(frozen=True)
class ClusterConfig:
    num_workers: int = 8
    block_size: int = 16
    transport: str = "decentralized"
    seed: int = 0
    # momentum buffers normally persist across broadcasts; set True to zero
    # them whenever a new global model lands
    reset_momentum: bool = False

    def __post_init__(self) -> None:
        if self.num_workers < 1:
            raise ValueError(f"num_workers must be >= 1, got {self.num_workers}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if self.transport not in TRANSPORTS:
            raise ValueError(
                f"transport must be one of {TRANSPORTS}, got {self.transport!r}"
            )


@dataclass(frozen=True)
class ShardPlan:
    """Contiguous half-open ranges of the parameter vector, one per worker."""

    bounds: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.bounds) < 2 or self.bounds[0] != 0:
            raise ValueError("bounds must start at 0 and contain at least one range")
        if any(b > c for b, c in zip(self.bounds, self.bounds[1:])):
            raise ValueError("bounds must be non-decreasing")

    @property
    def param_len(self) -> int:
        return self.bounds[-1]

    @property
    def num_shards(self) -> int:
        return len(self.bounds) - 1

    def range_of(self, shard: int) -> tuple[int, int]:
        return self.bounds[shard], self.bounds[shard + 1]


def make_shard_plan(param_len: int, num_workers: int) -> ShardPlan:
    """Split ``[0, param_len)`` into ``num_workers`` near-equal ranges.

    The first ``param_len % num_workers`` ranges are one element longer;
    trailing ranges may be empty when there are more workers than elements.
    """
    if param_len < 0:
        raise ValueError("param_len must be non-negative")
    if num_workers < 1:
        raise ValueError("num_workers must be >= 1")
    base, rem = divmod(param_len, num_workers)
    bounds = [0]
    for j in range(num_workers):
        bounds.append(bounds[-1] + base + (1 if j < rem else 0))
    return ShardPlan(tuple(bounds))


def decentralized_aggregate(
    local_models: Sequence[ParamVector], plan: ShardPlan
) -> ParamVector:
    """Shard-wise mean over workers, reassembled into a full vector.

    Each shard is averaged in ascending worker order with the same centered
    form as :func:`~blocktrain.numerics.mean_reduce`, so the result equals
    the centralized mean bit for bit.
    """
    if len(local_models) == 0:
        raise ValueError("need at least one local model")
    n = len(local_models)
    for v in local_models:
        if len(v) != plan.param_len:
            raise ValueError(f"model length {len(v)} does not match plan {plan.param_len}")
    out = np.empty(plan.param_len)
    for j in range(plan.num_shards):
        lo, hi = plan.range_of(j)
        base = local_models[0].values[lo:hi]
        acc = np.zeros(hi - lo)
        for v in local_models[1:]:
            acc += v.values[lo:hi] - base
        acc /= n
        acc += base
        out[lo:hi] = acc
    return ParamVector(frozen(out))


@dataclass
class WorkerState:
    """One worker: local model, optimizer buffer, and its shard stream.

    The stream cycles through the worker's shard, reshuffled with the
    worker-owned generator at the start of every pass, so the visit order is
    a pure function of the generator seed regardless of scheduling.
    """

    index: int
    model: ParamVector
    opt: SgdState
    batches: tuple[Batch, ...]
    rng: np.random.Generator
    order: np.ndarray = field(init=False)
    cursor: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if len(self.batches) == 0:
            raise ValueError(f"worker {self.index} has an empty shard")
        self.order = self.rng.permutation(len(self.batches))

    def next_batch(self) -> Batch:
        if self.cursor >= len(self.order):
            self.order = self.rng.permutation(len(self.batches))
            self.cursor = 0
        batch = self.batches[self.order[self.cursor]]
        self.cursor += 1
        return batch

    def run_local_block(self, spec: ModelSpec, block_size: int) -> None:
        for _ in range(block_size):
            _, grad = backward(spec, self.model, self.next_batch())
            self.model, self.opt = sgd_step(self.model, grad, self.opt)


class Cluster:
    """Coordinator plus N workers; one ``run_block`` call per sync block.

    With ``threaded=True`` the workers run as daemon threads and all data
    crosses thread boundaries through queues. With ``threaded=False`` the
    same worker objects are stepped in ascending index order on the calling
    thread; both modes produce bitwise-identical trajectories.

    ``event_log``, when given, receives ``(phase, block_index, worker)``
    tuples from worker threads; tests use it to check the barrier protocol.
    """

    def __init__(
        self,
        spec: ModelSpec,
        workers: Sequence[WorkerState],
        sync_state: SyncState,
        shadow_state: ShadowState | None,
        config: ClusterConfig,
        *,
        threaded: bool = True,
        event_log: list | None = None,
    ) -> None:
        if len(workers) != config.num_workers:
            raise ValueError(
                f"config says {config.num_workers} workers, got {len(workers)}"
            )
        self.spec = spec
        self.workers = list(workers)
        self.sync_state = sync_state
        self.shadow_state = shadow_state
        self.config = config
        self.threaded = threaded
        self.event_log = event_log
        self.plan = make_shard_plan(len(sync_state.global_model), config.num_workers)
        self._results: queue.Queue = queue.Queue()
        self._inboxes: list[queue.Queue] = []
        self._shard_in: list[queue.Queue] = []
        self._gather_in: list[queue.Queue] = []
        self._threads: list[threading.Thread] = []
        if threaded:
            for w in self.workers:
                self._inboxes.append(queue.Queue())
                self._shard_in.append(queue.Queue())
                self._gather_in.append(queue.Queue())
            for w in self.workers:
                t = threading.Thread(
                    target=self._worker_loop, args=(w,), daemon=True
                )
                t.start()
                self._threads.append(t)

    # -- worker side ---------------------------------------------------

    def _worker_loop(self, w: WorkerState) -> None:
        try:
            while True:
                msg = self._inboxes[w.index].get()
                if msg[0] == "stop":
                    return
                if msg[0] == "block":
                    block_index = msg[1]
                    if self.event_log is not None:
                        self.event_log.append(("start", block_index, w.index))
                    w.run_local_block(self.spec, self.config.block_size)
                    if self.config.transport == "centralized":
                        self._results.put(("local", w.index, w.model))
                    else:
                        self._results.put(("mean", w.index, self._p2p_aggregate(w)))
                elif msg[0] == "model":
                    block_index, model = msg[1], msg[2]
                    self._apply_broadcast(w, model)
                    if self.event_log is not None:
                        self.event_log.append(("applied", block_index, w.index))
                    self._results.put(("applied", w.index, None))
        except BaseException as exc:  # surface worker crashes to the coordinator
            self._results.put(("error", w.index, exc))

    def _apply_broadcast(self, w: WorkerState, model: ParamVector) -> None:
        w.model = model
        if self.config.reset_momentum:
            w.opt = SgdState.initial(
                len(model), w.opt.learning_rate, w.opt.momentum
            )

    def _p2p_aggregate(self, w: WorkerState) -> ParamVector:
        """Reduce-scatter then all-gather through the per-worker queues."""
        n = self.config.num_workers
        values = w.model.values
        for peer in range(n):
            lo, hi = self.plan.range_of(peer)
            self._shard_in[peer].put((w.index, values[lo:hi]))
        parts = sorted(self._shard_in[w.index].get() for _ in range(n))
        base = parts[0][1]
        acc = np.zeros(base.shape[0])
        for _, arr in parts[1:]:
            acc += arr - base
        acc /= n
        acc += base
        acc = frozen(acc)
        for peer in range(n):
            self._gather_in[peer].put((w.index, acc))
        pieces = sorted(self._gather_in[w.index].get() for _ in range(n))
        return ParamVector(frozen(np.concatenate([arr for _, arr in pieces])))

    # -- coordinator side ----------------------------------------------

    def _collect(self, expected_kind: str) -> list[tuple[int, object]]:
        got = []
        for _ in range(self.config.num_workers):
            kind, index, payload = self._results.get()
            if kind == "error":
                raise payload
            if kind != expected_kind:
                raise RuntimeError(f"protocol error: expected {expected_kind}, got {kind}")
            got.append((index, payload))
        return sorted(got)

    def run_block(self) -> SyncState:
        """Train one block on every worker, synchronize, broadcast.

        Returns the new sync state; afterwards every worker's local model is
        the freshly broadcast global model, while momentum buffers persist.
        """
        block_index = self.sync_state.block_index + 1
        if self.threaded:
            for inbox in self._inboxes:
                inbox.put(("block", block_index))
            if self.config.transport == "centralized":
                locals_ = [m for _, m in self._collect("local")]
                theta_bar = mean_reduce(locals_)
            else:
                theta_bar = self._collect("mean")[0][1]
        else:
            for w in self.workers:
                w.run_local_block(self.spec, self.config.block_size)
            locals_ = [w.model for w in self.workers]
            if self.config.transport == "centralized":
                theta_bar = mean_reduce(locals_)
            else:
                theta_bar = decentralized_aggregate(locals_, self.plan)
        self.sync_state = bmuf_apply(self.sync_state, theta_bar)
        if self.shadow_state is not None:
            self.shadow_state = shadow_update(
                self.shadow_state, self.sync_state.global_model
            )
        new_model = self.sync_state.global_model
        if self.threaded:
            for inbox in self._inboxes:
                inbox.put(("model", block_index, new_model))
            self._collect("applied")
        else:
            for w in self.workers:
                self._apply_broadcast(w, new_model)
        return self.sync_state

    def close(self) -> None:
        for inbox in self._inboxes:
            inbox.put(("stop",))
        for t in self._threads:
            t.join()
        self._threads = []

    def __enter__(self) -> "Cluster":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
