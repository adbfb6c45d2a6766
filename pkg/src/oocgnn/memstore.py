"""Tiered storage for partially-aggregated destination vertices.

The hot store is a fixed block of float32 slots; it never grows. When
admission needs room, the eviction policy picks victims, whose rows are
appended to a flat cold file on disk (buffered I/O; these are small,
random-ish records and the page cache is the right tool). Reloading
pops the record back and frees its file slot for reuse.

The default policy keeps vertices keyed by how many messages they still
wait for, in an array of FIFO buckets: one doubly-linked list per
pending count. Selection pops from the lowest non-empty bucket, oldest
entry first, so victims are the vertices closest to graduating and ties
break in arrival order.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    BudgetError,
    ConfigError,
    ConsistencyError,
    InvariantError,
    StateTransitionError,
)
from .iostats import IOCounters, StageCounters
from .vertexstate import COLD, COMPLETED, HOT, NOT_STARTED, StateTable


class ColdStore:
    """Flat record file with a free list; one record per evicted vertex."""

    def __init__(self, path, dim: int, counters: IOCounters):
        self.path = os.fspath(path)
        self.dim = dim
        self.record_bytes = dim * 4
        self._f = open(self.path, "w+b", buffering=0)
        self._index: dict[int, int] = {}  # vertex -> record number
        self._free: list[int] = []
        self._next = 0
        self.high_water = 0
        self._io = counters

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, vertex: int) -> bool:
        return vertex in self._index

    def put_many(self, vertices, rows: np.ndarray) -> None:
        for v, row in zip(vertices, rows):
            if v in self._index:
                raise ConsistencyError(f"vertex {v} already in cold store")
            if self._free:
                rec = self._free.pop()
            else:
                rec = self._next
                self._next += 1
            self._index[v] = rec
            self._f.seek(rec * self.record_bytes)
            self._f.write(row.tobytes())
            self._io.cold_bytes_written += self.record_bytes
        self.high_water = max(self.high_water, len(self._index))

    def pop_many(self, vertices) -> np.ndarray:
        out = np.empty((len(vertices), self.dim), dtype=np.float32)
        for i, v in enumerate(vertices):
            rec = self._index.pop(v, None)
            if rec is None:
                raise ConsistencyError(
                    f"vertex {v} reloaded but never evicted"
                )
            self._f.seek(rec * self.record_bytes)
            raw = self._f.read(self.record_bytes)
            if len(raw) != self.record_bytes:
                raise ConsistencyError(f"cold record {rec} short")
            out[i] = np.frombuffer(raw, dtype=np.float32)
            self._io.cold_bytes_read += self.record_bytes
            self._free.append(rec)
        return out

    def close(self, delete: bool = True) -> None:
        self._f.close()
        if delete:
            try:
                os.unlink(self.path)
            except FileNotFoundError:
                pass


class _Node:
    __slots__ = ("vertex", "bucket", "prev", "next")

    def __init__(self, vertex: int, bucket: int):
        self.vertex = vertex
        self.bucket = bucket
        self.prev = None
        self.next = None


class PendingBucketHeap:
    """Bucketed min-structure over small integer keys.

    insert / move / remove are O(1); pop_min is O(1) amortized because
    keys only decrease, so the minimum pointer only ever needs to scan
    forward past buckets it already drained.
    """

    def __init__(self, max_key: int):
        self.max_key = max_key
        self._heads = [None] * (max_key + 1)
        self._tails = [None] * (max_key + 1)
        self._nodes: dict[int, _Node] = {}
        self._min = max_key + 1

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, vertex: int) -> bool:
        return vertex in self._nodes

    def key_of(self, vertex: int) -> int:
        return self._nodes[vertex].bucket

    def _link_tail(self, node: _Node) -> None:
        b = node.bucket
        tail = self._tails[b]
        node.prev = tail
        node.next = None
        if tail is None:
            self._heads[b] = node
        else:
            tail.next = node
        self._tails[b] = node
        if b < self._min:
            self._min = b

    def _unlink(self, node: _Node) -> None:
        b = node.bucket
        if node.prev is None:
            self._heads[b] = node.next
        else:
            node.prev.next = node.next
        if node.next is None:
            self._tails[b] = node.prev
        else:
            node.next.prev = node.prev
        node.prev = node.next = None

    def insert(self, vertex: int, key: int) -> None:
        if vertex in self._nodes:
            raise InvariantError(f"vertex {vertex} already in heap")
        if not 0 <= key <= self.max_key:
            raise InvariantError(f"key {key} outside [0, {self.max_key}]")
        node = _Node(vertex, key)
        self._nodes[vertex] = node
        self._link_tail(node)

    def move(self, vertex: int, new_key: int) -> None:
        """Re-key a vertex. Keys only decrease; enforced here."""
        node = self._nodes[vertex]
        if new_key == node.bucket:
            return
        if new_key > node.bucket:
            raise InvariantError(
                f"vertex {vertex}: key may only decrease "
                f"({node.bucket} -> {new_key})"
            )
        self._unlink(node)
        node.bucket = new_key
        self._link_tail(node)

    def remove(self, vertex: int) -> None:
        node = self._nodes.pop(vertex)
        self._unlink(node)

    def pop_min(self, k: int) -> list:
        """Remove and return up to k vertices, lowest key first, FIFO
        within a key."""
        out = []
        b = self._min
        while len(out) < k and b <= self.max_key:
            head = self._heads[b]
            if head is None:
                b += 1
                continue
            self._unlink(head)
            del self._nodes[head.vertex]
            out.append(head.vertex)
        self._min = b
        return out


class MinPendingPolicy:
    """Evict the vertices nearest to graduating (paper default)."""

    name = "minpend"

    def __init__(self, max_pending: int):
        self.heap = PendingBucketHeap(max_pending)

    def on_admit(self, vertex: int, pending: int) -> None:
        self.heap.insert(vertex, pending)

    def on_message(self, vertex: int, new_pending: int) -> None:
        self.heap.move(vertex, new_pending)

    def on_remove(self, vertex: int) -> None:
        self.heap.remove(vertex)

    def choose_victims(self, k: int) -> list:
        return self.heap.pop_min(k)


class LruPolicy:
    """Evict the vertex untouched the longest."""

    name = "lru"

    def __init__(self):
        from collections import OrderedDict

        self._order = OrderedDict()

    def on_admit(self, vertex: int, pending: int) -> None:
        self._order[vertex] = None

    def on_message(self, vertex: int, new_pending: int) -> None:
        self._order.move_to_end(vertex)

    def on_remove(self, vertex: int) -> None:
        del self._order[vertex]

    def choose_victims(self, k: int) -> list:
        return [self._order.popitem(last=False)[0] for _ in range(k)]


class RandomPolicy:
    """Evict uniformly at random; seeded, so runs stay reproducible."""

    name = "rnd"

    def __init__(self, seed: int):
        self._rng = np.random.default_rng(seed)
        self._members: list[int] = []
        self._pos: dict[int, int] = {}

    def on_admit(self, vertex: int, pending: int) -> None:
        self._pos[vertex] = len(self._members)
        self._members.append(vertex)

    def on_message(self, vertex: int, new_pending: int) -> None:
        pass

    def _swap_remove(self, idx: int) -> int:
        last = self._members.pop()
        victim = last if idx == len(self._members) else self._members[idx]
        if idx < len(self._members):
            self._members[idx] = last
            self._pos[last] = idx
        del self._pos[victim]
        return victim

    def on_remove(self, vertex: int) -> None:
        self._swap_remove(self._pos[vertex])

    def choose_victims(self, k: int) -> list:
        return [
            self._swap_remove(int(self._rng.integers(len(self._members))))
            for _ in range(k)
        ]


def make_policy(name: str, max_pending: int, seed: int):
    if name == "minpend":
        return MinPendingPolicy(max_pending)
    if name == "lru":
        return LruPolicy()
    if name == "rnd":
        return RandomPolicy(seed)
    raise ConfigError(f"unknown eviction policy {name!r}")


@dataclass
class MemoryBudget:
    slot_count: int
    slot_dim: int

    @property
    def slot_bytes(self) -> int:
        return self.slot_dim * 4

    @classmethod
    def from_bytes(cls, budget_bytes: int, slot_dim: int) -> "MemoryBudget":
        slots = budget_bytes // (slot_dim * 4)
        if slots < 1:
            raise ConfigError(
                f"budget {budget_bytes} B holds no {slot_dim}-wide slot"
            )
        return cls(slots, slot_dim)


class MemoryManager:
    """Owns the hot slots, the cold file, and every state transition.

    Slot count is fixed at construction; the hot population can never
    exceed it (checked after each mutating call). Vertices are admitted
    zeroed, accumulate messages in place, spill whole rows under
    pressure, and leave exactly once via release().
    """

    def __init__(self, budget: MemoryBudget, pending: np.ndarray,
                 states: StateTable, policy, cold_path,
                 io: IOCounters, counters: StageCounters,
                 evict_batch: int | None = None):
        self.slot_count = budget.slot_count
        self.slot_dim = budget.slot_dim
        self.slots = np.zeros((self.slot_count, self.slot_dim),
                              dtype=np.float32)
        self.slot_of: dict[int, int] = {}
        self._free = list(range(self.slot_count - 1, -1, -1))
        self.pending = pending  # uint32, shared with the orchestrator
        self.states = states
        self.policy = policy
        self.cold = ColdStore(cold_path, self.slot_dim, io)
        self.counters = counters
        # default eviction batch: 1% of capacity, at least one
        self.evict_batch = evict_batch or max(1, self.slot_count // 100)
        self.unique_reloaded = np.zeros(len(pending), dtype=bool)

    # -- invariants ---------------------------------------------------

    def _check_budget(self) -> None:
        if len(self.slot_of) > self.slot_count:
            raise BudgetError(
                f"hot population {len(self.slot_of)} exceeds "
                f"{self.slot_count} slots"
            )
        if len(self.slot_of) > self.counters.hot_peak:
            self.counters.hot_peak = len(self.slot_of)

    def hot_population(self) -> int:
        return len(self.slot_of)

    # -- single-vertex operations (contract surface) -------------------

    def admit(self, vertex: int) -> int:
        """Bring a NOT_STARTED vertex hot with a zeroed slot."""
        self._admit_batch(np.asarray([vertex]), NOT_STARTED, None)
        return self.slot_of[vertex]

    def reload(self, vertex: int) -> int:
        """Bring an evicted vertex back hot with its saved partial."""
        self._reload_batch(np.asarray([vertex]))
        return self.slot_of[vertex]

    def accumulate(self, vertex: int, message: np.ndarray,
                   combine: str = "sum", count: int = 1) -> int:
        """Apply one delivery to a hot vertex; returns pending left."""
        slot = self.slot_of.get(vertex)
        if slot is None:
            raise ConsistencyError(f"vertex {vertex} is not hot")
        width = len(message)
        if combine == "sum":
            self.slots[slot, :width] += message
        elif combine == "write_self_half":
            if 2 * width != self.slot_dim:
                raise InvariantError(
                    f"self half is {width} wide, slots are {self.slot_dim}"
                )
            self.slots[slot, width:] = message
        else:
            raise ConfigError(f"unknown combine {combine!r}")
        if self.pending[vertex] < count:
            raise ConsistencyError(
                f"vertex {vertex}: {count} deliveries with only "
                f"{int(self.pending[vertex])} pending"
            )
        self.pending[vertex] -= np.uint32(count)
        left = int(self.pending[vertex])
        self.policy.on_message(vertex, left)
        self.counters.messages += count
        return left

    def release(self, vertex: int) -> np.ndarray:
        """Remove a finished vertex and hand back its aggregate row."""
        if self.pending[vertex] != 0:
            raise ConsistencyError(
                f"vertex {vertex} released with "
                f"{int(self.pending[vertex])} pending"
            )
        rows = self.release_batch(np.asarray([vertex]))
        return rows[0]

    def evict(self, k: int) -> list:
        """Spill up to k policy-chosen victims to the cold store."""
        k = min(k, len(self.slot_of))
        if k == 0:
            return []
        victims = self.policy.choose_victims(k)
        varr = np.asarray(victims, dtype=np.int64)
        slots_idx = [self.slot_of[v] for v in victims]
        self.cold.put_many(victims, self.slots[slots_idx])
        self.states.transition(varr, HOT, COLD)
        for v, s in zip(victims, slots_idx):
            del self.slot_of[v]
            self._free.append(s)
        self.counters.evictions += k
        return victims

    # -- batch operations (orchestrator hot path) ----------------------

    def _make_room(self, n: int) -> None:
        if n > self.slot_count:
            raise ConfigError(
                f"batch of {n} cannot fit in {self.slot_count} slots"
            )
        while len(self._free) < n:
            self.evict(max(self.evict_batch, n - len(self._free)))

    def _admit_batch(self, vertices: np.ndarray, from_state: int,
                     rows: np.ndarray | None) -> None:
        n = len(vertices)
        self._make_room(n)
        slots_idx = self._free[-n:]
        del self._free[-n:]
        if rows is None:
            self.slots[slots_idx] = 0.0
        else:
            self.slots[slots_idx] = rows
        self.states.transition(vertices, from_state, HOT)
        pend = self.pending[vertices]
        for v, s, p in zip(vertices.tolist(), slots_idx, pend.tolist()):
            self.slot_of[v] = s
            self.policy.on_admit(v, int(p))
        self.counters.admissions += n
        self._check_budget()

    def _reload_batch(self, vertices: np.ndarray) -> None:
        rows = self.cold.pop_many(vertices.tolist())
        self._admit_batch(vertices, COLD, rows)
        self.counters.reloads += len(vertices)
        self.unique_reloaded[vertices] = True

    def ensure_hot_many(self, vertices: np.ndarray) -> np.ndarray:
        """Make every vertex hot; returns their slot indices in order.

        vertices must be unique and no larger than the slot budget.
        Eviction interleaves with classification: making room can push
        some of the requested set back to COLD, so loop until the whole
        set fits in free slots, then admit and reload in two batches.
        """
        while True:
            st = self.states.array[vertices]
            if st.max(initial=0) > COLD:
                bad = vertices[st > COLD][:4]
                raise StateTransitionError(
                    f"completed vertices offered messages: {bad.tolist()}"
                )
            need = int(np.count_nonzero(st != HOT))
            if need <= len(self._free):
                break
            self._make_room(need)
        fresh = vertices[st == NOT_STARTED]
        cold = vertices[st == COLD]
        if fresh.size:
            self._admit_batch(fresh, NOT_STARTED, None)
        if cold.size:
            self._reload_batch(cold)
        get = self.slot_of
        return np.fromiter(
            (get[v] for v in vertices.tolist()),
            dtype=np.int64,
            count=len(vertices),
        )

    def release_batch(self, vertices: np.ndarray) -> np.ndarray:
        """Release many finished vertices; returns their rows, in order."""
        if np.any(self.pending[vertices] != 0):
            bad = vertices[self.pending[vertices] != 0][:4]
            raise ConsistencyError(
                f"release with pending messages: vertices {bad.tolist()}"
            )
        slots_idx = [self.slot_of[v] for v in vertices.tolist()]
        rows = self.slots[slots_idx].copy()
        self.states.transition(vertices, HOT, COMPLETED)
        for v, s in zip(vertices.tolist(), slots_idx):
            del self.slot_of[v]
            self._free.append(s)
            self.policy.on_remove(v)
        self.counters.graduations += len(vertices)
        return rows

    def close(self, delete_cold: bool = True) -> None:
        self.cold.close(delete=delete_cold)
