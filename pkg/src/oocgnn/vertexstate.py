"""Per-vertex lifecycle state machine.

Legal edges only:

    NOT_STARTED -> HOT         first message or self term arrives
    HOT         -> COLD        evicted with pending messages left
    HOT         -> COMPLETED   pending hit zero, row graduated
    COLD        -> HOT         reloaded

Nothing ever leaves COMPLETED and nothing enters COLD except from HOT.
Transitions are applied in bulk and checked on every call; an illegal
edge raises instead of being counted and ignored.
"""

import numpy as np

from .errors import StateTransitionError

NOT_STARTED = 0
HOT = 1
COLD = 2
COMPLETED = 3

STATE_NAMES = {
    NOT_STARTED: "NOT_STARTED",
    HOT: "HOT",
    COLD: "COLD",
    COMPLETED: "COMPLETED",
}

LEGAL_EDGES = frozenset(
    {
        (NOT_STARTED, HOT),
        (HOT, COLD),
        (HOT, COMPLETED),
        (COLD, HOT),
    }
)


class StateTable:
    """Dense uint8 state array plus a tally of every edge taken."""

    def __init__(self, num_vertices: int):
        self.array = np.zeros(num_vertices, dtype=np.uint8)
        self.edge_counts: dict[tuple[int, int], int] = {}

    def transition(self, ids: np.ndarray, src: int, dst: int) -> None:
        """Move every id from src to dst, or raise without mutating."""
        if (src, dst) not in LEGAL_EDGES:
            raise StateTransitionError(
                f"illegal edge {STATE_NAMES[src]} -> {STATE_NAMES[dst]}"
            )
        cur = self.array[ids]
        if not np.all(cur == src):
            bad = np.asarray(ids)[cur != src]
            have = self.array[bad[0]]
            raise StateTransitionError(
                f"vertex {int(bad[0])} is {STATE_NAMES[int(have)]}, "
                f"expected {STATE_NAMES[src]} (and {bad.size - 1} more)"
            )
        self.array[ids] = dst
        key = (src, dst)
        self.edge_counts[key] = self.edge_counts.get(key, 0) + len(ids)

    def counts(self) -> dict[str, int]:
        uniq, n = np.unique(self.array, return_counts=True)
        return {STATE_NAMES[int(s)]: int(c) for s, c in zip(uniq, n)}

    def illegal_edges_taken(self) -> int:
        """Edges recorded outside the legal set. Always zero unless the
        checking above is bypassed; kept as an explicit instrument."""
        return sum(
            c for e, c in self.edge_counts.items() if e not in LEGAL_EDGES
        )
