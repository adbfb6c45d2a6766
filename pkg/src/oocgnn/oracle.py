"""In-memory reference inference.

Deliberately implemented the opposite way round from the engine: it
gathers with a sparse matrix product over the whole graph at once, in
float64, with no chunking, no eviction and no spill files. Agreement
between the two routes is the correctness check for everything else.
"""

import numpy as np
import scipy.sparse as sp

from .errors import BudgetError
from .storage import GraphCSR, ModelKind, ModelWeights

DEFAULT_MEMORY_CAP = 4 << 30  # refuse to build matrices past this


def _gather_matrix(graph: GraphCSR) -> sp.csr_matrix:
    """Sparse (dest, src) adjacency: row v collects from its in-edges."""
    src, dst = graph.edge_arrays()
    n = graph.num_vertices
    data = np.ones(len(src), dtype=np.float64)
    return sp.csr_matrix((data, (dst, src)), shape=(n, n))


def oracle_inference(graph: GraphCSR, features: np.ndarray,
                     weights: ModelWeights, *,
                     memory_cap: int = DEFAULT_MEMORY_CAP) -> np.ndarray:
    """Full-graph layer-by-layer inference; returns float32 (V, out)."""
    v = graph.num_vertices
    widths = [features.shape[1]] + [lw.out_dim for lw in weights.layers]
    need = (v * max(widths) * 8) * 3 + graph.num_edges * 20
    if need > memory_cap:
        raise BudgetError(
            f"reference path would need ~{need >> 20} MiB, cap is "
            f"{memory_cap >> 20} MiB"
        )
    weights.validate(features.shape[1])
    adj = _gather_matrix(graph)
    inv_norm = 1.0 / np.maximum(graph.in_degrees, 1).astype(np.float64)

    h = features.astype(np.float64)
    last = len(weights.layers) - 1
    for i, lw in enumerate(weights.layers):
        agg = adj @ h
        if weights.kind == ModelKind.GCN:
            x = agg * inv_norm[:, None]
        elif weights.kind == ModelKind.SAGE:
            x = np.concatenate([agg * inv_norm[:, None], h], axis=1)
        else:  # sum aggregation plus scaled self term
            x = agg + (1.0 + weights.gin_epsilon) * h
        h = x @ lw.weight.T.astype(np.float64) + lw.bias.astype(np.float64)
        if i != last:
            np.maximum(h, 0.0, out=h)
    return h.astype(np.float32)
