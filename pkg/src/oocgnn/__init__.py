"""oocgnn: out-of-core GNN inference that broadcasts instead of gathering.

Embeddings stream through each layer exactly once in vertex-id order;
partial aggregates for destinations live in a fixed-size hot store and
spill to disk under pressure. The package also ships the in-memory
reference implementation, a vertex reordering pass, and the benchmark
harness used to compare eviction and ordering strategies.
"""

__version__ = "0.1.0"

from .storage import (  # noqa: F401
    GraphCSR,
    LayerMeta,
    ModelKind,
    ModelWeights,
    generate_synthetic,
    ingest_edge_list,
    read_csr,
    read_weights,
    write_csr,
    write_weights,
)
