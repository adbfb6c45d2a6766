"""Shared fixtures: the six-vertex hand graph, two synthetic corpora,
and the acceptance results table printed after the run."""

import numpy as np
import pytest

from oocgnn.storage import (
    edges_to_csr,
    generate_synthetic,
    write_csr,
    write_matrix_as_layer,
)

# Six-vertex hand graph used throughout: 0 and 4 feed {1,3}, 2 feeds 3,
# vertex 5 is isolated. in_degrees = [0,2,0,3,0,0].
FIG2_EDGES = [(0, 1), (0, 3), (2, 3), (4, 1), (4, 3)]
FIG2_V = 6


def fig2_csr():
    src = np.array([e[0] for e in FIG2_EDGES], dtype=np.int64)
    dst = np.array([e[1] for e in FIG2_EDGES], dtype=np.int64)
    return edges_to_csr(src, dst, FIG2_V)


@pytest.fixture
def fig2_graph():
    return fig2_csr()


def make_dataset(dirpath, graph, features, partitions=1, dtype="f32"):
    """Write a complete dataset directory from in-memory pieces."""
    write_csr(graph, dirpath)
    write_matrix_as_layer(
        dirpath / "features", features, partitions=partitions, dtype=dtype
    )
    return dirpath


@pytest.fixture
def fig2_dataset(tmp_path, fig2_graph):
    rng = np.random.default_rng(3)
    feats = rng.uniform(-1, 1, (FIG2_V, 8)).astype(np.float32)
    return make_dataset(tmp_path / "fig2", fig2_graph, feats), feats


@pytest.fixture(scope="session")
def uniform_ds(tmp_path_factory):
    """Medium corpus: seeded uniform graph, |V|=10^4, |E|~=10^5, dim 32."""
    d = tmp_path_factory.mktemp("uniform") / "ds"
    summary = generate_synthetic("uniform", 10_000, 10, 32, 7, d)
    return d, summary


@pytest.fixture(scope="session")
def pa_ds(tmp_path_factory):
    """Large corpus: seeded preferential attachment, |V|=10^5, |E|~=10^6,
    dim 64."""
    d = tmp_path_factory.mktemp("pa") / "ds"
    summary = generate_synthetic("pa", 100_000, 10, 64, 12, d)
    return d, summary


# -- acceptance reporting ---------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[num]
        verdict = "PASS" if ok else "FAIL"
        tr.write_line(f"criterion {num:2d}: {verdict}  {detail}")
