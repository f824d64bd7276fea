import sys
import numpy as np
import pytest

from divsel.embeddings import EmbeddingSet, cosine_kernel


def make_set(vectors, prefix="x", role="corpus", labels=None):
    vectors = np.asarray(vectors, dtype=float)
    n = len(vectors)
    ids = tuple(f"{prefix}{i}" for i in range(n))
    return EmbeddingSet(ids, tuple(labels) if labels else (None,) * n, vectors, role)


def kernel_of(vectors):
    return cosine_kernel(make_set(vectors))


def write_text(path, rows):
    """rows: (id, label, vector) triples."""
    lines = [f"{rid}\t{label}\t{','.join(repr(float(v)) for v in vec)}\n" for rid, label, vec in rows]
    path.write_text("".join(lines), encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
