import io
import math

import numpy as np
import pytest

from divsel.embeddings import (
    EmbeddingFormatError,
    EmbeddingSet,
    SimilarityKernel,
    cosine_kernel,
    dispersion_stats,
    dump_embeddings,
    load_embeddings,
    read_embeddings,
    write_embeddings,
)
from divsel.errors import DataError
from divsel.synthetic import generate_synthetic

from conftest import kernel_of, make_set


def test_pythagorean_normalization():
    es = load_embeddings(b"a\t\t3,4\nb\tpos\t1,0\n")
    assert es.norms.tolist() == [5.0, 1.0]
    np.testing.assert_allclose(es.units, [[0.6, 0.8], [1.0, 0.0]])
    assert es.labels == (None, "pos")
    assert es.dimension == 2
    rec = es[0]
    assert rec.id == "a" and rec.norm == 5.0


def test_empty_input_loads():
    es = load_embeddings(b"")
    assert len(es) == 0
    assert es.dimension is None


def test_dimension_mismatch_names_second_record():
    with pytest.raises(EmbeddingFormatError) as exc:
        load_embeddings(b"a\t\t1,2,3\nb\t\t1,2,3,4\n", name="f.txt")
    assert "'b'" in str(exc.value)
    assert exc.value.line == 2
    assert str(exc.value).startswith("f.txt:2:")


@pytest.mark.parametrize("data, fragment", [
    (b"a\t\t0,0\n", "zero-norm"),
    (b"a\t\t1,0\na\t\t0,1\n", "duplicate id"),
    (b"a\t1,0\n", "3 tab-separated"),
    (b"a\t\t1,x\n", "unparseable"),
    (b"\t\t1,0\n", "empty id"),
    (b"a\t\t1,nan\n", "non-finite"),
    (b"a\t\t\xff\n", "UTF-8"),
])
def test_text_errors(data, fragment):
    with pytest.raises(EmbeddingFormatError, match=fragment):
        load_embeddings(data)


def test_errors_are_data_errors():
    with pytest.raises(DataError):
        load_embeddings(b"a\t\t0,0\n")


def test_zero_vector_rejected_in_constructor():
    with pytest.raises(EmbeddingFormatError, match="zero-norm"):
        make_set([[1.0, 0.0], [0.0, 0.0]])


def test_binary_round_trip_is_bit_exact(tmp_path):
    es = generate_synthetic(12, 5, 3, 0.3, seed=7)
    path = tmp_path / "c.bin"
    write_embeddings(es, path, "binary")
    once = read_embeddings(path, "binary")
    again = load_embeddings(dump_embeddings(once, "binary"), "binary")
    assert once.ids == es.ids and once.labels == es.labels
    assert once.norms.tobytes() == again.norms.tobytes()
    assert once.units.tobytes() == again.units.tobytes()
    np.testing.assert_allclose(once.vectors, es.vectors, rtol=1e-6)


def test_text_round_trip_is_exact():
    es = generate_synthetic(9, 4, 2, 0.5, seed=3)
    back = load_embeddings(dump_embeddings(es, "text"))
    assert back.vectors.tobytes() == es.vectors.tobytes()
    assert back.labels == es.labels


def test_binary_empty_label_and_unicode_id():
    es = EmbeddingSet(("é1", "b"), (None, "ok"), np.array([[1.0, 2.0], [0.5, -1.0]]))
    back = load_embeddings(io.BytesIO(dump_embeddings(es, "binary")), "binary")
    assert back.ids == ("é1", "b") and back.labels == (None, "ok")


@pytest.mark.parametrize("mutate, fragment", [
    (lambda b: b"XXXXX" + b[5:], "bad magic"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_binary_errors(mutate, fragment):
    es = make_set([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(EmbeddingFormatError, match=fragment):
        load_embeddings(mutate(dump_embeddings(es, "binary")), "binary")


def test_unknown_format():
    with pytest.raises(ValueError):
        load_embeddings(b"", "csv")


@pytest.mark.parametrize("v, expected", [
    ([0.0, 1.0], 0.0),
    ([1.0, 0.0], 1.0),
    ([1 / math.sqrt(2), 1 / math.sqrt(2)], 0.70710678),
])
def test_kernel_examples(v, expected):
    K = kernel_of([[1.0, 0.0], v])
    assert K.entries[0, 1] == pytest.approx(expected, abs=1e-8)


def test_kernel_contract(rng):
    for n in (1, 5, 20, 50):
        K = kernel_of(rng.standard_normal((n, 7)))
        W = K.entries
        assert np.allclose(np.diag(W), 1.0, atol=1e-9)
        assert np.abs(W - W.T).max() <= 1e-12
        assert W.min() >= -1 - 1e-9 and W.max() <= 1 + 1e-9
        assert np.linalg.eigvalsh(W).min() >= -1e-8
        assert not W.flags.writeable


def test_kernel_scale_invariance(rng):
    X = rng.standard_normal((15, 6))
    scaled = X * rng.uniform(0.01, 100, size=(15, 1))
    assert np.abs(kernel_of(X).entries - kernel_of(scaled).entries).max() <= 1e-9


def test_kernel_clamps_drift():
    K = kernel_of([[1e-3, 1.0], [1e-3, 1.0 + 1e-16], [1.0, 0.0]])
    assert np.abs(K.entries).max() <= 1.0


def test_union_kernel_and_l_ensemble():
    a = make_set([[3.0, 4.0], [1.0, 0.0]])
    b = make_set([[0.0, 2.0]], prefix="q", role="query")
    K = cosine_kernel(a, b)
    assert K.size == 3 and K.ids == ("x0", "x1", "q0")
    assert K.entries[1, 2] == 0.0
    L = K.l_ensemble()
    raw = np.array([[3.0, 4.0], [1.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(L, raw @ raw.T)


def test_union_dimension_mismatch():
    with pytest.raises(EmbeddingFormatError, match="dimension"):
        cosine_kernel(make_set([[1.0, 0.0]]), make_set([[1.0, 0.0, 0.0]], prefix="q"))


def test_kernel_bytes_round_trip(rng):
    K = kernel_of(rng.standard_normal((6, 3)))
    raw = K.to_bytes()
    assert len(raw) == 4 + 8 * 36
    assert SimilarityKernel.from_bytes(raw).entries.tobytes() == K.entries.tobytes()


def test_dispersion_examples():
    orth = dispersion_stats(kernel_of([[1.0, 0.0], [0.0, 1.0]]), [0, 1])
    assert orth == {"mean_pairwise_sim": 0.0, "min_pairwise_sim": 0.0, "logdet": 0.0}
    dup = dispersion_stats(kernel_of([[1.0, 0.0], [2.0, 0.0]]), [0, 1])
    assert dup["mean_pairwise_sim"] == 1.0
    assert dup["logdet"] == pytest.approx(math.log(1e-12))


def test_dispersion_errors():
    K = kernel_of([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        dispersion_stats(K, [0])
    with pytest.raises(ValueError):
        dispersion_stats(K, [0, 0])
