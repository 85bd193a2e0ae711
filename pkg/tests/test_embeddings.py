"""Embedding storage and toy encoder tests."""

import struct

import numpy as np
import pytest

from blendrank.embeddings import (EmbeddingMatrix, cosine, load_embeddings,
                                  save_embeddings, toy_encode)


class TestStorage:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = rng.normal(size=(5, 7)).astype(np.float32)
        path = tmp_path / "e.crem"
        save_embeddings(EmbeddingMatrix(rows), path)
        loaded = load_embeddings(path, expected_rows=5)
        assert loaded.rows.tobytes() == rows.tobytes()
        save_embeddings(loaded, tmp_path / "e2.crem")
        assert (tmp_path / "e2.crem").read_bytes() == path.read_bytes()

    def test_shape_from_header(self, tmp_path):
        path = tmp_path / "e.crem"
        save_embeddings(np.arange(8, dtype=np.float32).reshape(2, 4), path)
        m = load_embeddings(path)
        assert m.rows.shape == (2, 4)

    def test_expected_rows_mismatch(self, tmp_path):
        path = tmp_path / "e.crem"
        save_embeddings(np.zeros((3, 4), dtype=np.float32), path)
        with pytest.raises(ValueError, match="expected 2 rows"):
            load_embeddings(path, expected_rows=2)

    def test_nan_payload_rejected(self, tmp_path):
        path = tmp_path / "e.crem"
        with open(path, "wb") as f:
            f.write(b"CREM1")
            f.write(struct.pack("<II", 1, 2))
            f.write(struct.pack("<ff", 1.0, float("nan")))
        with pytest.raises(ValueError, match="non-finite"):
            load_embeddings(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "e.crem"
        with open(path, "wb") as f:
            f.write(b"CREM1")
            f.write(struct.pack("<II", 2, 2))
            f.write(struct.pack("<f", 1.0))
        with pytest.raises(ValueError, match="payload"):
            load_embeddings(path)

    def test_norms_cached(self):
        m = EmbeddingMatrix(np.array([[3.0, 4.0], [0.0, 0.0]], dtype=np.float32))
        np.testing.assert_allclose(m.norms, [5.0, 0.0], atol=1e-9)


class TestToyEncode:
    def test_deterministic(self):
        a = toy_encode("the quick brown fox", 16, 3)
        b = toy_encode("the quick brown fox", 16, 3)
        np.testing.assert_array_equal(a, b)

    def test_empty_is_zero_vector(self):
        v = toy_encode("", 8, 0)
        assert v.shape == (8,)
        assert np.all(v == 0.0)

    def test_unit_norm(self):
        rng = np.random.default_rng(9)
        words = [f"w{i}" for i in range(30)]
        for _ in range(25):
            text = " ".join(rng.choice(words, size=rng.integers(1, 10)))
            assert abs(np.linalg.norm(toy_encode(text, 24, 5)) - 1.0) < 1e-9

    def test_shared_token_raises_cosine(self):
        # One shared token ("a") must make "a b" closer to "a c" than to "x y".
        ab = toy_encode("a b", 64, 7)
        ac = toy_encode("a c", 64, 7)
        xy = toy_encode("x y", 64, 7)
        assert cosine(ab, ac) > cosine(ab, xy)

    def test_seed_changes_encoding(self):
        assert not np.allclose(toy_encode("abc", 16, 1), toy_encode("abc", 16, 2))


class TestCosine:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            v = rng.normal(size=6)
            assert abs(cosine(v, v) - 1.0) < 1e-12

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_analytic_45_degrees(self):
        got = cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert abs(got - 0.7071067812) < 1e-9

    def test_zero_vector_gives_zero(self):
        assert cosine(np.zeros(3), np.ones(3)) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            cosine(np.ones(3), np.ones(4))
