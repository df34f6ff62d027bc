import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedcluster.cluster import (
    ClusterError,
    agglomerative_ward,
    canonical_labels,
    gmm_em,
    jacobi_eigh,
    kmeans,
    normalized_laplacian,
    preprocess,
    rbf_affinity,
    spectral,
)
from embedcluster.evaluation import clustering_accuracy


def blobs(n_per=(13, 12), d=5, sep=10.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per[0], d))
    b = rng.normal(size=(n_per[1], d))
    b[:, 0] += sep
    labels = np.array([1] * n_per[0] + [0] * n_per[1])
    return np.vstack([a, b]), labels


def partition(labels):
    """Partition as a set of frozensets, independent of label names."""
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    return {frozenset(g) for g in groups.values()}


def run(name, x, k=2, seed=0):
    if name == "kmeans":
        return kmeans(x, k, seed)
    if name == "agglomerative":
        return agglomerative_ward(x, k)
    if name == "gmm":
        return gmm_em(x, k, seed)[0]
    return spectral(x, k, seed)


ALGOS = ["kmeans", "agglomerative", "gmm", "spectral"]


def residuals(S, w, V):
    return np.linalg.norm(S @ V - V * w[None, :], axis=0)


class TestJacobi:
    def test_identity(self):
        w, V = jacobi_eigh(np.eye(4))
        np.testing.assert_array_equal(w, np.ones(4))

    def test_diagonal(self):
        w, _ = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_array_equal(w, [1, 2, 3])

    def test_two_by_two(self):
        w, V = jacobi_eigh(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(w, [1, 3], atol=1e-14)
        r = 1 / np.sqrt(2)
        np.testing.assert_allclose(np.abs(V[:, 0]), [r, r], atol=1e-14)
        assert V[0, 0] * V[1, 0] < 0
        assert V[0, 1] * V[1, 1] > 0

    @pytest.mark.parametrize("n", [1, 3, 10, 30])
    def test_random_residuals_and_orthonormality(self, n):
        rng = np.random.default_rng(n)
        M = rng.normal(size=(n, n)) * 10
        S = M + M.T
        w, V = jacobi_eigh(S)
        bound = 1e-8 * max(1.0, np.linalg.norm(S))
        assert residuals(S, w, V).max() <= bound
        np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-8)
        assert np.all(np.diff(w) >= 0)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(S), atol=bound)

    def test_repeated_and_tiny_eigenvalues(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(6, 6)))
        S = Q @ np.diag([1e-14, 1e-14, 1.0, 1.0, 5.0, 1e6]) @ Q.T
        S = (S + S.T) / 2
        w, V = jacobi_eigh(S)
        assert residuals(S, w, V).max() <= 1e-8 * max(1.0, np.linalg.norm(S))

    def test_asymmetric(self):
        with pytest.raises(ClusterError, match="symmetric"):
            jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestPreprocess:
    def test_zero_mean(self):
        x = np.random.default_rng(0).normal(size=(50, 2))
        out = preprocess(x, target_dim=2)
        assert np.abs(out.mean(axis=0)).max() < 1e-9

    def test_rank_one(self):
        rng = np.random.default_rng(1)
        t = rng.normal(size=20)
        x = np.outer(t, [1.0, 2.0, -3.0]) + [5.0, 0.0, 1.0]
        out = preprocess(x, target_dim=3)
        assert out.shape == (20, 1)
        z = (x - x.mean(0)) / x.std(0)
        d_in = np.linalg.norm(z[:, None] - z[None], axis=2)
        d_out = np.abs(out[:, None, 0] - out[None, :, 0])
        np.testing.assert_allclose(d_out, d_in, atol=1e-9)

    @pytest.mark.parametrize("shape", [(30, 4), (8, 40)])
    def test_full_dim_is_rotation(self, shape):
        x = np.random.default_rng(2).normal(size=shape)
        z = (x - x.mean(0)) / x.std(0)
        out = preprocess(x, target_dim=100)
        assert out.shape[1] == min(shape[0] - 1, shape[1])
        d_in = np.linalg.norm(z[:, None] - z[None], axis=2)
        d_out = np.linalg.norm(out[:, None] - out[None], axis=2)
        np.testing.assert_allclose(d_out, d_in, atol=1e-9)

    def test_sign_convention_and_determinism(self):
        x = np.random.default_rng(3).normal(size=(25, 6))
        out = preprocess(x, target_dim=3)
        z = (x - x.mean(0)) / x.std(0)
        loadings = np.linalg.lstsq(z, out, rcond=None)[0]
        np.testing.assert_allclose(loadings.T @ loadings, np.eye(3), atol=1e-9)
        for col in loadings.T:
            assert col[np.argmax(np.abs(col))] > 0
        assert out.tobytes() == preprocess(x.copy(), 3).tobytes()

    def test_drops_constant_feature(self):
        x = np.random.default_rng(4).normal(size=(10, 3))
        x[:, 1] = 7.0
        assert np.all(np.isfinite(preprocess(x, 5)))

    def test_too_few_points(self):
        with pytest.raises(ClusterError):
            preprocess(np.zeros((1, 3)))


class TestKMeans:
    def test_n_equals_k(self):
        x = np.random.default_rng(0).normal(size=(5, 2))
        a = kmeans(x, 5, seed=0)
        assert sorted(a.labels) == list(range(5))
        assert a.info["inertia"] == 0

    def test_blobs(self):
        x, y = blobs()
        assert clustering_accuracy(kmeans(x, 2, seed=1), y) == 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_inertia_monotone(self, seed):
        x = np.random.default_rng(seed).normal(size=(60, 3))
        for restart_seed in range(3):
            trace = kmeans(x, 4, seed=restart_seed, n_init=1).info["inertia_trace"]
            assert np.all(np.diff(trace) <= 1e-9)

    def test_duplicates(self):
        x, _ = blobs(seed=2)
        base = kmeans(x, 2, seed=0).labels
        doubled = kmeans(np.vstack([x, x]), 2, seed=0).labels
        assert partition(doubled[: len(x)]) == partition(base)
        np.testing.assert_array_equal(canonical_labels(doubled[len(x):]), canonical_labels(base))

    def test_deterministic(self):
        x = np.random.default_rng(5).normal(size=(30, 3))
        a, b = kmeans(x, 3, seed=9), kmeans(x, 3, seed=9)
        assert np.array_equal(a.labels, b.labels) and a.info["inertia"] == b.info["inertia"]

    def test_empty_cluster_repair(self):
        # four identical points and one outlier, k=3: every label still used
        x = np.array([[0.0], [0.0], [0.0], [0.0], [10.0]])
        a = kmeans(x, 3, seed=0)
        assert len(set(a.labels.tolist())) == 3

    @pytest.mark.parametrize("k", [0, 6])
    def test_bad_k(self, k):
        with pytest.raises(ClusterError):
            kmeans(np.zeros((5, 2)), k)


class TestWard:
    def test_line(self):
        a = agglomerative_ward(np.array([[0.0], [1.0], [10.0]]), 2)
        assert partition(a.labels) == {frozenset({0, 1}), frozenset({2})}

    def test_singletons(self):
        a = agglomerative_ward(np.random.default_rng(0).normal(size=(4, 2)), 4)
        assert sorted(a.labels) == [0, 1, 2, 3]

    def test_blobs(self):
        x, y = blobs(seed=3)
        assert clustering_accuracy(agglomerative_ward(x, 2), y) == 1.0

    def test_merge_costs_match_ward_oracle(self):
        # merge cost equals the increase in within-cluster sum of squares
        x = np.random.default_rng(4).normal(size=(7, 2))
        a = agglomerative_ward(x, 1)
        clusters = {i: [i] for i in range(7)}

        def sse(idx):
            p = x[idx]
            return float(((p - p.mean(0)) ** 2).sum())

        for i, j, cost in a.info["merges"]:
            merged = clusters[i] + clusters[j]
            assert cost == pytest.approx(sse(merged) - sse(clusters[i]) - sse(clusters[j]), rel=1e-9, abs=1e-12)
            best = min(
                sse(clusters[p] + clusters[q]) - sse(clusters[p]) - sse(clusters[q])
                for p, q in itertools.combinations(sorted(clusters), 2)
            )
            assert cost == pytest.approx(best, rel=1e-9, abs=1e-12)
            clusters[i] = merged
            del clusters[j]

    def test_tie_break(self):
        # equally spaced points: the first pair merges first
        a = agglomerative_ward(np.array([[0.0], [1.0], [2.0], [3.0]]), 3)
        assert a.info["merges"][0][:2] == (0, 1)

    def test_bad_k(self):
        with pytest.raises(ClusterError):
            agglomerative_ward(np.zeros((3, 1)), 4)


class TestGMM:
    @pytest.mark.parametrize("seed", range(4))
    def test_log_likelihood_monotone(self, seed):
        x = np.random.default_rng(seed).normal(size=(40, 3))
        _, trace = gmm_em(x, 3, seed=seed)
        assert np.all(np.diff(trace) >= -1e-9)

    def test_blobs(self):
        x, y = blobs(seed=5)
        a, _ = gmm_em(x, 2, seed=0)
        assert clustering_accuracy(a, y) == 1.0

    def test_k_one(self):
        x = np.random.default_rng(6).normal(size=(20, 3))
        a, _ = gmm_em(x, 1, seed=0)
        assert np.all(a.labels == 0)
        np.testing.assert_allclose(a.info["means"][0], x.mean(0), atol=1e-9)

    def test_identical_points(self):
        a, trace = gmm_em(np.ones((6, 2)), 2, seed=0)
        assert a.converged and a.info["effective_components"] == 1
        assert np.all(a.labels == 0)

    def test_bad_k(self):
        with pytest.raises(ClusterError):
            gmm_em(np.zeros((3, 1)), 4)


class TestSpectral:
    def test_disconnected_blocks(self):
        A = np.zeros((6, 6))
        A[:3, :3] = 1.0
        A[3:, 3:] = 1.0
        np.fill_diagonal(A, 0.0)
        a = spectral(None, 2, seed=0, affinity=A)
        evals = a.info["eigenvalues"]
        assert np.abs(evals[:2]).max() < 1e-8
        assert evals[2] > 1e-3
        assert partition(a.labels) == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}

    def test_equidistant(self):
        x = np.eye(4)  # all pairwise distances sqrt(2)
        a = spectral(x, 2, seed=0)
        assert set(a.labels.tolist()) <= {0, 1} and len(a.labels) == 4

    def test_blobs(self):
        x, y = blobs(seed=7)
        assert clustering_accuracy(spectral(x, 2, seed=0), y) == 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_laplacian_psd(self, seed):
        x = np.random.default_rng(seed).normal(size=(15, 4))
        w, _ = jacobi_eigh(normalized_laplacian(rbf_affinity(x)))
        assert w.min() >= -1e-8

    def test_isolated_point(self):
        A = np.ones((3, 3))
        A[2, :] = A[:, 2] = 0.0
        np.fill_diagonal(A, 0.0)
        with pytest.raises(ClusterError, match="point 2"):
            spectral(None, 2, affinity=A)

    def test_affinity_properties(self):
        A = rbf_affinity(np.random.default_rng(0).normal(size=(9, 2)))
        assert np.all(np.diag(A) == 0)
        np.testing.assert_array_equal(A, A.T)


class TestShared:
    @pytest.mark.parametrize("name", ALGOS)
    @pytest.mark.parametrize("seed", range(3))
    def test_permutation_invariance(self, name, seed):
        x, _ = blobs((8, 9), d=3, sep=6.0, seed=seed)
        perm = np.random.default_rng(100 + seed).permutation(len(x))
        base = run(name, x).labels
        permuted = run(name, x[perm]).labels
        unpermuted = np.empty_like(permuted)
        unpermuted[perm] = permuted
        np.testing.assert_array_equal(canonical_labels(unpermuted), canonical_labels(base))

    @pytest.mark.parametrize("name", ALGOS)
    def test_labels_valid_and_deterministic(self, name):
        x = np.random.default_rng(11).normal(size=(20, 3))
        a, b = run(name, x, k=3, seed=4), run(name, x, k=3, seed=4)
        assert np.array_equal(a.labels, b.labels)
        assert set(a.labels.tolist()) <= {0, 1, 2}
        assert sum(a.sizes()) == 20

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=1, max_size=30))
    def test_canonical_labels(self, labels):
        c = canonical_labels(labels)
        assert c[0] == 0
        assert partition(c) == partition(labels)
        assert all(c[i] <= max(c[:i], default=-1) + 1 for i in range(len(c)))

    def test_rejects_non_finite(self):
        x = np.zeros((4, 2))
        x[1, 1] = np.nan
        for name in ALGOS:
            with pytest.raises(ClusterError):
                run(name, x)
