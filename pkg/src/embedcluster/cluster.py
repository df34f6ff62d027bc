"""K-means, Ward agglomerative, diagonal GMM and spectral clustering over patient vectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ClusterError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    algorithm: str
    seed: int | None = None
    converged: bool = True
    iterations: int = 0
    info: dict = field(default_factory=dict)

    def sizes(self) -> list[int]:
        counts = np.bincount(self.labels, minlength=self.k)
        return sorted(counts[counts > 0].tolist(), reverse=True)


def canonical_labels(labels) -> np.ndarray:
    """Relabel clusters in order of first occurrence."""
    labels = np.asarray(labels)
    mapping: dict[int, int] = {}
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping))
    return np.array([mapping[int(lab)] for lab in labels], dtype=int)


def _check_points(points, k: int | None = None) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ClusterError(f"points must be an (n, d) array, got shape {x.shape}")
    n, d = x.shape
    if n < 2 or d < 1:
        raise ClusterError(f"need at least 2 points and 1 dimension, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ClusterError("points contain non-finite values")
    if k is not None and not 1 <= k <= n:
        raise ClusterError(f"k must be in [1, {n}], got {k}")
    return x


def jacobi_eigh(S, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ascending eigenvalues and the eigenvectors as columns.
    """
    A = np.array(S, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ClusterError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ClusterError("matrix has non-finite entries")
    scale = max(1.0, np.abs(A).max())
    if np.abs(A - A.T).max() > 1e-9 * scale:
        raise ClusterError("matrix is not symmetric")
    A = (A + A.T) / 2
    n = A.shape[0]
    V = np.eye(n)
    fro = np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * max(fro, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < abs(diff) * 1e-36:
                    t = apq / diff
                else:
                    theta = diff / (2 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1))
                    if theta < 0:
                        t = -t
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    evals = np.diag(A).copy()
    order = np.argsort(evals, kind="stable")
    return evals[order], V[:, order]


def standardize(points) -> np.ndarray:
    """Per-feature z-score; zero-variance features are dropped."""
    x = _check_points(points)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    if not np.any(keep):
        return np.zeros((x.shape[0], 1))
    return (x[:, keep] - mean[keep]) / std[keep]


def _orient(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude coordinate is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def preprocess(points, target_dim: int = 10) -> np.ndarray:
    """Z-score, then project onto the leading principal components.

    When there are more features than points the components come from the
    n x n Gram matrix, which shares its nonzero spectrum with the covariance.
    """
    x = standardize(points)
    n, d = x.shape
    keep = min(target_dim, n - 1, d)
    if d <= n:
        evals, evecs = jacobi_eigh(x.T @ x / n)
        evals, loadings = evals[::-1], evecs[:, ::-1]
    else:
        evals, u = jacobi_eigh(x @ x.T / n)
        evals, u = evals[::-1], u[:, ::-1]
        pos = evals > 0
        loadings = np.zeros((d, n))
        loadings[:, pos] = x.T @ u[:, pos] / np.sqrt(n * evals[pos])
    rank = int(np.sum(evals > 1e-12 * max(evals[0], 1e-300)))
    keep = max(1, min(keep, rank))
    loadings = _orient(loadings[:, :keep])
    return x @ loadings


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dists(x, np.array(centers)).min(axis=1)
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
    return np.array(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int):
    k = centers.shape[0]
    labels = None
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(_sq_dists(x, centers), axis=1)
        counts = np.bincount(new, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            own = ((x - centers[new]) ** 2).sum(axis=1)
            own[np.bincount(new, minlength=k)[new] <= 1] = -1.0
            far = int(np.argmax(own))
            new[far] = empty
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = new
        centers = np.array([x[labels == j].mean(axis=0) for j in range(k)])
        trace.append(float(((x - centers[labels]) ** 2).sum()))
    inertia = float(((x - centers[labels]) ** 2).sum())
    return labels, centers, inertia, trace, converged, it


def kmeans(points, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` restarts by inertia."""
    x = _check_points(points, k)
    rng = np.random.default_rng(seed)
    best = None
    for restart in range(n_init):
        result = _lloyd(x, _kmeans_pp(x, k, rng), max_iter)
        if best is None or result[2] < best[2]:
            best = result
    labels, centers, inertia, trace, converged, it = best
    return ClusterAssignment(
        canonical_labels(labels), k, "kmeans", seed, converged, it,
        {"inertia": inertia, "inertia_trace": trace, "centers": centers, "raw_labels": labels},
    )


def agglomerative_ward(points, k: int) -> ClusterAssignment:
    """Bottom-up Ward merging via the Lance-Williams recurrence, cut at k clusters.

    Distances start at half the squared Euclidean distance, i.e. the increase
    in within-cluster sum of squares when two singletons merge. Ties go to the
    lexicographically smallest (i, j) pair; the merged cluster keeps index i.
    """
    x = _check_points(points, k)
    n = x.shape[0]
    D = 0.5 * _sq_dists(x, x)
    active = np.ones(n, dtype=bool)
    size = np.ones(n)
    members = {i: [i] for i in range(n)}
    merges = []
    for _ in range(n - k):
        masked = np.where(np.triu(np.outer(active, active), 1), D, np.inf)
        flat = int(np.argmin(masked))
        i, j = divmod(flat, n)
        dij = D[i, j]
        ni, nj = size[i], size[j]
        nk = size
        update = ((ni + nk) * D[i] + (nj + nk) * D[j] - nk * dij) / (ni + nj + nk)
        D[i, :] = update
        D[:, i] = update
        D[i, i] = 0.0
        active[j] = False
        size[i] = ni + nj
        members[i].extend(members.pop(j))
        merges.append((i, j, float(dij)))
    labels = np.empty(n, dtype=int)
    for lab, idx in enumerate(sorted(members)):
        labels[members[idx]] = lab
    return ClusterAssignment(canonical_labels(labels), k, "agglomerative", None, True, len(merges), {"merges": merges})


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def _diag_log_prob(x, weights, means, variances) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    ll = -0.5 * (
        np.sum(np.log(2 * np.pi * variances), axis=1)[None, :]
        + np.sum((x[:, None, :] - means[None]) ** 2 / variances[None], axis=2)
    )
    return ll + logw[None, :]


def _em(x, labels, k, var_floor, tol, max_iter):
    n, d = x.shape
    weights = np.array([np.mean(labels == j) for j in range(k)])
    means = np.array([x[labels == j].mean(axis=0) if np.any(labels == j) else x.mean(axis=0) for j in range(k)])
    variances = np.array([
        np.maximum(x[labels == j].var(axis=0), var_floor) if np.any(labels == j) else np.full(d, var_floor)
        for j in range(k)
    ])
    trace = []
    converged = False
    for it in range(1, max_iter + 1):
        logp = _diag_log_prob(x, weights, means, variances)
        norm = _logsumexp(logp, axis=1)
        trace.append(float(norm.sum()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        weights = nk / n
        for j in range(k):
            if nk[j] < 1e-10:
                continue
            means[j] = resp[:, j] @ x / nk[j]
            variances[j] = np.maximum(resp[:, j] @ (x - means[j]) ** 2 / nk[j], var_floor)
    labels = np.argmax(_diag_log_prob(x, weights, means, variances), axis=1)
    return labels, trace, converged, it, (weights, means, variances)


def gmm_em(points, k: int, seed: int = 0, n_init: int = 5, var_floor: float = 1e-6, tol: float = 1e-7,
           max_iter: int = 200) -> tuple[ClusterAssignment, list[float]]:
    """Diagonal-covariance Gaussian mixture fit by EM, initialized from k-means.

    Best of ``n_init`` restarts by final log-likelihood; hard labels by
    maximum responsibility.
    """
    x = _check_points(points, k)
    if np.all(x == x[0]):
        labels = np.zeros(x.shape[0], dtype=int)
        assignment = ClusterAssignment(labels, k, "gmm", seed, True, 0, {"effective_components": 1, "log_likelihood": []})
        return assignment, []
    rng = np.random.default_rng(seed)
    best = None
    for restart in range(n_init):
        init = kmeans(x, k, seed=int(rng.integers(2**31)), n_init=1)
        result = _em(x, init.info["raw_labels"], k, var_floor, tol, max_iter)
        if best is None or result[1][-1] > best[1][-1]:
            best = result
    labels, trace, converged, it, (weights, means, variances) = best
    assignment = ClusterAssignment(
        canonical_labels(labels), k, "gmm", seed, converged, it,
        {"log_likelihood": trace, "weights": weights, "means": means, "variances": variances,
         "effective_components": int(np.sum(weights > 1e-10))},
    )
    return assignment, trace


def rbf_affinity(points) -> np.ndarray:
    """Gaussian affinity with bandwidth equal to the median pairwise distance; zero diagonal."""
    x = _check_points(points)
    d2 = _sq_dists(x, x)
    dist = np.sqrt(d2[np.triu_indices(x.shape[0], 1)])
    sigma = float(np.median(dist))
    if sigma == 0.0:
        sigma = 1.0
    A = np.exp(-d2 / (2 * sigma**2))
    np.fill_diagonal(A, 0.0)
    return A


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    deg = A.sum(axis=1)
    isolated = np.flatnonzero(deg <= np.finfo(float).tiny)
    if isolated.size:
        raise ClusterError(f"point {int(isolated[0])} has zero total affinity")
    inv = 1.0 / np.sqrt(deg)
    return np.eye(A.shape[0]) - inv[:, None] * A * inv[None, :]


def spectral(points, k: int, seed: int = 0, affinity: np.ndarray | None = None) -> ClusterAssignment:
    """Normalized-Laplacian spectral clustering; k-means on row-normalized eigenvectors."""
    if affinity is None:
        x = _check_points(points, k)
        A = rbf_affinity(x)
    else:
        A = np.asarray(affinity, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or not 1 <= k <= A.shape[0]:
            raise ClusterError(f"bad affinity shape {A.shape} for k={k}")
    L = normalized_laplacian(A)
    evals, evecs = jacobi_eigh(L)
    U = evecs[:, :k]
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    U = U / np.where(norms > 0, norms, 1.0)
    inner = kmeans(U, k, seed=seed)
    return ClusterAssignment(
        inner.labels, k, "spectral", seed, inner.converged, inner.iterations,
        {"eigenvalues": evals, "embedding": U},
    )
