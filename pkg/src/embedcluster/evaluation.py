"""Clustering accuracy against patient labels and the stratification report."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import cluster
from .cluster import ClusterAssignment
from .embed import PatientEmbedding

ALGORITHMS = ("kmeans", "agglomerative", "gmm", "spectral")
ALGORITHM_TITLES = {"kmeans": "K-means", "agglomerative": "Agglomerative", "gmm": "GMM", "spectral": "Spectral"}
SOURCE_TITLES = {"eegnet": "EEGNet embeddings", "autoencoder": "Autoencoder embeddings"}
# representation each algorithm clusters by default; the other one is reported alongside
PRIMARY_SPACE = {"kmeans": "standardized", "agglomerative": "standardized", "gmm": "reduced", "spectral": "reduced"}


class EvalError(ValueError):
    pass


def _labels_of(assignment) -> np.ndarray:
    return np.asarray(assignment.labels if isinstance(assignment, ClusterAssignment) else assignment, dtype=int)


def matched_count(assignment, labels) -> int:
    """Largest number of points agreeing with ``labels`` under a one-to-one cluster->class map."""
    pred = _labels_of(assignment)
    truth = np.asarray(labels, dtype=int)
    if pred.shape != truth.shape:
        raise EvalError(f"{pred.size} assignments but {truth.size} labels")
    if pred.size == 0:
        raise EvalError("nothing to evaluate")
    clusters = np.unique(pred)
    if clusters.size <= 2 and np.all(np.isin(truth, (0, 1))):
        mappings = [dict(zip(clusters, perm)) for perm in ((0, 1), (1, 0))]
        return max(sum(int(m[c] == t) for c, t in zip(pred, truth)) for m in mappings)
    classes = np.unique(truth)
    confusion = np.array([[np.sum((pred == c) & (truth == t)) for t in classes] for c in clusters])
    rows, cols = linear_sum_assignment(-confusion)
    return int(confusion[rows, cols].sum())


def accuracy_fraction(assignment, labels) -> Fraction:
    return Fraction(matched_count(assignment, labels), len(labels))


def clustering_accuracy(assignment, labels) -> float:
    """Best-permutation accuracy in [0, 1]."""
    return float(accuracy_fraction(assignment, labels))


def cluster_balance(assignment) -> list[int]:
    pred = _labels_of(assignment)
    counts = np.bincount(pred) if pred.size else np.zeros(0, dtype=int)
    return sorted((int(c) for c in counts if c > 0), reverse=True)


@dataclass
class AlgorithmResult:
    algorithm: str
    accuracy: float
    correct: int
    n: int
    sizes: list[int]
    seed: int | None
    converged: bool
    iterations: int
    labels: list[int]
    space: str = "standardized"


@dataclass
class StratificationReport:
    source: str
    n_patients: int
    n_windows: int
    label_counts: dict[str, int]
    reduce_dim: int
    k: int
    patients: list[str]
    results: list[AlgorithmResult] = field(default_factory=list)
    alternate: list[AlgorithmResult] = field(default_factory=list)
    metadata: dict | None = None

    def result(self, algorithm: str) -> AlgorithmResult:
        for r in self.results:
            if r.algorithm == algorithm:
                return r
        raise KeyError(algorithm)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["metadata"] is None:
            del d["metadata"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "StratificationReport":
        d = dict(d)
        d["results"] = [AlgorithmResult(**r) for r in d.get("results", [])]
        d["alternate"] = [AlgorithmResult(**r) for r in d.get("alternate", [])]
        return cls(**d)


def evaluate_all(
    embeddings: Sequence[PatientEmbedding],
    labels: Mapping[str, int],
    seed: int = 0,
    reduce_dim: int = 10,
    k: int = 2,
    metadata: Mapping[str, Mapping[str, str]] | None = None,
) -> StratificationReport:
    """Cluster patient embeddings with all four algorithms and score them.

    K-means and Ward run on z-scored vectors; GMM and spectral on the
    ``reduce_dim`` leading principal components. Each algorithm is also run
    on the other representation and reported under ``alternate``.
    """
    if len(embeddings) < 4:
        raise EvalError(f"need at least 4 patients, got {len(embeddings)}")
    sources = {e.source for e in embeddings}
    if len(sources) != 1:
        raise EvalError(f"mixed embedding sources: {sorted(sources)}")
    missing = [e.patient_id for e in embeddings if e.patient_id not in labels]
    if missing:
        raise EvalError(f"no label for patients {missing}")
    y = np.array([int(labels[e.patient_id]) for e in embeddings])
    if not np.all(np.isin(y, (0, 1))):
        raise EvalError("patient labels must be 0 or 1")
    if np.unique(y).size < 2:
        raise EvalError("both labels must be present")

    x = np.stack([e.vector for e in embeddings])
    spaces = representations(x, reduce_dim)
    report = StratificationReport(
        source=sources.pop(),
        n_patients=len(embeddings),
        n_windows=int(sum(e.n_windows for e in embeddings)),
        label_counts={"0": int(np.sum(y == 0)), "1": int(np.sum(y == 1))},
        reduce_dim=reduce_dim,
        k=k,
        patients=[e.patient_id for e in embeddings],
    )
    if metadata is not None:
        report.metadata = {e.patient_id: dict(metadata.get(e.patient_id, {})) for e in embeddings}
    for algo in ALGORITHMS:
        for space, points in spaces.items():
            result = _score(run_algorithm(algo, points, k, seed), y, space)
            (report.results if space == PRIMARY_SPACE[algo] else report.alternate).append(result)
    return report


def representations(x: np.ndarray, reduce_dim: int = 10) -> dict[str, np.ndarray]:
    return {"standardized": cluster.standardize(x), "reduced": cluster.preprocess(x, reduce_dim)}


def run_algorithm(algo: str, points: np.ndarray, k: int, seed: int = 0) -> ClusterAssignment:
    if algo == "kmeans":
        return cluster.kmeans(points, k, seed=seed)
    if algo == "agglomerative":
        return cluster.agglomerative_ward(points, k)
    if algo == "gmm":
        return cluster.gmm_em(points, k, seed=seed)[0]
    return cluster.spectral(points, k, seed=seed)


def _score(a: ClusterAssignment, y: np.ndarray, space: str) -> AlgorithmResult:
    correct = matched_count(a, y)
    return AlgorithmResult(
        algorithm=a.algorithm,
        accuracy=correct / len(y),
        correct=correct,
        n=len(y),
        sizes=cluster_balance(a),
        seed=a.seed,
        converged=bool(a.converged),
        iterations=int(a.iterations),
        labels=[int(v) for v in a.labels],
        space=space,
    )


def _cell(r: AlgorithmResult) -> str:
    return f"{100 * r.accuracy:.2f} ({r.correct}/{r.n}; {'/'.join(map(str, r.sizes))})"


def format_table(reports: Sequence[StratificationReport]) -> str:
    """Accuracy (%) per source and algorithm, plus exact counts and cluster sizes."""
    head = ["Embedding Source"] + [ALGORITHM_TITLES[a] for a in ALGORITHMS]
    rows = [head]
    for rep in reports:
        title = SOURCE_TITLES.get(rep.source, rep.source)
        rows.append([title] + [_cell(rep.result(algo)) for algo in ALGORITHMS])
        if rep.alternate:
            alt = {r.algorithm: r for r in rep.alternate}
            rows.append(["  other space"] + [_cell(alt[a]) + f" [{alt[a].space}]" for a in ALGORITHMS])
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
