"""
Fidelity metrics for synthetic delay data: maximum-correlation score, a 2D
PCA projection of real and synthetic vectors, and pairwise airport
cross-classification.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from utils.discriminator import repeated_split_scores
from utils.ingest import HOURS
from utils.rng import STREAM_PAIR, derive_seed

logger = logging.getLogger(__name__)

JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 100


def _as_matrix(data, name):
    values = getattr(data, 'values', data)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != HOURS:
        raise ValueError(f"{name} must have {HOURS} columns, got shape {values.shape}")
    if values.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    return values


def pearson_matrix(a, b):
    """
    Pearson correlation between every row of ``a`` and every row of ``b``.
    A constant row correlates 0 with anything.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    na = np.sqrt(np.sum(ac ** 2, axis=1))
    nb = np.sqrt(np.sum(bc ** 2, axis=1))
    a_const = np.ptp(a, axis=1) == 0
    b_const = np.ptp(b, axis=1) == 0
    na[a_const] = 1.0
    nb[b_const] = 1.0
    corr = (ac @ bc.T) / np.outer(na, nb)
    corr[a_const, :] = 0.0
    corr[:, b_const] = 0.0
    return np.clip(corr, -1.0, 1.0)


def pearson(x, y):
    return float(pearson_matrix(np.ravel(x), np.ravel(y))[0, 0])


@dataclass
class CorrelationReport:
    per_synthetic_max: np.ndarray

    @property
    def median(self):
        return float(np.median(self.per_synthetic_max))

    @property
    def min(self):
        return float(np.min(self.per_synthetic_max))

    @property
    def max(self):
        return float(np.max(self.per_synthetic_max))

    def to_frame(self):
        return pd.DataFrame({'row': np.arange(len(self.per_synthetic_max)),
                             'max_correlation': self.per_synthetic_max})

    def summary(self):
        return {'median': self.median, 'min': self.min, 'max': self.max,
                'n_synthetic': int(len(self.per_synthetic_max))}


def correlation_score(real, synthetic):
    """For each synthetic row, its highest Pearson correlation with any real row"""
    real = _as_matrix(real, 'real')
    synthetic = _as_matrix(synthetic, 'synthetic')
    return CorrelationReport(pearson_matrix(synthetic, real).max(axis=1))


def jacobi_eigh(matrix, tol=JACOBI_TOLERANCE, max_sweeps=JACOBI_MAX_SWEEPS):
    """
    Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below ``tol``
    relative to the matrix norm. Returns eigenvalues in descending order and
    the matching eigenvectors as columns.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {a.shape}")
    a = (a + a.T) / 2.0
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v

    for sweep in range(max_sweeps):
        off = np.sqrt(max(np.sum(a ** 2) - np.sum(np.diag(a) ** 2), 0.0))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < np.finfo(float).tiny:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    else:
        logger.warning("Jacobi eigen-decomposition did not converge in %d sweeps", max_sweeps)

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind='stable')
    return eigenvalues[order], v[:, order]


@dataclass
class ProjectionResult:
    coordinates: np.ndarray
    labels: np.ndarray
    explained_variance: np.ndarray
    degenerate: bool = False

    def to_frame(self):
        return pd.DataFrame({
            'x': self.coordinates[:, 0],
            'y': self.coordinates[:, 1],
            'label': np.where(self.labels, 'real', 'synthetic'),
        })


def pca_project(real, synthetic):
    """
    Project real and synthetic vectors on the top two principal axes of
    their concatenation. Each axis is signed so its largest-magnitude entry is
    positive.
    """
    real = np.asarray(getattr(real, 'values', real), dtype=np.float64).reshape(-1, HOURS)
    synthetic = np.asarray(getattr(synthetic, 'values', synthetic), dtype=np.float64).reshape(-1, HOURS)
    data = np.vstack([real, synthetic])
    labels = np.concatenate([np.ones(len(real), dtype=bool), np.zeros(len(synthetic), dtype=bool)])
    if data.shape[0] < 3:
        raise ValueError(f"PCA needs at least 3 rows, got {data.shape[0]}")

    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / (data.shape[0] - 1)
    eigenvalues, eigenvectors = jacobi_eigh(cov)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    total = eigenvalues.sum()
    if total <= 0.0 or not np.any(np.ptp(data, axis=0) > 0):
        logger.warning("PCA on identical rows: returning zero coordinates")
        return ProjectionResult(np.zeros((data.shape[0], 2)), labels, np.zeros(2), degenerate=True)

    axes = eigenvectors[:, :2].copy()
    for i in range(2):
        if axes[np.argmax(np.abs(axes[:, i])), i] < 0:
            axes[:, i] = -axes[:, i]
    return ProjectionResult(centered @ axes, labels, eigenvalues[:2] / total)


@dataclass(frozen=True)
class CrossClassPair:
    airport_a: str
    airport_b: str
    accuracy_real: float
    accuracy_synth: float


@dataclass
class CrossClassReport:
    pairs: List[CrossClassPair] = field(default_factory=list)

    def transfer_correlation(self):
        """Pearson r between real-data and synthetic-data pair accuracies"""
        if len(self.pairs) < 2:
            return float('nan')
        return pearson([p.accuracy_real for p in self.pairs], [p.accuracy_synth for p in self.pairs])

    def to_frame(self):
        return pd.DataFrame([p.__dict__ for p in self.pairs],
                            columns=['airport_a', 'airport_b', 'accuracy_real', 'accuracy_synth'])


def cross_classification(matrices_real, matrices_synth, cfg, n_repeats=1, seed=None):
    """
    For every unordered airport pair, how well a discriminator separates the
    two airports' vectors, measured once on real data and once on synthetic.
    """
    airports = list(matrices_real)
    if set(airports) != set(matrices_synth):
        missing = sorted(set(airports) ^ set(matrices_synth))
        raise ValueError(f"Airport sets differ between real and synthetic data: {missing}")
    if len(airports) < 2:
        raise ValueError("Cross-classification needs at least two airports")
    seed = cfg.rng_seed if seed is None else seed

    pairs = []
    index = 0
    for i, a in enumerate(airports):
        for b in airports[i + 1:]:
            scores = []
            for j, source in enumerate((matrices_real, matrices_synth)):
                pair_seed = derive_seed(seed, STREAM_PAIR, index, j)
                dist = repeated_split_scores(_as_matrix(source[a], a), _as_matrix(source[b], b),
                                             cfg, n_repeats, pair_seed)
                scores.append(dist.median)
            pairs.append(CrossClassPair(a, b, scores[0], scores[1]))
            logger.info("cross-classification %s vs %s: real %.3f synthetic %.3f", a, b, *scores)
            index += 1
    return CrossClassReport(pairs)
