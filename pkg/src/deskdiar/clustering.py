"""Clustering back-end: cosine affinity, p-binarized spectral clustering
with normalized-maximum-eigengap (NME) auto-tuning, and k-means.

The NME search scans candidate binarization counts p, builds the
symmetrized graph Laplacian for each, and scores p by r(p) = p / g_p where
g_p is the largest eigengap inside the candidate window normalized by the
largest eigenvalue. The smallest r wins; the winning eigengap index is the
cluster-count estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ShapeError

EPS = 1e-12

KMEANS_TOL = 1e-9
KMEANS_MAX_ITER = 300
DEFAULT_RESTARTS = 10
DEFAULT_K_MAX = 10


class DegenerateAffinityError(ValueError):
    """Every candidate p produced a zero normalized eigengap."""


class EigenConvergenceError(ArithmeticError):
    """The symmetric eigensolver failed to converge."""


@dataclass(frozen=True)
class NmeResult:
    """Outcome of the NME scan at the selected binarization count."""

    p_hat: int
    k_hat: int
    eigenvalues: np.ndarray   # ascending, for p_hat
    eigengap: np.ndarray      # e[i-1] = lambda_{i+1} - lambda_i, i in [1, k_max]
    trace: Tuple[Dict[str, float], ...]


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    k: int
    inertia: float

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ShapeError("labels must be a vector")
        if labels.size:
            if labels.min() < 0 or labels.max() >= self.k:
                raise ValueError("labels must lie in [0, k)")
            if np.unique(labels).size != self.k:
                raise ValueError(f"all {self.k} labels must be used")
        object.__setattr__(self, "labels", labels)


def cosine_affinity(x: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity with eps-guarded norms.

    The diagonal is set to exactly 1 for nonzero rows (0 for zero rows) and
    off-diagonal entries are clipped into [-1, 1] against rounding spill.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError("need an (n >= 2, d) embedding matrix")
    norms = np.linalg.norm(x, axis=1)
    unit = x / np.maximum(norms, EPS)[:, None]
    a = np.clip(unit @ unit.T, -1.0, 1.0)
    a = (a + a.T) / 2.0
    np.fill_diagonal(a, np.where(norms > 0.0, 1.0, 0.0))
    return a


def binarize_symmetrize(a: np.ndarray, p: int) -> np.ndarray:
    """Keep each row's p largest off-diagonal entries as 1, zero the rest,
    then average with the transpose. Ties break toward the lower column
    index; the diagonal is excluded from selection and kept at 1."""
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError("affinity must be square")
    if not 1 <= p <= n - 1:
        raise ValueError(f"p must lie in [1, {n - 1}], got {p}")
    masked = a.copy()
    np.fill_diagonal(masked, -np.inf)
    # stable sort on negated values: equal entries keep ascending column order
    order = np.argsort(-masked, axis=1, kind="stable")
    a_p = np.zeros_like(a)
    rows = np.repeat(np.arange(n), p)
    a_p[rows, order[:, :p].ravel()] = 1.0
    np.fill_diagonal(a_p, 1.0)
    return (a_p + a_p.T) / 2.0


def laplacian(abar: np.ndarray) -> np.ndarray:
    """Unnormalized graph Laplacian D - Abar."""
    if not np.allclose(abar, abar.T, atol=1e-12, rtol=0):
        raise ValueError("binarized affinity must be symmetric")
    return np.diag(abar.sum(axis=1)) - abar


def eig_sym(mat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError("matrix must be square")
    if np.abs(mat - mat.T).max() > 1e-10:
        raise ValueError("matrix is not symmetric within 1e-10")
    try:
        w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(str(exc)) from None
    return w, v


def default_p_range(n: int) -> range:
    return range(1, min(ceil(n / 4), n - 1) + 1)


def nme_select(
    a: np.ndarray,
    p_range: Optional[Sequence[int]] = None,
    k_max: int = DEFAULT_K_MAX,
) -> NmeResult:
    """Scan candidate p values and pick (p_hat, k_hat) by the normalized
    maximum eigengap ratio r(p) = p / g_p; ties go to the smaller p and the
    smaller eigengap index."""
    n = a.shape[0]
    if p_range is None:
        p_range = default_p_range(n)
    p_list = sorted(set(int(p) for p in p_range))
    if not p_list or p_list[0] < 1 or p_list[-1] > n - 1:
        raise ValueError(f"p_range must be a nonempty subset of [1, {n - 1}]")
    if not 1 <= k_max <= n:
        raise ValueError(f"k_max must lie in [1, {n}]")
    window = min(k_max, n - 1)

    best = None  # (r, p, gaps, eigenvalues)
    trace: List[Dict[str, float]] = []
    for p in p_list:
        lam, _ = eig_sym(laplacian(binarize_symmetrize(a, p)))
        gaps = lam[1: window + 1] - lam[:window]
        g_p = float(gaps.max() / max(lam[-1], EPS))
        k_at_p = int(np.argmax(gaps)) + 1
        r = float(p / g_p) if g_p > 0 else np.inf
        trace.append({"p": p, "g_p": g_p, "r": r, "k_at_p": k_at_p})
        if best is None or r < best[0]:
            best = (r, p, gaps, lam)
    if not np.isfinite(best[0]):
        raise DegenerateAffinityError(
            "every candidate p has zero normalized eigengap")
    _, p_hat, gaps, lam = best
    return NmeResult(p_hat=p_hat, k_hat=int(np.argmax(gaps)) + 1,
                     eigenvalues=lam, eigengap=gaps, trace=tuple(trace))


# --------------------------------------------------------------------------
# k-means
# --------------------------------------------------------------------------

def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _kmeanspp_seed(x: np.ndarray, k: int, rng: np.random.Generator
                   ) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    chosen = {first}
    d2 = np.einsum("ij,ij->i", x - centers[0], x - centers[0])
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass sits on already-chosen points; take the
            # lowest-index unchosen row for determinism
            idx = next(i for i in range(n) if i not in chosen)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = x[idx]
        chosen.add(idx)
        d2 = np.minimum(d2, np.einsum("ij,ij->i", x - centers[c],
                                      x - centers[c]))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray
           ) -> Tuple[np.ndarray, np.ndarray, float]:
    k = centers.shape[0]
    prev_inertia = np.inf
    labels = np.zeros(x.shape[0], dtype=np.int64)
    inertia = 0.0
    for _ in range(KMEANS_MAX_ITER):
        d2 = _sq_dists(x, centers)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(x.shape[0]), labels]
        # Empty clusters grab the point farthest from its current center.
        # A grab can empty the donor cluster, so repeat until stable; each
        # pass consumes one point (its distance is zeroed), and while any
        # cluster is empty some point sits off-center (the data has >= k
        # distinct rows), so this terminates within n passes.
        while True:
            empty = [c for c in range(k) if not (labels == c).any()]
            if not empty:
                break
            far = int(point_d2.argmax())
            centers[empty[0]] = x[far]
            labels[far] = empty[0]
            point_d2[far] = 0.0
        inertia = float(point_d2.sum())
        assert inertia <= prev_inertia + 1e-9 * max(1.0, prev_inertia), \
            "k-means inertia increased"
        new_centers = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new_centers[c] = x[members].mean(axis=0)
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)
                              ).max())
        centers = new_centers
        if shift < KMEANS_TOL:
            break
        prev_inertia = inertia
    return labels, centers, inertia


def kmeans(x: np.ndarray, k: int, restarts: int = DEFAULT_RESTARTS,
           seed: int = 0) -> ClusterAssignment:
    """k-means++ seeding with Lloyd refinement, best of `restarts` runs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("expected an (n, d) matrix")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    if np.unique(x, axis=0).shape[0] < k:
        raise ValueError(f"cannot form {k} nonempty clusters: fewer than "
                         f"{k} distinct rows")
    rng = np.random.default_rng(seed)
    best: Optional[Tuple[float, np.ndarray]] = None
    for _ in range(max(1, restarts)):
        centers = _kmeanspp_seed(x, k, rng)
        labels, _, inertia = _lloyd(x, centers.copy())
        if best is None or inertia < best[0]:
            best = (inertia, labels)
    inertia, labels = best
    return ClusterAssignment(labels=labels, k=k, inertia=inertia)


# --------------------------------------------------------------------------
# full spectral pipeline
# --------------------------------------------------------------------------

def spectral_cluster(
    x: np.ndarray,
    k: Optional[int] = None,
    p: Optional[int] = None,
    p_range: Optional[Sequence[int]] = None,
    k_max: int = DEFAULT_K_MAX,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> Tuple[ClusterAssignment, Optional[NmeResult]]:
    """Spectral clustering of embedding rows.

    With `k` given, runs fixed-p binarized spectral clustering at the
    caller's p (default: the top of the default p range). Otherwise the NME
    scan estimates both p and k. Returns the assignment plus the NME result
    in estimate mode (None in known-k mode).
    """
    x = np.asarray(x, dtype=np.float64)
    a = cosine_affinity(x)
    n = a.shape[0]
    nme = None
    if k is None:
        nme = nme_select(a, p_range, k_max)
        p_used, k_used = nme.p_hat, nme.k_hat
    else:
        if not 1 <= k <= n:
            raise ValueError(f"k must lie in [1, {n}]")
        p_used = p if p is not None else default_p_range(n)[-1]
        k_used = k
    lam, vec = eig_sym(laplacian(binarize_symmetrize(a, p_used)))
    rows = vec[:, :k_used]
    assignment = kmeans(rows, k_used, restarts=restarts, seed=seed)
    return assignment, nme
