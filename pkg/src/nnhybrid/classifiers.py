"""RBF-kernel SVM (SMO, one-vs-one) and exhaustive-scan KNN."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .tensor import DTYPE, ShapeError, as_tensor

SMO_TOL = 1e-3
SMO_MAX_ITER = 10 ** 6
TAU = 1e-12


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class SvmHyper:
    C: float
    gamma: float

    def __post_init__(self):
        if not (self.C > 0 and self.gamma > 0):
            raise ClassifierError(f"C and gamma must be positive, got C={self.C}, gamma={self.gamma}")


@dataclass(frozen=True)
class SvmBinaryModel:
    support_vectors: np.ndarray
    dual_coefs: np.ndarray      # alpha_i * y_i
    bias: float
    hyper: SvmHyper
    converged: bool = True
    objective: float = float("nan")
    iterations: int = 0

    def decision(self, x):
        x = np.atleast_2d(as_tensor(x))
        if x.shape[1] != self.support_vectors.shape[1]:
            raise ShapeError(f"expected {self.support_vectors.shape[1]} features, got {x.shape[1]}")
        return rbf_gram(x, self.support_vectors, self.hyper.gamma) @ self.dual_coefs + self.bias


@dataclass(frozen=True)
class SvmModel:
    class_count: int
    binaries: dict              # (a, b) with a < b -> SvmBinaryModel; +1 means class a
    hyper: SvmHyper

    def predict(self, x):
        return svm_predict(self, x)


@dataclass(frozen=True)
class KnnModel:
    points: np.ndarray
    labels: np.ndarray
    k: int

    def predict(self, x):
        return knn_predict(self, x)


# ----------------------------------------------------------------------------
# kernel


def rbf_kernel(x, y, gamma):
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise ClassifierError("gamma must be positive")
    d = x - y
    return float(np.exp(-gamma * np.dot(d.ravel(), d.ravel())))


def sq_distances(a, b):
    """Pairwise squared Euclidean distances, clipped at zero."""
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def rbf_gram(a, b, gamma):
    return np.exp(-gamma * sq_distances(a, b))


# ----------------------------------------------------------------------------
# SMO


def dual_objective(alpha, y, gram):
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ gram @ ay)


def smo_train_binary(points, labels, hyper, tol=SMO_TOL, max_iter=SMO_MAX_ITER, gram=None):
    """Solve the soft-margin dual with SMO.

    Pairs are picked by maximal violation on the first index and a
    second-order gain on the second. Stops when the KKT gap
    ``max_up(-y*G) - min_low(-y*G)`` drops below ``tol``; after ``max_iter``
    pair updates the current iterate is returned with ``converged=False``.
    """
    x = as_tensor(points)
    y = np.asarray(labels, dtype=DTYPE).ravel()
    n = y.size
    if x.ndim != 2 or x.shape[0] != n:
        raise ShapeError(f"{n} labels for points of shape {x.shape}")
    if not np.all(np.abs(y) == 1):
        raise ClassifierError("binary labels must be +1 or -1")
    if n < 2 or np.all(y == y[0]):
        raise ClassifierError("both classes must be present")
    C = hyper.C
    K = rbf_gram(x, x, hyper.gamma) if gram is None else gram
    diag = np.diag(K).copy()

    alpha = np.zeros(n)
    grad = -np.ones(n)            # gradient of 0.5 a'Qa - e'a, Q = yy'K
    converged = False
    it = 0
    while it < max_iter:
        yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        gmax = yg[i]
        gmin = np.where(low, yg, np.inf).min()
        if gmax - gmin < tol:
            converged = True
            break
        b = gmax - yg
        cand = low & (b > 0)
        a = np.maximum(diag[i] + diag - 2.0 * K[i], TAU)
        j = int(np.argmax(np.where(cand, b * b / a, -np.inf)))

        ai, aj = alpha[i], alpha[j]
        quad = max(diag[i] + diag[j] - 2.0 * K[i, j], TAU)
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        di, dj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        grad += y * (K[:, i] * (y[i] * di) + K[:, j] * (y[j] * dj))
        it += 1

    bias = _bias(alpha, y, grad, C)
    keep = alpha > 0
    return SvmBinaryModel(
        support_vectors=np.ascontiguousarray(x[keep]),
        dual_coefs=alpha[keep] * y[keep],
        bias=bias,
        hyper=hyper,
        converged=converged,
        objective=dual_objective(alpha, y, K),
        iterations=it,
    )


def _bias(alpha, y, grad, C):
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yg[free].mean()
    else:
        upper = np.where(((y < 0) & (alpha >= C)) | ((y > 0) & (alpha <= 0)), yg, np.inf).min()
        lower = np.where(((y > 0) & (alpha >= C)) | ((y < 0) & (alpha <= 0)), yg, -np.inf).max()
        rho = 0.5 * (upper + lower)
    return float(-rho)


def default_gamma(dims):
    return 1.0 / dims


def svm_fit(points, labels, C, gamma=None, tol=SMO_TOL, max_iter=SMO_MAX_ITER, class_count=None):
    x = as_tensor(points)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        x = x.reshape(x.shape[0], -1)
    present = np.unique(labels)
    if present.size < 2:
        raise ClassifierError(f"SVM needs at least 2 classes, got {present.size}")
    count = int(labels.max()) + 1 if class_count is None else int(class_count)
    hyper = SvmHyper(float(C), default_gamma(x.shape[1]) if gamma is None else float(gamma))
    binaries = {}
    for a, b in combinations(range(count), 2):
        sel = (labels == a) | (labels == b)
        if not ((labels == a).any() and (labels == b).any()):
            continue
        y = np.where(labels[sel] == a, 1.0, -1.0)
        binaries[(a, b)] = smo_train_binary(x[sel], y, hyper, tol, max_iter)
    return SvmModel(count, binaries, hyper)


def svm_decisions(model, x):
    x = np.atleast_2d(as_tensor(x))
    return {pair: m.decision(x) for pair, m in model.binaries.items()}


def svm_predict(model, x):
    """One-vs-one voting. Accepts one sample [D] (returns an int) or a batch [N,D]."""
    x = as_tensor(x)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
    n = x.shape[0]
    votes = np.zeros((n, model.class_count))
    strength = np.zeros((n, model.class_count))
    rows = np.arange(n)
    for (a, b), f in svm_decisions(model, x).items():
        winner = np.where(f >= 0, a, b)
        votes[rows, winner] += 1
        strength[rows, winner] += np.abs(f)
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        tied = np.flatnonzero(votes[r] == votes[r].max())
        if tied.size > 1:
            s = strength[r, tied]
            tied = tied[s == s.max()]
        out[r] = tied[0]
    return int(out[0]) if single else out


# ----------------------------------------------------------------------------
# KNN


def knn_fit(points, labels, k):
    x = as_tensor(points)
    x = x.reshape(x.shape[0], -1).copy()
    labels = np.asarray(labels, dtype=np.int64).copy()
    if labels.size != x.shape[0]:
        raise ShapeError(f"{labels.size} labels for {x.shape[0]} points")
    if not 1 <= k <= x.shape[0]:
        raise ClassifierError(f"k={k} must lie in [1, {x.shape[0]}]")
    x.flags.writeable = False
    labels.flags.writeable = False
    return KnnModel(x, labels, int(k))


def _vote(neigh_labels, class_count):
    counts = np.bincount(neigh_labels, minlength=class_count)
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1 or neigh_labels[0] in tied:
        return int(tied[0]) if tied.size == 1 else int(neigh_labels[0])
    return int(tied[0])


def knn_predict(model, x, chunk=256):
    """Majority vote of the k nearest stored points (exact Euclidean distance).

    Distance ties at the k-th place go to the lower training index; vote
    ties go to the class of the nearest neighbour if it is tied, else the
    lowest class index.
    """
    x = as_tensor(x)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
    pts, k = model.points, model.k
    if x.shape[1] != pts.shape[1]:
        raise ShapeError(f"expected {pts.shape[1]} features, got {x.shape[1]}")
    class_count = int(model.labels.max()) + 1
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], chunk):
        q = x[start:start + chunk]
        approx = sq_distances(q, pts)
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        for r in range(q.shape[0]):
            # the expanded distance is only a filter; the slack covers its rounding error
            slack = 1e-9 * (1.0 + kth[r] + (q[r] @ q[r]))
            cand = np.flatnonzero(approx[r] <= kth[r] + slack)
            diff = pts[cand] - q[r]
            exact = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((cand, exact))[:k]
            out[start + r] = _vote(model.labels[cand[order]], class_count)
    return int(out[0]) if single else out
