"""Slow reference computations used to cross-check the fast paths.

Nothing here shares code with the production routines: eigenvalues come
from cyclic Jacobi rotations and homophily from explicit neighbour loops.
"""

from __future__ import annotations

import math

import numpy as np


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, descending.

    Sweeps stop once the off-diagonal Frobenius norm falls below ``tol``.
    """
    A = np.array(a, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("square matrix required")
    for _ in range(max_sweeps):
        off = math.sqrt(max(float(np.sum(A * A) - np.sum(np.diag(A) ** 2)), 0.0))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows and columns p, q
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
    return np.sort(np.diag(A))[::-1]


def neighbour_lists(dense: np.ndarray) -> list[list[int]]:
    n = dense.shape[0]
    return [[j for j in range(n) if dense[i][j] != 0] for i in range(n)]


def edge_homophily_bruteforce(dense: np.ndarray, labels) -> float:
    same = total = 0
    for i, nbrs in enumerate(neighbour_lists(dense)):
        for j in nbrs:
            total += 1
            same += int(labels[i] == labels[j])
    return same / total


def class_homophily_bruteforce(dense: np.ndarray, labels, num_classes: int) -> float:
    nbrs = neighbour_lists(dense)
    n = len(labels)
    score = 0.0
    for k in range(num_classes):
        members = [x for x in range(n) if labels[x] == k]
        num = sum(sum(1 for j in nbrs[x] if labels[j] == k) for x in members)
        den = sum(len(nbrs[x]) for x in members)
        score += max(num / den - len(members) / n, 0.0)
    return score / (num_classes - 1)


def dense_normalized_adjacency(dense: np.ndarray) -> np.ndarray:
    a_hat = np.asarray(dense, dtype=np.float64) + np.eye(dense.shape[0])
    d = a_hat.sum(axis=1)
    return a_hat / np.sqrt(np.outer(d, d))
