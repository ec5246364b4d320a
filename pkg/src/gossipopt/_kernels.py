"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

The backend is picked once at import time from the GOSSIPOPT_BACKEND
environment variable: "numba" (require numba), "numpy" (force fallback),
or "auto"/unset (numba when importable). ``active_backend()`` reports the
choice; ``benchmarks/bench_kernels.py`` times both paths side by side.

Kernels are written so both paths perform the same arithmetic per element;
results agree to floating-point roundoff but are only guaranteed
bit-stable within one backend.
"""

from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("GOSSIPOPT_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"GOSSIPOPT_BACKEND must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

_HAVE_NUMBA = False
if _requested in ("auto", "numba"):
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise RuntimeError("GOSSIPOPT_BACKEND=numba but numba is not importable")

_BACKEND = "numba" if _HAVE_NUMBA else "numpy"


def active_backend() -> str:
    return _BACKEND


# -- gossip round kernels ---------------------------------------------------
#
# Z holds one row per client (n x d). One accelerated round maps
#   Z_next = (1 + phi) * P @ Z - phi * Z_prev
# with Z_prev = Z on the first round; plain rounds just apply P.


def _plain_rounds_np(P: np.ndarray, Z: np.ndarray, rounds: int) -> np.ndarray:
    out = Z.copy()
    for _ in range(rounds):
        out = P @ out
    return out


def _chebyshev_rounds_np(P: np.ndarray, Z: np.ndarray, phi: float, rounds: int) -> np.ndarray:
    cur = Z.copy()
    prev = Z.copy()
    for _ in range(rounds):
        nxt = (1.0 + phi) * (P @ cur) - phi * prev
        prev = cur
        cur = nxt
    return cur


# -- SVM probe kernels ------------------------------------------------------
#
# Dense batched evaluation of the capped-l1 hinge model over all samples,
# used by objective and stationarity probes: A is (m x d), b is (m,), X is
# (q x d) probe points. The hinge activity tie-break is margin <= 1 and the
# penalty uses sign(x_j) only strictly inside the cap (|x_j| < alpha).


def _svm_full_values_np(A, b, X, lam, alpha):
    margins = (X @ A.T) * b[None, :]
    hinge = np.maximum(1.0 - margins, 0.0).mean(axis=1)
    pen = lam * np.minimum(np.abs(X), alpha).sum(axis=1)
    return hinge + pen


def _svm_full_subgradients_np(A, b, X, lam, alpha):
    q = X.shape[0]
    m = A.shape[0]
    out = np.empty_like(X)
    # chunk the (q x m) activity mask to bound memory
    step = max(1, int(8_000_000 // max(m, 1)))
    for lo in range(0, q, step):
        hi = min(lo + step, q)
        margins = (X[lo:hi] @ A.T) * b[None, :]
        active = margins <= 1.0
        out[lo:hi] = -(active * b[None, :]) @ A / m
    inside = np.abs(X) < alpha
    out += lam * np.sign(X) * inside
    return out


if _HAVE_NUMBA:

    @njit(cache=True)
    def _plain_rounds_nb(P, Z, rounds):
        out = Z.copy()
        for _ in range(rounds):
            out = np.dot(P, out)
        return out

    @njit(cache=True)
    def _chebyshev_rounds_nb(P, Z, phi, rounds):
        cur = Z.copy()
        prev = Z.copy()
        for _ in range(rounds):
            mixed = np.dot(P, cur)
            nxt = (1.0 + phi) * mixed - phi * prev
            prev = cur
            cur = nxt
        return cur

    @njit(cache=True)
    def _svm_full_values_nb(A, b, X, lam, alpha):
        q, d = X.shape
        m = A.shape[0]
        out = np.empty(q)
        for i in range(q):
            hinge = 0.0
            for j in range(m):
                z = 0.0
                for k in range(d):
                    z += A[j, k] * X[i, k]
                margin = 1.0 - b[j] * z
                if margin > 0.0:
                    hinge += margin
            pen = 0.0
            for k in range(d):
                a = abs(X[i, k])
                pen += a if a < alpha else alpha
            out[i] = hinge / m + lam * pen
        return out

    @njit(cache=True)
    def _svm_full_subgradients_nb(A, b, X, lam, alpha):
        q, d = X.shape
        m = A.shape[0]
        out = np.zeros((q, d))
        for i in range(q):
            for j in range(m):
                z = 0.0
                for k in range(d):
                    z += A[j, k] * X[i, k]
                if b[j] * z <= 1.0:
                    for k in range(d):
                        out[i, k] -= b[j] * A[j, k]
            for k in range(d):
                out[i, k] /= m
                x = X[i, k]
                if abs(x) < alpha:
                    if x > 0.0:
                        out[i, k] += lam
                    elif x < 0.0:
                        out[i, k] -= lam
        return out

    plain_rounds = _plain_rounds_nb
    chebyshev_rounds = _chebyshev_rounds_nb
    svm_full_values = _svm_full_values_nb
    svm_full_subgradients = _svm_full_subgradients_nb
else:
    plain_rounds = _plain_rounds_np
    chebyshev_rounds = _chebyshev_rounds_np
    svm_full_values = _svm_full_values_np
    svm_full_subgradients = _svm_full_subgradients_np
