"""Numeric kernels shared by ranking, contradiction scoring, and evaluation.

Two implementations of each kernel are kept: a pure-numpy one and a numba
``@njit`` one. Which family backs the public functions is decided once, at
import time, from the ``MEDRAG_NUMBA`` environment variable:

* unset or ``auto`` -- use numba when it is importable, numpy otherwise;
* ``1`` / ``true`` / ``on`` -- require numba (raise if missing);
* ``0`` / ``false`` / ``off`` -- force the numpy path.

Both families are importable directly (``NUMPY_IMPLS`` / ``NUMBA_IMPLS``)
so tests and benchmarks can compare them on the same inputs.

Kernels assume well-formed input: callers validate dimensions and reject
zero-norm vectors before calling.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("MEDRAG_NUMBA", "auto").strip().lower()
_TRUTHY = {"1", "true", "on", "yes"}
_FALSY = {"0", "false", "off", "no"}


def _np_pairwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity matrix between the rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    an = np.linalg.norm(a, axis=1, keepdims=True)
    bn = np.linalg.norm(b, axis=1, keepdims=True)
    return (a / an) @ (b / bn).T


def _np_offdiag_rowmax(sim: np.ndarray) -> np.ndarray:
    """Per-row maximum of a square matrix, ignoring the diagonal. n >= 2."""
    work = np.array(sim, dtype=np.float64, copy=True)
    np.fill_diagonal(work, -np.inf)
    return work.max(axis=1)


def _np_lcs_length(a: np.ndarray, b: np.ndarray) -> int:
    """Longest-common-subsequence length between two int64 sequences.

    Row-wise DP where each new row is a running maximum, which keeps the
    inner loop vectorised.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return 0
    prev = np.zeros(b.size + 1, dtype=np.int64)
    for x in a:
        grown = np.where(b == x, prev[:-1] + 1, prev[1:])
        prev[1:] = np.maximum.accumulate(grown)
    return int(prev[-1])


NUMPY_IMPLS = {
    "pairwise_cosine": _np_pairwise_cosine,
    "offdiag_rowmax": _np_offdiag_rowmax,
    "lcs_length": _np_lcs_length,
}

NUMBA_IMPLS: dict | None = None


def _build_numba_impls() -> dict:
    from numba import njit

    @njit(cache=True)
    def nb_pairwise_cosine(a, b):  # pragma: no cover - numba
        n, d = a.shape
        m = b.shape[0]
        an = np.empty(n)
        bn = np.empty(m)
        for i in range(n):
            s = 0.0
            for k in range(d):
                s += a[i, k] * a[i, k]
            an[i] = np.sqrt(s)
        for j in range(m):
            s = 0.0
            for k in range(d):
                s += b[j, k] * b[j, k]
            bn[j] = np.sqrt(s)
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(d):
                    s += a[i, k] * b[j, k]
                out[i, j] = s / (an[i] * bn[j])
        return out

    @njit(cache=True)
    def nb_offdiag_rowmax(sim):  # pragma: no cover - numba
        n = sim.shape[0]
        out = np.empty(n)
        for i in range(n):
            best = -np.inf
            for j in range(n):
                if j != i and sim[i, j] > best:
                    best = sim[i, j]
            out[i] = best
        return out

    @njit(cache=True)
    def nb_lcs_length(a, b):  # pragma: no cover - numba
        n = a.shape[0]
        m = b.shape[0]
        dp = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            prev = 0
            for j in range(1, m + 1):
                tmp = dp[j]
                if a[i] == b[j - 1]:
                    dp[j] = prev + 1
                elif dp[j - 1] > dp[j]:
                    dp[j] = dp[j - 1]
                prev = tmp
        return dp[m]

    def pairwise_cosine(a, b):
        return nb_pairwise_cosine(
            np.ascontiguousarray(a, dtype=np.float64),
            np.ascontiguousarray(b, dtype=np.float64),
        )

    def offdiag_rowmax(sim):
        return nb_offdiag_rowmax(np.ascontiguousarray(sim, dtype=np.float64))

    def lcs_length(a, b):
        return int(
            nb_lcs_length(
                np.ascontiguousarray(a, dtype=np.int64),
                np.ascontiguousarray(b, dtype=np.int64),
            )
        )

    return {
        "pairwise_cosine": pairwise_cosine,
        "offdiag_rowmax": offdiag_rowmax,
        "lcs_length": lcs_length,
    }


def _select_backend() -> tuple[str, dict]:
    global NUMBA_IMPLS
    if _FLAG in _FALSY:
        return "numpy", NUMPY_IMPLS
    try:
        NUMBA_IMPLS = _build_numba_impls()
        return "numba", NUMBA_IMPLS
    except ImportError:
        if _FLAG in _TRUTHY:
            raise RuntimeError(
                "MEDRAG_NUMBA requested the numba backend but numba is not installed"
            )
        return "numpy", NUMPY_IMPLS


_BACKEND_NAME, _IMPLS = _select_backend()


def backend() -> str:
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return _BACKEND_NAME


def pairwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _IMPLS["pairwise_cosine"](a, b)


def offdiag_rowmax(sim: np.ndarray) -> np.ndarray:
    return _IMPLS["offdiag_rowmax"](sim)


def lcs_length(a: np.ndarray, b: np.ndarray) -> int:
    return _IMPLS["lcs_length"](a, b)
