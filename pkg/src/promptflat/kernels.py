"""Hot numeric kernels with two interchangeable implementations.

The loop kernels below are compiled with numba's ``@njit`` when numba
imports cleanly; plain vectorized NumPy versions (the ``*_np`` names) are
used otherwise. Setting the environment variable ``PFLAT_NO_NUMBA`` to a
non-empty value other than ``0`` forces the NumPy path even when numba is
installed. ``benchmarks/bench_kernels.py`` times one path against the other.

Conventions shared by every kernel:

* probability rows are dense float64 arrays that sum to 1,
* divergences apply the 1e-12 floor inside the log only; an exact zero in
  the first argument contributes nothing (0 log 0 = 0),
* per-pair KL values are clipped at 0 so floor rounding can never push a
  divergence negative.

The two paths agree to roundoff (different summation orders), not bit for
bit. Determinism within one configured path is exact.
"""

from __future__ import annotations

import os

import numpy as np

PROB_FLOOR = 1e-12


def _numba_wanted() -> bool:
    return os.environ.get("PFLAT_NO_NUMBA", "").strip() in ("", "0")


# ----------------------------------------------------------------------
# NumPy implementations
# ----------------------------------------------------------------------

def softmax_rows_np(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a (n, L) array."""
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def entropy_rows_np(p: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats per row; exact zeros contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0.0, p * np.log(p), 0.0)
    return -t.sum(axis=-1)


def divergence_partials_np(base: np.ndarray, pert: np.ndarray,
                           use_kl: bool, floor: float = PROB_FLOOR) -> np.ndarray:
    """Sum divergences div(base_row, pert[s, row]) over samples s.

    base (n, L), pert (k, n, L) -> (n,). use_kl selects KL(base || pert),
    otherwise cross entropy -sum(base * log pert).
    """
    logq = np.log(np.maximum(pert, floor))
    if use_kl:
        logb = np.log(np.maximum(base, floor))
        d = (base[None, :, :] * (logb[None, :, :] - logq)).sum(axis=-1)
        d = np.maximum(d, 0.0)
    else:
        d = -(base[None, :, :] * logq).sum(axis=-1)
    return d.sum(axis=0)


def logistic_probs_many_np(params2: np.ndarray, phi: np.ndarray,
                           n_labels: int) -> np.ndarray:
    """Softmax predictions for a batch of flat weight vectors.

    params2 (k, L*(V+1)), phi (n, V+1) -> probs (k, n, L).
    """
    k = params2.shape[0]
    w3 = params2.reshape(k, n_labels, phi.shape[1])
    logits = np.matmul(w3, phi.T).transpose(0, 2, 1)  # (k, n, L)
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def logistic_divergence_partials_np(params2: np.ndarray, phi: np.ndarray,
                                    base: np.ndarray, use_kl: bool,
                                    floor: float = PROB_FLOOR) -> np.ndarray:
    probs = logistic_probs_many_np(params2, phi, base.shape[1])
    return divergence_partials_np(base, probs, use_kl, floor)


# ----------------------------------------------------------------------
# Loop implementations (numba-compiled when active)
# ----------------------------------------------------------------------

def _softmax_rows_loop(z):
    n, L = z.shape
    out = np.empty((n, L))
    for i in range(n):
        m = z[i, 0]
        for l in range(1, L):
            if z[i, l] > m:
                m = z[i, l]
        s = 0.0
        for l in range(L):
            out[i, l] = np.exp(z[i, l] - m)
            s += out[i, l]
        for l in range(L):
            out[i, l] /= s
    return out


def _entropy_rows_loop(p):
    n, L = p.shape
    out = np.empty(n)
    for i in range(n):
        h = 0.0
        for l in range(L):
            if p[i, l] > 0.0:
                h -= p[i, l] * np.log(p[i, l])
        out[i] = h
    return out


def _divergence_partials_loop(base, pert, use_kl, floor):
    k, n, L = pert.shape
    out = np.zeros(n)
    logb = np.log(np.maximum(base, floor))
    for s in range(k):
        for i in range(n):
            d = 0.0
            for l in range(L):
                q = pert[s, i, l]
                if q < floor:
                    q = floor
                f = base[i, l]
                if use_kl:
                    d += f * (logb[i, l] - np.log(q))
                else:
                    d -= f * np.log(q)
            if use_kl and d < 0.0:
                d = 0.0
            out[i] += d
    return out


def _logistic_divergence_partials_loop(params2, phi, base, use_kl, floor):
    k = params2.shape[0]
    n, V1 = phi.shape
    L = base.shape[1]
    out = np.zeros(n)
    logb = np.log(np.maximum(base, floor))
    # logits via BLAS per sample; only the (L, n) slab is ever resident
    phi_t = np.ascontiguousarray(phi.T)
    z = np.empty(L)
    for s in range(k):
        w = params2[s].reshape(L, V1)
        zt = np.dot(w, phi_t)
        for i in range(n):
            m = zt[0, i]
            for l in range(1, L):
                if zt[l, i] > m:
                    m = zt[l, i]
            se = 0.0
            for l in range(L):
                z[l] = np.exp(zt[l, i] - m)
                se += z[l]
            d = 0.0
            for l in range(L):
                q = z[l] / se
                if q < floor:
                    q = floor
                f = base[i, l]
                if use_kl:
                    d += f * (logb[i, l] - np.log(q))
                else:
                    d -= f * np.log(q)
            if use_kl and d < 0.0:
                d = 0.0
            out[i] += d
    return out


HAS_NUMBA = False
USING_NUMBA = False

if _numba_wanted():
    try:
        from numba import njit

        HAS_NUMBA = True
        USING_NUMBA = True
    except ImportError:
        pass

if USING_NUMBA:
    softmax_rows = njit(cache=True)(_softmax_rows_loop)
    entropy_rows = njit(cache=True)(_entropy_rows_loop)
    divergence_partials = njit(cache=True)(_divergence_partials_loop)
    logistic_divergence_partials = njit(cache=True)(_logistic_divergence_partials_loop)
    logistic_probs_many = logistic_probs_many_np  # matmul-bound, BLAS already wins
else:
    softmax_rows = softmax_rows_np
    entropy_rows = entropy_rows_np
    divergence_partials = divergence_partials_np
    logistic_divergence_partials = logistic_divergence_partials_np
    logistic_probs_many = logistic_probs_many_np
