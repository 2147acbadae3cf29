"""Hot loops: batched DSF forward pass and exhaustive lattice checks.

Each kernel exists twice: a numba ``@njit`` version and a vectorized numpy
version. ``forward`` / ``local_violations`` dispatch on the backend flag.
"""
import math

import numpy as np

from ._backend import njit, use_numba

try:
    from numba import prange
except Exception:  # pragma: no cover
    prange = range


# -- scalar unit evaluation (mirrors concave._raw_value) -----------------------------

@njit
def _raw_unit(code, p0, p1, bps, sl, x):
    if code == 0:
        return x
    if code == 1:
        return math.sqrt(x)
    if code == 2:
        return x ** (1.0 - p0)
    if code == 3:
        return p0 * math.log1p(x / p0)
    if code == 4:
        return min(x, p0)
    if code == 5:
        return -math.expm1(-x)
    if code == 6:
        return 0.5 * math.tanh(0.5 * x)
    if code == 7:
        return _softmin_m(x, p0, p1) - _softmin_m(0.0, p0, p1)
    if code == 8:
        t = x / p0
        return min(math.sqrt(t), t)
    if code == 9:
        out = 0.0
        prev = 0.0
        for i in range(bps.shape[0]):
            if x <= bps[i]:
                return out + sl[i] * (x - prev)
            out += sl[i] * (bps[i] - prev)
            prev = bps[i]
        return out + sl[bps.shape[0]] * (x - prev)
    if code == 10:
        return x * x
    if code == 11:
        return x ** p0
    if code == 12:
        return math.expm1(x)
    return math.nan


@njit
def _softmin_m(x, a, c):
    if a == 0.0:
        return math.sqrt(x * c)
    p = -a
    if p < 0.0:
        if x <= 0.0:
            return 0.0
        return x * ((1.0 + (x / c) ** (-p)) / 2.0) ** (1.0 / p)
    return ((x ** p + c ** p) / 2.0) ** (1.0 / p)


@njit
def unit_value(code, p0, p1, shift, bps, sl, x):
    if shift == 0.0:
        return _raw_unit(code, p0, p1, bps, sl, x)
    return _raw_unit(code, p0, p1, bps, sl, x + shift) - _raw_unit(code, p0, p1, bps, sl, shift)


# -- forward pass ----------------------------------------------------------------------

@njit(parallel=True)
def _forward_numba(X, gates, codes, p0, p1, shift, pwl_ptr, pwl_bp, pwl_sl,
                   int_ptr, int_src, int_w, grd_ptr, grd_src, grd_w, m_pm, root):
    B = X.shape[0]
    N = codes.shape[0]
    out = np.empty(B)
    Z = np.empty((B, N))
    P = np.empty((B, N))
    for b in prange(B):
        for v in range(N):
            z = 0.0
            for e in range(grd_ptr[v], grd_ptr[v + 1]):
                z += grd_w[e] * X[b, grd_src[e]]
            for e in range(int_ptr[v], int_ptr[v + 1]):
                z += int_w[e] * P[b, int_src[e]]
            if z < 0.0:
                z = 0.0
            Z[b, v] = z
            bp = pwl_bp[pwl_ptr[v]:pwl_ptr[v + 1]]
            sl = pwl_sl[pwl_ptr[v] + v:pwl_ptr[v + 1] + v + 1]
            P[b, v] = gates[b, v] * unit_value(codes[v], p0[v], p1[v], shift[v], bp, sl, z)
        s = P[b, root]
        for i in range(X.shape[1]):
            s += m_pm[i] * X[b, i]
        out[b] = s
    return out, Z, P


def _forward_numpy(X, gates, units, int_ptr, int_src, int_w, grd_ptr, grd_src, grd_w, m_pm, root):
    B, N = X.shape[0], len(units)
    Z = np.empty((B, N))
    P = np.empty((B, N))
    for v in range(N):
        g0, g1 = grd_ptr[v], grd_ptr[v + 1]
        i0, i1 = int_ptr[v], int_ptr[v + 1]
        z = X[:, grd_src[g0:g1]] @ grd_w[g0:g1] if g1 > g0 else np.zeros(B)
        if i1 > i0:
            z = z + P[:, int_src[i0:i1]] @ int_w[i0:i1]
        z = np.maximum(z, 0.0)
        Z[:, v] = z
        P[:, v] = gates[:, v] * units[v].value(z)
    out = P[:, root] + X @ m_pm
    return out, Z, P


def forward(c, X, gates=None, backend=None):
    """Batched forward pass on a compiled model ``c`` (see ``dsf.CompiledDsf``).

    Returns (outputs, pre-activations Z, activations P).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if gates is None:
        gates = np.ones((X.shape[0], c.N))
    else:
        gates = np.ascontiguousarray(np.broadcast_to(gates, (X.shape[0], c.N)), dtype=np.float64)
    backend = backend or ("numba" if use_numba() else "numpy")
    if backend == "numba":
        return _forward_numba(X, gates, c.codes, c.p0, c.p1, c.shift, c.pwl_ptr, c.pwl_bp,
                              c.pwl_sl, c.int_ptr, c.int_src, c.int_w, c.grd_ptr, c.grd_src,
                              c.grd_w, c.m_pm, c.root)
    return _forward_numpy(X, gates, c.units, c.int_ptr, c.int_src, c.int_w, c.grd_ptr,
                          c.grd_src, c.grd_w, c.m_pm, c.root)


# -- exhaustive local checks -----------------------------------------------------------
# For every A and v != w outside A: d = f(A+v+w) - f(A+w) - f(A+v) + f(A).
# Submodularity needs d <= tol, supermodularity d >= -tol.

@njit(parallel=True)
def _local_numba(table, n, sign, tol):
    M = table.shape[0]
    worst = np.zeros(M)
    count = np.zeros(M, dtype=np.int64)
    for A in prange(M):
        fa = table[A]
        mx = 0.0
        cnt = 0
        for w in range(n):
            bw = 1 << w
            if A & bw:
                continue
            faw = table[A | bw]
            for v in range(n):
                bv = 1 << v
                if v == w or (A & bv):
                    continue
                d = sign * (table[A | bw | bv] - faw - table[A | bv] + fa)
                if d > tol:
                    cnt += 1
                    if d > mx:
                        mx = d
        worst[A] = mx
        count[A] = cnt
    return worst, count


def _local_numpy(table, n, sign, tol):
    M = table.shape[0]
    masks = np.arange(M, dtype=np.int64)
    worst = np.zeros(M)
    count = np.zeros(M, dtype=np.int64)
    for w in range(n):
        bw = 1 << w
        for v in range(n):
            if v == w:
                continue
            bv = 1 << v
            sel = masks[(masks & (bw | bv)) == 0]
            d = sign * (table[sel | bw | bv] - table[sel | bw] - table[sel | bv] + table[sel])
            bad = d > tol
            count[sel[bad]] += 1
            worst[sel] = np.maximum(worst[sel], np.where(bad, d, 0.0))
    return worst, count


def local_violations(table, n, sign=1.0, tol=1e-9, backend=None):
    """Per-subset worst violation and violation count of the pairwise test."""
    table = np.ascontiguousarray(table, dtype=np.float64)
    backend = backend or ("numba" if use_numba() else "numpy")
    if backend == "numba":
        return _local_numba(table, n, float(sign), float(tol))
    return _local_numpy(table, n, float(sign), float(tol))
