"""Small adaptive quadrature toolkit used by the covariance layer.

Everything here is vectorised over the integrand: ``f`` receives a 1D array
of abscissae and must return an array of the same shape.
"""
from __future__ import annotations

import heapq

import numpy as np

# Gauss-Kronrod 7/15 nodes and weights on [-1, 1]
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GWEIGHTS = np.zeros(15)
_GWEIGHTS[1:15:2] = np.concatenate([_WG[:-1], _WG[::-1]])


class QuadratureError(RuntimeError):
    """Raised when a quadrature misses its tolerance within the budget."""

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error


def gk15(f, a: float, b: float) -> tuple[float, float]:
    """One Gauss-Kronrod 15 panel. Returns (kronrod value, |kronrod - gauss|)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    fx = f(mid + half * _NODES)
    k = half * float(np.dot(_KWEIGHTS, fx))
    g = half * float(np.dot(_GWEIGHTS, fx))
    return k, abs(k - g)


def gk15_many(f, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply gk15 on every panel [edges[i], edges[i+1]] with one call to f."""
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(f(x.ravel())).reshape(x.shape)
    k = half * (fx @ _KWEIGHTS)
    g = half * (fx @ _GWEIGHTS)
    return k, np.abs(k - g)


def adaptive(f, a: float, b: float, tol: float = 1e-10, rtol: float = 0.0,
             max_panels: int = 4000, initial: int = 1, raise_on_fail: bool = True,
             breakpoints=None):
    """Globally adaptive bisection with GK15 panels.

    Stops when the summed error estimate drops below ``max(tol, rtol*|I|)``.
    ``breakpoints`` (inside (a, b)) seed the initial panel set.
    Returns (value, error_estimate).
    """
    if breakpoints is not None:
        inner = np.sort(np.asarray([p for p in breakpoints if a < p < b], dtype=float))
        edges = np.concatenate([[a], inner, [b]])
    else:
        edges = np.linspace(a, b, initial + 1)
    vals, errs = gk15_many(f, edges)
    heap = [(-e, lo, hi, v) for e, lo, hi, v in zip(errs, edges[:-1], edges[1:], vals)]
    heapq.heapify(heap)
    total = float(np.sum(vals))
    err = float(np.sum(errs))
    n = len(heap)
    while err > max(tol, rtol * abs(total)):
        if n >= max_panels:
            if raise_on_fail:
                raise QuadratureError("adaptive quadrature budget exhausted", total, err)
            break
        negerr, lo, hi, v = heapq.heappop(heap)
        m = 0.5 * (lo + hi)
        (v1, v2), (e1, e2) = gk15_many(f, np.array([lo, m, hi]))
        total += v1 + v2 - v
        err += e1 + e2 + negerr
        heapq.heappush(heap, (-e1, lo, m, v1))
        heapq.heappush(heap, (-e2, m, hi, v2))
        n += 1
    # re-sum to limit drift from the running updates
    total = float(np.sum([h[3] for h in heap]))
    err = float(np.sum([-h[0] for h in heap]))
    return total, err


def euler_accelerate(terms, depth: int = 16) -> tuple[float, float]:
    """Sum a (roughly alternating) series by repeated averaging of its last
    ``depth`` partial sums.

    Returns the accelerated value and the change between the last two
    averaging levels as an error proxy.
    """
    s = np.cumsum(np.asarray(terms, dtype=float))
    if s.size < 3:
        return float(s[-1]), float(abs(s[-1] - (s[-2] if s.size > 1 else 0.0)))
    cur = s[-min(depth, s.size):]
    prev = cur[-1]
    while cur.size > 1:
        prev = cur[-1]
        cur = 0.5 * (cur[1:] + cur[:-1])
    return float(cur[0]), float(abs(cur[0] - prev))


def oscillatory_tail(f, start: float, half_period: float, tol: float = 1e-10,
                     min_terms: int = 24, max_terms: int = 400, panels_per_term: int = 2):
    """Integrate f over [start, inf) panel-by-panel, one half-period at a time,
    summing the panel integrals with Euler acceleration.

    The panel error estimates are accumulated into the reported error.
    """
    terms = []
    quad_err = 0.0
    n_batch = min_terms
    value, acc_err = 0.0, np.inf
    while True:
        lo = start + len(terms) * half_period
        edges = lo + half_period * np.arange(n_batch * panels_per_term + 1) / panels_per_term
        v, e = gk15_many(f, edges)
        terms.extend(v.reshape(n_batch, panels_per_term).sum(axis=1))
        quad_err += float(e.sum())
        value, acc_err = euler_accelerate(terms)
        if acc_err + quad_err <= tol or len(terms) >= max_terms:
            break
        n_batch = min(len(terms), max_terms - len(terms))
    return value, acc_err + quad_err
