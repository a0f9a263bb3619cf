"""Hot loops of the transport code, with numba and pure-numpy variants.

The backend is fixed at import time by ``OTJR_KERNELS`` (``numba`` or
``numpy``); the default is numba when it imports. Sorts are stable in both,
so matchings are identical and values agree up to summation order.
``BACKEND`` names the active one; the private ``_np_*``/``_nb_*`` functions
stay importable for benchmarks and tests.
"""
import itertools
import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_requested = os.environ.get("OTJR_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"OTJR_KERNELS must be 'numba' or 'numpy', got {_requested!r}")
BACKEND = "numba" if (_requested == "numba" and numba is not None) else "numpy"


# ---------------------------------------------------------------- numpy

def _np_sw_match(pmu, pnu):
    """Per-projection rank matching of two projected batches of shape (B, K).

    Returns (w1 per projection (K,), displacement (B, K), partner (B, K)):
    ``partner[i, k]`` is the row of ``pnu`` sharing rank with row ``i`` of
    ``pmu`` and ``displacement[i, k] = pnu[partner, k] - pmu[i, k]``.
    """
    B, K = pmu.shape
    tau1 = np.argsort(pmu, axis=0, kind="stable")
    tau2 = np.argsort(pnu, axis=0, kind="stable")
    partner = np.empty((B, K), dtype=np.int64)
    np.put_along_axis(partner, tau1, tau2, axis=0)
    disp = np.take_along_axis(pnu, partner, axis=0) - pmu
    w1 = np.abs(disp).mean(axis=0)
    return w1, disp, partner


def _np_sinkhorn_log(cost, lam, a, b, f0, g0, max_iter, tol):
    """Log-domain Sinkhorn on scaled potentials f/lam, g/lam, warm-started."""
    logk = -cost / lam
    loga, logb = np.log(a), np.log(b)
    f = f0 / lam
    g = g0 / lam
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        m = logk + g[None, :]
        f = loga - (m.max(1) + np.log(np.exp(m - m.max(1, keepdims=True)).sum(1)))
        m = logk + f[:, None]
        g = logb - (m.max(0) + np.log(np.exp(m - m.max(0, keepdims=True)).sum(0)))
        if it % 10 == 0 or it == max_iter:
            plan = np.exp(logk + f[:, None] + g[None, :])
            err = np.abs(plan.sum(1) - a).sum()
            if err < tol:
                break
    plan = np.exp(logk + f[:, None] + g[None, :])
    return plan, f * lam, g * lam, it, float(np.abs(plan.sum(1) - a).sum())


def _np_assignment_min(cost):
    n = cost.shape[0]
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return float(totals.min())


def _np_pairwise_l2(x, y):
    d = x[:, None, :] - y[None, :, :]
    return np.sqrt((d * d).sum(-1))


# ---------------------------------------------------------------- numba

if numba is not None:

    @numba.njit(cache=True)
    def _nb_sw_match(pmu, pnu):
        B, K = pmu.shape
        w1 = np.zeros(K)
        disp = np.empty((B, K))
        partner = np.empty((B, K), dtype=np.int64)
        for k in range(K):
            t1 = np.argsort(pmu[:, k], kind="mergesort")
            t2 = np.argsort(pnu[:, k], kind="mergesort")
            acc = 0.0
            for r in range(B):
                i = t1[r]
                j = t2[r]
                partner[i, k] = j
                d = pnu[j, k] - pmu[i, k]
                disp[i, k] = d
            for i in range(B):
                acc += abs(disp[i, k])
            w1[k] = acc / B
        return w1, disp, partner

    @numba.njit(cache=True)
    def _nb_sinkhorn_log(cost, lam, a, b, f0, g0, max_iter, tol):
        n, m = cost.shape
        logk = -cost / lam
        loga = np.log(a)
        logb = np.log(b)
        f = f0 / lam
        g = g0 / lam
        it = 0
        for it in range(1, max_iter + 1):
            for i in range(n):
                mx = -np.inf
                for j in range(m):
                    v = logk[i, j] + g[j]
                    if v > mx:
                        mx = v
                s = 0.0
                for j in range(m):
                    s += math.exp(logk[i, j] + g[j] - mx)
                f[i] = loga[i] - (mx + math.log(s))
            for j in range(m):
                mx = -np.inf
                for i in range(n):
                    v = logk[i, j] + f[i]
                    if v > mx:
                        mx = v
                s = 0.0
                for i in range(n):
                    s += math.exp(logk[i, j] + f[i] - mx)
                g[j] = logb[j] - (mx + math.log(s))
            if it % 10 == 0 or it == max_iter:
                err = 0.0
                for i in range(n):
                    r = 0.0
                    for j in range(m):
                        r += math.exp(logk[i, j] + f[i] + g[j])
                    err += abs(r - a[i])
                if err < tol:
                    break
        plan = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                plan[i, j] = math.exp(logk[i, j] + f[i] + g[j])
        err = 0.0
        for i in range(n):
            err += abs(plan[i].sum() - a[i])
        return plan, f * lam, g * lam, it, err

    @numba.njit(cache=True)
    def _nb_assignment_min(cost):
        # Heap's algorithm over column assignments
        n = cost.shape[0]
        perm = np.arange(n)
        c = np.zeros(n, dtype=np.int64)
        best = 0.0
        for i in range(n):
            best += cost[i, perm[i]]
        i = 0
        while i < n:
            if c[i] < i:
                if i % 2 == 0:
                    perm[0], perm[i] = perm[i], perm[0]
                else:
                    perm[c[i]], perm[i] = perm[i], perm[c[i]]
                tot = 0.0
                for r in range(n):
                    tot += cost[r, perm[r]]
                if tot < best:
                    best = tot
                c[i] += 1
                i = 0
            else:
                c[i] = 0
                i += 1
        return best

    @numba.njit(cache=True)
    def _nb_pairwise_l2(x, y):
        n, d = x.shape
        m = y.shape[0]
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                s = 0.0
                for c in range(d):
                    t = x[i, c] - y[j, c]
                    s += t * t
                out[i, j] = math.sqrt(s)
        return out


if BACKEND == "numba":
    sw_match = _nb_sw_match
    sinkhorn_log = _nb_sinkhorn_log
    assignment_min = _nb_assignment_min
    pairwise_l2 = _nb_pairwise_l2
else:
    sw_match = _np_sw_match
    sinkhorn_log = _np_sinkhorn_log
    assignment_min = _np_assignment_min
    pairwise_l2 = _np_pairwise_l2
