"""lp norms, the linear maximization oracle over (lp ball) x (image box), and
Euclidean projection onto (l1 ball) x (image box).

All batched routines take arrays of shape (B, n) and treat each row as an
independent problem; the single-vector functions are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import NonFiniteGradientError


@dataclass(frozen=True)
class LmoSolution:
    delta_star: np.ndarray
    mu_star: float
    objective: float


def lp_norm(v, p: float, axis=None):
    """(sum |v_k|^p)^(1/p), rescaled by max|v| to avoid under/overflow."""
    if p < 1:
        raise ValueError(f"lp_norm requires p >= 1, got {p}")
    a = np.abs(np.asarray(v, dtype=np.float64))
    if not np.all(np.isfinite(a)):
        raise ValueError("lp_norm requires finite input")
    if a.size == 0:
        return np.zeros(()) if axis is None else np.zeros(np.delete(a.shape, axis))
    m = a.max(axis=axis, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    s = np.sum((a / safe) ** p, axis=axis, keepdims=True) ** (1.0 / p) * m
    return float(s.reshape(())) if axis is None else np.squeeze(s, axis=axis)


def box_gamma(x, w) -> np.ndarray:
    """Largest feasible |delta_i| when moving x_i in direction sign(w_i).

    ``max(-x * sign(w), (1 - x) * sign(w))``, which is 0 wherever w_i = 0.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.sign(np.asarray(w, dtype=np.float64))
    return np.maximum(-x * s, (1.0 - x) * s)


def _validate_lmo(w, x, p):
    if not p > 1:
        raise ValueError(f"the lp oracle needs p > 1 (it divides by p - 1), got {p}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteGradientError("gradient contains non-finite entries")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must lie in [0, 1]")


def lmo_lp_box_batch(w, x, epsilon, p: float, method: str = "select"):
    """Row-wise argmax <w, d> s.t. ||d||_p <= eps, x + d in [0, 1]^n.

    Returns ``(delta, mu)``. KKT gives |d_i| = min(gamma_i, (|w_i| / (p mu))^(1/(p-1)))
    with mu chosen so the lp constraint is tight, or mu = 0 if the box corner
    already fits in the ball. ``method="select"`` locates mu exactly among the
    clip breakpoints (quickselect, expected O(n));
    ``method="bisect"`` bisects on log(mu) and serves as a cross-check.
    Both work in the log domain because 1/(p-1) is ~100 at p = 1.01.
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _validate_lmo(w, x, p)
    B, n = w.shape
    eps = np.broadcast_to(np.asarray(epsilon, dtype=np.float64), (B,)).copy()
    if np.any(eps < 0):
        raise ValueError("epsilon must be non-negative")
    if method == "select":
        delta = np.empty((B, n))
        mu = np.empty(B)
        _lmo_select_rows(w, x, eps, float(p), delta, mu)
        return delta, mu
    if method != "bisect":
        raise ValueError(f"unknown method {method!r}")

    sgn = np.sign(w)
    gamma = box_gamma(x, w)
    absw = np.abs(w)
    active = (absw > 0) & (gamma > 0)
    gamma = np.where(active, gamma, 0.0)

    delta_mag = np.zeros((B, n))
    mu = np.zeros(B)
    corner = lp_norm(gamma, p, axis=1) if n else np.zeros(B)
    box_only = corner <= eps
    delta_mag[box_only] = gamma[box_only]

    rows = np.flatnonzero(~box_only & (eps > 0))
    if rows.size:
        log_pmu = _mu_bisect(absw[rows], gamma[rows], active[rows], eps[rows], p)
        q = 1.0 / (p - 1.0)
        with np.errstate(divide="ignore"):
            u = np.log(absw[rows])
        delta_mag[rows] = np.minimum(gamma[rows], np.exp(q * (u - log_pmu[:, None])))
        mu[rows] = np.exp(log_pmu) / p

    delta = delta_mag * sgn
    norms = lp_norm(delta, p, axis=1) if n else np.zeros(B)
    over = norms > eps
    if np.any(over):
        delta[over] *= (eps[over] / norms[over])[:, None]
    return delta, mu


@numba.njit(cache=True)
def _lmo_select_rows(w, x, eps, p, delta, mu):
    """Water-filling per row.

    Coordinate i saturates at gamma_i once log(p mu) <= key_i, where
    key_i = log|w_i| - (p-1) log gamma_i. The lp mass of d(mu) is
    A + (p mu)^(-r) S with A the saturated gamma^p mass and S the sum of
    |w|^r over the rest (r = p/(p-1)). We look for the largest key whose
    mass reaches eps^p by quickselect (three-way partitions, expected O(n));
    mu is then closed-form on that segment. Unsaturated terms are always
    taken relative to a breakpoint at or above their own key, which bounds
    them by gamma^p <= 1 and keeps r ~ 100 from overflowing.
    """
    B, n = w.shape
    q = 1.0 / (p - 1.0)
    r = p / (p - 1.0)
    log_w = np.empty(n)
    log_g = np.empty(n)
    gam = np.empty(n)
    gp = np.empty(n)
    key = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    perm = np.empty(n, dtype=np.int64)
    for b in range(B):
        e = eps[b]
        m = 0
        corner = 0.0
        for i in range(n):
            wi = w[b, i]
            delta[b, i] = 0.0
            if wi > 0:
                g = 1.0 - x[b, i]
            elif wi < 0:
                g = x[b, i]
            else:
                continue
            if g > 0:
                lw = np.log(abs(wi))
                lg = np.log(g)
                log_w[m] = lw
                log_g[m] = lg
                gam[m] = g
                gp[m] = g**p
                corner += gp[m]
                key[m] = lw - (p - 1.0) * lg
                idx[m] = i
                perm[m] = m
                m += 1
        mu[b] = 0.0
        if e <= 0 or m == 0:
            continue
        target = e**p
        best = -np.inf
        if corner > target:
            lo = 0
            hi = m
            A = 0.0
            log_s = -np.inf  # log sum |w|^r over coordinates known to be unsaturated
            while lo < hi:
                piv = key[perm[(lo + hi) // 2]]
                a = lo
                i = lo
                c = hi
                while i < c:
                    kv = key[perm[i]]
                    if kv > piv:
                        tmp = perm[a]
                        perm[a] = perm[i]
                        perm[i] = tmp
                        a += 1
                        i += 1
                    elif kv < piv:
                        c -= 1
                        tmp = perm[c]
                        perm[c] = perm[i]
                        perm[i] = tmp
                    else:
                        i += 1
                mass_ge = 0.0
                for j in range(lo, c):
                    mass_ge += gp[perm[j]]
                s_lt = 0.0
                for j in range(c, hi):
                    s_lt += np.exp(r * (log_w[perm[j]] - piv))
                # ties sit exactly on their breakpoint: counted once, as saturated
                f = A + mass_ge + s_lt
                if log_s > -np.inf:
                    f += np.exp(log_s - r * piv)
                if f >= target:
                    best = piv
                    s_new = s_lt
                    for j in range(a, c):
                        s_new += gp[perm[j]]
                    if s_new > 0:
                        ls = np.log(s_new) + r * piv
                        if log_s == -np.inf:
                            log_s = ls
                        elif log_s > ls:
                            log_s = log_s + np.log1p(np.exp(ls - log_s))
                        else:
                            log_s = ls + np.log1p(np.exp(log_s - ls))
                    hi = a
                else:
                    A += mass_ge
                    lo = c
        if best == -np.inf:
            # box corner fits (or misses only by round-off): take it, rescale below
            norm_p = 0.0
            for k in range(m):
                delta[b, idx[k]] = gam[k] if w[b, idx[k]] > 0 else -gam[k]
                norm_p += gp[k]
            norm = norm_p ** (1.0 / p)
            if norm > e:
                for k in range(m):
                    delta[b, idx[k]] *= e / norm
            continue
        A = 0.0
        s_rel = 0.0
        for k in range(m):
            if key[k] > best:
                A += gp[k]
            else:
                s_rel += np.exp(r * (log_w[k] - best))
        slack = target - A
        if slack <= 0.0 or s_rel <= 0.0:
            log_pmu = best
        else:
            log_pmu = (np.log(s_rel) + r * best - np.log(slack)) / r
        mu[b] = np.exp(log_pmu) / p
        norm_p = 0.0
        for k in range(m):
            lm = q * (log_w[k] - log_pmu)
            if lm >= log_g[k]:
                mag = gam[k]
            else:
                mag = np.exp(lm)
            norm_p += mag**p
            delta[b, idx[k]] = mag if w[b, idx[k]] > 0 else -mag
        # round-off safeguard; scaling toward 0 keeps the box and sign pattern
        norm = norm_p ** (1.0 / p)
        if norm > e:
            s = e / norm
            for k in range(m):
                delta[b, idx[k]] *= s


def _mu_bisect(absw, gamma, active, eps, p, tol=1e-12, max_iter=200):
    """Safeguarded bisection on log(p mu); ||d(mu)||_p is non-increasing in mu."""
    q = 1.0 / (p - 1.0)
    with np.errstate(divide="ignore"):
        u = np.where(active, np.log(absw), -np.inf)

    def norm_p(log_pmu):
        mag = np.minimum(gamma, np.exp(q * (u - log_pmu[:, None])))
        return np.sum(mag**p, axis=1)

    target = eps**p
    umax = np.max(np.where(active, u, -np.inf), axis=1)
    # gamma <= 1, so below min(u) every active coordinate is clipped
    lo = np.min(np.where(active, u, np.inf), axis=1) - 1.0
    hi = umax + 1.0
    for _ in range(200):
        small = norm_p(hi) > target
        if not np.any(small):
            break
        hi = np.where(small, hi + 2.0 * (hi - lo), hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        big = norm_p(mid) > target
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(hi))):
            break
    return hi


def lmo_lp_box(w, x, epsilon: float, p: float, method: str = "select") -> LmoSolution:
    """Single-vector linear maximization oracle; see :func:`lmo_lp_box_batch`."""
    w = np.asarray(w, dtype=np.float64)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    delta, mu = lmo_lp_box_batch(w.reshape(1, -1), np.asarray(x).reshape(1, -1), epsilon, p, method)
    delta = delta[0].reshape(w.shape)
    return LmoSolution(delta, float(mu[0]), float(np.dot(w.ravel(), delta.ravel())))


def project_l1_box_batch(v, x, epsilon):
    """Row-wise Euclidean projection onto {d : ||d||_1 <= eps, x + d in [0, 1]^n}.

    The box is clipped first; if that already meets the l1 budget it is the
    answer. Otherwise the minimizer is clip(soft_threshold(v, lam), -x, 1 - x)
    with lam the level at which the l1 budget is met exactly.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must lie in [0, 1]")
    if not np.all(np.isfinite(v)):
        raise ValueError("v must be finite")
    B = v.shape[0]
    eps = np.broadcast_to(np.asarray(epsilon, dtype=np.float64), (B,)).copy()
    if np.any(eps < 0):
        raise ValueError("epsilon must be non-negative")
    out = np.empty_like(v)
    _project_l1_rows(v, x, eps, out)
    return out


@numba.njit(cache=True)
def _project_l1_rows(v, x, eps, out):
    B, n = v.shape
    cap = np.empty(n)  # box headroom in the direction of v_i
    for b in range(B):
        e = eps[b]
        l1 = 0.0
        top = 0.0
        for i in range(n):
            vi = v[b, i]
            cap[i] = 1.0 - x[b, i] if vi > 0 else x[b, i]
            a = min(abs(vi), cap[i])
            l1 += a
            if abs(vi) > top:
                top = abs(vi)
        if l1 <= e:
            for i in range(n):
                vi = v[b, i]
                out[b, i] = min(vi, 1.0 - x[b, i]) if vi > 0 else max(vi, -x[b, i])
            continue
        # ||d(lam)||_1 = sum_i min(max(|v_i| - lam, 0), cap_i) is piecewise linear, decreasing
        lo = 0.0
        hi = top
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            tot = 0.0
            for i in range(n):
                a = abs(v[b, i]) - mid
                if a > 0:
                    tot += min(a, cap[i])
            if tot > e:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * top:
                break
        # exact solve on the linear piece containing hi
        free_sum = 0.0
        free_cnt = 0
        sat = 0.0
        for i in range(n):
            av = abs(v[b, i])
            if av - cap[i] >= hi:
                sat += cap[i]
            elif av > hi:
                free_sum += av
                free_cnt += 1
        lam = hi
        if free_cnt > 0:
            cand = (free_sum + sat - e) / free_cnt
            if lo <= cand <= hi:
                lam = cand
        tot = 0.0
        for i in range(n):
            vi = v[b, i]
            a = abs(vi) - lam
            if a < 0:
                a = 0.0
            if a > cap[i]:
                a = cap[i]
            out[b, i] = a if vi > 0 else -a
            tot += a
        if tot > e:
            s = e / tot
            for i in range(n):
                out[b, i] *= s


def project_l1_box(v, x, epsilon: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return project_l1_box_batch(v.reshape(1, -1), np.asarray(x).reshape(1, -1), epsilon)[0].reshape(v.shape)
