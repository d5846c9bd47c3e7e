"""Independent reference implementations used only by the tests.

Nothing here imports the package; each oracle recomputes a quantity from
first principles, usually slowly.
"""
from __future__ import annotations

import math

import numpy as np


def central_difference(f, x, step=1e-5):
    """Gradient of a scalar function of a 3-vector by central differences."""
    x = np.asarray(x, dtype=float)
    out = np.empty(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        out[k] = (f(x + e) - f(x - e)) / (2 * step)
    return out


def epanechnikov(u):
    return 0.75 * (1 - u * u) if abs(u) <= 1 else 0.0


def brute_force_estimate(X, locs, h, v, b, lam, bbar, kernel=epanechnikov):
    """Literal quadruple loop over i != i', t != t' in ascending order."""
    n, T = X.shape
    num = den = 0.0
    for i in range(n):
        for ip in range(n):
            if i == ip:
                continue
            ks = kernel((locs[i, 0] - locs[ip, 0] - h[0]) / (lam * b)) * kernel(
                (locs[i, 1] - locs[ip, 1] - h[1]) / (lam * bbar * b)
            )
            if ks == 0:
                continue
            for t in range(T):
                for tp in range(T):
                    if t == tp:
                        continue
                    w = ks * kernel((abs(t - tp) - v) / (T * b))
                    num += w * X[i, t] * X[ip, tp]
                    den += w
    return num / den


def trapezoid_B2(kernel, points=200001):
    """``2 * int K^2`` by the trapezoid rule; ``kernel`` must accept arrays."""
    u = np.linspace(-1, 1, points)
    y = kernel(u) ** 2
    return 2 * float(np.sum((y[1:] + y[:-1]) * np.diff(u) / 2))


def lower_gamma_regularized(a, x, terms=2000):
    """P(a, x) by its power series (adequate for moderate x)."""
    if x <= 0:
        return 0.0
    total = term = 1.0 / a
    for k in range(1, terms):
        term *= x / (a + k)
        total += term
        if term < total * 1e-17:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * total


def chi2_cdf(x, df):
    return lower_gamma_regularized(df / 2.0, x / 2.0)


def chi2_quantile(p, df, tol=1e-12):
    """Bisection on the series-based chi-square CDF."""
    lo, hi = 0.0, 1.0
    while chi2_cdf(hi, df) < p:
        hi *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2))


def normal_quantile(p, tol=1e-13):
    lo, hi = -40.0, 40.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def als_rank1_residual(C, starts=20, iters=2000, seed=0):
    """min over eta1, eta2 of ||C - eta1 eta2^T||_F^2 by alternating least squares."""
    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(starts):
        b = rng.standard_normal(C.shape[1])
        for _ in range(iters):
            a = C @ b / (b @ b)
            b_new = C.T @ a / (a @ a)
            if np.allclose(b_new, b, rtol=1e-15, atol=1e-15):
                b = b_new
                break
            b = b_new
        a = C @ b / (b @ b)
        best = min(best, float(np.sum((C - np.outer(a, b)) ** 2)))
    return best


def power_iteration_sigma1_sq(C, iters=5000, seed=0):
    A = C.T @ C
    x = np.random.default_rng(seed).standard_normal(A.shape[0])
    for _ in range(iters):
        y = A @ x
        x = y / np.linalg.norm(y)
    return float(x @ A @ x)


def naive_matmul(A, B):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    out = np.zeros((A.shape[0], B.shape[1]))
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            out[i, j] = sum(A[i, k] * B[k, j] for k in range(A.shape[1]))
    return out
