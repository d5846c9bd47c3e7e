"""
Kernel covariance estimator on a lag grid, plug-in variance and bandwidth rules.

The estimate at a spatial lag ``h`` and temporal lag ``v`` is the ratio

    sum_{i != i', t != t'} K_ii' K_tt' X_it X_i't'
    ---------------------------------------------
    sum_{i != i', t != t'} K_ii' K_tt'

with ``K_ii' = K(ds_1 / (lam b)) K(ds_2 / (lam bbar b))`` evaluated at
``ds = s_i - s_i' - h`` and ``K_tt' = K((|t - t'| - v) / (T b))``.

Because the temporal weight only depends on ``d = |t - t'|``, the double sum
factorizes as ``sum_d K_d g(d)`` with ``Y = K_s X`` and
``g(d) = <X[:, :T-d], Y[:, d:]> + <X[:, d:], Y[:, :T-d]>``.  Only lags ``d``
inside the kernel support are visited.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .covmodels import LagGrid
from .errors import DegenerateDerivativeError, InvalidInputError, NoPairsInWindowError

__all__ = [
    "KernelSpec",
    "ScalingSpec",
    "CovEstimate",
    "EPANECHNIKOV",
    "TRIANGULAR",
    "UNIFORM",
    "kernel_weight",
    "spatial_weights",
    "temporal_weights",
    "estimate_cov_point",
    "estimate_cov_matrix",
    "estimate_tau2",
    "bandwidth_pt",
    "bandwidth_svd",
    "estimate_f_mn",
    "PILOT_STEP",
]

#: Relative lag perturbation used by the data-mode derivative pilot.
PILOT_STEP = 0.05

_B2 = {"epanechnikov": 1.2, "triangular": 4.0 / 3.0, "uniform": 1.0}


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric kernel supported on ``[-1, 1]``.

    ``B2`` is ``2 * int K(u)^2 du``.
    """

    name: str = "epanechnikov"

    def __post_init__(self):
        name = self.name.lower()
        if name not in _B2:
            raise InvalidInputError(f"unknown kernel {self.name!r}; choose from {sorted(_B2)}")
        object.__setattr__(self, "name", name)

    @property
    def B2(self):
        return _B2[self.name]

    def __call__(self, u):
        u = np.abs(np.asarray(u, dtype=float))
        inside = u <= 1.0
        if self.name == "epanechnikov":
            val = 0.75 * (1.0 - u * u)
        elif self.name == "triangular":
            val = 1.0 - u
        else:
            val = np.full_like(u, 0.5)
        return np.where(inside, val, 0.0)


EPANECHNIKOV = KernelSpec("epanechnikov")
TRIANGULAR = KernelSpec("triangular")
UNIFORM = KernelSpec("uniform")


@dataclass(frozen=True)
class ScalingSpec:
    """Location rescaling ``diag(lambda_n, lambda_n * bbar_n)``."""

    lambda_n: float
    bbar_n: float = 1.0

    def __post_init__(self):
        for name in ("lambda_n", "bbar_n"):
            val = float(getattr(self, name))
            if not math.isfinite(val) or val <= 0:
                raise InvalidInputError(f"{name} must be finite and > 0, got {val!r}")
            object.__setattr__(self, name, val)

    @classmethod
    def default(cls, n):
        """``lambda_n = floor(sqrt(n))`` and ``bbar_n = 1``."""
        return cls(float(max(1, math.isqrt(int(n)))), 1.0)


@dataclass(frozen=True, eq=False)
class CovEstimate:
    Chat: np.ndarray
    grid: LagGrid
    b: float
    kernel: KernelSpec
    scaling: ScalingSpec
    m2_hat: float
    I_hat: float
    tau2_hat: float
    n: int
    T: int
    pair_counts: np.ndarray

    def __post_init__(self):
        for name in ("Chat", "pair_counts"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.Chat.shape

    def to_dict(self):
        return {
            "Chat": self.Chat.tolist(),
            "tau2": float(self.tau2_hat),
            "b": float(self.b),
            "pairCounts": self.pair_counts.tolist(),
            "m2": float(self.m2_hat),
            "I": float(self.I_hat),
            "n": int(self.n),
            "T": int(self.T),
            "kernel": self.kernel.name,
            "grid": self.grid.to_dict(),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def with_chat(self, Chat, tau2_hat=None):
        """Copy with a replaced matrix (and optionally variance); used by tests."""
        return CovEstimate(
            np.asarray(Chat, dtype=float), self.grid, self.b, self.kernel, self.scaling,
            self.m2_hat, self.I_hat, self.tau2_hat if tau2_hat is None else tau2_hat,
            self.n, self.T, self.pair_counts,
        )


def _check_b(b):
    b = float(b)
    if not math.isfinite(b) or b <= 0:
        raise InvalidInputError(f"bandwidth must be finite and > 0, got {b!r}")
    return b


def kernel_weight(ds, dt, h0, b, scaling, T, kernel=EPANECHNIKOV):
    """Product weight of one pair at spatial offset ``ds`` and time offset ``dt``.

    ``h0`` is ``(h1, h2, v0)``.
    """
    b = _check_b(b)
    h1, h2, v0 = (float(x) for x in h0)
    u1 = (ds[0] - h1) / (scaling.lambda_n * b)
    u2 = (ds[1] - h2) / (scaling.lambda_n * scaling.bbar_n * b)
    u3 = (abs(dt) - v0) / (T * b)
    return float(kernel(u1) * kernel(u2) * kernel(u3))


def spatial_weights(locations, h, b, scaling, kernel=EPANECHNIKOV):
    """``n x n`` matrix of ``K_ii'`` at spatial lag ``h``; zero diagonal."""
    loc = np.asarray(locations, dtype=float)
    d1 = loc[:, None, 0] - loc[None, :, 0] - h[0]
    d2 = loc[:, None, 1] - loc[None, :, 1] - h[1]
    w = kernel(d1 / (scaling.lambda_n * b)) * kernel(d2 / (scaling.lambda_n * scaling.bbar_n * b))
    np.fill_diagonal(w, 0.0)
    return w


def temporal_weights(T, v0, b, kernel=EPANECHNIKOV):
    """Lags ``d >= 1`` inside the support and their weights ``K((d - v0)/(T b))``."""
    lo = max(1, math.ceil(v0 - T * b))
    hi = min(T - 1, math.floor(v0 + T * b))
    d = np.arange(lo, hi + 1) if hi >= lo else np.arange(0)
    w = kernel((d - v0) / (T * b))
    keep = w > 0
    return d[keep], w[keep]


def _cell(X, Y, ks_sum, ks_count, d, kd):
    """Numerator, denominator and contributing pair count of one cell."""
    T = X.shape[1]
    num = 0.0
    den_t = 0.0
    cnt_t = 0
    for lag, w in zip(d, kd):
        g = np.vdot(X[:, : T - lag], Y[:, lag:]) + np.vdot(X[:, lag:], Y[:, : T - lag])
        num += w * g
        den_t += w * 2 * (T - lag)
        cnt_t += 2 * (T - lag)
    return num, ks_sum * den_t, ks_count * cnt_t


def _sample_arrays(sample):
    X = np.asarray(sample.X, dtype=float)
    return X, np.asarray(sample.locations, dtype=float)


def estimate_cov_point(sample, h0, v0, b, kernel=EPANECHNIKOV, scaling=None):
    """Kernel estimate of ``C(h0, v0)`` from a :class:`FieldSample`.

    Raises
    ------
    NoPairsInWindowError
        If no quadruple ``(i, i', t, t')`` receives positive weight.
    """
    b = _check_b(b)
    X, loc = _sample_arrays(sample)
    n, T = X.shape
    if T < 2:
        raise InvalidInputError("need at least two time points")
    scaling = scaling or ScalingSpec.default(n)
    h0 = np.asarray(h0, dtype=float)
    Ks = spatial_weights(loc, h0, b, scaling, kernel)
    d, kd = temporal_weights(T, abs(float(v0)), b, kernel)
    num, den, _ = _cell(X, Ks @ X, Ks.sum(), np.count_nonzero(Ks), d, kd)
    if den <= 0:
        raise NoPairsInWindowError("no pairs in the kernel window", h0=tuple(h0), v0=float(v0), b=b)
    return float(num / den)


def estimate_tau2(sample, grid, b, kernel=EPANECHNIKOV, scaling=None, I_known=None):
    """Plug-in ``(m2_hat, I_hat, tau2_hat)``.

    ``I_hat`` averages ``(n^2 b^2)^{-1} sum_{i != i'} K_ii'`` over the spatial
    grid lags.  ``I_known`` replaces it by a user-supplied constant.
    """
    b = _check_b(b)
    X, loc = _sample_arrays(sample)
    n = X.shape[0]
    if n < 2:
        raise InvalidInputError("need at least two locations")
    scaling = scaling or ScalingSpec.default(n)
    m2 = float(np.mean(X * X))
    if I_known is not None:
        I_hat = float(I_known)
        if not (math.isfinite(I_hat) and I_hat > 0):
            raise InvalidInputError("I_known must be finite and > 0")
    else:
        vals = [spatial_weights(loc, h, b, scaling, kernel).sum() for h in grid.spatial]
        I_hat = float(np.mean(vals)) / (n * n * b * b)
        if I_hat <= 0:
            raise NoPairsInWindowError("no spatial pairs in any kernel window", b=b)
    tau2 = m2 * m2 * kernel.B2 ** 3 / (16.0 * I_hat)
    return m2, I_hat, tau2


def estimate_cov_matrix(sample, grid, b, kernel=EPANECHNIKOV, scaling=None, I_known=None):
    """Estimate the ``M x N`` grid matrix together with the plug-in variance.

    Returns
    -------
    CovEstimate
    """
    b = _check_b(b)
    X, loc = _sample_arrays(sample)
    n, T = X.shape
    if T < 2:
        raise InvalidInputError("need at least two time points")
    scaling = scaling or ScalingSpec.default(n)
    M, N = grid.shape
    Chat = np.empty((M, N))
    counts = np.zeros((M, N), dtype=np.int64)
    temporal = [temporal_weights(T, float(v), b, kernel) for v in grid.temporal]
    for i, h in enumerate(grid.spatial):
        Ks = spatial_weights(loc, h, b, scaling, kernel)
        Y = Ks @ X
        ks_sum, ks_cnt = Ks.sum(), np.count_nonzero(Ks)
        for j, (d, kd) in enumerate(temporal):
            num, den, cnt = _cell(X, Y, ks_sum, ks_cnt, d, kd)
            if den <= 0:
                raise NoPairsInWindowError(
                    "no pairs in the kernel window", h0=tuple(h), v0=float(grid.temporal[j]), b=b, cell=(i, j)
                )
            Chat[i, j] = num / den
            counts[i, j] = cnt
    m2, I_hat, tau2 = estimate_tau2(sample, grid, b, kernel, scaling, I_known)
    return CovEstimate(Chat, grid, b, kernel, scaling, m2, I_hat, tau2, n, T, counts)


def _check_positive(**kw):
    for name, val in kw.items():
        if not (isinstance(val, (int, float, np.integer, np.floating)) and math.isfinite(val) and val > 0):
            raise InvalidInputError(f"{name} must be finite and > 0, got {val!r}")


def bandwidth_pt(n, T, M, N, m2, f_mn):
    """Bandwidth rule for the partial-trace test."""
    _check_positive(n=n, T=T, M=M, N=N, m2=m2, f_mn=f_mn)
    return (
        m2 ** 3
        * T ** (-0.75 + 0.01 * N)
        * n ** (-0.01 - 0.01 * M)
        * (M * N) ** 0.2
        * f_mn ** 0.2
    )


def bandwidth_svd(n, T, M, N, m2, f_mn):
    """Bandwidth rule for the rank-one (SVD) test."""
    _check_positive(n=n, T=T, M=M, N=N, m2=m2, f_mn=f_mn)
    return (
        m2 ** 2
        * T ** (-0.4 + 0.01 * N)
        * n ** (-0.15 - 0.01 * M)
        * (M * N) ** 0.3
        * f_mn ** 0.15
    )


def _step(x):
    return PILOT_STEP * abs(x) if x != 0 else PILOT_STEP


def estimate_f_mn(sample, grid, kernel=EPANECHNIKOV, scaling=None, pilot_b=None):
    """Data-mode estimate of ``||C||_F / sum_k ||d_k C||_F``.

    A pilot estimate with bandwidth ``2 n^{-1/6}`` is evaluated on the grid
    and at each lag coordinate perturbed by +-5 %; partial derivatives are
    centered differences.
    """
    n = sample.X.shape[0]
    b = pilot_b if pilot_b is not None else 2.0 * n ** (-1.0 / 6.0)
    scaling = scaling or ScalingSpec.default(n)
    C = estimate_cov_matrix(sample, grid, b, kernel, scaling).Chat
    M, N = grid.shape
    parts = np.zeros((3, M, N))
    for i, h in enumerate(grid.spatial):
        for j, v in enumerate(grid.temporal):
            lag = np.array([h[0], h[1], v])
            for k in range(3):
                e = np.zeros(3)
                e[k] = _step(lag[k])
                up, dn = lag + e, lag - e
                cu = estimate_cov_point(sample, up[:2], up[2], b, kernel, scaling)
                cd = estimate_cov_point(sample, dn[:2], dn[2], b, kernel, scaling)
                parts[k, i, j] = (cu - cd) / (2.0 * e[k])
    den = sum(np.linalg.norm(p) for p in parts)
    if not den > 0:
        raise DegenerateDerivativeError("all pilot derivatives vanish on the grid")
    return float(np.linalg.norm(C) / den)
