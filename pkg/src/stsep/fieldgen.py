"""
Spatial designs and exact Gaussian spatio-temporal field simulation.

Three exact simulation paths are provided:

``kronecker``
    Separable models only.  ``X = L_S Z L_T^T`` with Cholesky factors of the
    n x n spatial and T x T temporal Gram matrices.
``dense``
    Cholesky factorization of the full (nT) x (nT) covariance matrix with
    escalating diagonal jitter.
``toeplitz``
    The same lower block-triangular factorization obtained with the
    multivariate Levinson (Whittle) recursion, exploiting that the
    covariance is block Toeplitz in time.  O(T^2 n^3) instead of
    O(T^3 n^3).

Every model in :mod:`stsep.covmodels` depends on the lag only through
``||h||`` and ``|v|``, so the n x n lag blocks are symmetric.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .covmodels import CovarianceModel
from .errors import (
    CapExceededError,
    CsvFormatError,
    InvalidInputError,
    MethodMismatchError,
    NotPositiveDefiniteError,
    RegionDegenerateError,
)

__all__ = [
    "UniformSquare",
    "Band",
    "SpatialDesign",
    "FieldSample",
    "sample_locations",
    "simulate_field",
    "field_covariance",
    "kronecker_factors",
    "write_field_csv",
    "write_design_csv",
    "read_field_csv",
    "DENSE_CAP",
    "JITTERS",
]

#: Default hard cap on n * T for the dense and toeplitz paths.
DENSE_CAP = 20_000

#: Relative diagonal jitter levels tried in order.
JITTERS = (1e-12, 1e-10, 1e-8, 1e-6)

MAX_ATTEMPTS = 1_000_000

FIELD_HEADER = ["loc_id", "x", "y", "t", "value"]
DESIGN_HEADER = ["loc_id", "x", "y"]


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# sampling regions


@dataclass(frozen=True)
class UniformSquare:
    """Uniform sampling on ``[0, floor(side)]^2``."""

    side: float

    def __post_init__(self):
        side = float(self.side)
        if not math.isfinite(side) or math.floor(side) < 1:
            raise InvalidInputError(f"square side must be finite with floor(side) >= 1, got {side!r}")
        object.__setattr__(self, "side", side)

    @property
    def extent(self):
        return float(math.floor(self.side))

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return np.all((pts >= 0) & (pts <= self.extent), axis=1)


@dataclass(frozen=True, eq=False)
class Band:
    """Band ``{(x, y) in [-1,1]^2 : |y - l(x)| <= half_width}`` scaled by
    ``diag(lam, lam * aspect)``.

    ``center`` holds ``l`` sampled on an equispaced abscissa grid over
    ``[-1, 1]`` and is linearly interpolated.
    """

    center: np.ndarray
    half_width: float = 1.0
    lam: float = 1.0
    aspect: float = 1.0

    def __post_init__(self):
        c = np.array(self.center, dtype=float).ravel()
        if c.size < 2 or not np.all(np.isfinite(c)):
            raise InvalidInputError("band center needs at least two finite samples")
        if np.any(np.abs(c) > 1):
            raise InvalidInputError("band center must map into [-1, 1]")
        hw = float(self.half_width)
        if not (0 < hw <= 1):
            raise InvalidInputError(f"band half width must lie in (0, 1], got {hw!r}")
        for name in ("lam", "aspect"):
            val = float(getattr(self, name))
            if not math.isfinite(val) or val <= 0:
                raise InvalidInputError(f"{name} must be finite and > 0")
            object.__setattr__(self, name, val)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_width", hw)

    @classmethod
    def from_function(cls, fn: Callable, half_width=1.0, lam=1.0, aspect=1.0, points=2001):
        xs = np.linspace(-1.0, 1.0, points)
        return cls(np.array([fn(x) for x in xs]), half_width, lam, aspect)

    @property
    def abscissa(self):
        return np.linspace(-1.0, 1.0, self.center.size)

    def center_at(self, x):
        return np.interp(x, self.abscissa, self.center)

    def contains(self, pts, tol=1e-12):
        pts = np.atleast_2d(pts)
        x = pts[:, 0] / self.lam
        y = pts[:, 1] / (self.lam * self.aspect)
        return (
            (np.abs(x) <= 1 + tol)
            & (np.abs(y) <= 1 + tol)
            & (np.abs(y - self.center_at(x)) <= self.half_width + tol)
        )


@dataclass(frozen=True, eq=False)
class SpatialDesign:
    locations: np.ndarray
    region: object = None
    seed: object = None

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float).reshape(-1, 2)
        loc.setflags(write=False)
        object.__setattr__(self, "locations", loc)

    @property
    def n(self):
        return self.locations.shape[0]


@dataclass(frozen=True, eq=False)
class FieldSample:
    """Observations ``X[i, t]`` at location ``i`` and time ``t + 1``."""

    X: np.ndarray
    design: SpatialDesign
    model: CovarianceModel | None = None
    seed: object = None
    method: str | None = None
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != self.design.n:
            raise InvalidInputError("X must have one row per design location")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("field sample contains non-finite values")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def T(self):
        return self.X.shape[1]

    @property
    def locations(self):
        return self.design.locations

    def with_values(self, X):
        return FieldSample(X, self.design, self.model, self.seed, self.method, self.jitter, dict(self.meta))


def sample_locations(region, n, seed=None):
    """Draw ``n`` i.i.d. locations from ``region``; deterministic given ``seed``."""
    if int(n) != n or n < 0:
        raise InvalidInputError(f"n must be a nonnegative integer, got {n!r}")
    n = int(n)
    rng = _rng(seed)
    if isinstance(region, UniformSquare):
        pts = rng.uniform(0.0, region.extent, size=(n, 2))
    elif isinstance(region, Band):
        pts = _sample_band(region, n, rng)
    else:
        raise InvalidInputError(f"unsupported sampling region {region!r}")
    return SpatialDesign(pts, region, seed)


def _sample_band(region, n, rng):
    out = np.empty((n, 2))
    filled = 0
    since_accept = 0
    batch = max(64, 2 * n)
    while filled < n:
        x = rng.uniform(-1.0, 1.0, batch)
        y = region.center_at(x) + rng.uniform(-region.half_width, region.half_width, batch)
        ok = np.flatnonzero(np.abs(y) <= 1.0)
        if ok.size == 0:
            since_accept += batch
            if since_accept > MAX_ATTEMPTS:
                raise RegionDegenerateError("band region rejected 1e6 consecutive proposals")
            continue
        since_accept = 0
        take = ok[: n - filled]
        out[filled : filled + take.size, 0] = x[take]
        out[filled : filled + take.size, 1] = y[take]
        filled += take.size
    out[:, 0] *= region.lam
    out[:, 1] *= region.lam * region.aspect
    return out


# ---------------------------------------------------------------------------
# covariance assembly


def _differences(locations):
    d = locations[None, :, :] - locations[:, None, :]
    return d[..., 0], d[..., 1]


def _lag_blocks(model, locations, T):
    """``blocks[k][i, i'] = C(s_i' - s_i, k)`` for ``k = 0..T-1``."""
    dx, dy = _differences(locations)
    return np.stack([np.asarray(model.cov(dx, dy, float(k))) for k in range(T)])


def field_covariance(model, design, T):
    """Population covariance of ``vec`` in time-major order ``(t, i)``."""
    n = design.n
    blocks = _lag_blocks(model, design.locations, T)
    out = np.empty((n * T, n * T))
    for t in range(T):
        for u in range(T):
            out[t * n : (t + 1) * n, u * n : (u + 1) * n] = blocks[abs(t - u)]
    return out


def _cholesky_jittered(build, scale):
    """Factorize ``build()`` plus escalating jitter; returns ``(L, jitter)``."""
    for eps in JITTERS:
        a = build()
        a[np.diag_indices_from(a)] += eps * scale
        try:
            return scipy.linalg.cholesky(a, lower=True, overwrite_a=True, check_finite=False), eps
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError(f"covariance not positive definite after jitter {JITTERS[-1]:g}")


def kronecker_factors(model, design, T):
    """Cholesky factors ``(L_S, L_T, jitter)`` of a separable model.

    ``L_S L_S^T`` is the spatial Gram matrix ``C(s_i - s_i', 0)`` and
    ``L_T L_T^T`` the temporal correlation ``C(0, t - t') / C(0, 0)``.
    """
    if not model.separable:
        raise MethodMismatchError(f"kronecker simulation needs a separable model, got {model!r}")
    var = model.variance
    dx, dy = _differences(design.locations)
    tt = np.arange(T, dtype=float)
    lag_t = tt[None, :] - tt[:, None]
    Ls, js = _cholesky_jittered(lambda: np.array(model.cov(dx, dy, 0.0), dtype=float), var)
    Lt, jt = _cholesky_jittered(lambda: np.array(model.cov(0.0, 0.0, lag_t), dtype=float) / var, 1.0)
    return Ls, Lt, max(js, jt)


def _whittle_apply(blocks, z, jitter):
    """Apply the lower block-triangular factor of a block-Toeplitz covariance.

    ``blocks[k]`` is the symmetric lag-``k`` block, ``z`` has shape
    ``(T, n, K)``.  Returns ``X`` of the same shape whose columns have
    covariance equal to the assembled matrix (plus ``jitter`` on the
    diagonal of the lag-0 block).
    """
    T, n, _ = blocks.shape
    g0 = blocks[0] + jitter * np.eye(n)
    X = np.empty_like(z)
    fwd_var = g0.copy()
    bwd_var = g0.copy()
    X[0] = np.linalg.cholesky(g0) @ z[0]
    fwd = np.zeros((0, n, n))
    bwd = np.zeros((0, n, n))
    for m in range(1, T):
        delta = blocks[m] - np.matmul(fwd, blocks[m - 1 : 0 : -1]).sum(axis=0) if m > 1 else blocks[1].copy()
        a = scipy.linalg.solve(bwd_var, delta.T, assume_a="pos").T
        ab = scipy.linalg.solve(fwd_var, delta, assume_a="pos").T
        new_fwd = np.concatenate([fwd - np.matmul(a, bwd[::-1]), a[None]])
        new_bwd = np.concatenate([bwd - np.matmul(ab, fwd[::-1]), ab[None]])
        fwd_var = fwd_var - a @ delta.T
        bwd_var = bwd_var - ab @ delta
        fwd_var = 0.5 * (fwd_var + fwd_var.T)
        bwd_var = 0.5 * (bwd_var + bwd_var.T)
        fwd, bwd = new_fwd, new_bwd
        mean = np.einsum("jab,jbk->ak", fwd, X[m - 1 :: -1])
        X[m] = mean + np.linalg.cholesky(fwd_var) @ z[m]
    return X


def _simulate_toeplitz(model, design, T, z):
    blocks = _lag_blocks(model, design.locations, T)
    scale = model.variance
    for eps in JITTERS:
        try:
            return _whittle_apply(blocks, z, eps * scale), eps
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError(f"block-Toeplitz recursion failed after jitter {JITTERS[-1]:g}")


def _simulate_dense(model, design, T, z):
    n = design.n
    blocks = _lag_blocks(model, design.locations, T)

    def build():
        a = np.empty((n * T, n * T))
        for t in range(T):
            for u in range(t + 1):
                a[t * n : (t + 1) * n, u * n : (u + 1) * n] = blocks[t - u]
        return a

    L, eps = _cholesky_jittered(build, model.variance)
    out = np.einsum("ab,b...->a...", L, z.reshape(n * T, -1))
    return out.reshape(z.shape), eps


def simulate_field(model, design, T, seed=None, method="auto", cap=DENSE_CAP):
    """Simulate a zero-mean Gaussian field at the design locations.

    Parameters
    ----------
    model : CovarianceModel
    design : SpatialDesign
    T : int
        Number of time points.
    seed : int, SeedSequence or Generator
    method : {"auto", "kronecker", "dense", "toeplitz"}
        ``auto`` picks ``kronecker`` for separable models and ``toeplitz``
        otherwise.
    cap : int
        Largest ``n * T`` accepted by the dense and toeplitz paths.

    Returns
    -------
    FieldSample
    """
    if int(T) != T or T < 1:
        raise InvalidInputError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    n = design.n
    if method == "auto":
        method = "kronecker" if model.separable else "toeplitz"
    if method not in ("kronecker", "dense", "toeplitz"):
        raise InvalidInputError(f"unknown simulation method {method!r}")
    rng = _rng(seed)
    if method == "kronecker":
        Ls, Lt, eps = kronecker_factors(model, design, T)
        Z = rng.standard_normal((n, T))
        X = Ls @ Z @ Lt.T
    else:
        if n * T > cap:
            raise CapExceededError(f"n*T = {n * T} exceeds the simulation cap {cap}")
        z = rng.standard_normal((T, n, 1))
        sim = _simulate_dense if method == "dense" else _simulate_toeplitz
        Xt, eps = sim(model, design, T, z)
        X = Xt[:, :, 0].T
    return FieldSample(X, design, model, seed, method, eps)


# ---------------------------------------------------------------------------
# CSV exchange


def write_design_csv(design, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DESIGN_HEADER)
        for i, (x, y) in enumerate(design.locations):
            w.writerow([i, repr(float(x)), repr(float(y))])


def write_field_csv(sample, path):
    """One row per observation: ``loc_id,x,y,t,value`` with ``t`` from 1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_HEADER)
        locs = sample.locations
        for i in range(sample.n):
            x, y = repr(float(locs[i, 0])), repr(float(locs[i, 1]))
            for t in range(sample.T):
                w.writerow([i, x, y, t + 1, repr(float(sample.X[i, t]))])


def read_field_csv(path):
    """Parse a field CSV back into a :class:`FieldSample` (no model attached).

    Raises :class:`CsvFormatError` carrying the offending line number.
    """
    rows = {}
    coords = {}
    times = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file", line=1) from None
        if [h.strip() for h in header] != FIELD_HEADER:
            raise CsvFormatError(f"expected header {','.join(FIELD_HEADER)}", line=1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise CsvFormatError(f"expected 5 fields, found {len(rec)}", line=lineno)
            try:
                loc = int(rec[0])
                x, y = float(rec[1]), float(rec[2])
                t = int(rec[3])
                val = float(rec[4])
            except ValueError as exc:
                raise CsvFormatError(str(exc), line=lineno) from None
            if not all(map(math.isfinite, (x, y, val))) or t < 1:
                raise CsvFormatError("non-finite value or time index < 1", line=lineno)
            if loc in coords and coords[loc] != (x, y):
                raise CsvFormatError(f"location {loc} changes coordinates", line=lineno)
            if (loc, t) in rows:
                raise CsvFormatError(f"duplicate observation ({loc}, {t})", line=lineno)
            coords[loc] = (x, y)
            rows[(loc, t)] = val
            times.add(t)
    if not rows:
        raise CsvFormatError("no observations", line=2)
    ids = sorted(coords)
    T = max(times)
    if len(rows) != len(ids) * T:
        raise CsvFormatError("observations do not form a complete location x time table")
    X = np.array([[rows[(i, t)] for t in range(1, T + 1)] for i in ids])
    locs = np.array([coords[i] for i in ids])
    return FieldSample(X, SpatialDesign(locs))
