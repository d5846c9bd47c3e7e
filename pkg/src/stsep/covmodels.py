"""
Closed-form spatio-temporal covariance models and lag-grid matrices.

A model is evaluated at lag vectors ``(h1, h2, v)`` where ``(h1, h2)`` is the
spatial lag and ``v`` the temporal lag.  Every model here depends on ``v``
only through ``|v|``.  All ``cov``/``grad`` methods broadcast over numpy
arrays.

The four models of the simulation study are available from
:func:`builtin_model` (ids 0-3).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDerivativeError, InvalidInputError, NonDifferentiableError

__all__ = [
    "LagGrid",
    "CovarianceModel",
    "SeparableExp",
    "ExtendedGneiting",
    "GneitingClass",
    "SimpleGneiting",
    "Factor",
    "SeparableProduct",
    "ProductSumTerm",
    "ProductSum",
    "evaluate",
    "gradient",
    "build_cov_matrix",
    "grad_matrices",
    "f_mn",
    "scenario_grid",
    "builtin_model",
    "model_from_dict",
    "model_from_json",
    "FD_STEP",
]

#: Central-difference step used where no analytic gradient exists.
FD_STEP = 1e-5

_SCENARIO_BASE = {
    1: (
        np.array([[1.0, 1.5], [2.0, 1.75], [3.0, 1.0]]),
        np.array([2.0, 3.0, 0.5]),
    ),
    2: (
        np.array([[1.0, 1.5], [2.0, 1.75], [3.0, 1.0], [3.5, 0.5], [2.7, 1.3]]),
        np.array([2.0, 3.0, 0.5, 1.0, 3.5]),
    ),
}


def _positive(name, value):
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise InvalidInputError(f"{name} must be finite and > 0, got {value!r}")
    return value


def _lag_arrays(h1, h2, v):
    h1, h2, v = np.broadcast_arrays(
        np.asarray(h1, dtype=float), np.asarray(h2, dtype=float), np.asarray(v, dtype=float)
    )
    if not (np.all(np.isfinite(h1)) and np.all(np.isfinite(h2)) and np.all(np.isfinite(v))):
        raise InvalidInputError("lag components must be finite")
    return h1, h2, v


def _check_kink(mask, what):
    if np.any(mask):
        raise NonDifferentiableError(f"covariance is not differentiable at {what}")


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class LagGrid:
    """Spatial lags (rows of the grid matrix) and temporal lags (columns).

    Parameters
    ----------
    spatial : array_like, shape (M, 2)
        Spatial lag vectors ``h_i``.
    temporal : array_like, shape (N,)
        Nonnegative temporal lags ``v_j``.
    """

    spatial: np.ndarray
    temporal: np.ndarray

    def __post_init__(self):
        h = np.array(self.spatial, dtype=float)
        v = np.array(self.temporal, dtype=float)
        if h.ndim != 2 or h.shape[1] != 2:
            raise InvalidInputError("spatial lags must have shape (M, 2)")
        if v.ndim != 1:
            raise InvalidInputError("temporal lags must be one-dimensional")
        if h.shape[0] < 2 or v.shape[0] < 2:
            raise InvalidInputError("a lag grid needs M >= 2 and N >= 2")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(v))):
            raise InvalidInputError("lags must be finite")
        if np.any(v < 0):
            raise InvalidInputError("temporal lags must be nonnegative")
        if len({tuple(r) for r in h}) != len(h) or len(set(v.tolist())) != len(v):
            raise InvalidInputError("lags must be pairwise distinct within each list")
        h.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "spatial", h)
        object.__setattr__(self, "temporal", v)

    @property
    def shape(self):
        return (self.spatial.shape[0], self.temporal.shape[0])

    def to_dict(self):
        return {"h": self.spatial.tolist(), "v": self.temporal.tolist()}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["h"], data["v"])
        except KeyError as exc:
            raise InvalidInputError(f"grid object lacks key {exc}") from None

    def scaled(self, factor):
        return LagGrid(self.spatial * factor, self.temporal * factor)


def scenario_grid(scenario, n):
    """Evaluation grid of the simulation study.

    Scenario 1 has ``M = N = 3`` lags, scenario 2 has ``M = N = 5``; every
    lag is multiplied by ``log(n) / log(50)``.
    """
    if scenario not in _SCENARIO_BASE:
        raise InvalidInputError(f"scenario must be 1 or 2, got {scenario!r}")
    if int(n) != n or n < 2:
        raise InvalidInputError(f"n must be an integer >= 2, got {n!r}")
    h, v = _SCENARIO_BASE[scenario]
    factor = math.log(n) / math.log(50)
    return LagGrid(h * factor, v * factor)


# ---------------------------------------------------------------------------
# models


class CovarianceModel:
    """Base class; subclasses implement ``cov``, ``_grad`` and ``params``."""

    variant: str = ""
    separable: bool = False

    def cov(self, h1, h2, v):
        raise NotImplementedError

    def _grad(self, h1, h2, v):
        raise NotImplementedError

    def grad(self, h1, h2, v):
        """Partial derivatives ``(dC/dh1, dC/dh2, dC/dv)``.

        Raises :class:`NonDifferentiableError` if any requested lag sits on
        a kink of the model.
        """
        h1, h2, v = _lag_arrays(h1, h2, v)
        return self._grad(h1, h2, v)

    @property
    def variance(self):
        return float(self.cov(0.0, 0.0, 0.0))

    def params(self):
        raise NotImplementedError

    def to_dict(self):
        return {"variant": self.variant, "params": self.params()}

    def to_json(self):
        return json.dumps(self.to_dict())

    def scaled(self, c):
        """The model multiplied by a positive constant."""
        return ProductSum((ProductSumTerm(c, self),))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


@dataclass(frozen=True, repr=False)
class SeparableExp(CovarianceModel):
    """``sigma2 * exp(-a_s * ||h|| - a_t * |v|)``."""

    sigma2: float = 2.0
    a_s: float = 1.0
    a_t: float = 1.0

    variant = "SeparableExp"
    separable = True

    def __post_init__(self):
        for name in ("sigma2", "a_s", "a_t"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    def cov(self, h1, h2, v):
        h1, h2, v = _lag_arrays(h1, h2, v)
        return self.sigma2 * np.exp(-self.a_s * np.hypot(h1, h2) - self.a_t * np.abs(v))

    def _grad(self, h1, h2, v):
        r = np.hypot(h1, h2)
        _check_kink(r == 0, "zero spatial lag")
        _check_kink(v == 0, "zero temporal lag")
        c = self.cov(h1, h2, v)
        return (-self.a_s * h1 / r * c, -self.a_s * h2 / r * c, -self.a_t * np.sign(v) * c)

    def params(self):
        return {"sigma2": self.sigma2, "a_s": self.a_s, "a_t": self.a_t}


@dataclass(frozen=True, repr=False)
class ExtendedGneiting(CovarianceModel):
    """``sigma2 / g * exp(-c_h ||h||^2 / g)`` with ``g = |v|^alpha_t + 1``."""

    sigma2: float = 2.0
    c_h: float = 0.01
    alpha_t: float = 1.5

    variant = "ExtendedGneiting"

    def __post_init__(self):
        for name in ("sigma2", "c_h", "alpha_t"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    def cov(self, h1, h2, v):
        h1, h2, v = _lag_arrays(h1, h2, v)
        g = np.abs(v) ** self.alpha_t + 1.0
        return self.sigma2 / g * np.exp(-self.c_h * (h1 * h1 + h2 * h2) / g)

    def _grad(self, h1, h2, v):
        if self.alpha_t <= 1:
            _check_kink(v == 0, "zero temporal lag")
        av = np.abs(v)
        g = av**self.alpha_t + 1.0
        r2 = h1 * h1 + h2 * h2
        c = self.sigma2 / g * np.exp(-self.c_h * r2 / g)
        with np.errstate(divide="ignore", invalid="ignore"):
            dg = np.where(av > 0, self.alpha_t * av ** (self.alpha_t - 1.0), 0.0) * np.sign(v)
        dc_dg = c * (-1.0 / g + self.c_h * r2 / g**2)
        return (-2.0 * self.c_h * h1 / g * c, -2.0 * self.c_h * h2 / g * c, dc_dg * dg)

    def params(self):
        return {"sigma2": self.sigma2, "c_h": self.c_h, "alpha_t": self.alpha_t}


@dataclass(frozen=True, repr=False)
class GneitingClass(CovarianceModel):
    """Gneiting-class model used for the Irish wind example.

    ``sigma2 / p * exp(-r ||h|| / p)`` with
    ``p = (a |v|^two_alpha + 1)^(beta / 2)``.
    """

    sigma2: float = 1.8
    a: float = 0.901
    two_alpha: float = 1.544
    beta: float = 0.61
    r: float = 0.00134

    variant = "GneitingClass"

    def __post_init__(self):
        for name in ("sigma2", "a", "two_alpha", "beta", "r"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    def _p(self, v):
        return (self.a * np.abs(v) ** self.two_alpha + 1.0) ** (self.beta / 2.0)

    def cov(self, h1, h2, v):
        h1, h2, v = _lag_arrays(h1, h2, v)
        p = self._p(v)
        return self.sigma2 / p * np.exp(-self.r * np.hypot(h1, h2) / p)

    def _grad(self, h1, h2, v):
        dist = np.hypot(h1, h2)
        _check_kink(dist == 0, "zero spatial lag")
        if self.two_alpha <= 1:
            _check_kink(v == 0, "zero temporal lag")
        av = np.abs(v)
        g = self.a * av**self.two_alpha + 1.0
        p = g ** (self.beta / 2.0)
        c = self.sigma2 / p * np.exp(-self.r * dist / p)
        with np.errstate(divide="ignore", invalid="ignore"):
            dgdv = np.where(av > 0, self.a * self.two_alpha * av ** (self.two_alpha - 1.0), 0.0)
        dp = (self.beta / 2.0) * g ** (self.beta / 2.0 - 1.0) * dgdv * np.sign(v)
        dc_dp = c * (-1.0 / p + self.r * dist / p**2)
        return (-self.r * h1 / (dist * p) * c, -self.r * h2 / (dist * p) * c, dc_dp * dp)

    def params(self):
        return {
            "sigma2": self.sigma2,
            "a": self.a,
            "two_alpha": self.two_alpha,
            "beta": self.beta,
            "r": self.r,
        }


@dataclass(frozen=True, repr=False)
class SimpleGneiting(CovarianceModel):
    """``sigma2 / g * exp(-||h||^(2 eta) / g^eta)`` with ``g = |v|^(2 alpha) + 1``."""

    sigma2: float = 1.0
    eta: float = 1.0
    alpha: float = 0.75

    variant = "SimpleGneiting"

    def __post_init__(self):
        for name in ("sigma2", "eta", "alpha"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    def cov(self, h1, h2, v):
        h1, h2, v = _lag_arrays(h1, h2, v)
        g = np.abs(v) ** (2 * self.alpha) + 1.0
        q = np.hypot(h1, h2) ** (2 * self.eta)
        return self.sigma2 / g * np.exp(-q / g**self.eta)

    def _grad(self, h1, h2, v):
        dist = np.hypot(h1, h2)
        if 2 * self.eta <= 1:
            _check_kink(dist == 0, "zero spatial lag")
        if 2 * self.alpha <= 1:
            _check_kink(v == 0, "zero temporal lag")
        av = np.abs(v)
        g = av ** (2 * self.alpha) + 1.0
        q = dist ** (2 * self.eta)
        c = self.sigma2 / g * np.exp(-q / g**self.eta)
        with np.errstate(divide="ignore", invalid="ignore"):
            dq = np.where(dist > 0, 2 * self.eta * dist ** (2 * self.eta - 2), 0.0)
            dg = np.where(av > 0, 2 * self.alpha * av ** (2 * self.alpha - 1), 0.0) * np.sign(v)
        dc_dg = c * (-1.0 / g + self.eta * q * g ** (-self.eta - 1.0))
        scale = -c / g**self.eta * dq
        return (scale * h1, scale * h2, dc_dg * dg)

    def params(self):
        return {"sigma2": self.sigma2, "eta": self.eta, "alpha": self.alpha}


_FACTOR_FAMILIES = ("exponential", "gaussian", "constant", "custom")


@dataclass(frozen=True)
class Factor:
    """A one-dimensional correlation factor ``f(r)`` with ``r >= 0``.

    ``family`` is one of ``exponential`` (``exp(-r/scale)``), ``gaussian``
    (``exp(-(r/scale)^2)``), ``constant`` (``1``) or ``custom``, in which
    case ``fn`` supplies the values and derivatives are taken by central
    differences with step :data:`FD_STEP`.
    """

    family: str = "exponential"
    scale: float = 1.0
    fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in _FACTOR_FAMILIES:
            raise InvalidInputError(f"unknown factor family {self.family!r}")
        object.__setattr__(self, "scale", _positive("scale", self.scale))
        if self.family == "custom" and not callable(self.fn):
            raise InvalidInputError("custom factors need a callable fn")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "exponential":
            return np.exp(-r / self.scale)
        if self.family == "gaussian":
            return np.exp(-((r / self.scale) ** 2))
        if self.family == "constant":
            return np.ones_like(r)
        return np.asarray(np.vectorize(self.fn, otypes=[float])(r), dtype=float)

    def deriv(self, r):
        """Derivative with respect to ``r`` (one-sided at ``r = 0``)."""
        r = np.asarray(r, dtype=float)
        if self.family == "exponential":
            return -np.exp(-r / self.scale) / self.scale
        if self.family == "gaussian":
            return -2.0 * r / self.scale**2 * np.exp(-((r / self.scale) ** 2))
        if self.family == "constant":
            return np.zeros_like(r)
        return (self(r + FD_STEP) - self(r - FD_STEP)) / (2 * FD_STEP)

    @property
    def kink_at_zero(self):
        return self.family == "exponential" or self.family == "custom"

    def to_dict(self):
        if self.family == "custom":
            raise InvalidInputError("custom factors cannot be serialized")
        return {"family": self.family, "scale": self.scale}


@dataclass(frozen=True, repr=False)
class SeparableProduct(CovarianceModel):
    """``sigma2 * spatial(||h||) * temporal(|v|)``."""

    sigma2: float = 1.0
    spatial: Factor = Factor("exponential", 1.0)
    temporal: Factor = Factor("exponential", 1.0)

    variant = "SeparableProduct"
    separable = True

    def __post_init__(self):
        object.__setattr__(self, "sigma2", _positive("sigma2", self.sigma2))
        if self.cov(0.0, 0.0, 0.0) <= 0:
            raise InvalidInputError("separable product must be positive at the zero lag")

    def cov(self, h1, h2, v):
        h1, h2, v = _lag_arrays(h1, h2, v)
        return self.sigma2 * self.spatial(np.hypot(h1, h2)) * self.temporal(np.abs(v))

    def _grad(self, h1, h2, v):
        r = np.hypot(h1, h2)
        av = np.abs(v)
        if self.spatial.kink_at_zero:
            _check_kink(r == 0, "zero spatial lag")
        if self.temporal.kink_at_zero:
            _check_kink(v == 0, "zero temporal lag")
        fs, ft = self.spatial(r), self.temporal(av)
        dfs, dft = self.spatial.deriv(r), self.temporal.deriv(av)
        with np.errstate(divide="ignore", invalid="ignore"):
            ux = np.where(r > 0, h1 / r, 0.0)
            uy = np.where(r > 0, h2 / r, 0.0)
        s = self.sigma2
        return (s * dfs * ux * ft, s * dfs * uy * ft, s * fs * dft * np.sign(v))

    def params(self):
        return {
            "sigma2": self.sigma2,
            "spatial": self.spatial.to_dict(),
            "temporal": self.temporal.to_dict(),
        }

    def __repr__(self):
        return f"SeparableProduct(sigma2={self.sigma2!r}, spatial={self.spatial!r}, temporal={self.temporal!r})"


@dataclass(frozen=True)
class ProductSumTerm:
    """``weight * model(h / h_scale, v / v_scale)``."""

    weight: float
    model: CovarianceModel
    h_scale: float = 1.0
    v_scale: float = 1.0

    def __post_init__(self):
        for name in ("weight", "h_scale", "v_scale"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    def to_dict(self):
        return {
            "weight": self.weight,
            "model": self.model.to_dict(),
            "h_scale": self.h_scale,
            "v_scale": self.v_scale,
        }


@dataclass(frozen=True, repr=False)
class ProductSum(CovarianceModel):
    """Weighted sum of rescaled component models."""

    terms: tuple = ()

    variant = "ProductSum"

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise InvalidInputError("product-sum model needs at least one term")
        for t in terms:
            if not isinstance(t, ProductSumTerm):
                raise InvalidInputError("terms must be ProductSumTerm instances")
        object.__setattr__(self, "terms", terms)

    @property
    def separable(self):
        return len(self.terms) == 1 and self.terms[0].model.separable

    def cov(self, h1, h2, v):
        h1, h2, v = _lag_arrays(h1, h2, v)
        out = np.zeros(h1.shape)
        for t in self.terms:
            out = out + t.weight * t.model.cov(h1 / t.h_scale, h2 / t.h_scale, v / t.v_scale)
        return out

    def _grad(self, h1, h2, v):
        g1 = np.zeros(h1.shape)
        g2 = np.zeros(h1.shape)
        g3 = np.zeros(h1.shape)
        for t in self.terms:
            d1, d2, d3 = t.model.grad(h1 / t.h_scale, h2 / t.h_scale, v / t.v_scale)
            g1 = g1 + t.weight * d1 / t.h_scale
            g2 = g2 + t.weight * d2 / t.h_scale
            g3 = g3 + t.weight * d3 / t.v_scale
        return g1, g2, g3

    def params(self):
        return {"terms": [t.to_dict() for t in self.terms]}

    def __repr__(self):
        return f"ProductSum(terms={list(self.terms)!r})"


def builtin_model(model_id):
    """Models 0-3 of the simulation study.

    0: separable exponential (null model); 1: extended Gneiting;
    2: product-sum; 3: Gneiting class with the Irish wind parameters.
    """
    if model_id == 0:
        return SeparableExp(2.0, 1.0, 1.0)
    if model_id == 1:
        return ExtendedGneiting(2.0, 0.01, 1.5)
    if model_id == 2:
        base = SeparableExp(2.0, 1.0, 1.0)
        spatial_only = SeparableProduct(1.0, Factor("exponential", 1.0), Factor("constant"))
        temporal_only = SeparableProduct(1.0, Factor("constant"), Factor("exponential", 1.0))
        return ProductSum(
            (
                ProductSumTerm(0.5, base),
                ProductSumTerm(0.5, base, 2.0, 5.0),
                ProductSumTerm(0.5, spatial_only),
                ProductSumTerm(0.5, temporal_only),
            )
        )
    if model_id == 3:
        return GneitingClass(1.8, 0.901, 1.544, 0.61, 0.00134)
    raise InvalidInputError(f"model id must be 0, 1, 2 or 3, got {model_id!r}")


_SIMPLE_VARIANTS = {
    cls.variant: cls for cls in (SeparableExp, ExtendedGneiting, GneitingClass, SimpleGneiting)
}


def model_from_dict(data):
    """Inverse of :meth:`CovarianceModel.to_dict`."""
    try:
        variant = data["variant"]
        params = dict(data.get("params", {}))
    except (KeyError, TypeError, AttributeError):
        raise InvalidInputError("model object needs 'variant' and 'params'") from None
    if variant in _SIMPLE_VARIANTS:
        try:
            return _SIMPLE_VARIANTS[variant](**params)
        except TypeError as exc:
            raise InvalidInputError(str(exc)) from None
    if variant == "SeparableProduct":
        return SeparableProduct(
            params.get("sigma2", 1.0),
            Factor(**params["spatial"]),
            Factor(**params["temporal"]),
        )
    if variant == "ProductSum":
        terms = tuple(
            ProductSumTerm(
                t["weight"], model_from_dict(t["model"]), t.get("h_scale", 1.0), t.get("v_scale", 1.0)
            )
            for t in params["terms"]
        )
        return ProductSum(terms)
    raise InvalidInputError(f"unknown model variant {variant!r}")


def model_from_json(text):
    return model_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# scalar API and grid matrices


def _lag3(lag):
    lag = np.asarray(lag, dtype=float).ravel()
    if lag.shape != (3,):
        raise InvalidInputError("a lag vector has three components (h1, h2, v)")
    return lag


def evaluate(model, lag):
    """``C(h, v)`` at a single lag ``(h1, h2, v)``."""
    h1, h2, v = _lag3(lag)
    return float(model.cov(h1, h2, v))


def gradient(model, lag):
    """``(dC/dh1, dC/dh2, dC/dv)`` at a single lag."""
    h1, h2, v = _lag3(lag)
    return np.array([float(g) for g in model.grad(h1, h2, v)])


def _grid_lags(grid):
    h1 = grid.spatial[:, 0][:, None]
    h2 = grid.spatial[:, 1][:, None]
    v = grid.temporal[None, :]
    return h1, h2, v


def build_cov_matrix(model, grid):
    """M x N matrix with entry ``(i, j) = C(h_i, v_j)``; rows index spatial lags."""
    return np.asarray(model.cov(*_grid_lags(grid)), dtype=float)


def grad_matrices(model, grid):
    """The three M x N matrices of partial derivatives on the grid."""
    h1, h2, v = np.broadcast_arrays(*_grid_lags(grid))
    return tuple(np.asarray(g, dtype=float) for g in model.grad(h1, h2, v))


def f_mn(model, grid):
    """Ratio ``||C||_F / sum_k ||d_k C||_F`` entering the bandwidth rules."""
    num = np.linalg.norm(build_cov_matrix(model, grid))
    den = sum(np.linalg.norm(g) for g in grad_matrices(model, grid))
    if not den > 0:
        raise DegenerateDerivativeError("all partial derivatives vanish on the grid")
    return float(num / den)
