"""
Separability tests, confidence intervals and relevant-hypothesis tests.

Exact tests compare ``(nT)^2 b^3 D_hat`` with a simulated (or chi-square)
quantile of the limiting null law.  Interval and relevant tests use the
Gaussian limit ``nT b^{1.5} (D_hat - D) -> N(0, theta^2)`` under the
alternative, with ``theta^2 = 4 tau^2 ||W||_F^2`` for the partial-trace
measure and ``4 tau^2 ||Q||_F^2`` for the rank-one measure.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import measures
from .errors import DegenerateVarianceError, InvalidInputError

__all__ = [
    "TestSpec",
    "TestReport",
    "ConfInterval",
    "normal_quantile",
    "chi2_quantile",
    "mc_quantile",
    "pt_null_draws",
    "svd_null_draws",
    "simulate_quantile_pt",
    "simulate_quantile_svd",
    "test_exact_pt",
    "test_exact_svd",
    "test_rank_k",
    "ci_pt",
    "ci_svd",
    "test_relevant_lower",
    "test_relevant_equiv",
    "delta_hat_alpha",
    "run_test",
    "DEFAULT_B",
    "TEST_KINDS",
]

DEFAULT_B = 2000
MIN_B = 100
SPECTRAL_GAP_TOL = 1e-6
VARIANCE_TOL = 1e-12

TEST_KINDS = ("exact-pt", "exact-svd", "rank-k", "relevant-lower", "relevant-equiv")


def normal_quantile(p):
    """Standard normal quantile ``u_p``."""
    return float(special.ndtri(p))


def chi2_quantile(df, p):
    """Quantile of the chi-square distribution with ``df`` degrees of freedom."""
    return float(special.chdtri(df, 1.0 - p))


def _check_alpha(alpha, allow_one=False):
    alpha = float(alpha)
    ok = 0 < alpha <= 1 if allow_one else 0 < alpha < 1
    if not ok:
        raise InvalidInputError(f"alpha must lie in (0, 1{']' if allow_one else ')'}, got {alpha!r}")
    return alpha


def _check_B(B):
    if int(B) != B or B < MIN_B:
        raise InvalidInputError(f"B must be an integer >= {MIN_B}, got {B!r}")
    return int(B)


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return None if seed is None else repr(seed)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True, eq=False)
class TestSpec:
    """What to test and how to calibrate it.

    ``kind`` is one of ``exact-pt``, ``exact-svd``, ``rank-k``,
    ``relevant-lower`` and ``relevant-equiv``.  ``quantile_mode`` is
    ``montecarlo`` or ``chisquare`` (the latter only for the SVD and rank-k
    tests).  Relevant tests use ``measure`` (``svd`` or ``pt``) and ``delta``.
    """

    __test__ = False

    kind: str
    alpha: float = 0.05
    psi: np.ndarray | None = None
    B: int = DEFAULT_B
    quantile_mode: str = "montecarlo"
    seed: object = None
    k: int = 1
    delta: float = 0.0
    measure: str = "svd"

    def __post_init__(self):
        if self.kind not in TEST_KINDS:
            raise InvalidInputError(f"unknown test kind {self.kind!r}")
        if self.quantile_mode not in ("montecarlo", "chisquare"):
            raise InvalidInputError(f"unknown quantile mode {self.quantile_mode!r}")
        if self.quantile_mode == "chisquare" and self.kind == "exact-pt":
            raise InvalidInputError("chi-square calibration is only available for the SVD-type tests")
        if self.measure not in ("svd", "pt"):
            raise InvalidInputError(f"unknown measure {self.measure!r}")
        _check_alpha(self.alpha)
        _check_B(self.B)
        if not self.delta >= 0:
            raise InvalidInputError("delta must be >= 0")
        if self.psi is not None:
            object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float))

    def label(self):
        if self.kind == "exact-svd" and self.quantile_mode == "chisquare":
            return "exact-svd-chi2"
        if self.kind == "rank-k":
            return f"rank-{self.k}"
        return self.kind

    def to_dict(self):
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "psi": None if self.psi is None else self.psi.tolist(),
            "B": self.B,
            "quantileMode": self.quantile_mode,
            "seed": _seed_repr(self.seed),
            "k": self.k,
            "delta": self.delta,
            "measure": self.measure,
        }


@dataclass(frozen=True, eq=False)
class TestReport:
    __test__ = False

    statistic: float
    scaled_statistic: float
    critical_value: float
    mc_std_error: float
    reject: bool
    p_value: float
    spec: TestSpec
    estimate: dict = field(default_factory=dict)
    warnings: tuple = ()

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "scaledStatistic": self.scaled_statistic,
            "criticalValue": self.critical_value,
            "mcStdError": self.mc_std_error,
            "reject": self.reject,
            "pValue": self.p_value,
            "spec": self.spec.to_dict(),
            "estimate": self.estimate,
            "warnings": list(self.warnings),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


@dataclass(frozen=True)
class ConfInterval:
    lo: float
    hi: float
    level: float
    measure: str
    variance: float
    center: float
    half_width: float

    @property
    def width(self):
        return 2.0 * self.half_width

    def covers(self, value):
        return self.lo <= value <= self.hi

    def to_dict(self):
        return {
            "lo": self.lo,
            "hi": self.hi,
            "level": self.level,
            "measure": self.measure,
            "varianceEstimate": self.variance,
            "center": self.center,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _summary(est):
    return {
        "n": int(est.n),
        "T": int(est.T),
        "b": float(est.b),
        "tau2": float(est.tau2_hat),
        "m2": float(est.m2_hat),
        "I": float(est.I_hat),
        "Chat": est.Chat.tolist(),
    }


# ---------------------------------------------------------------------------
# Monte-Carlo machinery


def mc_quantile(draws, alpha):
    """Empirical ``(1 - alpha)`` quantile and an order-statistic standard error.

    The quantile is the order statistic of rank ``ceil(B (1 - alpha))``.  The
    standard error is half the spread between the order statistics at ranks
    ``B p -+ sqrt(B p (1 - p))``, the binomial one-sigma band.
    """
    x = np.sort(np.asarray(draws, dtype=float))
    B = x.size
    p = 1.0 - alpha
    k = min(B, max(1, math.ceil(B * p - 1e-9)))
    spread = math.sqrt(B * p * (1.0 - p))
    lo = min(B, max(1, math.floor(B * p - spread)))
    hi = min(B, max(1, math.ceil(B * p + spread)))
    return float(x[k - 1]), float(0.5 * (x[hi - 1] - x[lo - 1]))


def _p_value(draws, scaled):
    return (int(np.count_nonzero(draws >= scaled)) + 1) / (draws.size + 1)


def pt_null_draws(Chat, psi, tau2hat, B, seed):
    """Draws of the limiting null law of ``(nT)^2 b^3 D_hat_psi``."""
    C = np.asarray(Chat, dtype=float)
    M, N = C.shape
    psi = measures.default_psi(N) if psi is None else np.asarray(psi, dtype=float)
    measures.d_psi(C, psi)  # validates the direction
    tau = math.sqrt(tau2hat)
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((B, M, N))
    c = C @ psi
    nc2 = float(c @ c)
    r = C.T @ c
    g_psi = G @ psi
    term1 = tau * (G - g_psi[:, :, None] * r[None, None, :] / nc2)
    term2 = tau * (np.einsum("bmn,m->bn", G, c) - g_psi @ C) / math.sqrt(nc2)
    return np.sum(term1 ** 2, axis=(1, 2)) - np.sum(term2 ** 2, axis=1)


def simulate_quantile_pt(Chat, psi, tau2hat, alpha, B=DEFAULT_B, seed=None):
    alpha = _check_alpha(alpha)
    return mc_quantile(pt_null_draws(Chat, psi, tau2hat, _check_B(B), seed), alpha)


def _projector_draws(P, tau2hat, B, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((B, P.shape[0]))
    return tau2hat * np.einsum("bi,ij,bj->b", G, P, G)


def svd_null_draws(Chat, tau2hat, B, seed, pivot=None):
    """Draws of ``tau^2 G^T P G`` with ``P`` built from the plug-in c* vectors."""
    i, j = pivot if pivot is not None else (None, None)
    c1, c2 = measures.c_star_vectors(Chat, i, j)
    return _projector_draws(measures.p_projector(c1, c2), tau2hat, B, seed)


def simulate_quantile_svd(Chat, tau2hat, alpha, B=DEFAULT_B, seed=None, mode="montecarlo", pivot=None):
    """Null quantile of the scaled rank-one statistic; returns ``(q, se)``."""
    alpha = _check_alpha(alpha)
    C = np.asarray(Chat, dtype=float)
    i, j = pivot if pivot is not None else (None, None)
    measures.c_star_vectors(C, i, j)
    if mode == "chisquare":
        M, N = C.shape
        return tau2hat * chi2_quantile((M - 1) * (N - 1), 1.0 - alpha), 0.0
    if mode != "montecarlo":
        raise InvalidInputError(f"unknown quantile mode {mode!r}")
    return mc_quantile(svd_null_draws(C, tau2hat, _check_B(B), seed, pivot), alpha)


# ---------------------------------------------------------------------------
# exact tests


def _exact_scale(est):
    return (est.n * est.T) ** 2 * est.b ** 3


def test_exact_pt(est, psi=None, alpha=0.05, B=DEFAULT_B, seed=None):
    """Partial-trace test of exact separability."""
    spec = TestSpec("exact-pt", alpha, psi, B, "montecarlo", seed)
    psi = measures.default_psi(est.Chat.shape[1]) if psi is None else np.asarray(psi, dtype=float)
    stat = measures.d_psi(est.Chat, psi)
    scaled = _exact_scale(est) * stat
    draws = pt_null_draws(est.Chat, psi, est.tau2_hat, spec.B, seed)
    q, se = mc_quantile(draws, spec.alpha)
    return TestReport(stat, scaled, q, se, bool(scaled > q), _p_value(draws, scaled), spec, _summary(est))


def test_exact_svd(est, alpha=0.05, B=DEFAULT_B, seed=None, mode="montecarlo", pivot=None):
    """Rank-one (SVD) test of exact separability."""
    spec = TestSpec("exact-svd", alpha, None, B, mode, seed)
    stat = measures.d_rank1(est.Chat)
    scaled = _exact_scale(est) * stat
    if mode == "chisquare":
        q, se = simulate_quantile_svd(est.Chat, est.tau2_hat, alpha, B, seed, mode, pivot)
        M, N = est.Chat.shape
        p = float(special.chdtrc((M - 1) * (N - 1), scaled / est.tau2_hat))
    else:
        draws = svd_null_draws(est.Chat, est.tau2_hat, spec.B, seed, pivot)
        q, se = mc_quantile(draws, spec.alpha)
        p = _p_value(draws, scaled)
    return TestReport(stat, scaled, q, se, bool(scaled > q), p, spec, _summary(est))


def test_rank_k(est, k, alpha=0.05, mode="montecarlo", B=DEFAULT_B, seed=None):
    """Test whether the grid matrix has rank at most ``k``."""
    spec = TestSpec("rank-k", alpha, None, B, mode, seed, k=int(k))
    C = est.Chat
    M, N = C.shape
    stat = measures.d_rank_k(C, k)
    scaled = _exact_scale(est) * stat
    U, s, Vt = np.linalg.svd(C)
    warnings = ()
    if s[k - 1] - s[k] <= SPECTRAL_GAP_TOL * max(s[0], 1e-300):
        warnings = (f"ill-separated spectrum: sigma_{k} = {s[k - 1]:.6g} and sigma_{k + 1} = {s[k]:.6g}",)
    df = (M - k) * (N - k)
    if mode == "chisquare":
        q, se = est.tau2_hat * chi2_quantile(df, 1.0 - alpha), 0.0
        p = float(special.chdtrc(df, scaled / est.tau2_hat))
    else:
        P = measures.p_projector_k(U[:, :k], Vt[:k].T)
        draws = _projector_draws(P, est.tau2_hat, spec.B, seed)
        q, se = mc_quantile(draws, spec.alpha)
        p = _p_value(draws, scaled)
    return TestReport(stat, scaled, q, se, bool(scaled > q), p, spec, _summary(est), warnings)


# ---------------------------------------------------------------------------
# alternative-regime inference


def _clt_scale(est):
    return est.n * est.T * est.b ** 1.5


def _theta(est, measure, psi=None, q_mode="svd"):
    """Point estimate and asymptotic standard deviation ``theta_hat``."""
    C = est.Chat
    if measure == "pt":
        psi = measures.default_psi(C.shape[1]) if psi is None else np.asarray(psi, dtype=float)
        stat = measures.d_psi(C, psi)
        shape = measures.w_matrix(C, psi)
    elif measure == "svd":
        stat = measures.d_rank1(C)
        shape = measures.q_matrix(C, q_mode)
    else:
        raise InvalidInputError(f"unknown measure {measure!r}")
    fro = float(np.linalg.norm(C))
    # W carries terms cubic in C, Q only linear ones
    scale = fro + fro ** 3 if measure == "pt" else fro
    var = 4.0 * est.tau2_hat * float(np.sum(shape * shape))
    if not (var > 0 and np.linalg.norm(shape) > VARIANCE_TOL * scale):
        raise DegenerateVarianceError("variance estimate is zero; the estimated grid matrix is separable")
    return stat, math.sqrt(var)


def _interval(est, alpha, measure, psi=None, q_mode="svd"):
    alpha = _check_alpha(alpha, allow_one=True)
    stat, theta = _theta(est, measure, psi, q_mode)
    hw = normal_quantile(1.0 - alpha / 2.0) * theta / _clt_scale(est)
    return ConfInterval(max(0.0, stat - hw), stat + hw, 1.0 - alpha, measure.upper(), theta * theta, stat, hw)


def ci_pt(est, psi=None, alpha=0.05):
    """Asymptotic ``1 - alpha`` interval for the partial-trace measure."""
    return _interval(est, alpha, "pt", psi)


def ci_svd(est, alpha=0.05, q_mode="svd"):
    """Asymptotic ``1 - alpha`` interval for the rank-one measure."""
    return _interval(est, alpha, "svd", q_mode=q_mode)


def _relevant(kind, est, delta, alpha, measure, psi):
    spec = TestSpec(kind, alpha, psi, DEFAULT_B, "montecarlo", None, delta=float(delta), measure=measure)
    stat, theta = _theta(est, measure, psi)
    sd = theta / _clt_scale(est)
    u = normal_quantile(1.0 - spec.alpha) if kind == "relevant-lower" else normal_quantile(spec.alpha)
    threshold = spec.delta + u * sd
    z = (stat - spec.delta) / sd if math.isfinite(spec.delta) else -math.inf
    if kind == "relevant-lower":
        reject, p = stat > threshold, float(special.ndtr(-z))
    else:
        reject, p = stat < threshold, float(special.ndtr(z))
    return TestReport(stat, stat, threshold, 0.0, bool(reject), p, spec, _summary(est))


def test_relevant_lower(est, delta, alpha=0.05, measure="svd", psi=None):
    """Reject ``D <= delta`` when ``D_hat`` exceeds ``delta + u_{1-alpha} sd``."""
    return _relevant("relevant-lower", est, delta, alpha, measure, psi)


def test_relevant_equiv(est, delta, alpha=0.05, measure="svd", psi=None):
    """Reject ``D >= delta`` when ``D_hat`` falls below ``delta + u_alpha sd``."""
    return _relevant("relevant-equiv", est, delta, alpha, measure, psi)


def delta_hat_alpha(est, alpha=0.05, measure="svd", psi=None):
    """Smallest threshold (infimum) at which the equivalence test rejects."""
    alpha = _check_alpha(alpha)
    stat, theta = _theta(est, measure, psi)
    return max(0.0, stat + normal_quantile(1.0 - alpha) * theta / _clt_scale(est))


def run_test(est, spec):
    """Dispatch a :class:`TestSpec` against an estimate."""
    if spec.kind == "exact-pt":
        return test_exact_pt(est, spec.psi, spec.alpha, spec.B, spec.seed)
    if spec.kind == "exact-svd":
        return test_exact_svd(est, spec.alpha, spec.B, spec.seed, spec.quantile_mode)
    if spec.kind == "rank-k":
        return test_rank_k(est, spec.k, spec.alpha, spec.quantile_mode, spec.B, spec.seed)
    if spec.kind == "relevant-lower":
        return test_relevant_lower(est, spec.delta, spec.alpha, spec.measure, spec.psi)
    return test_relevant_equiv(est, spec.delta, spec.alpha, spec.measure, spec.psi)
