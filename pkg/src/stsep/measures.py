"""
Deviation-from-separability measures and the matrices shaping their variances.

All functions take a small dense ``M x N`` grid matrix ``C`` whose rows index
spatial lags and whose columns index temporal lags.  Vectorization is
row-major: ``vec(C)[i * N + j] = C[i, j]``, hence a Kronecker product
``A (x) B`` acts as ``A`` on rows and ``B`` on columns.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDirectionError,
    InternalConsistencyError,
    InvalidInputError,
    PivotDegenerateError,
    ZeroMatrixError,
)

__all__ = [
    "SvdTriple",
    "DeviationReport",
    "CLAMP_TOL",
    "d_psi",
    "d_rank1",
    "d_rank_k",
    "leading_svd",
    "default_psi",
    "default_pivot",
    "c_star_vectors",
    "w_matrix",
    "q_matrix",
    "p_projector",
    "p_projector_k",
    "deviation_report",
]

#: Relative band ``(-CLAMP_TOL * ||C||_F^2, 0)`` clamped to zero.
CLAMP_TOL = 1e-10

_TIE_TOL = 1e-12


def _matrix(C):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2:
        raise InvalidInputError("expected a two-dimensional matrix")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError("matrix has non-finite entries")
    return C


def _clamp(value, scale):
    if value >= 0:
        return float(value)
    if value > -CLAMP_TOL * scale:
        return 0.0
    raise InternalConsistencyError(f"deviation measure {value:.3e} is negative beyond the clamp band")


def _sign_fix(u, v):
    nz = np.flatnonzero(np.abs(u) > 1e-12)
    if nz.size and u[nz[0]] < 0:
        return -u, -v
    return u, v


@dataclass(frozen=True, eq=False)
class SvdTriple:
    sigma1: float
    u: np.ndarray
    v: np.ndarray
    sigma2: float = 0.0
    degenerate: bool = False

    def to_dict(self):
        return {"sigma1": self.sigma1, "u": self.u.tolist(), "v": self.v.tolist(), "degenerate": self.degenerate}


@dataclass(frozen=True, eq=False)
class DeviationReport:
    D: float
    svd: SvdTriple
    Dpsi: float | None = None
    psi: np.ndarray | None = None
    Dk: list = field(default_factory=list)

    def to_dict(self):
        return {
            "D": self.D,
            "Dpsi": self.Dpsi,
            "psi": None if self.psi is None else self.psi.tolist(),
            "Dk": list(self.Dk),
            "svd": self.svd.to_dict(),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def default_psi(N):
    """First standard basis vector of length ``N``."""
    psi = np.zeros(N)
    psi[0] = 1.0
    return psi


def d_psi(C, psi=None):
    """Partial-trace measure ``||C||^2 - ||psi^T C^T C||^2 / ||C psi||^2``."""
    C = _matrix(C)
    psi = default_psi(C.shape[1]) if psi is None else np.asarray(psi, dtype=float)
    if psi.shape != (C.shape[1],):
        raise InvalidInputError(f"psi must have length {C.shape[1]}")
    fro2 = float(np.sum(C * C))
    cpsi = C @ psi
    ncpsi = np.linalg.norm(cpsi)
    if not ncpsi > 1e-12 * np.sqrt(fro2) * np.linalg.norm(psi):
        raise DegenerateDirectionError("C psi vanishes; psi is orthogonal to the row space of C")
    proj = C.T @ cpsi
    return _clamp(fro2 - float(proj @ proj) / ncpsi ** 2, fro2)


def _singular_values(C):
    return np.linalg.svd(C, compute_uv=False)


def d_rank_k(C, k):
    """``||C||_F^2 - sum_{j <= k} sigma_j^2``."""
    C = _matrix(C)
    if int(k) != k or not 1 <= k < min(C.shape):
        raise InvalidInputError(f"k must satisfy 1 <= k < {min(C.shape)}, got {k!r}")
    s = _singular_values(C)
    fro2 = float(np.sum(C * C))
    return _clamp(fro2 - float(np.sum(s[: int(k)] ** 2)), fro2)


def d_rank1(C):
    """Squared Frobenius distance to the best rank-one approximation."""
    return d_rank_k(C, 1)


def leading_svd(C):
    """Leading singular triple with a sign-normalized left vector."""
    C = _matrix(C)
    if not np.any(C):
        raise ZeroMatrixError("leading singular triple of a zero matrix is undefined")
    U, s, Vt = np.linalg.svd(C)
    u, v = _sign_fix(U[:, 0].copy(), Vt[0].copy())
    s2 = float(s[1]) if s.size > 1 else 0.0
    return SvdTriple(float(s[0]), u, v, s2, bool(s[0] - s2 < _TIE_TOL * s[0]))


def default_pivot(C):
    """``(i, j)`` with ``j = 0`` and ``i`` maximizing ``|C[i, 0]|``."""
    C = _matrix(C)
    return int(np.argmax(np.abs(C[:, 0]))), 0


def c_star_vectors(C, i=None, j=None):
    """Column ``j`` of ``C`` and row ``i`` divided by the pivot ``C[i, j]``."""
    C = _matrix(C)
    if i is None or j is None:
        di, dj = default_pivot(C)
        i = di if i is None else i
        j = dj if j is None else j
    piv = C[i, j]
    if not abs(piv) > 1e-12 * np.linalg.norm(C):
        raise PivotDegenerateError(f"pivot C[{i}, {j}] = {piv!r} is too small")
    return C[:, j].copy(), C[i, :] / piv


def w_matrix(C, psi=None):
    """``W = C - C psi psi^T C^T C + ||C||^2 C psi psi^T - C C^T C psi psi^T``."""
    C = _matrix(C)
    psi = default_psi(C.shape[1]) if psi is None else np.asarray(psi, dtype=float)
    cpp = np.outer(C @ psi, psi)
    fro2 = float(np.sum(C * C))
    return C - cpp @ C.T @ C + fro2 * cpp - C @ C.T @ cpp


def q_matrix(C, mode="svd", pivot=None):
    """Residual after removing a rank-one part.

    ``mode="svd"`` subtracts ``sigma_1 u v^T``; ``mode="cstar"`` subtracts
    ``c1* c2*^T``.
    """
    C = _matrix(C)
    if mode == "svd":
        t = leading_svd(C)
        return C - t.sigma1 * np.outer(t.u, t.v)
    if mode == "cstar":
        i, j = pivot if pivot is not None else (None, None)
        c1, c2 = c_star_vectors(C, i, j)
        return C - np.outer(c1, c2)
    raise InvalidInputError(f"unknown Q mode {mode!r}")


def _complement(vec):
    vec = np.asarray(vec, dtype=float)
    nrm2 = float(vec @ vec)
    if not nrm2 > 0:
        raise InvalidInputError("projector direction must be nonzero")
    return np.eye(vec.size) - np.outer(vec, vec) / nrm2


def p_projector(c1, c2):
    """``(I - c1 c1^T / ||c1||^2) (x) (I - c2 c2^T / ||c2||^2)``."""
    return np.kron(_complement(c1), _complement(c2))


def _orth_complement(U):
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or not np.allclose(U.T @ U, np.eye(U.shape[1]), atol=1e-8):
        raise InvalidInputError("columns must be orthonormal")
    return np.eye(U.shape[0]) - U @ U.T


def p_projector_k(U1, U2):
    """``(I - U1 U1^T) (x) (I - U2 U2^T)``."""
    return np.kron(_orth_complement(U1), _orth_complement(U2))


def deviation_report(C, psi=None, ks=()):
    C = _matrix(C)
    psi = default_psi(C.shape[1]) if psi is None else np.asarray(psi, dtype=float)
    return DeviationReport(
        D=d_rank1(C),
        svd=leading_svd(C),
        Dpsi=d_psi(C, psi),
        psi=psi,
        Dk=[d_rank_k(C, k) for k in ks],
    )
