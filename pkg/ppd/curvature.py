"""
Observed curvature J(theta) = -grad^2 (l_D + log pi) in dense, diagonal and
layer-block forms.

Every CurvatureMatrix is factorized once at construction (Cholesky with a
jitter ladder) and is immutable afterwards, so it can be shared freely
across threads.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg

from .config import EngineDefaults
from .data import Dataset, PseudoObservation, as_theta
from .errors import ConfigurationError, NumericError
from .models import LikelihoodModel
from .priors import Prior

logger = logging.getLogger(__name__)

STRUCTURES = ("dense", "diagonal", "blocks")
KINDS = ("dense", "ggn", "diag", "blocked")


def jitter_cholesky(A: np.ndarray, operation: str = "log_det"):
    """
    Lower Cholesky factor of a symmetric matrix, adding eps * trace/q * I when needed.

    Returns:
        (L, jitter) with jitter the absolute amount added to the diagonal.
    """
    q = A.shape[0]
    try:
        return linalg.cholesky(A, lower=True), 0.0
    except linalg.LinAlgError:
        pass

    scale = abs(float(np.trace(A))) / q or 1.0
    for eps in EngineDefaults.JITTER_LADDER:
        jitter = eps * scale
        try:
            L = linalg.cholesky(A + jitter * np.eye(q), lower=True)
            logger.warning(f"[curvature] Cholesky needed jitter {jitter:.3e} (eps={eps:.0e})")
            return L, jitter
        except linalg.LinAlgError:
            continue

    smallest = float(np.linalg.eigvalsh(A)[0])
    raise NumericError(
        f"Curvature is not positive definite (smallest eigenvalue {smallest:.6e}) "
        f"even after jitter {EngineDefaults.JITTER_LADDER[-1]:.0e} * trace/q",
        operation=operation, smallest_eigenvalue=smallest,
    )


@dataclass(frozen=True)
class CurvatureMatrix:
    """
    Structured symmetric positive-definite matrix with a cached factorization.

    ``values`` is a (q, q) array for "dense", a (q,) array for "diagonal"
    and a list of square arrays for "blocks" (``blocks`` then holds the
    matching parameter slices, in order and covering 0..q).
    """
    structure: str
    values: object
    blocks: Optional[List[slice]] = None
    kind: str = ""
    jitter_applied: float = 0.0
    _factors: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ConfigurationError(f"Unknown curvature structure '{self.structure}'")
        if self.structure == "diagonal":
            d = np.array(self.values, dtype=float).reshape(-1)
            if not np.all(np.isfinite(d)):
                raise NumericError("Diagonal curvature has non-finite entries", operation="log_det")
            floor = EngineDefaults.JITTER_LADDER[-1] * (abs(float(np.sum(d))) / d.size or 1.0)
            if np.any(d <= 0):
                if np.min(d) <= -floor:
                    raise NumericError(
                        f"Curvature is not positive definite (smallest eigenvalue {float(np.min(d)):.6e})",
                        operation="log_det", smallest_eigenvalue=float(np.min(d)),
                    )
                jitter = floor
                d = d + jitter
                object.__setattr__(self, 'jitter_applied', self.jitter_applied + jitter)
            d.setflags(write=False)
            object.__setattr__(self, 'values', d)
            object.__setattr__(self, '_factors', [d])
            return

        mats = [np.array(self.values, dtype=float)] if self.structure == "dense" else \
            [np.array(b, dtype=float) for b in self.values]
        if self.structure == "blocks":
            _check_partition(self.blocks, sum(m.shape[0] for m in mats))
        factors = []
        jitter_total = 0.0
        for index, m in enumerate(mats):
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ConfigurationError(f"Curvature block must be square, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise NumericError("Curvature has non-finite entries", operation="log_det")
            asym = np.max(np.abs(m - m.T))
            if asym > EngineDefaults.SYMMETRY_RTOL * max(1.0, np.max(np.abs(m))):
                raise NumericError(f"Curvature is not symmetric (max asymmetry {asym:.3e})", operation="log_det")
            m = 0.5 * (m + m.T)
            L, jitter = jitter_cholesky(m)
            if jitter:
                m = m + jitter * np.eye(m.shape[0])
                jitter_total = max(jitter_total, jitter)
            m.setflags(write=False)
            factors.append(L)
            mats[index] = m
        object.__setattr__(self, 'values', mats[0] if self.structure == "dense" else mats)
        object.__setattr__(self, 'jitter_applied', self.jitter_applied + jitter_total)
        object.__setattr__(self, '_factors', factors)

    # ------------------------------------------------------------------

    @property
    def q(self) -> int:
        if self.structure == "dense":
            return self.values.shape[0]
        if self.structure == "diagonal":
            return self.values.size
        return sum(b.shape[0] for b in self.values)

    def _segments(self):
        if self.structure == "blocks":
            return list(zip(self.blocks, self._factors))
        return [(slice(0, self.q), self._factors[0])]

    def log_det(self) -> float:
        if self.structure == "diagonal":
            return float(np.sum(np.log(self.values)))
        return float(sum(2.0 * np.sum(np.log(np.diag(L))) for L in self._factors))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """J^-1 b for a vector (q,) or matrix (q, m)."""
        b = np.asarray(b, dtype=float)
        if self.structure == "diagonal":
            return b / (self.values if b.ndim == 1 else self.values[:, None])
        out = np.empty_like(b)
        for sl, L in self._segments():
            out[sl] = linalg.cho_solve((L, True), b[sl])
        return out

    def inverse_quadratic(self, G: np.ndarray) -> np.ndarray:
        """G J^-1 G^T for G of shape (k, q)."""
        G = np.atleast_2d(G)
        if self.structure == "diagonal":
            return (G / self.values) @ G.T
        out = np.zeros((G.shape[0], G.shape[0]))
        for sl, L in self._segments():
            W = linalg.solve_triangular(L, G[:, sl].T, lower=True)
            out += W.T @ W
        return out

    def sample_offsets(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals z (S, q) to draws from N(0, J^-1)."""
        z = np.atleast_2d(z)
        if self.structure == "diagonal":
            return z / np.sqrt(self.values)
        out = np.empty_like(z, dtype=float)
        for sl, L in self._segments():
            out[:, sl] = linalg.solve_triangular(L.T, z[:, sl].T, lower=False).T
        return out

    def to_dense(self) -> np.ndarray:
        if self.structure == "dense":
            return np.array(self.values)
        if self.structure == "diagonal":
            return np.diag(self.values)
        return linalg.block_diag(*self.values)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.to_dense()) if self.structure != "diagonal" else np.array(self.values)

    def __repr__(self) -> str:
        return f"CurvatureMatrix(structure={self.structure}, kind={self.kind}, q={self.q}, jitter={self.jitter_applied:.1e})"


def _check_partition(blocks: Optional[Sequence[slice]], q: int):
    if not blocks:
        raise ConfigurationError("Blocked curvature needs a non-empty layer partition", operation="curvature_blocked")
    position = 0
    for sl in blocks:
        if sl.start != position or sl.stop <= sl.start:
            raise ConfigurationError(
                f"Layer partition must be contiguous and ordered; block {sl} does not start at {position}",
                operation="curvature_blocked",
            )
        position = sl.stop
    if position != q:
        raise ConfigurationError(
            f"Layer partition covers {position} of {q} parameters",
            operation="curvature_blocked",
        )


# ----------------------------------------------------------------------
# Constructors
# ----------------------------------------------------------------------

def _prior_curvature(prior: Prior, theta: np.ndarray, include_prior: bool) -> np.ndarray:
    if not include_prior:
        return np.zeros((theta.size, theta.size))
    return -prior.hessian(theta)


def _ggn_terms(model: LikelihoodModel, data: Dataset, theta: np.ndarray,
               pseudo: Optional[PseudoObservation]):
    """Stack (J, Lambda) for the dataset and, separately, the pseudo term."""
    parts = []
    if data.n:
        parts.append(model.output_terms(theta, data.X, data.y))
    if pseudo is not None:
        parts.append(model.output_terms(theta, pseudo.x_new, pseudo.y_hat))
    return parts


def _gn_product(J: np.ndarray, Lam: np.ndarray) -> np.ndarray:
    """sum_n J_n^T Lambda_n J_n as one matrix product."""
    n, k, q = J.shape
    return J.reshape(n * k, q).T @ np.matmul(Lam, J).reshape(n * k, q)


def ggn_matrix(model: LikelihoodModel, data: Dataset, theta,
               pseudo: Optional[PseudoObservation] = None) -> np.ndarray:
    """Likelihood part of the generalized Gauss-Newton matrix (no prior)."""
    theta = as_theta(theta)
    out = np.zeros((theta.size, theta.size))
    for J, Lam in _ggn_terms(model, data, theta, pseudo):
        out += _gn_product(J, Lam)
    return 0.5 * (out + out.T)


def curvature_dense(model: LikelihoodModel, prior: Prior, data: Dataset, theta,
                    pseudo: Optional[PseudoObservation] = None, include_prior: bool = True) -> CurvatureMatrix:
    theta = as_theta(theta)
    if model.q > EngineDefaults.DENSE_MAX_DIM:
        raise ConfigurationError(
            f"Dense curvature limited to q <= {EngineDefaults.DENSE_MAX_DIM}, got {model.q}",
            operation="curvature_dense",
        )
    if pseudo is None:
        H = model.hessian(data, theta)
    else:
        H = model.hessian(data, theta, pseudo.x_new, pseudo.y_hat)
    return CurvatureMatrix("dense", -H + _prior_curvature(prior, theta, include_prior), kind="dense")


def curvature_ggn(model: LikelihoodModel, prior: Prior, data: Dataset, theta,
                  pseudo: Optional[PseudoObservation] = None, include_prior: bool = True) -> CurvatureMatrix:
    theta = as_theta(theta)
    G = ggn_matrix(model, data, theta, pseudo)
    return CurvatureMatrix("dense", G + _prior_curvature(prior, theta, include_prior), kind="ggn")


def curvature_diagonal(model: LikelihoodModel, prior: Prior, data: Dataset, theta,
                       pseudo: Optional[PseudoObservation] = None, include_prior: bool = True) -> CurvatureMatrix:
    theta = as_theta(theta)
    d = np.zeros(theta.size)
    for J, Lam in _ggn_terms(model, data, theta, pseudo):
        d += np.sum(J * np.matmul(Lam, J), axis=(0, 1))
    if include_prior:
        d -= prior.hessian_diagonal(theta)
    return CurvatureMatrix("diagonal", d, kind="diag")


def curvature_blocked(model: LikelihoodModel, prior: Prior, data: Dataset, theta,
                      blocks: Optional[Sequence[slice]] = None,
                      pseudo: Optional[PseudoObservation] = None, include_prior: bool = True) -> CurvatureMatrix:
    """Block-diagonal GGN, one block per layer (or per supplied slice)."""
    theta = as_theta(theta)
    blocks = list(blocks) if blocks is not None else model.predictor.layer_partition()
    _check_partition(blocks, model.q)
    full = ggn_matrix(model, data, theta, pseudo) + _prior_curvature(prior, theta, include_prior)
    return CurvatureMatrix("blocks", [full[sl, sl] for sl in blocks], blocks=blocks, kind="blocked")


def build_curvature(kind: str, model: LikelihoodModel, prior: Prior, data: Dataset, theta,
                    pseudo: Optional[PseudoObservation] = None, include_prior: bool = True,
                    blocks: Optional[Sequence[slice]] = None) -> CurvatureMatrix:
    if kind == "dense":
        return curvature_dense(model, prior, data, theta, pseudo, include_prior)
    if kind == "ggn":
        return curvature_ggn(model, prior, data, theta, pseudo, include_prior)
    if kind == "diag":
        return curvature_diagonal(model, prior, data, theta, pseudo, include_prior)
    if kind == "blocked":
        return curvature_blocked(model, prior, data, theta, blocks, pseudo, include_prior)
    raise ConfigurationError(f"Unknown curvature kind '{kind}', expected one of {KINDS}")


# ----------------------------------------------------------------------
# Log-determinants
# ----------------------------------------------------------------------

def log_det(curv: CurvatureMatrix) -> float:
    return curv.log_det()


def rank_one_logdet_increment(curv: CurvatureMatrix, g, s: float) -> float:
    """log|J + s g g^T| - log|J| = log(1 + s g^T J^-1 g)."""
    if s < 0:
        raise ConfigurationError(f"Rank-one weight must be >= 0, got {s}", operation="rank_one_logdet_increment")
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.size != curv.q:
        raise ConfigurationError(f"Vector of dimension {g.size} does not match curvature dimension {curv.q}",
                                 operation="rank_one_logdet_increment")
    if s == 0:
        return 0.0
    return float(np.log1p(s * float(g @ curv.solve(g))))


def logdet_increment(curv: CurvatureMatrix, G, S) -> float:
    """
    log-determinant change from adding G^T S G (G: k x q Jacobian, S: k x k PSD).

    Dense and block structures use the exact determinant lemma
    log|I + S^1/2 G J^-1 G^T S^1/2|. The diagonal structure keeps its own
    structure after the update, so the increment is sum log(1 + diag(G^T S G) / d).
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if G.shape[1] != curv.q or S.shape != (G.shape[0], G.shape[0]):
        raise ConfigurationError(
            f"Increment shapes G{G.shape}, S{S.shape} incompatible with q={curv.q}",
            operation="logdet_increment",
        )
    if curv.structure == "diagonal":
        update = np.einsum('kq,kl,lq->q', G, S, G)
        return float(np.sum(np.log1p(update / curv.values)))
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    M = np.eye(G.shape[0]) + root @ curv.inverse_quadratic(G) @ root
    sign, value = np.linalg.slogdet(M)
    if sign <= 0:
        raise NumericError("Determinant-lemma matrix is not positive", operation="logdet_increment")
    return float(value)
