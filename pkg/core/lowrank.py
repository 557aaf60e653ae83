"""
Low-rank matrix approximation for RankSight

Exact SVD by one-sided Jacobi rotations, energy-based rank selection and
rank-k truncation into the U' / V* pair that replaces a weight matrix.
"""

import numbers
from dataclasses import dataclass

import numpy as np

from core.errors import DegenerateSpectrum, InvalidEnergy, InvalidMatrix, InvalidRank
from core.utils import setup_logging

JACOBI_TOL = 1e-12
MAX_SWEEPS = 60
# Tall inputs with m > QR_ASPECT * n are reduced to their n x n triangular factor first
QR_ASPECT = 2


@dataclass(frozen=True, eq=False)
class Factorization:
    """M = u @ diag(sigma) @ v.T with sigma descending"""
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def shape(self):
        return (self.u.shape[0], self.v.shape[0])

    @property
    def full_rank(self):
        return int(self.sigma.shape[0])

    def reconstruct(self):
        return (self.u * self.sigma) @ self.v.T


@dataclass(frozen=True, eq=False)
class TruncatedPair:
    """Rank-k replacement of an m x n matrix: u_trunc (m x k) times v_star (k x n)"""
    u_trunc: np.ndarray
    v_star: np.ndarray

    @property
    def rank(self):
        return int(self.u_trunc.shape[1])

    @property
    def shape(self):
        return (self.u_trunc.shape[0], self.v_star.shape[1])

    @property
    def parameter_count(self):
        m, n = self.shape
        return self.rank * (m + n)

    def product(self):
        return self.u_trunc @ self.v_star


def _is_int(value):
    return isinstance(value, numbers.Integral) and not isinstance(value, bool)


def _tournament_rounds(n):
    """Round-robin schedule: each round is a set of disjoint column pairs"""
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = []
        for i in range(size // 2):
            p, q = players[i], players[size - 1 - i]
            if p < n and q < n:
                pairs.append((min(p, q), max(p, q)))
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _completion_vector(basis, m):
    """Unit vector orthogonal to the columns of basis, picked from the standard basis"""
    residual = np.eye(m)
    if basis.shape[1]:
        for _ in range(2):
            residual = residual - basis @ (basis.T @ residual)
    norms = np.linalg.norm(residual, axis=0)
    vec = residual[:, int(np.argmax(norms))]
    if basis.shape[1]:
        vec = vec - basis @ (basis.T @ vec)
    return vec / np.linalg.norm(vec)


def _orthonormal_columns(cols, sigma):
    """Normalize a_j / sigma_j and re-orthogonalize; degenerate columns get completed"""
    m, r = cols.shape
    basis = np.zeros((m, r))
    for j in range(r):
        vec = cols[:, j] / sigma[j] if sigma[j] > 0.0 else np.zeros(m)
        if j:
            previous = basis[:, :j]
            for _ in range(2):
                vec = vec - previous @ (previous.T @ vec)
        norm = np.linalg.norm(vec)
        if norm < 0.5:
            basis[:, j] = _completion_vector(basis[:, :j], m)
        else:
            basis[:, j] = vec / norm
    return basis


def _jacobi(a):
    """One-sided Jacobi on a tall matrix (m >= n); returns u, sigma, v"""
    a = a.copy()
    m, n = a.shape
    v = np.eye(n)
    eps = np.finfo(np.float64).eps
    # Columns with squared norm below this are numerically zero
    floor = (max(m, n) * eps * np.linalg.norm(a)) ** 2

    rounds = _tournament_rounds(n)
    converged = not rounds
    for sweep in range(MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            ap = a[:, p]
            aq = a[:, q]
            alpha = np.einsum('ij,ij->j', ap, ap)
            beta = np.einsum('ij,ij->j', aq, aq)
            gamma = np.einsum('ij,ij->j', ap, aq)
            active = (np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta)) & (np.minimum(alpha, beta) > floor)
            if not active.any():
                continue
            rotated = True

            p_act, q_act = p[active], q[active]
            g = gamma[active]
            zeta = (beta[active] - alpha[active]) / (2.0 * g)
            t = np.where(zeta >= 0.0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t

            ap_act = a[:, p_act]
            aq_act = a[:, q_act]
            a[:, p_act] = c * ap_act - s * aq_act
            a[:, q_act] = s * ap_act + c * aq_act

            vp = v[:, p_act]
            vq = v[:, q_act]
            v[:, p_act] = c * vp - s * vq
            v[:, q_act] = s * vp + c * vq
        if not rotated:
            converged = True
            break

    if not converged:
        setup_logging().warning(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps ({m}x{n})")

    sigma = np.linalg.norm(a, axis=0)
    order = np.argsort(-sigma, kind='stable')
    sigma = sigma[order]
    a = a[:, order]
    v = v[:, order]
    u = _orthonormal_columns(a, sigma)
    return u, sigma, v


def _svd_tall(a):
    m, n = a.shape
    if m > QR_ASPECT * n:
        q, r = np.linalg.qr(a)
        u_r, sigma, v = _jacobi(r)
        return q @ u_r, sigma, v
    return _jacobi(a)


def _fix_signs(u, v):
    """Largest-magnitude entry of each left singular vector is made non-negative"""
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivots, np.arange(u.shape[1])] < 0.0, -1.0, 1.0)
    return u * signs, v * signs


def _frozen(array):
    array = np.ascontiguousarray(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def svd(m_in):
    """Exact singular value decomposition of a finite real matrix"""
    a = np.array(m_in, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidMatrix(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("matrix contains non-finite entries")

    if a.shape[0] < a.shape[1]:
        left, sigma, right = _svd_tall(a.T)
        u, v = right, left
    else:
        u, sigma, v = _svd_tall(a)

    u, v = _fix_signs(u, v)
    return Factorization(u=_frozen(u), sigma=_frozen(sigma), v=_frozen(v))


def rank_for_energy(sigma, energy):
    """Smallest k whose leading singular values hold the requested energy fraction"""
    try:
        energy = float(energy)
    except (TypeError, ValueError):
        raise InvalidEnergy(f"energy must be a number, got {energy!r}") from None
    if not (0.0 < energy <= 1.0):
        raise InvalidEnergy(f"energy must lie in (0, 1], got {energy}")

    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise DegenerateSpectrum("singular value vector is empty")
    if np.any(sigma < 0.0) or not np.all(np.isfinite(sigma)):
        raise DegenerateSpectrum("singular values must be finite and non-negative")

    cumulative = np.cumsum(sigma)
    total = cumulative[-1]
    if not total > 0.0:
        raise DegenerateSpectrum("all singular values are zero")

    fractions = cumulative / total
    k = int(np.searchsorted(fractions, energy, side='left')) + 1
    return min(k, int(sigma.size))


def truncate(f, k):
    """Keep the k leading singular triplets, folding sigma into V*"""
    if not _is_int(k) or not (1 <= k <= f.full_rank):
        raise InvalidRank(f"rank {k!r} outside [1, {f.full_rank}]")
    k = int(k)
    u_trunc = np.array(f.u[:, :k])
    v_star = f.sigma[:k, None] * f.v[:, :k].T
    return TruncatedPair(u_trunc=_frozen(u_trunc), v_star=_frozen(v_star))


def truncation_error(f, k):
    """Frobenius error of the best rank-k approximation"""
    if not _is_int(k) or not (0 <= k <= f.full_rank):
        raise InvalidRank(f"rank {k!r} outside [0, {f.full_rank}]")
    return float(np.sqrt(np.sum(f.sigma[int(k):] ** 2)))


def layer_speedup(m, n, k):
    """Theoretical speedup of replacing an m x n product with a rank-k pair"""
    if not (_is_int(m) and _is_int(n)) or m < 1 or n < 1:
        raise InvalidRank(f"layer shape must be positive integers, got ({m!r}, {n!r})")
    if not _is_int(k) or not (1 <= k <= min(m, n)):
        raise InvalidRank(f"rank {k!r} outside [1, {min(m, n)}] for a {m}x{n} layer")
    return (m * n) / (k * (m + n))
