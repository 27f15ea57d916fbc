"""ADMM detector over the box relaxation of a QAM alphabet.

Each received vector ``y`` is decoded by solving

    minimize_s  1/2 ||y - sqrt(rho) H s||^2   s.t.  s in box^K

through the splitting ``u = s``. One iteration performs

    s <- (rho H^H H + beta I)^{-1} (sqrt(rho) H^H y + beta u - beta mu)
    u <- clamp(s + mu)
    mu <- mu - alpha (u - s)

and the loop stops once the augmented Lagrangian

    L = 1/2 ||y - sqrt(rho) H s||^2 + beta/2 ||u - s - mu||^2

changes by at most ``epsilon`` between iterations. The final ``s`` is
sliced to the nearest constellation point.

All vector arguments accept a single vector of length ``K`` or a stack of
shape ``(Z, K)``; the stacked path is what the image pipeline uses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .channel import ChannelRealization, LinkParams
from .constellation import ConstellationSpec, in_polytope, project_to_polytope, slice_array
from .errors import (
    ConfigurationError,
    ContractViolationError,
    DivergenceError,
    SearchSpaceError,
    ShapeError,
)

ML_MAX_CANDIDATES = 10**6


@dataclass(frozen=True)
class AdmmConfig:
    beta: float = 1.26
    alpha: float = 1.62
    epsilon: float = 1e-4
    max_iterations: int = 50

    def __post_init__(self):
        for name in ("beta", "alpha", "epsilon"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigurationError(f"{name} must be > 0, got {value!r}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ConfigurationError(
                f"max_iterations must be an integer >= 1, got {self.max_iterations!r}"
            )


@dataclass
class AdmmState:
    """Iterates of one detector run plus the Lagrangian after every step."""

    s: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    iteration: int = 0
    lagrangian_history: list[float] = field(default_factory=list)


def _hmat(h) -> np.ndarray:
    return h.h if isinstance(h, ChannelRealization) else np.asarray(h)


def _apply_h(hm: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``H s`` for one matrix or a per-row stack, vectors as rows."""
    if hm.ndim == 2:
        return s @ hm.T
    return np.einsum("zmk,zk->zm", hm, s)


def _apply_hh(hm: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``H^H y`` with vectors as rows."""
    if hm.ndim == 2:
        return y @ hm.conj()
    return np.einsum("zmk,zm->zk", hm.conj(), y)


@dataclass(frozen=True)
class NormalEquationFactor:
    """Cholesky factor of ``rho H^H H + beta I`` plus the cached ``sqrt(rho) H^H``.

    With block fading there is a single ``K x K`` factor shared by every
    vector. A ``(Z, M, K)`` channel stack yields a stack of matrices that
    are solved with a batched dense solver instead.
    """

    matrix: np.ndarray
    sqrt_rho_hh: np.ndarray
    rho: float
    beta: float
    cho: tuple | None = None

    @property
    def k(self) -> int:
        return self.matrix.shape[-1]

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=complex)
        if self.cho is not None:
            if b.ndim == 1:
                return cho_solve(self.cho, b)
            return cho_solve(self.cho, b.T).T
        return np.linalg.solve(self.matrix, b[..., None])[..., 0]

    def matched(self, y: np.ndarray) -> np.ndarray:
        """``sqrt(rho) H^H y`` for one vector or a stack of rows."""
        y = np.asarray(y, dtype=complex)
        if self.sqrt_rho_hh.ndim == 2:
            return y @ self.sqrt_rho_hh.T
        return np.einsum("zkm,zm->zk", self.sqrt_rho_hh, y)


def precompute_factor(h, rho: float, beta: float) -> NormalEquationFactor:
    if not beta > 0:
        raise ConfigurationError(f"beta must be > 0, got {beta!r}")
    if rho < 0:
        raise ConfigurationError(f"rho must be >= 0, got {rho!r}")
    hm = _hmat(h)
    hh = np.conj(np.swapaxes(hm, -1, -2))
    k = hm.shape[-1]
    matrix = rho * (hh @ hm) + beta * np.eye(k)
    sqrt_rho_hh = np.sqrt(rho) * hh
    if hm.ndim == 2:
        try:
            cho = cho_factor(matrix, lower=True)
        except LinAlgError as exc:  # pragma: no cover - impossible for beta > 0
            raise ArithmeticError(f"normal-equation factorization failed: {exc}") from exc
        return NormalEquationFactor(matrix, sqrt_rho_hh, float(rho), float(beta), cho)
    return NormalEquationFactor(matrix, sqrt_rho_hh, float(rho), float(beta))


def s_update(
    factor: NormalEquationFactor,
    y: np.ndarray,
    u_prev: np.ndarray,
    mu_prev: np.ndarray,
    beta: float,
) -> np.ndarray:
    """Closed-form minimizer of the quadratic ``s`` sub-problem."""
    u_prev = np.asarray(u_prev, dtype=complex)
    mu_prev = np.asarray(mu_prev, dtype=complex)
    if u_prev.shape != mu_prev.shape or u_prev.shape[-1] != factor.k:
        raise ShapeError(
            f"u {u_prev.shape} and mu {mu_prev.shape} must match and have length K={factor.k}"
        )
    return factor.solve(factor.matched(y) + beta * (u_prev - mu_prev))


def u_update(s_cur: np.ndarray, mu_prev: np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    s_cur = np.asarray(s_cur, dtype=complex)
    mu_prev = np.asarray(mu_prev, dtype=complex)
    if s_cur.shape != mu_prev.shape:
        raise ShapeError(f"s {s_cur.shape} and mu {mu_prev.shape} differ in shape")
    return np.asarray(project_to_polytope(s_cur + mu_prev, spec))


def mu_update(mu_prev: np.ndarray, u_cur: np.ndarray, s_cur: np.ndarray, alpha: float) -> np.ndarray:
    """Dual step ``mu - alpha (u - s)``."""
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha!r}")
    mu_prev = np.asarray(mu_prev, dtype=complex)
    u_cur = np.asarray(u_cur, dtype=complex)
    s_cur = np.asarray(s_cur, dtype=complex)
    if not (mu_prev.shape == u_cur.shape == s_cur.shape):
        raise ShapeError(f"shape mismatch: mu {mu_prev.shape}, u {u_cur.shape}, s {s_cur.shape}")
    return mu_prev - alpha * (u_cur - s_cur)


def _lagrangian_rows(s, u, mu, y, hm, rho, beta) -> np.ndarray:
    r = y - np.sqrt(rho) * _apply_h(hm, s)
    p = u - s - mu
    return 0.5 * np.sum(np.abs(r) ** 2, axis=-1) + 0.5 * beta * np.sum(np.abs(p) ** 2, axis=-1)


def lagrangian(s, u, mu, y, h, rho: float, beta: float, spec: ConstellationSpec | None = None):
    """Augmented Lagrangian; the indicator term is zero because ``u`` must be feasible.

    Pass ``spec`` to have feasibility of ``u`` checked; an infeasible ``u``
    would make the indicator infinite and raises instead.
    """
    s, u, mu, y = (np.asarray(a, dtype=complex) for a in (s, u, mu, y))
    if spec is not None and not in_polytope(u, spec):
        raise ContractViolationError("u lies outside the relaxation box; indicator is infinite")
    single = s.ndim == 1
    if single:
        s, u, mu, y = s[None], u[None], mu[None], y[None]
    out = _lagrangian_rows(s, u, mu, y, _hmat(h), rho, beta)
    return float(out[0]) if single else out


@dataclass
class DetectionResult:
    """Outcome of detecting one vector."""

    symbols: np.ndarray
    labels: np.ndarray
    trace: np.ndarray
    iterations: int
    state: AdmmState | None = None


@dataclass
class BatchDetection:
    """Outcome of detecting ``Z`` vectors.

    ``traces[z, n]`` is the Lagrangian after iteration ``n`` (column 0 is
    the initial point) and is NaN past ``iterations[z]``.
    """

    symbols: np.ndarray
    labels: np.ndarray
    iterations: np.ndarray
    traces: np.ndarray
    relaxed: np.ndarray
    u: np.ndarray
    mu: np.ndarray

    def trace(self, z: int) -> np.ndarray:
        return self.traces[z, : self.iterations[z] + 1]


def detect_vectors(
    y: np.ndarray,
    h,
    factor: NormalEquationFactor,
    params: LinkParams,
    config: AdmmConfig,
    spec: ConstellationSpec,
) -> BatchDetection:
    """Run the detector independently on each row of ``y`` (shape ``(Z, M)``).

    Rows iterate in lock-step; a row that meets the stopping rule is frozen
    and no longer updated, so each row follows the same iterates a
    single-vector run would (up to floating-point reduction order).
    """
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    hm = _hmat(h)
    z_count = y.shape[0]
    if y.shape[1] != hm.shape[-2]:
        raise ShapeError(f"received vectors have length {y.shape[1]}, channel has M={hm.shape[-2]}")
    if hm.ndim == 3 and hm.shape[0] != z_count:
        raise ShapeError(f"{hm.shape[0]} channel matrices for {z_count} vectors")
    if not np.isclose(factor.rho, params.rho) or factor.beta != config.beta:
        raise ConfigurationError("factor was built for a different rho or beta")

    rho, beta, alpha = params.rho, config.beta, config.alpha
    matched = factor.matched(y)
    s = _apply_hh(hm, y)
    u = np.asarray(project_to_polytope(s, spec))
    mu = np.zeros_like(s)
    traces = np.full((z_count, config.max_iterations + 1), np.nan)
    traces[:, 0] = _lagrangian_rows(s, u, mu, y, hm, rho, beta)
    iterations = np.zeros(z_count, dtype=np.int64)
    if not np.all(np.isfinite(traces[:, 0])):
        raise DivergenceError(0)

    active = np.arange(z_count)
    for n in range(1, config.max_iterations + 1):
        if active.size == 0:
            break
        ha = hm if hm.ndim == 2 else hm[active]
        ma, ua, mua, ya = matched[active], u[active], mu[active], y[active]
        if factor.cho is not None:
            sa = factor.solve(ma + beta * (ua - mua))
        else:
            sa = np.linalg.solve(factor.matrix[active], (ma + beta * (ua - mua))[..., None])[..., 0]
        ua = np.asarray(project_to_polytope(sa + mua, spec))
        mua = mua - alpha * (ua - sa)
        lag = _lagrangian_rows(sa, ua, mua, ya, ha, rho, beta)

        bad = ~(np.isfinite(lag) & np.all(np.isfinite(sa), axis=1) & np.all(np.isfinite(mua), axis=1))
        if np.any(bad):
            z_bad = int(active[np.flatnonzero(bad)[0]])
            raise DivergenceError(n, f"non-finite ADMM iterate at iteration {n} (vector {z_bad})")
        if not in_polytope(ua, spec):  # pragma: no cover - guaranteed by the clamp
            raise ContractViolationError(f"u left the relaxation box at iteration {n}")

        s[active], u[active], mu[active] = sa, ua, mua
        traces[active, n] = lag
        iterations[active] = n
        done = np.abs(traces[active, n - 1] - lag) <= config.epsilon
        active = active[~done]

    labels, symbols = slice_array(s, spec)
    return BatchDetection(
        symbols=symbols,
        labels=labels,
        iterations=iterations,
        traces=traces,
        relaxed=s,
        u=u,
        mu=mu,
    )


def detect_vector(
    y: np.ndarray,
    h,
    factor: NormalEquationFactor,
    params: LinkParams,
    config: AdmmConfig,
    spec: ConstellationSpec,
) -> DetectionResult:
    y = np.asarray(y, dtype=complex)
    if y.ndim != 1:
        raise ShapeError(f"expected one received vector, got shape {y.shape}")
    batch = detect_vectors(y[None], h, factor, params, config, spec)
    n = int(batch.iterations[0])
    trace = batch.traces[0, : n + 1].copy()
    state = AdmmState(
        s=batch.relaxed[0],
        u=batch.u[0],
        mu=batch.mu[0],
        iteration=n,
        lagrangian_history=trace.tolist(),
    )
    return DetectionResult(
        symbols=batch.symbols[0], labels=batch.labels[0], trace=trace, iterations=n, state=state
    )


def ml_oracle(
    y: np.ndarray,
    h,
    rho: float,
    spec: ConstellationSpec,
    max_candidates: int = ML_MAX_CANDIDATES,
    chunk: int = 1 << 15,
) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive maximum-likelihood search over all ``Q**K`` symbol vectors.

    Candidates are enumerated with the first antenna as the most
    significant digit; among equal residuals the earliest candidate wins.
    """
    hm = _hmat(h)
    y = np.asarray(y, dtype=complex)
    q, k = spec.order, hm.shape[1]
    total = q**k
    if total > max_candidates:
        raise SearchSpaceError(f"{q}^{k} = {total} candidates exceeds the limit {max_candidates}")
    best_cost, best_idx = np.inf, -1
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        cand = spec.points[candidate_labels(idx, q, k)]
        cost = np.sum(np.abs(y - np.sqrt(rho) * (cand @ hm.T)) ** 2, axis=1)
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost, best_idx = cost[j], int(idx[j])
    labels = candidate_labels(np.array([best_idx]), q, k)[0]
    return spec.points[labels], labels


def candidate_labels(index: np.ndarray, q: int, k: int) -> np.ndarray:
    """Label vectors for candidate numbers ``index`` (base-``q`` digits, first antenna most significant)."""
    weights = q ** np.arange(k - 1, -1, -1, dtype=np.int64)
    return (np.asarray(index, dtype=np.int64)[:, None] // weights) % q


def write_trace_csv(batch: BatchDetection, path: str | Path) -> None:
    """Per-vector traces as ``vector_index,iteration,lagrangian_value`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vector_index", "iteration", "lagrangian_value"])
        for z in range(batch.traces.shape[0]):
            for n in range(int(batch.iterations[z]) + 1):
                w.writerow([z, n, repr(float(batch.traces[z, n]))])
