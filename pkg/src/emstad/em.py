"""Penalized EM for the two-layer latent-variable radar mixture.

Each of the K snapshots is either pure interference (outer class 0) or
interference plus a rank-one target from one of K_theta grid angles (outer
class 1, inner angle index n). The E-step computes bin and angle posteriors
with a GIC-style penalty that discourages spurious target mass; the M-step
has closed forms for the mixing weights, the angle PMF and the shared
covariance, followed by a cyclic pass over grid angles that refits the
per-bin complex amplitudes.

All posterior arithmetic runs in the log domain: at N = 8 the Gaussian
exponents routinely underflow in linear scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .hermitian import (
    HermitianPd,
    factor_pd,
    logdet,
    quad_form,
    solve,
    solve_factored,
    whiten,
)
from .scene import AngleGrid, steering_matrix, steering_vector

LOG_PI = float(np.log(np.pi))


class DegeneratePosterior(ArithmeticError):
    """The E-step produced an undefined posterior (non-finite inputs)."""


class NoTargetMass(ArithmeticError):
    """Every bin posterior assigns exactly zero mass to the target class."""


@dataclass(frozen=True)
class EmConfig:
    """Tuning knobs for the EM iteration.

    ``rho`` scales the class-count penalty; ``delta`` is the relative
    log-likelihood stop tolerance, checked against at most ``max_iters``
    iterations. ``jitter`` is the relative diagonal loading retried once
    when an amplitude-step matrix loses positive definiteness.
    """

    rho: float = 3.0
    max_iters: int = 4
    delta: float = 1e-4
    amplitude_sweeps: int = 1
    jitter: float = 1e-10

    def __post_init__(self):
        if self.rho < 1.0:
            raise ValueError("penalty tuning rho must be >= 1")
        if self.max_iters < 1:
            raise ValueError("need at least one iteration")
        if not self.delta > 0.0:
            raise ValueError("stop tolerance must be positive")
        if self.amplitude_sweeps < 1:
            raise ValueError("need at least one amplitude sweep")


@dataclass
class Responsibilities:
    """Posterior weights from one E-step.

    ``q`` is K x 2 (interference / target class per bin); ``r`` is
    K x K_theta (angle assignment given a target). Rows of both sum to 1.
    """

    q: np.ndarray
    r: np.ndarray


@dataclass
class EmState:
    """All iterates after one EM iteration.

    ``resp`` holds the posteriors computed from the *previous* iteration's
    parameters, i.e. the ones the M-step that produced this state consumed;
    classification rules read them from the final state. ``loglik`` is the
    unpenalized mixture log-likelihood; ``objective`` is the penalized
    variant the iteration provably ascends (the class penalty folded into
    the mixture weights), tracked because the unpenalized value can keep
    drifting along penalty-flat directions.
    """

    pi: np.ndarray  # (2,) mixing probabilities
    p: np.ndarray  # (K_theta,) angle PMF
    m_hat: HermitianPd
    alpha: np.ndarray  # (K, K_theta) complex amplitudes
    resp: Responsibilities | None
    loglik: float
    iteration: int
    rel_change: float | None = None
    objective: float = np.nan
    obj_rel_change: float | None = None


def gic_penalty(n_channels: int, s: int, rho: float) -> float:
    """Exponent u(s, rho) = (N^2 + 3 s)(1 + rho)/2 of the class penalty."""
    return (n_channels * n_channels + 3 * s) * (1.0 + rho) / 2.0


def component_loglik(z, alpha: complex, theta_deg: float, m: HermitianPd) -> float:
    """Log density of one snapshot under a single mixture component.

    ``alpha = 0`` gives the interference-only log density.
    """
    z = np.asarray(z, dtype=np.complex128)
    resid = z - alpha * steering_vector(theta_deg, m.n)
    return -(m.n * LOG_PI + logdet(m) + quad_form(m, resid, resid).real)


def _log_pdfs(z, v, alpha, m: HermitianPd):
    """Batched component log densities.

    Returns ``log_f0`` (K,) for the interference class and ``log_f1``
    (K, K_theta) for each target angle, using one whitening pass.
    """
    w = whiten(m, z)
    u = whiten(m, v)
    wsq = np.einsum("ij,ij->j", w.conj(), w).real
    usq = np.einsum("ij,ij->j", u.conj(), u).real
    g = w.conj().T @ u
    maha = wsq[:, None] - 2.0 * np.real(alpha * g) + (np.abs(alpha) ** 2) * usq[None, :]
    base = -(m.n * LOG_PI + logdet(m))
    return base - wsq, base - maha


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _lse_rows(a) -> np.ndarray:
    """Row-wise log-sum-exp; columns at -inf drop out, rows never all -inf here."""
    top = a.max(axis=1)
    return top + np.log(np.exp(a - top[:, None]).sum(axis=1))


class _MixtureEval:
    """Everything derivable from one pass over the component log densities:
    the angle-marginalized target density per bin, the unpenalized and
    penalized totals, and the posteriors."""

    def __init__(self, log_f0, log_f1, pi, p, n_channels, rho):
        self.joint = log_f1 + _safe_log(p)[None, :]
        self.log_f1_mix = _lse_rows(self.joint)
        lpi = _safe_log(pi)
        a0 = lpi[0] + log_f0
        a1 = lpi[1] + self.log_f1_mix
        self.loglik = float(np.logaddexp(a0, a1).sum())
        u0 = gic_penalty(n_channels, 0, rho)
        u1 = gic_penalty(n_channels, 1, rho)
        self.objective = float(np.logaddexp(a0 - u0, a1 - u1).sum())
        self._gap = (a1 - u1) - (a0 - u0)

    def responsibilities(self) -> Responsibilities:
        r = np.exp(self.joint - self.log_f1_mix[:, None])
        q = np.column_stack([expit(-self._gap), expit(self._gap)])
        if not (np.isfinite(q).all() and np.isfinite(r).all()):
            raise DegeneratePosterior("posterior weights are not finite")
        return Responsibilities(q, r)


def _mixture_loglik(log_f0, log_f1, pi, p) -> float:
    log_f1_mix = _lse_rows(log_f1 + _safe_log(p)[None, :])
    lpi = _safe_log(pi)
    return float(np.logaddexp(lpi[0] + log_f0, lpi[1] + log_f1_mix).sum())


def penalized_log_likelihood(z, state: EmState, grid: AngleGrid, rho: float) -> float:
    """Mixture log-likelihood with the class penalty folded into the weights.

    This is the quantity every EM iteration is guaranteed not to decrease.
    """
    z = np.asarray(z, dtype=np.complex128)
    v = steering_matrix(grid, z.shape[0])
    log_f0, log_f1 = _log_pdfs(z, v, state.alpha, state.m_hat)
    return _MixtureEval(log_f0, log_f1, state.pi, state.p, z.shape[0], rho).objective


def _responsibilities(log_f0, log_f1, pi, p, n_channels, rho) -> Responsibilities:
    return _MixtureEval(log_f0, log_f1, pi, p, n_channels, rho).responsibilities()


def e_step(z, state: EmState, grid: AngleGrid, cfg: EmConfig) -> Responsibilities:
    """Bin and angle posteriors under the state's parameters, penalty included."""
    z = np.asarray(z, dtype=np.complex128)
    v = steering_matrix(grid, z.shape[0])
    log_f0, log_f1 = _log_pdfs(z, v, state.alpha, state.m_hat)
    return _responsibilities(log_f0, log_f1, state.pi, state.p, z.shape[0], cfg.rho)


def update_mixing(resp: Responsibilities) -> np.ndarray:
    """Closed-form mixing update: class masses averaged over bins."""
    return resp.q.mean(axis=0)


def update_angle_pmf(resp: Responsibilities) -> np.ndarray:
    """Closed-form angle PMF update, normalized by the total target mass."""
    q1 = resp.q[:, 1]
    total = q1.sum()
    if total <= 0.0:
        raise NoTargetMass("no target mass to renormalize the angle PMF")
    return (q1 @ resp.r) / total


def update_covariance(z, resp: Responsibilities, alpha, grid: AngleGrid) -> HermitianPd:
    """Closed-form covariance update: responsibility-weighted average of the
    raw and amplitude-corrected outer products."""
    z = np.asarray(z, dtype=np.complex128)
    n, k = z.shape
    v = steering_matrix(grid, n)
    qr = resp.q[:, 1:2] * resp.r
    acc = (z * resp.q[:, 0]) @ z.conj().T
    for j in range(grid.k_theta):
        d = z - np.outer(v[:, j], alpha[:, j])
        acc += (d * qr[:, j]) @ d.conj().T
    return HermitianPd(acc / k)


def _amplitude_sweep(z, v, q0, qr, alpha, jitter, sweeps, objective_trace=None):
    """Cyclic per-angle refit of the amplitude matrix.

    For each angle the residual accumulator is split into "all other
    components" plus the current angle's own term, the former is factored,
    and the amplitudes for that angle drop out in closed form. Later angles
    see the amplitudes already refreshed earlier in the sweep.

    Returns the new amplitudes together with the final residual accumulator,
    whose determinant the sweep descends; the accumulator divided by K is
    exactly the profile covariance update for the new amplitudes.
    ``objective_trace``, when a list, collects log det after every step.
    """
    alpha = np.array(alpha, dtype=np.complex128, copy=True)
    k_theta = v.shape[1]

    def resid_term(j):
        d = z - v[:, j, None] * alpha[:, j]
        return (d * qr[:, j]) @ d.conj().T

    r_total = (z * q0) @ z.conj().T
    for j in range(k_theta):
        r_total += resid_term(j)
    if objective_trace is not None:
        objective_trace.append(np.linalg.slogdet(r_total)[1])

    for _ in range(sweeps):
        for j in range(k_theta):
            b = r_total - resid_term(j)
            factor = factor_pd(b, jitter=jitter)
            bv = solve_factored(factor, v[:, j])
            denom = np.vdot(v[:, j], bv).real
            alpha[:, j] = (bv.conj() @ z) / denom
            r_total = b + resid_term(j)
            if objective_trace is not None:
                objective_trace.append(np.linalg.slogdet(r_total)[1])
    return alpha, r_total


def update_amplitudes(
    z, resp: Responsibilities, state: EmState, grid: AngleGrid, cfg: EmConfig
) -> np.ndarray:
    """One (configurable) cyclic sweep over grid angles in ascending order.

    Uses the simplified per-angle closed form v^H B^{-1} z_k / v^H B^{-1} v,
    which is continuous in the angle's posterior mass and therefore defined
    even for bins that currently carry none.
    """
    z = np.asarray(z, dtype=np.complex128)
    v = steering_matrix(grid, z.shape[0])
    qr = resp.q[:, 1:2] * resp.r
    alpha, _ = _amplitude_sweep(
        z, v, resp.q[:, 0], qr, state.alpha, cfg.jitter, cfg.amplitude_sweeps
    )
    return alpha


def log_likelihood(z, state: EmState, grid: AngleGrid) -> float:
    """Unpenalized mixture log-likelihood of the data under the state."""
    z = np.asarray(z, dtype=np.complex128)
    v = steering_matrix(grid, z.shape[0])
    log_f0, log_f1 = _log_pdfs(z, v, state.alpha, state.m_hat)
    return _mixture_loglik(log_f0, log_f1, state.pi, state.p)


def initial_state(z, grid: AngleGrid) -> EmState:
    """Starting point: even mixing, flat angle PMF, sample covariance, and
    adaptive-matched-filter amplitudes against it."""
    z = np.asarray(z, dtype=np.complex128)
    n, k = z.shape
    m0 = HermitianPd(z @ z.conj().T / k)
    v = steering_matrix(grid, n)
    numer = v.conj().T @ solve(m0, z)  # (K_theta, K)
    denom = np.einsum("ij,ij->j", v.conj(), solve(m0, v)).real
    alpha0 = (numer / denom[:, None]).T
    pi0 = np.array([0.5, 0.5])
    p0 = np.full(grid.k_theta, 1.0 / grid.k_theta)
    log_f0, log_f1 = _log_pdfs(z, v, alpha0, m0)
    ll = _mixture_loglik(log_f0, log_f1, pi0, p0)
    return EmState(pi0, p0, m0, alpha0, None, ll, 0, None)


def _rel_change(new: float, old: float) -> float:
    return abs(new - old) / abs(new) if new != 0.0 else np.inf


def run_em(
    z, grid: AngleGrid, cfg: EmConfig | None = None, init: EmState | None = None
) -> list[EmState]:
    """Full EM iteration; returns the trajectory of states, one per iteration.

    Each iteration takes an E-step under the previous parameters, then
    updates the mixing weights, the angle PMF, and the covariance/amplitude
    pair. The amplitude sweep descends the determinant of the residual
    accumulator and the covariance is that accumulator over K, so the pair
    is the exact profile maximizer for the new amplitudes; pairing the
    covariance with the old amplitudes instead breaks the per-update ascent
    guarantee. Stops when the relative log-likelihood change drops below
    ``cfg.delta`` or after ``cfg.max_iters`` iterations. The final state's
    ``resp`` holds the posteriors the classification rules use.
    """
    cfg = cfg if cfg is not None else EmConfig()
    z = np.ascontiguousarray(z, dtype=np.complex128)
    n = z.shape[0]
    state = init if init is not None else initial_state(z, grid)
    v = steering_matrix(grid, n)

    log_f0, log_f1 = _log_pdfs(z, v, state.alpha, state.m_hat)
    mix = _MixtureEval(log_f0, log_f1, state.pi, state.p, n, cfg.rho)
    ll_prev, obj_prev = mix.loglik, mix.objective

    trajectory: list[EmState] = []
    for iteration in range(1, cfg.max_iters + 1):
        resp = mix.responsibilities()
        pi = update_mixing(resp)
        try:
            p = update_angle_pmf(resp)
        except NoTargetMass:
            p = np.array(state.p, dtype=float, copy=True)
        qr = resp.q[:, 1:2] * resp.r
        alpha, r_total = _amplitude_sweep(
            z, v, resp.q[:, 0], qr, state.alpha, cfg.jitter, cfg.amplitude_sweeps
        )
        m_hat = HermitianPd(r_total / z.shape[1])

        log_f0, log_f1 = _log_pdfs(z, v, alpha, m_hat)
        mix = _MixtureEval(log_f0, log_f1, pi, p, n, cfg.rho)
        state = EmState(
            pi,
            p,
            m_hat,
            alpha,
            resp,
            mix.loglik,
            iteration,
            _rel_change(mix.loglik, ll_prev),
            mix.objective,
            _rel_change(mix.objective, obj_prev),
        )
        trajectory.append(state)
        ll_prev, obj_prev = mix.loglik, mix.objective
        if state.rel_change < cfg.delta:
            break
    return trajectory


def trajectory_to_json(trajectory: list[EmState]) -> list[dict]:
    """JSON-friendly per-iteration record (log-likelihood, mixing, angle PMF)."""
    return [
        {
            "iteration": s.iteration,
            "loglik": s.loglik,
            "rel_change": s.rel_change,
            "objective": s.objective,
            "obj_rel_change": s.obj_rel_change,
            "pi": [float(x) for x in s.pi],
            "p": [float(x) for x in s.p],
        }
        for s in trajectory
    ]
