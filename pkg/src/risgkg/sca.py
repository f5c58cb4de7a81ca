"""Passive-RIS max-min SNR beamforming by successive convex approximation.

Each iteration replaces the signal powers ``|g_k . v|^2`` by their tangent
minorants at the current point and solves the resulting SOCP (Clarabel via
:func:`risgkg.conic.solve_qcqp`).  Work happens on ``z = [c, Re v, Im v]``.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, complex_normal, rng_for
from .conic import ConvexQuadraticProgram, MagnitudeBound, QuadConstraint, Status, solve_qcqp
from .system import (DerivedMatrices, PilotConfig, build_derived_matrices,
                     effective_noise_variance_pris, snr_all, worst_ser_db)


class InitStrategy(str, enum.Enum):
    ZERO = "zero"
    RANDOM_FEASIBLE = "random-feasible"
    SCALED_MATCHED = "scaled-matched"


@dataclass(frozen=True)
class ScaSettings:
    max_iterations: int = 50
    convergence_tol: float = 1e-4
    ser_th_db: float = 15.0
    init_strategy: InitStrategy = InitStrategy.SCALED_MATCHED
    seed: int = 0  # only used by random-feasible init

    def __post_init__(self):
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if math.isnan(self.ser_th_db) or self.ser_th_db == math.inf:
            raise ValueError("ser_th_db must be finite (or -inf to drop SER constraints)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        object.__setattr__(self, "init_strategy", InitStrategy(self.init_strategy))

    @property
    def ser_th(self) -> float:
        return 10.0 ** (self.ser_th_db / 10.0)


@dataclass
class ScaTrace:
    objective: list = field(default_factory=list)  # true min-SNR of the accepted iterate
    subproblem_c: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    status: str = "pending"
    restarts: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "c", "subproblem_status", "max_residual"])
            for t, (c, s, r) in enumerate(zip(self.objective, self.statuses, self.residuals)):
                w.writerow([t, repr(float(c)), s, repr(float(r))])


def _lift_rows(g: np.ndarray) -> np.ndarray:
    """Real ``(2, 2N)`` map sending ``[Re v, Im v]`` to ``[Re g.v, Im g.v]``."""
    return np.vstack([np.concatenate([g.real, -g.imag]), np.concatenate([g.imag, g.real])])


def _to_real(v):
    return np.concatenate([v.real, v.imag])


def _to_complex(r):
    n = r.shape[0] // 2
    return r[:n] + 1j * r[n:]


def linearized_signal(v_t, sigma_ark, v) -> float:
    """Tangent minorant of ``v^H S v`` at ``v_t`` evaluated at ``v``."""
    v_t = np.asarray(v_t, dtype=complex)
    v = np.asarray(v, dtype=complex)
    S = np.asarray(sigma_ark)
    base = float(np.real(v_t.conj() @ S @ v_t))
    return base + 2.0 * float(np.real(v_t.conj() @ S @ (v - v_t)))


def _subproblem(v_t, derived: DerivedMatrices, noise_vars, ser_th: float):
    N = derived.n_elements
    K = derived.n_users
    zt = _to_real(np.asarray(v_t, dtype=complex))
    P = [_lift_rows(derived.g[k]) for k in range(K)]
    grad = [2.0 * Pk.T @ (Pk @ zt) for Pk in P]
    base = [float(np.sum((Pk @ zt) ** 2)) for Pk in P]
    dim = 1 + 2 * N
    quad = []
    for k in range(K):
        a = np.concatenate([[-noise_vars[k]], grad[k]])
        quad.append(QuadConstraint(np.zeros((0, dim)), a, -base[k]))
    if ser_th > 0:
        for k, i in derived.pairs:
            Dk = np.hstack([np.zeros((2, 1)), P[k] - P[i]])
            a = np.concatenate([[0.0], grad[k] / ser_th])
            quad.append(QuadConstraint(Dk, a, -base[k] / ser_th, scale=max(base[k] / ser_th, 1e-12)))
    bounds = [MagnitudeBound((1 + j, 1 + N + j), 1.0) for j in range(N)]
    obj = np.zeros(dim)
    obj[0] = 1.0
    return ConvexQuadraticProgram(obj, quad, bounds)


def sca_subproblem(v_t, derived: DerivedMatrices, noise_vars, settings: ScaSettings):
    """One convexified step; returns ``(v_next, c_next, outcome)``."""
    v_t = np.asarray(v_t, dtype=complex)
    if np.any(np.abs(v_t) > 1.0 + 1e-6):
        raise ValueError("v_t violates the unit-modulus bound")
    ser = settings.ser_th if np.isfinite(settings.ser_th_db) else 0.0
    out = solve_qcqp(_subproblem(v_t, derived, np.asarray(noise_vars, float), ser))
    if not out.ok:
        return None, math.nan, out
    v = _to_complex(out.x[1:])
    mag = np.abs(v)
    v = np.where(mag > 1.0, v / np.maximum(mag, 1e-300), v)  # clip solver round-off
    # the quadratic forms live in x = conj(v)
    c = min(linearized_signal(v_t.conj(), derived.sigma_ark[k], v.conj()) / noise_vars[k]
            for k in range(derived.n_users))
    return v, c, out


def _null_space(derived: DerivedMatrices) -> np.ndarray:
    diffs = derived.g[1:] - derived.g[0]
    if diffs.shape[0] == 0:
        return np.eye(derived.n_elements, dtype=complex)
    _, s, vh = np.linalg.svd(diffs)
    tol = max(diffs.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)
    rank = int(np.sum(s > tol))
    return vh[rank:].conj().T


def _to_box(v):
    m = np.abs(v).max()
    return v / m if m > 0 else v


def initial_point(derived: DerivedMatrices, strategy: InitStrategy, seed=0) -> np.ndarray:
    """Starting beamformer for the SCA loop.

    ``scaled-matched`` co-phases UT 1's cascaded channel, projects onto the
    subspace where every UT sees the same aggregate and rescales into the
    box. ``random-feasible`` does the same with a random direction. When no
    such subspace exists (``K > N``) the least-squares aligned vector is used.
    """
    N = derived.n_elements
    strategy = InitStrategy(strategy)
    if strategy is InitStrategy.ZERO:
        return np.zeros(N, dtype=complex)
    if strategy is InitStrategy.SCALED_MATCHED:
        d = np.exp(-1j * np.angle(derived.g[0])) / np.sqrt(N)
    else:
        d = complex_normal(rng_for(seed), N)
    B = _null_space(derived)
    if B.shape[1] > 0:
        v = B @ (B.conj().T @ d)
        if np.linalg.norm(v) < 1e-12 * np.linalg.norm(d):
            v = B[:, 0]
        return _to_box(v)
    # K > N: least-squares alignment with UT 1's aggregate pinned to 1
    A = np.vstack([derived.g[1:] - derived.g[0], derived.g[0][None, :]])
    rhs = np.zeros(A.shape[0], dtype=complex)
    rhs[-1] = 1.0
    v, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return _to_box(v)


def _record(trace: ScaTrace, c, c_sub, v, status, residual):
    trace.objective.append(c)
    trace.subproblem_c.append(c_sub)
    trace.iterates.append(v.copy())
    trace.statuses.append(status)
    trace.residuals.append(residual)


def solve_pris(ch: ChannelSet, pilot: PilotConfig, settings: ScaSettings = ScaSettings()):
    """Run the SCA loop; returns ``(v_star, trace)``.

    ``trace.status`` is ``converged``, ``max-iterations``, ``solver-<status>``
    or ``failed``.
    ``v_star`` is ``None`` only on failure.
    """
    if ch.n_users < 2:
        raise ValueError("solve_pris needs K >= 2")
    derived = build_derived_matrices(ch)
    sig2 = effective_noise_variance_pris(ch, pilot)
    trace = ScaTrace()
    ser_ok = lambda v: (not np.isfinite(settings.ser_th_db)
                        or worst_ser_db(v, ch) >= settings.ser_th_db - 0.1)

    v = initial_point(derived, settings.init_strategy, settings.seed)
    best = float(np.min(snr_all(v, ch, pilot)))
    _record(trace, best, best, v, "init", 0.0)

    calm = 0
    for _ in range(settings.max_iterations):
        if not np.any(v):
            # every tangent vanishes at v = 0, so the subproblem is capped at c = 0
            # and the loop cannot leave the origin; restart from a random feasible point
            if trace.restarts:
                break
            trace.restarts += 1
            v = initial_point(derived, InitStrategy.RANDOM_FEASIBLE, settings.seed)
            best = float(np.min(snr_all(v, ch, pilot)))
            _record(trace, best, 0.0, v, "restart", 0.0)
            continue
        v_new, c_new, out = sca_subproblem(v, derived, sig2, settings)
        if v_new is None:
            _record(trace, best, math.nan, v, out.status.value, out.residual)
            trace.status = "solver-" + out.status.value
            break
        true_c = float(np.min(snr_all(v_new, ch, pilot)))
        improved = true_c >= best and ser_ok(v_new)
        if improved:
            change = (true_c - best) / max(abs(best), 1e-300)
            v, best = v_new, true_c
        else:
            change = 0.0
        _record(trace, best, c_new, v, out.status.value if improved else "rejected", out.residual)
        calm = calm + 1 if change < settings.convergence_tol else 0
        if calm >= 2:
            trace.status = "converged"
            break

    feasible = best > 0 and ser_ok(v)
    if not feasible:
        trace.status = "failed"
        return None, trace
    if trace.status == "pending":
        trace.status = "max-iterations"
    if trace.status != "converged":
        warnings.warn(f"SCA stopped early ({trace.status}); returning best feasible iterate",
                      RuntimeWarning)
    return v, trace
