"""Active-RIS max-min SNR beamforming: bisection over ``c`` with SDR and Gaussian randomization.

At a target ``c`` the rank-one lifting ``W = w w^H`` is relaxed to ``W >= 0``
and the relaxation is solved as a max-margin SDP: maximize ``tau`` subject to

    c a_F tr(S_k W) + a_Nk tau <= tr(Sigma_k W)         for every UT k
    tr(D_ki W) <= tr(Sigma_k W) / SER_th                for every ordered pair
    P_a tr(diag|h_ar|^2 W) + s_F tr(W)/kappa_ar <= P_R / kappa_ar
    W_ii <= w_max^2

The relaxation is feasible at ``c`` iff ``tau* >= c``, and because the
left-hand sides only grow with ``c``, ``tau*(c_t)`` is also a valid upper
bound on every feasible ``c >= c_t``.  A step is accepted only when a
rank-one candidate drawn from ``W`` meets every constraint with min-SNR
``>= c``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, complex_normal, rng_for
from .conic import FEAS_TOL, SemidefiniteProgram, Status, TraceConstraint, solve_sdp
from .sca import InitStrategy, initial_point
from .system import (ArisBudget, DerivedMatrices, PilotConfig, alpha_f, alpha_n,
                     build_derived_matrices)

SER_ACCEPT_SLACK_DB = 0.05


@dataclass(frozen=True)
class BisectionSettings:
    c_max_init: float | None = None  # None: init_c_max
    epsilon: float | None = None  # None: max(1e-3, 1e-3 * c_max_init)
    gr_candidates: int = 1000
    max_steps: int = 40
    seed: int = 0
    warm_start: bool = True
    polish: bool = True

    def __post_init__(self):
        if self.c_max_init is not None and not self.c_max_init > 0:
            raise ValueError("c_max_init must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.gr_candidates < 1:
            raise ValueError("gr_candidates must be >= 1")


@dataclass
class BisectionStep:
    c_mid: float
    relaxed_feasible: bool
    accepted: bool
    rank_ratio: float
    feasible_candidates: int
    c_min: float
    c_max: float
    solver_status: str


@dataclass
class SdrResult:
    status: str  # converged | max-steps | failed
    w_opt: np.ndarray | None
    c_achieved: float
    c_min: float
    c_max: float
    epsilon: float
    steps: list = field(default_factory=list)

    @property
    def rank_ratios(self) -> list:
        return [s.rank_ratio for s in self.steps if s.accepted]

    @property
    def rank_ratio(self) -> float:
        r = self.rank_ratios
        return r[-1] if r else math.nan

    @property
    def feasible_candidates(self) -> list:
        return [s.feasible_candidates for s in self.steps]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "c_mid", "feasible", "rank_ratio", "feasible_candidates"])
            for t, s in enumerate(self.steps):
                w.writerow([t, repr(s.c_mid), int(s.accepted), repr(s.rank_ratio),
                            s.feasible_candidates])


@dataclass(frozen=True)
class ArisProblem:
    """Everything the relaxation and the candidate checks need, in one place."""
    g: np.ndarray  # (K, N) cascaded channels, aggregate_k = g_k . w
    h_kr_pow: np.ndarray  # (K, N) |h_kr|^2
    h_ar_pow: np.ndarray  # (N,)
    a_f: float
    a_n: np.ndarray  # (K,)
    p_a: float
    kappa_ar: float
    budget: ArisBudget
    ser_th_db: float

    @classmethod
    def build(cls, ch: ChannelSet, pilot: PilotConfig, budget: ArisBudget, ser_th_db: float):
        d = build_derived_matrices(ch)
        return cls(d.g, np.abs(ch.h_kr) ** 2, np.abs(ch.h_ar) ** 2, alpha_f(ch, pilot, budget),
                   alpha_n(ch, pilot), pilot.p_a, ch.link.kappa_ar, budget, float(ser_th_db))

    @property
    def n_users(self):
        return self.g.shape[0]

    @property
    def n_elements(self):
        return self.g.shape[1]

    def power(self, w) -> tuple[np.ndarray, float]:
        """Scaled total output power of each row of ``w`` and the budget."""
        p2 = np.abs(np.atleast_2d(w)) ** 2
        lhs = self.p_a * p2 @ self.h_ar_pow + self.budget.sigma_f2 * p2.sum(axis=1) / self.kappa_ar
        return lhs, self.budget.p_r_max / self.kappa_ar

    def power_redundant(self) -> bool:
        w2 = self.budget.w_max ** 2
        lhs = w2 * (self.p_a * self.h_ar_pow.sum()
                    + self.budget.sigma_f2 * self.n_elements / self.kappa_ar)
        return lhs <= self.budget.p_r_max / self.kappa_ar

    def min_snr(self, w) -> np.ndarray:
        w = np.atleast_2d(w)
        sig = np.abs(w @ self.g.T) ** 2
        noise = self.a_f * (np.abs(w) ** 2) @ self.h_kr_pow.T + self.a_n
        return (sig / noise).min(axis=1)

    def worst_ser_db(self, w) -> np.ndarray:
        a = np.atleast_2d(w) @ self.g.T
        num = np.abs(a) ** 2
        K = self.n_users
        worst = np.full(a.shape[0], np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            for k in range(K):
                for i in range(K):
                    if k != i:
                        s = 10 * np.log10(num[:, k] / np.abs(a[:, k] - a[:, i]) ** 2)
                        worst = np.fmin(worst, np.where(np.isnan(s), -np.inf, s))
        return worst


def init_c_max(ch: ChannelSet, budget: ArisBudget, pilot: PilotConfig) -> float:
    """Min over UTs of the SNR with every element at ``w_max`` and perfect co-phasing."""
    g = build_derived_matrices(ch).g
    bound = (budget.w_max * np.abs(g).sum(axis=1)) ** 2 / alpha_n(ch, pilot)
    return float(bound.min())


def _relaxation(c: float, prob: ArisProblem, tau_scale: float = 1.0) -> SemidefiniteProgram:
    """Max-margin SDP over ``W' = W / w_max^2``; the scalar variable is ``tau / tau_scale``."""
    K = prob.n_users
    w2 = prob.budget.w_max ** 2
    S = 10.0 ** (prob.ser_th_db / 10.0)
    u = prob.g.conj().T  # column k is the factor of Sigma_k in the w-variable
    cons = []
    for k in range(K):
        cons.append(TraceConstraint(0.0, diag=c * prob.a_f * prob.h_kr_pow[k],
                                    factors=u[:, [k]], weights=np.array([-1.0]),
                                    scalar_coef=prob.a_n[k] * tau_scale / w2))
    for k in range(K):
        for i in range(K):
            if k != i:
                d = (prob.g[k] - prob.g[i]).conj()[:, None]
                cons.append(TraceConstraint(0.0, factors=np.hstack([d, u[:, [k]]]),
                                            weights=np.array([1.0, -1.0 / S])))
    if not prob.power_redundant():
        cons.append(TraceConstraint(prob.budget.p_r_max / (prob.kappa_ar * w2),
                                    diag=prob.p_a * prob.h_ar_pow
                                    + prob.budget.sigma_f2 / prob.kappa_ar))
    N = prob.n_elements
    for i in range(N):
        e = np.zeros(N)
        e[i] = 1.0
        cons.append(TraceConstraint(1.0, diag=e))
    return SemidefiniteProgram(N, cons, None, scalar_objective=1.0, use_scalar=True)


def sdr_feasibility(c: float, ch: ChannelSet, budget: ArisBudget, pilot: PilotConfig,
                    ser_th_db: float, prob: ArisProblem | None = None):
    """Solve the relaxation at ``c``; returns ``(feasible, W, tau, outcome)``.

    ``W`` is in physical units (entries up to ``w_max^2``). ``feasible`` is
    ``None`` when the solver did not reach optimality, unless the point it
    stalled at is primal feasible with ``tau >= c``: that point is a witness.
    """
    if c < 0:
        raise ValueError("c must be nonnegative")
    prob = prob or ArisProblem.build(ch, pilot, budget, ser_th_db)
    # keep the margin variable O(1): the co-phasing bound is the natural unit
    tau_scale = init_c_max(ch, budget, pilot)
    out = solve_sdp(_relaxation(c, prob, tau_scale))
    tau = out.info.get("scalar", math.nan) * tau_scale
    W = out.x * budget.w_max ** 2 if out.x is not None else None
    if out.status is not Status.OPTIMAL:
        witness = W is not None and out.residual <= FEAS_TOL and tau >= c
        return (True if witness else None), W, tau, out
    return tau >= c * (1.0 - 1e-7), W, tau, out


def _rank_ratio(lam: np.ndarray) -> float:
    top, second = lam[-1], lam[-2] if lam.size > 1 else 0.0
    if top <= 0:
        return math.nan
    return math.inf if second <= 1e-15 * top else float(top / second)


POLISH_STEPS = np.linspace(0.05, 1.0, 20)


def _finish(prob: ArisProblem, Z: np.ndarray) -> np.ndarray:
    """Max-normalize to ``w_max`` and scale down onto the power budget."""
    mag = np.abs(Z).max(axis=-1, keepdims=True)
    Z = prob.budget.w_max * Z / np.where(mag > 0, mag, 1.0)
    lhs, rhs = prob.power(Z.reshape(-1, Z.shape[-1]))
    return Z * np.sqrt(np.minimum(1.0, rhs / lhs)).reshape(Z.shape[:-1] + (1,))


def _polish(prob: ArisProblem, Z: np.ndarray, anchor: np.ndarray):
    """Blend SER-violating candidates toward the aligned ``anchor``.

    The anchor is co-phased with each candidate's first aggregate, so the
    blend shrinks every pairwise difference by ``1 - t`` while keeping the
    common part. Returns the best feasible blend per row (or NaN SNR).
    """
    a = Z @ prob.g.T
    a0 = np.mean(anchor @ prob.g.T)
    rot = np.exp(1j * (np.angle(a[:, 0]) - np.angle(a0)))
    A = anchor[None, :] * rot[:, None]
    T = POLISH_STEPS[:, None, None]
    blends = _finish(prob, (1 - T) * Z[None] + T * A[None])
    flat = blends.reshape(-1, Z.shape[1])
    ok = prob.worst_ser_db(flat) >= prob.ser_th_db - SER_ACCEPT_SLACK_DB
    snr = np.where(ok, prob.min_snr(flat), -np.inf).reshape(len(POLISH_STEPS), -1)
    pick = np.argmax(snr, axis=0)
    cols = np.arange(Z.shape[0])
    return blends[pick, cols], snr[pick, cols]


def gaussian_randomization(W: np.ndarray, c: float, prob: ArisProblem, count: int = 1000,
                           seed=0, anchor: np.ndarray | None = None):
    """Best rank-one candidate from ``W``; returns ``(w or None, min_snr, n_feasible)``.

    Candidate 0 is the scaled principal eigenvector; the rest are
    ``w_max z / max|z|`` with ``z = U L^(1/2) zeta``. Candidates over the
    power budget are scaled down onto it. With an ``anchor`` (an aligned
    beamformer), SER-violating candidates are polished toward it before
    being discarded. ``n_feasible`` counts candidates feasible without polish.
    """
    W = 0.5 * (W + W.conj().T)
    lam, U = np.linalg.eigh(W)
    if lam[-1] <= 0:
        return None, math.nan, 0
    F = U * np.sqrt(np.clip(lam, 0, None))
    zeta = complex_normal(rng_for(seed), (count, W.shape[0]))
    Z = _finish(prob, np.vstack([U[:, -1][None, :], zeta @ F.T]))
    snr = prob.min_snr(Z)
    ok = prob.worst_ser_db(Z) >= prob.ser_th_db - SER_ACCEPT_SLACK_DB
    n_ok = int(ok.sum())
    snr = np.where(ok, snr, -np.inf)
    if anchor is not None and not ok.all():
        bad = np.flatnonzero(~ok)
        Zp, sp = _polish(prob, Z[bad], anchor)
        Z = Z.copy()
        Z[bad], snr[bad] = Zp, sp
    idx = int(np.argmax(snr))
    if not np.isfinite(snr[idx]):
        return None, math.nan, 0
    return Z[idx].copy(), float(snr[idx]), n_ok


def _aligned(prob: ArisProblem) -> np.ndarray:
    d = DerivedMatrices(prob.g, np.zeros_like(prob.g), np.zeros(prob.n_elements))
    return _finish(prob, initial_point(d, InitStrategy.SCALED_MATCHED)[None, :])[0]


def _warm_start(prob: ArisProblem, w: np.ndarray):
    """The aligned beamformer is a feasible witness for ``c_min`` when it meets SER."""
    if prob.worst_ser_db(w)[0] >= prob.ser_th_db - SER_ACCEPT_SLACK_DB:
        return w, float(prob.min_snr(w)[0])
    return None, 0.0


def solve_aris(ch: ChannelSet, pilot: PilotConfig, budget: ArisBudget,
               settings: BisectionSettings = BisectionSettings(), ser_th_db: float = 15.0) -> SdrResult:
    if ch.n_users < 2:
        raise ValueError("solve_aris needs K >= 2")
    prob = ArisProblem.build(ch, pilot, budget, ser_th_db)
    c_max = settings.c_max_init if settings.c_max_init is not None else init_c_max(ch, budget, pilot)
    eps = settings.epsilon if settings.epsilon is not None else max(1e-3, 1e-3 * c_max)
    anchor = _aligned(prob)
    w_best, c_min = _warm_start(prob, anchor) if settings.warm_start else (None, 0.0)
    steps = []

    def attempt(c):
        feasible, W, tau, out = sdr_feasibility(c, ch, budget, pilot, ser_th_db, prob)
        if feasible is None:  # numerical trouble: retry once at a perturbed target
            feasible, W, tau, out = sdr_feasibility(c * (1 + 1e-6) + 1e-12, ch, budget, pilot,
                                                    ser_th_db, prob)
        return feasible, W, tau, out

    first = True
    for t in range(settings.max_steps):
        if not first and c_max - c_min <= eps:
            break
        # the first relaxation is solved at c_min: its tau* tightens c_max at once
        c_t = c_min if first else 0.5 * (c_min + c_max)
        first = False
        feasible, W, tau, out = attempt(c_t)
        ratio, n_ok, accepted = math.nan, 0, False
        if feasible:
            if out.status is Status.OPTIMAL:  # a stalled witness only bounds tau* from below
                c_max = max(c_min, min(c_max, tau * (1 + 1e-6)))
            ratio = _rank_ratio(np.linalg.eigvalsh(W))
            w, snr, n_ok = gaussian_randomization(W, c_t, prob, settings.gr_candidates,
                                                  rng_for(settings.seed, t),
                                                  anchor if settings.polish else None)
            if w is not None and snr >= c_t and snr >= c_min:
                accepted = True
                w_best, c_min = w, snr
        if not accepted and c_t > c_min:
            c_max = c_t
        steps.append(BisectionStep(c_t, bool(feasible), accepted, ratio, n_ok, c_min, c_max,
                                   out.status.value))

    if w_best is None:
        return SdrResult("failed", None, math.nan, c_min, c_max, eps, steps)
    status = "converged" if c_max - c_min <= eps else "max-steps"
    c_ach = float(prob.min_snr(w_best)[0])
    return SdrResult(status, w_best, c_ach, c_min, c_max, eps, steps)
