"""Convex solver backend for the two problem classes the beamforming algorithms need.

* :func:`solve_qcqp` -- linear objective, convex quadratic and magnitude-bound
  constraints over a real vector, solved with Clarabel.
* :func:`solve_sdp` -- trace-linear constraints over a Hermitian PSD matrix,
  solved by a bundled primal-dual interior-point method (HKM direction,
  Mehrotra predictor-corrector) on the real embedding ``[Re -Im; Im Re]``.

Every point reported as optimal is re-checked against the original,
unscaled constraints before it is returned.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

FEAS_TOL = 1e-6
GAP_TOL = 1e-7
PSD_TOL = 1e-8


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"
    ITERATION_LIMIT = "iteration-limit"


@dataclass
class SolverOutcome:
    status: Status
    x: np.ndarray | None
    objective: float
    residual: float
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# complex <-> real lifting

def lift_vector(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=0)


def unlift_vector(r: np.ndarray) -> np.ndarray:
    n = r.shape[0] // 2
    return r[:n] + 1j * r[n:]


def embed_hermitian(A: np.ndarray) -> np.ndarray:
    """Real symmetric embedding with ``z^H A z == lift(z)^T embed(A) lift(z)``."""
    A = np.asarray(A)
    B, C = A.real, A.imag
    return np.block([[B, -C], [C, B]])


def unembed(X: np.ndarray) -> np.ndarray:
    """Hermitian matrix whose embedding is the structured part of ``X``."""
    n = X.shape[0] // 2
    re = 0.5 * (X[:n, :n] + X[n:, n:])
    im = 0.5 * (X[n:, :n] - X[:n, n:])
    W = re + 1j * im
    return 0.5 * (W + W.conj().T)


# ---------------------------------------------------------------------------
# QCQP

@dataclass
class QuadConstraint:
    """``||F z||^2 <= a.z + b``; ``F`` is any factor of the PSD form ``F^T F``.

    ``scale`` is the typical size of the right-hand side and only affects
    conditioning of the cone embedding.
    """
    factor: np.ndarray
    a: np.ndarray
    b: float
    scale: float = 1.0

    @classmethod
    def from_matrix(cls, P, a, b, scale=1.0) -> "QuadConstraint":
        P = np.asarray(P, dtype=float)
        if not np.allclose(P, P.T, atol=PSD_TOL * max(1.0, np.abs(P).max())):
            raise ValueError("quadratic form is not symmetric")
        lam, U = np.linalg.eigh(0.5 * (P + P.T))
        if lam.min() < -PSD_TOL * max(1.0, abs(lam).max()):
            raise ValueError(f"quadratic form is not PSD (min eigenvalue {lam.min():.3e})")
        keep = lam > PSD_TOL * max(1.0, abs(lam).max())
        F = (U[:, keep] * np.sqrt(lam[keep])).T
        return cls(F, np.asarray(a, dtype=float), float(b), scale)

    def violation(self, z) -> tuple[float, float]:
        """(lhs - rhs, magnitude) used for residual checks."""
        q = float(np.sum((self.factor @ z) ** 2)) if self.factor.size else 0.0
        rhs = float(self.a @ z) + self.b
        return q - rhs, 1.0 + abs(q) + abs(rhs)


@dataclass
class MagnitudeBound:
    """``||z[coords]|| <= bound``."""
    coords: tuple
    bound: float

    def violation(self, z) -> tuple[float, float]:
        return float(np.linalg.norm(z[list(self.coords)])) - self.bound, 1.0 + self.bound


@dataclass
class ConvexQuadraticProgram:
    """maximize ``objective . z`` subject to the listed constraints."""
    objective: np.ndarray
    quadratic: list = field(default_factory=list)
    bounds: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.objective.shape[0]

    def residual(self, z) -> float:
        worst = 0.0
        for c in list(self.quadratic) + list(self.bounds):
            v, mag = c.violation(z)
            worst = max(worst, v / mag)
        return worst


_CLARABEL_STATUS = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
    "MaxIterations": Status.ITERATION_LIMIT,
    "MaxTime": Status.ITERATION_LIMIT,
}


def _qcqp_rows(p: ConvexQuadraticProgram):
    n = p.dim
    lin_A, lin_b, soc_blocks = [], [], []
    for c in p.quadratic:
        if c.factor.size == 0 or not np.any(c.factor):
            lin_A.append(-c.a)
            lin_b.append(c.b)
            continue
        if c.factor.shape[1] != n or c.a.shape[0] != n:
            raise ValueError("quadratic constraint dimension mismatch")
        rho = float(c.scale)
        r = c.factor.shape[0]
        A = np.empty((r + 2, n))
        b = np.empty(r + 2)
        A[0], b[0] = -c.a / rho, c.b / rho + 1.0
        A[1:r + 1], b[1:r + 1] = -2.0 * c.factor / np.sqrt(rho), 0.0
        A[r + 1], b[r + 1] = -c.a / rho, c.b / rho - 1.0
        soc_blocks.append((A, b))
    for m in p.bounds:
        k = len(m.coords)
        if max(m.coords) >= n:
            raise ValueError("magnitude bound refers to a missing coordinate")
        A = np.zeros((k + 1, n))
        A[np.arange(1, k + 1), list(m.coords)] = -1.0
        b = np.zeros(k + 1)
        b[0] = m.bound
        soc_blocks.append((A, b))
    return lin_A, lin_b, soc_blocks


def solve_qcqp(p: ConvexQuadraticProgram, max_iter: int = 200) -> SolverOutcome:
    n = p.dim
    lin_A, lin_b, soc_blocks = _qcqp_rows(p)
    blocks, rhs, cones = [], [], []
    if lin_A:
        blocks.append(np.vstack(lin_A))
        rhs.append(np.asarray(lin_b))
        cones.append(clarabel.NonnegativeConeT(len(lin_A)))
    for A, b in soc_blocks:
        blocks.append(A)
        rhs.append(b)
        cones.append(clarabel.SecondOrderConeT(A.shape[0]))
    A = sp.csc_matrix(np.vstack(blocks)) if blocks else sp.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_rel = 1e-9
    settings.tol_gap_abs = 1e-9
    settings.tol_feas = 1e-9
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), -np.asarray(p.objective, float),
                                    A, b, cones, settings)
    sol = solver.solve()
    status = _CLARABEL_STATUS.get(str(sol.status).split(".")[-1], Status.NUMERICAL_FAILURE)
    x = np.asarray(sol.x) if status is Status.OPTIMAL else None
    if x is None:
        return SolverOutcome(status, None, float("nan"), float("inf"), sol.iterations)
    res = p.residual(x)
    if res > FEAS_TOL:
        status = Status.NUMERICAL_FAILURE
    return SolverOutcome(status, x, float(p.objective @ x), res, sol.iterations)


# ---------------------------------------------------------------------------
# SDP

@dataclass
class TraceConstraint:
    """``tr(A W) + scalar_coef * s <= rhs`` with ``A = diag(d) + U diag(w) U^H``.

    Either part may be omitted. ``s`` is the program's optional nonnegative
    scalar variable.
    """
    rhs: float
    diag: np.ndarray | None = None
    factors: np.ndarray | None = None
    weights: np.ndarray | None = None
    scalar_coef: float = 0.0

    @classmethod
    def from_matrix(cls, A, rhs, scalar_coef=0.0) -> "TraceConstraint":
        A = np.asarray(A)
        if not np.allclose(A, A.conj().T, atol=1e-10 * max(1.0, np.abs(A).max())):
            raise ValueError("constraint matrix is not Hermitian")
        lam, U = np.linalg.eigh(0.5 * (A + A.conj().T))
        keep = np.abs(lam) > 1e-14 * max(1.0, np.abs(lam).max())
        return cls(float(rhs), None, U[:, keep], lam[keep], scalar_coef)

    def matrix(self, n: int) -> np.ndarray:
        A = np.zeros((n, n), dtype=complex)
        if self.diag is not None:
            A += np.diag(self.diag)
        if self.factors is not None:
            A += (self.factors * self.weights) @ self.factors.conj().T
        return A

    def trace(self, W: np.ndarray) -> float:
        t = 0.0
        if self.diag is not None:
            t += float(np.real(np.diag(W)) @ self.diag)
        if self.factors is not None:
            F = self.factors
            t += float(np.real(np.einsum("ir,ij,jr->r", F.conj(), W, F)) @ self.weights)
        return t


@dataclass
class SemidefiniteProgram:
    """maximize ``tr(C W) + c_s s`` s.t. trace constraints, ``W >= 0``, ``s >= 0``.

    ``objective=None`` gives a pure feasibility problem. ``use_scalar`` adds the
    scalar variable ``s``.
    """
    n: int
    constraints: list
    objective: TraceConstraint | None = None
    scalar_objective: float = 0.0
    use_scalar: bool = False

    def residual(self, W, s=0.0) -> float:
        """Worst violation, each constraint scaled by the norm of its data row."""
        lam_min = float(np.linalg.eigvalsh(W).min())
        scale = max(1.0, float(np.real(np.trace(W))))
        worst = max(0.0, -lam_min / scale, -s)
        for c in self.constraints:
            lhs = c.trace(W) + c.scalar_coef * s
            norm = np.sqrt(np.linalg.norm(c.matrix(self.n)) ** 2 + c.scalar_coef ** 2)
            worst = max(worst, (lhs - c.rhs) / max(norm, 1e-300) / (1.0 + abs(c.rhs) / max(norm, 1e-300)))
        return worst

    def value(self, W, s=0.0) -> float:
        v = self.scalar_objective * s
        if self.objective is not None:
            v += self.objective.trace(W)
        return v


def _atoms(p: SemidefiniteProgram):
    """Shared real rank-one atoms and the per-constraint coefficient matrix.

    Complex ``tr(A W)`` equals ``0.5 <embed(A), X>`` for ``X = embed(W)``, so
    every complex atom ``w u u^H`` becomes two real atoms with weight ``w/2``.
    Factors equal up to a unit phase share one atom.
    """
    N = p.n
    n = 2 * N
    items = list(p.constraints) + ([p.objective] if p.objective is not None else [])
    use_diag = any(c.diag is not None for c in items)
    index: dict = {}
    cols = []
    entries = []  # (atom index, constraint index, weight)
    for j, c in enumerate(items):
        if c.factors is None:
            continue
        F = np.asarray(c.factors, dtype=complex)
        for r in range(F.shape[1]):
            u = F[:, r]
            piv = int(np.argmax(np.abs(u)))
            if abs(u[piv]) == 0:
                continue
            u = u * (abs(u[piv]) / u[piv])  # fix the phase so duplicates coincide
            key = np.round(u, 12).tobytes()
            if key not in index:
                index[key] = len(cols)
                cols.append(u)
            entries.append((index[key], j, 0.5 * float(c.weights[r])))
    off = n if use_diag else 0
    n_fac = len(cols)
    U = np.zeros((n, off + 2 * n_fac))
    if use_diag:
        U[:, :n] = np.eye(n)
    if n_fac:
        F = np.array(cols).T
        U[:, off:off + n_fac] = np.vstack([F.real, F.imag])
        U[:, off + n_fac:] = np.vstack([-F.imag, F.real])
    Cf = np.zeros((U.shape[1], len(items)))
    for j, c in enumerate(items):
        if c.diag is not None:
            Cf[:N, j] = 0.5 * c.diag
            Cf[N:n, j] = 0.5 * c.diag
    for a, j, w in entries:
        Cf[off + a, j] += w
        Cf[off + n_fac + a, j] += w
    return U, Cf


def _max_step(X, dX) -> float:
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Li = sla.solve_triangular(L, np.eye(len(X)), lower=True)
    M = Li @ dX @ Li.T
    lam = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx) -> float:
    neg = dx < 0
    return np.inf if not np.any(neg) else float(np.min(-x[neg] / dx[neg]))


def solve_sdp(p: SemidefiniteProgram, max_iter: int = 100, tol: float = 1e-8,
              gap_tol: float = GAP_TOL) -> SolverOutcome:
    """Solve ``p``; ``outcome.x`` is the Hermitian ``W`` and ``info['scalar']`` holds ``s``.

    Stops when scaled residuals are below ``tol`` and the relative gap below
    ``gap_tol``.  If progress stalls first, a point meeting ``FEAS_TOL`` on
    residuals and gap is still reported optimal with ``info['inaccurate']``.
    """
    N = p.n
    n = 2 * N
    m = len(p.constraints)
    U, Cf_all = _atoms(p)
    Cf = Cf_all[:, :m]
    c_atoms = -Cf_all[:, m] if p.objective is not None else np.zeros(U.shape[1])
    b = np.array([c.rhs for c in p.constraints], dtype=float)

    # LP block: [s] (optional) followed by one slack per constraint
    ns = 1 if p.use_scalar else 0
    nl = ns + m
    Al = np.zeros((m, nl))
    if ns:
        Al[:, 0] = [c.scalar_coef for c in p.constraints]
    Al[:, ns:] = np.eye(m)
    cl = np.zeros(nl)
    if ns:
        cl[0] = -p.scalar_objective

    # row and objective scaling
    G = U.T @ U
    GG = G * G
    row = np.sqrt(np.einsum("ai,ab,bi->i", Cf, GG, Cf) + np.sum(Al[:, :ns] ** 2, axis=1) + 1e-300)
    row = np.where(row > 0, row, 1.0)
    Cf = Cf / row
    Al = Al / row[:, None]
    Al[:, ns:] = np.eye(m) / row[:, None]
    b_s = b / row
    obj_norm = np.sqrt(c_atoms @ GG @ c_atoms + cl @ cl)
    obj_scale = obj_norm if obj_norm > 0 else 1.0
    c_atoms = c_atoms / obj_scale
    cl = cl / obj_scale

    def A_op(Y):
        return Cf.T @ np.einsum("ia,ij,ja->a", U, Y, U)

    def At_op(y):
        return (U * (Cf @ y)) @ U.T

    C = (U * c_atoms) @ U.T
    nb = np.linalg.norm(b_s)
    nc = np.linalg.norm(C) + np.linalg.norm(cl)

    xi = max(10.0, np.sqrt(n), float(np.max((1 + np.abs(b_s)))) if m else 1.0)
    eta = max(10.0, np.sqrt(n), nc)
    X = xi * np.eye(n)
    Z = eta * np.eye(n)
    xl = xi * np.ones(nl)
    zl = eta * np.ones(nl)
    y = np.zeros(m)
    status = Status.ITERATION_LIMIT
    it = 0
    gamma = 0.95
    history = []
    inaccurate = False
    for it in range(1, max_iter + 1):
        rp = b_s - A_op(X) - Al @ xl
        Rd = C - At_op(y) - Z
        rdl = cl - Al.T @ y - zl
        mu = (np.sum(X * Z) + xl @ zl) / (n + nl)
        pobj = np.sum(C * X) + cl @ xl
        dobj = b_s @ y
        pinf = np.linalg.norm(rp) / (1.0 + nb)
        dinf = (np.linalg.norm(Rd) + np.linalg.norm(rdl)) / (1.0 + nc)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if pinf < tol and dinf < tol and gap < gap_tol:
            status = Status.OPTIMAL
            break
        history.append(mu)
        if len(history) > 6 and mu > 0.5 * history[-6]:
            if pinf < FEAS_TOL and dinf < FEAS_TOL and gap < FEAS_TOL:
                status = Status.OPTIMAL
                inaccurate = True
            else:
                status = Status.NUMERICAL_FAILURE
            break
        # infeasibility certificates
        if dobj > 0 and m:
            yh = y / dobj
            if (np.linalg.eigvalsh(At_op(yh)).max() < 1e-8 * (1 + np.abs(yh).max())
                    and np.max(Al.T @ yh) < 1e-8 * (1 + np.abs(yh).max()) and np.abs(y).max() > 1e6):
                status = Status.INFEASIBLE
                break
        if pobj < 0:
            sc = -pobj
            if (np.linalg.norm(A_op(X / sc) + Al @ (xl / sc)) < 1e-8 and sc > 1e8 * (1.0 + abs(dobj))):
                status = Status.UNBOUNDED
                break

        try:
            Lz = np.linalg.cholesky(Z)
        except np.linalg.LinAlgError:
            status = Status.NUMERICAL_FAILURE
            break
        Zi = sla.cho_solve((Lz, True), np.eye(n))
        Zi = 0.5 * (Zi + Zi.T)
        GX = U.T @ X @ U
        GZ = U.T @ Zi @ U
        M = Cf.T @ (GX * GZ) @ Cf + (Al * (xl / zl)) @ Al.T
        M = 0.5 * (M + M.T)
        try:
            cho = sla.cho_factor(M + 1e-14 * np.trace(M) / max(m, 1) * np.eye(m))
        except (np.linalg.LinAlgError, ValueError):
            status = Status.NUMERICAL_FAILURE
            break

        XRdZi = X @ Rd @ Zi
        dl_ratio = xl / zl

        def direction(target, corrX, corrl):
            # target = sigma*mu ; corr* are second-order corrections
            rhs_X = -X + target * Zi - XRdZi + corrX
            rhs_l = (target - xl * zl - corrl) / zl - dl_ratio * rdl
            r = rp - A_op(rhs_X) - Al @ rhs_l
            dy = sla.cho_solve(cho, r)
            dZ = Rd - At_op(dy)
            dX = target * Zi - X + corrX - X @ dZ @ Zi
            dX = 0.5 * (dX + dX.T)
            dzl = rdl - Al.T @ dy
            dxl = (target - xl * zl - corrl) / zl - dl_ratio * dzl
            return dX, dy, dZ, dxl, dzl

        dX, dy, dZ, dxl, dzl = direction(0.0, 0.0, 0.0)
        ap = min(1.0, gamma * min(_max_step(X, dX), _max_step_lp(xl, dxl)))
        ad = min(1.0, gamma * min(_max_step(Z, dZ), _max_step_lp(zl, dzl)))
        mu_aff = (np.sum((X + ap * dX) * (Z + ad * dZ)) + (xl + ap * dxl) @ (zl + ad * dzl)) / (n + nl)
        sigma = min(1.0, (mu_aff / mu) ** 3)
        corrX = -0.5 * (dX @ dZ @ Zi + (dX @ dZ @ Zi).T)
        corrl = dxl * dzl
        dX, dy, dZ, dxl, dzl = direction(sigma * mu, corrX, corrl)
        ap = min(1.0, gamma * min(_max_step(X, dX), _max_step_lp(xl, dxl)))
        ad = min(1.0, gamma * min(_max_step(Z, dZ), _max_step_lp(zl, dzl)))
        if ap < 1e-10 and ad < 1e-10:
            status = Status.NUMERICAL_FAILURE
            break
        X = X + ap * dX
        X = 0.5 * (X + X.T)
        xl = xl + ap * dxl
        Z = Z + ad * dZ
        Z = 0.5 * (Z + Z.T)
        zl = zl + ad * dzl
        y = y + ad * dy

    W = unembed(X)
    s = float(xl[0]) if ns else 0.0
    res = p.residual(W, s)
    info = {"scalar": s, "dual": y * obj_scale / row if m else y, "inaccurate": inaccurate}
    if status is Status.OPTIMAL and res > FEAS_TOL:
        status = Status.NUMERICAL_FAILURE
    return SolverOutcome(status, W, p.value(W, s), res, it, info)


# ---------------------------------------------------------------------------
# text dump for cross-checking with external solvers

def _cplx(a):
    a = np.asarray(a)
    return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}


def dump_problem(p, path) -> None:
    """Write ``p`` as JSON: dimensions, row-major constraint matrices, objective."""
    if isinstance(p, ConvexQuadraticProgram):
        doc = {
            "kind": "qcqp", "dim": p.dim, "objective": np.asarray(p.objective).tolist(),
            "quadratic": [{"P": (c.factor.T @ c.factor).tolist() if c.factor.size else [],
                           "a": np.asarray(c.a).tolist(), "b": c.b} for c in p.quadratic],
            "bounds": [{"coords": list(m.coords), "bound": m.bound} for m in p.bounds],
        }
    elif isinstance(p, SemidefiniteProgram):
        doc = {
            "kind": "sdp", "n": p.n, "use_scalar": p.use_scalar,
            "scalar_objective": p.scalar_objective,
            "objective": None if p.objective is None else _cplx(p.objective.matrix(p.n)),
            "constraints": [{"A": _cplx(c.matrix(p.n)), "rhs": c.rhs,
                             "scalar_coef": c.scalar_coef} for c in p.constraints],
        }
    else:
        raise TypeError(f"cannot dump {type(p).__name__}")
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_problem(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc["kind"] == "qcqp":
        quad = [QuadConstraint.from_matrix(np.asarray(q["P"]) if q["P"] else np.zeros((doc["dim"],) * 2),
                                           q["a"], q["b"]) for q in doc["quadratic"]]
        return ConvexQuadraticProgram(np.asarray(doc["objective"]), quad,
                                      [MagnitudeBound(tuple(m["coords"]), m["bound"]) for m in doc["bounds"]])
    mat = lambda d: np.asarray(d["re"]) + 1j * np.asarray(d["im"])
    cons = [TraceConstraint.from_matrix(mat(c["A"]), c["rhs"], c["scalar_coef"]) for c in doc["constraints"]]
    obj = None if doc["objective"] is None else TraceConstraint.from_matrix(mat(doc["objective"]), 0.0)
    return SemidefiniteProgram(doc["n"], cons, obj, doc["scalar_objective"], doc["use_scalar"])
