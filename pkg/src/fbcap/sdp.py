"""A small determinant-maximization solver.

Problems have the form

    maximize    c^T x + sum_i w_i log det O_i(x) + const
    subject to  S_k(x) >= 0            (LMIs)
                g_j(x) <= 0            (affine scalars)
                e_l(x)  = 0            (affine scalars)

where every O_i, S_k is an affine symmetric-matrix-valued function of the
decision variables. Problems are written with :class:`Affine` expressions,
which support ``+``, ``-``, scalar ``*``, ``@`` with constant matrices,
``.T``, ``.trace()`` and block assembly, so constraints read like the math.

The solver is a primal barrier method. Equalities are eliminated by an
affine parameterization, a phase-I problem finds a strictly feasible start,
and each centering step is a damped Newton iteration using exact
derivatives of log det composed with the affine maps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fbcap.errors import Infeasible, MaxIterations, NumericalFailure

log = logging.getLogger(__name__)

CERTIFY_FROM = 1e-5
PHASE1_BOX = 1e9
PHASE1_CENTER_STEPS = 500
CENTER_STEPS_LATE = 500  # per centering, once a certified iterate exists
OPTIMAL_KKT = 1e-6
OPTIMAL_MIN_EIG = -1e-7
POLISH_BELOW = 1e-9  # KKT residual above which the dual estimate is polished


@dataclass(frozen=True)
class Variable:
    name: str
    rows: int
    cols: int
    symmetric: bool
    offset: int

    @property
    def size(self) -> int:
        if self.symmetric:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def basis(self) -> np.ndarray:
        """Coefficient stack (size, rows, cols): d X / d x_k."""
        B = np.zeros((self.size, self.rows, self.cols))
        if self.symmetric:
            iu, ju = np.triu_indices(self.rows)
            k = np.arange(iu.size)
            B[k, iu, ju] = 1.0
            B[k, ju, iu] = 1.0
        else:
            k = np.arange(self.size)
            B[k, k // self.cols, k % self.cols] = 1.0
        return B

    def pack(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(self.rows, self.cols)
        if self.symmetric:
            return 0.5 * (X + X.T)[np.triu_indices(self.rows)]
        return X.ravel()

    def unpack(self, x) -> np.ndarray:
        if self.symmetric:
            X = np.zeros((self.rows, self.rows))
            X[np.triu_indices(self.rows)] = x
            return X + np.triu(X, 1).T
        return np.asarray(x, dtype=float).reshape(self.rows, self.cols)


class Affine:
    """Affine matrix expression: const + sum over variables of coeffs[name] . x_name."""

    __array_ufunc__ = None  # let numpy defer A @ expr to __rmatmul__

    def __init__(self, const, coeffs=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.coeffs = dict(coeffs or {})

    @property
    def shape(self):
        return self.const.shape

    @classmethod
    def lift(cls, x, shape=None):
        if isinstance(x, Affine):
            return x
        a = np.asarray(x, dtype=float)
        if a.ndim == 0 and shape is not None:
            a = np.full(shape, float(a))
        return cls(a)

    def _combine(self, other, sign):
        other = Affine.lift(other, self.shape)
        if other.shape != self.shape:
            raise ValueError("shape mismatch %s vs %s" % (self.shape, other.shape))
        coeffs = dict(self.coeffs)
        for k, c in other.coeffs.items():
            coeffs[k] = coeffs[k] + sign * c if k in coeffs else sign * c
        return Affine(self.const + sign * other.const, coeffs)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, a):
        if isinstance(a, Affine) or np.ndim(a) != 0:
            raise TypeError("only scalar multiplication is affine")
        a = float(a)
        return Affine(a * self.const, {k: a * c for k, c in self.coeffs.items()})

    __rmul__ = __mul__

    def __truediv__(self, a):
        return self * (1.0 / float(a))

    def __matmul__(self, B):
        if isinstance(B, Affine):
            raise TypeError("product of two affine expressions is not affine")
        B = np.atleast_2d(np.asarray(B, dtype=float))
        return Affine(self.const @ B, {k: c @ B for k, c in self.coeffs.items()})

    def __rmatmul__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return Affine(A @ self.const, {k: np.matmul(A, c) for k, c in self.coeffs.items()})

    @property
    def T(self):
        return Affine(self.const.T, {k: np.swapaxes(c, 1, 2) for k, c in self.coeffs.items()})

    def trace(self):
        return Affine(
            [[np.trace(self.const)]],
            {k: np.trace(c, axis1=1, axis2=2)[:, None, None] for k, c in self.coeffs.items()},
        )

    def sym(self):
        return 0.5 * (self + self.T)

    def value(self, assignment: dict, variables: dict) -> np.ndarray:
        out = self.const.copy()
        for k, c in self.coeffs.items():
            out += np.tensordot(variables[k].pack(assignment[k]), c, axes=1)
        return out

    def is_symmetric(self, atol=1e-12) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        if not np.allclose(self.const, self.const.T, atol=atol):
            return False
        return all(np.allclose(c, np.swapaxes(c, 1, 2), atol=atol) for c in self.coeffs.values())


def bmat(blocks) -> Affine:
    """Assemble a block matrix from Affine expressions and constant arrays."""
    rows = [[Affine.lift(b) for b in row] for row in blocks]
    heights = [row[0].shape[0] for row in rows]
    widths = [b.shape[1] for b in rows[0]]
    for i, row in enumerate(rows):
        for j, b in enumerate(row):
            if b.shape != (heights[i], widths[j]):
                raise ValueError("block (%d, %d) has shape %s" % (i, j, b.shape))
    const = np.block([[b.const for b in row] for row in rows])
    names = []
    for row in rows:
        for b in row:
            names.extend(k for k in b.coeffs if k not in names)
    coeffs = {}
    for name in names:
        size = next(b.coeffs[name].shape[0] for row in rows for b in row if name in b.coeffs)
        coeffs[name] = np.concatenate(
            [
                np.concatenate(
                    [b.coeffs.get(name, np.zeros((size,) + b.shape)) for b in row], axis=2
                )
                for row in rows
            ],
            axis=1,
        )
    return Affine(const, coeffs)


class MaxDetProblem:
    """Container for variables, objective and constraints."""

    bmat = staticmethod(bmat)

    def __init__(self):
        self.variables: dict[str, Variable] = {}
        self.objective_logdet: list[tuple[float, Affine]] = []
        self.objective_linear: Optional[Affine] = None
        self.objective_constant = 0.0
        self.lmis: list[tuple[str, Affine]] = []
        self.scalar_ineqs: list[Affine] = []
        self.scalar_eqs: list[Affine] = []

    @property
    def size(self) -> int:
        return sum(v.size for v in self.variables.values())

    def variable(self, name, rows, cols=None, symmetric=False) -> Affine:
        if name in self.variables:
            raise ValueError("duplicate variable %r" % name)
        cols = rows if cols is None else cols
        if symmetric and rows != cols:
            raise ValueError("symmetric variable must be square")
        v = Variable(name, rows, cols, symmetric, self.size)
        self.variables[name] = v
        return Affine(np.zeros((rows, cols)), {name: v.basis()})

    def add_logdet(self, expr: Affine, weight: float = 0.5):
        self._require_symmetric(expr, "objective")
        self.objective_logdet.append((float(weight), Affine.lift(expr)))

    def add_linear_objective(self, expr: Affine):
        expr = Affine.lift(expr)
        if expr.shape != (1, 1):
            raise ValueError("linear objective must be scalar")
        self.objective_linear = expr if self.objective_linear is None else self.objective_linear + expr

    def add_constant(self, c: float):
        self.objective_constant += float(c)

    def add_lmi(self, expr: Affine, name: Optional[str] = None):
        self._require_symmetric(expr, name or "lmi")
        self.lmis.append((name or "lmi%d" % len(self.lmis), Affine.lift(expr)))

    def add_ineq(self, expr: Affine):
        """Constrain the scalar expression to be <= 0."""
        expr = Affine.lift(expr)
        if expr.shape != (1, 1):
            raise ValueError("scalar inequality must be 1x1")
        self.scalar_ineqs.append(expr)

    def add_eq(self, expr: Affine):
        expr = Affine.lift(expr)
        if expr.shape != (1, 1):
            raise ValueError("scalar equality must be 1x1")
        self.scalar_eqs.append(expr)

    @staticmethod
    def _require_symmetric(expr, what):
        if not Affine.lift(expr).is_symmetric():
            raise ValueError("%s expression is not symmetric" % what)

    def pack(self, assignment: dict) -> np.ndarray:
        x = np.zeros(self.size)
        for v in self.variables.values():
            x[v.offset:v.offset + v.size] = v.pack(assignment[v.name])
        return x

    def unpack(self, x) -> dict:
        return {v.name: v.unpack(x[v.offset:v.offset + v.size]) for v in self.variables.values()}


# -- compiled form -----------------------------------------------------------


@dataclass
class _Term:
    const: np.ndarray  # (d, d)
    idx: np.ndarray  # (k,) variable indices with a nonzero coefficient
    C: np.ndarray  # (k, d, d)

    @property
    def dim(self):
        return self.const.shape[0]

    def at(self, x):
        return self.const + np.tensordot(x[self.idx], self.C, axes=1)


@dataclass
class _Compiled:
    n: int
    logdet: list  # (weight, _Term)
    c: np.ndarray
    c0: float
    lmis: list  # _Term
    G: np.ndarray  # g(x) = G x + h <= 0
    h: np.ndarray
    x0: np.ndarray = None  # x = x0 + Z y
    Z: Optional[np.ndarray] = None

    @property
    def barrier_dim(self) -> int:
        return sum(t.dim for t in self.lmis) + self.G.shape[0]

    def to_x(self, y):
        return y if self.Z is None else self.x0 + self.Z @ y


def _flatten(expr: Affine, problem: MaxDetProblem, n: int):
    d1, d2 = expr.shape
    C = np.zeros((n, d1, d2))
    for name, c in expr.coeffs.items():
        v = problem.variables[name]
        C[v.offset:v.offset + v.size] += c
    return expr.const, C


def _term(expr, problem, n):
    const, C = _flatten(expr, problem, n)
    const = 0.5 * (const + const.T)
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    idx = np.flatnonzero(np.abs(C).reshape(n, -1).max(axis=1, initial=0.0) > 0.0)
    return _Term(const, idx, C[idx])


def _scalar_rows(exprs, problem, n):
    G = np.zeros((len(exprs), n))
    h = np.zeros(len(exprs))
    for j, e in enumerate(exprs):
        const, C = _flatten(e, problem, n)
        G[j] = C[:, 0, 0]
        h[j] = const[0, 0]
    return G, h


def compile_problem(problem: MaxDetProblem) -> _Compiled:
    n = problem.size
    logdet = [(w, _term(e, problem, n)) for w, e in problem.objective_logdet]
    if problem.objective_linear is not None:
        const, C = _flatten(problem.objective_linear, problem, n)
        c, c0 = C[:, 0, 0].copy(), float(const[0, 0])
    else:
        c, c0 = np.zeros(n), 0.0
    c0 += problem.objective_constant
    lmis = [_term(e, problem, n) for _, e in problem.lmis]
    G, h = _scalar_rows(problem.scalar_ineqs, problem, n)
    comp = _Compiled(n, logdet, c, c0, lmis, G, h)
    if problem.scalar_eqs:
        A, b = _scalar_rows(problem.scalar_eqs, problem, n)
        comp = _eliminate(comp, A, b)
    return comp


def _eliminate(comp: _Compiled, A, b) -> _Compiled:
    U, s, Vt = np.linalg.svd(A)
    r = int(np.sum(s > 1e-12 * max(1.0, s[0] if s.size else 0.0)))
    x0 = -np.linalg.pinv(A) @ b
    if np.linalg.norm(A @ x0 + b) > 1e-9 * max(1.0, np.linalg.norm(b)):
        raise Infeasible("equality constraints are inconsistent")
    Z = Vt[r:].T
    ny = Z.shape[1]

    def reduce(t: _Term):
        const = t.const + np.tensordot(x0[t.idx], t.C, axes=1)
        C = np.tensordot(Z[t.idx].T, t.C, axes=1)
        return _Term(const, np.arange(ny), C)

    return _Compiled(
        ny,
        [(w, reduce(t)) for w, t in comp.logdet],
        Z.T @ comp.c,
        comp.c0 + comp.c @ x0,
        [reduce(t) for t in comp.lmis],
        comp.G @ Z,
        comp.h + comp.G @ x0,
        x0,
        Z,
    )


# -- barrier -----------------------------------------------------------------


def _logdet_value(t: _Term, y):
    S = t.at(y)
    try:
        Lc = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(Lc)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        return None
    return 2.0 * float(np.sum(np.log(d)))


def _logdet_derivs(t: _Term, y, n):
    S = t.at(y)
    Lc = np.linalg.cholesky(S)
    val = 2.0 * float(np.sum(np.log(np.diag(Lc))))
    Li = np.linalg.inv(Lc)
    Ch = Li @ t.C @ Li.T
    g = np.zeros(n)
    g[t.idx] = np.trace(Ch, axis1=1, axis2=2)
    flat = Ch.reshape(len(t.idx), -1)
    Hloc = -(flat @ flat.T)
    return val, g, Hloc


class _Barrier:
    """phi_t(y) = t * f(y) + sum log det S_k(y) + sum log(-g_j(y))."""

    def __init__(self, comp: _Compiled):
        self.comp = comp

    def objective(self, y):
        comp = self.comp
        f = comp.c @ y + comp.c0
        for w, t in comp.logdet:
            v = _logdet_value(t, y)
            if v is None:
                return None
            f += w * v
        return f

    def value(self, y, t):
        f = self.objective(y)
        if f is None:
            return None
        total = t * f
        for term in self.comp.lmis:
            v = _logdet_value(term, y)
            if v is None:
                return None
            total += v
        slack = -(self.comp.G @ y + self.comp.h)
        if np.any(slack <= 0):
            return None
        return total + float(np.sum(np.log(slack)))

    def derivs(self, y, t):
        """Value, gradient and Hessian of phi_t; also the objective gradient."""
        comp, n = self.comp, self.comp.n
        f = comp.c @ y + comp.c0
        gf = comp.c.copy()
        Hf = np.zeros((n, n))
        for w, term in comp.logdet:
            v, g, Hl = _logdet_derivs(term, y, n)
            f += w * v
            gf += w * g
            Hf[np.ix_(term.idx, term.idx)] += w * Hl
        val, grad, hess = t * f, t * gf, t * Hf
        for term in comp.lmis:
            v, g, Hl = _logdet_derivs(term, y, n)
            val += v
            grad += g
            hess[np.ix_(term.idx, term.idx)] += Hl
        if comp.G.shape[0]:
            slack = -(comp.G @ y + comp.h)
            val += float(np.sum(np.log(slack)))
            Gs = comp.G / slack[:, None]
            grad -= Gs.sum(axis=0)
            hess -= Gs.T @ Gs
        return val, grad, hess, f, gf


def barrier_oracle(problem: MaxDetProblem, x, t=1.0):
    """Value, gradient and Hessian of the barrier-augmented objective at x.

    Works in the full (un-eliminated) variable space; returns None for
    points outside the domain.
    """
    comp = compile_problem(_without_eqs(problem))
    bar = _Barrier(comp)
    if bar.value(np.asarray(x, float), t) is None:
        return None
    val, g, H, _, _ = bar.derivs(np.asarray(x, float), t)
    return val, g, H


def _without_eqs(problem):
    q = MaxDetProblem()
    q.variables = problem.variables
    q.objective_logdet = problem.objective_logdet
    q.objective_linear = problem.objective_linear
    q.objective_constant = problem.objective_constant
    q.lmis = problem.lmis
    q.scalar_ineqs = problem.scalar_ineqs
    return q


def _newton_direction(g, H):
    """Solve -H dy = g after symmetric diagonal equilibration.

    Variables of very different scale (a nearly singular SigmaHat next to a
    unit-size Pi) make -H badly scaled but not badly conditioned once the
    diagonal is normalized.
    """
    A = -H
    d = np.sqrt(np.maximum(np.diag(A), 0.0))
    d[d == 0.0] = 1.0
    As = A / np.outer(d, d)
    gs = g / d
    jitter = 0.0
    for _ in range(8):
        try:
            Lc = np.linalg.cholesky(As + jitter * np.eye(As.shape[0]))
            break
        except np.linalg.LinAlgError:
            jitter = 1e-14 if jitter == 0.0 else jitter * 100
    else:
        raise NumericalFailure("Newton system is not positive definite")
    dy = np.linalg.solve(Lc.T, np.linalg.solve(Lc, gs)) / d
    return dy, float(g @ dy)


@dataclass
class _CenterStats:
    iterations: int = 0


def _center(bar: _Barrier, y, t, newton_tol, max_iter, stats, alpha=0.3, beta=0.6):
    """Damped Newton centering.

    phi_t is self-concordant, so once the decrement is below 1/4 the full
    step is taken without a line search; this keeps the iteration working
    at large t, where phi values lose the precision Armijo tests need.
    """
    prev = np.inf
    stalls = 0
    for _ in range(max_iter):
        val, g, H, _, _ = bar.derivs(y, t)
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            raise NumericalFailure("non-finite barrier derivatives")
        dy, lam2 = _newton_direction(g, H)
        stats.iterations += 1
        if not np.isfinite(lam2):
            raise NumericalFailure("Newton decrement is NaN")
        if lam2 / 2.0 <= newton_tol:
            return y
        if lam2 < 1e-4:
            stalls = stalls + 1 if lam2 > 0.25 * prev else 0
            if stalls >= 3:
                return y  # rounding floor
        prev = lam2
        lam = np.sqrt(lam2)
        if lam <= 0.25:
            s = 1.0
            while bar.value(y + s * dy, t) is None:
                s *= 0.5
                if s < 1e-8:
                    raise NumericalFailure("full Newton step leaves the domain")
        else:
            s = 1.0
            while True:
                v = bar.value(y + s * dy, t)
                if v is not None and v >= val + alpha * s * lam2:
                    break
                s *= beta
                if s < 1e-10:
                    s = 1.0 / (1.0 + lam)
                    if bar.value(y + s * dy, t) is None:
                        raise NumericalFailure("line search failed (decrement %.3g)" % lam2)
                    break
        y = y + s * dy
        if np.abs(y).max() > 1e12:
            raise NumericalFailure("iterates diverge; problem may be unbounded")
    raise MaxIterations("centering did not converge in %d Newton steps" % max_iter)


@dataclass
class MaxDetSolution:
    assignment: dict
    objective_value: float
    kkt_residual: float
    min_lmi_eig: float
    status: str
    duality_gap: float = 0.0
    newton_iterations: int = 0
    history: list = field(default_factory=list)
    x: Optional[np.ndarray] = None


@dataclass
class FeasibilityResult:
    feasible: bool
    margin: float
    point: Optional[dict]
    x: Optional[np.ndarray] = None


def _run(comp: _Compiled, y0, tol, t0=1.0, mu=10.0, newton_tol=1e-9, max_newton=5000):
    """Barrier path following until m / t < tol.

    Late outer iterates are certified and the one with the smallest KKT
    residual is returned: near a degenerate optimum the slack of the active
    LMIs shrinks like 1/t, and past some t double precision no longer
    resolves it, so the last iterate is not always the best certified one.
    For the same reason a centering failure after the first certified
    iterate ends the path instead of the solve.
    """
    bar = _Barrier(comp)
    if bar.value(y0, t0) is None:
        raise NumericalFailure("starting point is not strictly feasible")
    stats = _CenterStats()
    y, t = y0, t0
    m = max(comp.barrier_dim, 1)
    history = []
    best = None
    while True:
        budget = max(1, max_newton - stats.iterations)
        if best is not None:
            budget = min(budget, CENTER_STEPS_LATE)
        try:
            y = _center(bar, y, t, newton_tol, budget, stats)
        except (MaxIterations, NumericalFailure) as exc:
            if best is None:
                raise
            log.debug("centering failed at t=%.1e (%s); keeping the certified iterate", t, exc)
            break
        history.append(float(bar.objective(y)))
        if m / t < max(tol, CERTIFY_FROM):
            cert = _certify(bar, y, t)
            if best is None or cert[3] <= best[0][3]:
                best = (cert, t)
        if m / t < tol:
            break
        t *= mu
    (yb, f, gap, kkt), tb = best
    if tb < t:
        log.debug("precision floor: returning iterate at t=%.1e (kkt %.2e)", tb, kkt)
    return yb, f, tb, gap, kkt, stats.iterations, history


def _certify(bar: _Barrier, y, t):
    """Primal-dual certificate at an approximate center.

    The dual estimate comes from one more Newton step dy:
    Z_k = (S_k^-1 - S_k^-1 A_k(dy) S_k^-1) / t for each LMI and
    mu_j = (1/s_j + (G dy)_j / s_j^2) / t for each scalar slack.  The KKT
    residual is the largest of the relative stationarity residual at y + dy,
    the dual infeasibility of (Z, mu) and the complementarity gap, which is
    also returned as the duality gap.  Forming the residual from the dual
    pair avoids dividing the raw barrier gradient by t, which loses all
    precision on stiff near-boundary directions.  When the residual is not
    already tiny the pair is polished (see _polish) and the better of the
    two is kept.
    """
    comp = bar.comp
    _, g, H, _, _ = bar.derivs(y, t)
    dy, _ = _newton_direction(g, H)
    yn = y + dy
    if bar.value(yn, t) is None:
        yn, dy = y, np.zeros_like(y)
    n = comp.n
    f = comp.c @ yn + comp.c0
    gf = comp.c.copy()
    for w, term in comp.logdet:
        v, gl, _ = _logdet_derivs(term, yn, n)
        f += w * v
        gf += w * gl
    Zs = []
    for term in comp.lmis:
        S = term.at(y)
        Si = np.linalg.inv(S)
        dS = np.tensordot(dy[term.idx], term.C, axes=1)
        Z = (Si - Si @ dS @ Si) / t
        Zs.append(0.5 * (Z + Z.T))
    mu = np.zeros(0)
    if comp.G.shape[0]:
        s = -(comp.G @ y + comp.h)
        mu = (1.0 / s + (comp.G @ dy) / s ** 2) / t
    best = _kkt(comp, yn, gf, Zs, mu)
    if best[1] > POLISH_BELOW:
        polished = _polish(comp, yn, gf, Zs, mu, t)
        if polished is not None:
            cand = _kkt(comp, yn, gf, *polished)
            if cand[1] < best[1]:
                best = cand
    return yn, f, best[0], best[1]


def _kkt(comp, yn, gf, Zs, mu):
    """(complementarity gap, KKT residual) of the dual pair (Zs, mu) at yn."""
    r = gf.copy()
    comp_gap = 0.0
    dual_infeas = 0.0
    for term, Z in zip(comp.lmis, Zs):
        r[term.idx] += np.einsum("ij,kji->k", Z, term.C)
        comp_gap += float(np.sum(term.at(yn) * Z))
        dual_infeas = max(dual_infeas, -float(np.linalg.eigvalsh(Z)[0]))
    if mu.size:
        r -= comp.G.T @ mu
        comp_gap += float(mu @ -(comp.G @ yn + comp.h))
        dual_infeas = max(dual_infeas, -float(mu.min()))
    stationarity = float(np.linalg.norm(r)) / (1.0 + float(np.linalg.norm(gf)))
    comp_gap = max(comp_gap, 0.0)
    return comp_gap, max(stationarity, dual_infeas, comp_gap), r


def _polish(comp, yn, gf, Zs, mu, t):
    """Least-norm correction of the dual pair that zeroes the stationarity residual.

    Near a thin feasible set the central-path dual can be huge along
    directions that cancel in A^T Z, and the cancellation leaves a residual
    far above the true one.  The correction lives on the dominant
    eigenspace of each Z (and on the active mu).  On the central path the
    active part of the dual is O(1) and the inactive part O(1/t), so the
    split is taken at t^-1/2.
    """
    _, _, r = _kkt(comp, yn, gf, Zs, mu)
    cut = t ** -0.5
    cols, parts = [], []
    for k, (term, Z) in enumerate(zip(comp.lmis, Zs)):
        w, Q = np.linalg.eigh(Z)
        keep = w > cut
        Q = Q[:, keep]
        q = Q.shape[1]
        CQ = np.einsum("ia,kij,jb->kab", Q, term.C, Q)
        for a in range(q):
            for b in range(a, q):
                col = np.zeros(comp.n)
                col[term.idx] = CQ[:, a, b] + (CQ[:, b, a] if a != b else 0.0)
                cols.append(col)
                parts.append((k, Q, a, b))
    if mu.size:
        for j in np.flatnonzero(mu > cut):
            cols.append(-comp.G[j])
            parts.append((-1, None, j, None))
    if not cols:
        return None
    A = np.array(cols).T
    x = np.linalg.lstsq(A, -r, rcond=None)[0]
    Zn = [Z.copy() for Z in Zs]
    mun = mu.copy()
    for v, (k, Q, a, b) in zip(x, parts):
        if k < 0:
            mun[a] += v
            continue
        E = np.outer(Q[:, a], Q[:, b])
        Zn[k] += v * (E + E.T) if a != b else v * E
    return Zn, mun


def _min_eig(comp, y):
    vals = [np.linalg.eigvalsh(t.at(y))[0] for t in comp.lmis if t.dim]
    slack = -(comp.G @ y + comp.h)
    if slack.size:
        vals.append(float(slack.min()))
    return float(min(vals)) if vals else np.inf


def _phase1(comp: _Compiled, y0, tol, cap=1.0, domain=False, early=False, max_newton=5000):
    """Maximize s subject to S_k(y) >= s I, g_j(y) <= -s, s <= cap.

    With ``domain`` the log det arguments of the objective are constrained
    as well.  With ``early`` the path following stops at the first center
    that is strictly feasible for the original problem.  The returned point
    is the center with the largest s, not the best certified one: on thin
    feasible sets the positive margins only appear at large t.
    """
    n = comp.n
    terms = list(comp.lmis) + ([t for _, t in comp.logdet] if domain else [])
    margins = [np.linalg.eigvalsh(t.at(y0))[0] for t in terms if t.dim]
    margins += list(-(comp.G @ y0 + comp.h))
    s0 = min(min(margins, default=cap), cap) - 1.0

    def lift(t: _Term):
        idx = np.append(t.idx, n)
        C = np.concatenate([t.C, -np.eye(t.dim)[None]], axis=0)
        return _Term(t.const, idx, C)

    # the box |y_i| <= PHASE1_BOX keeps the auxiliary problem bounded when
    # some variable is only constrained from one side
    eye = np.hstack([np.eye(n), np.zeros((n, 1))])
    G = np.vstack([
        np.hstack([comp.G, np.ones((comp.G.shape[0], 1))]),
        np.append(np.zeros(n), 1.0),
        eye,
        -eye,
    ])
    h = np.concatenate([comp.h, [-cap], np.full(2 * n, -PHASE1_BOX)])
    c = np.append(np.zeros(n), 1.0)
    aux = _Compiled(n + 1, [], c, 0.0, [lift(t) for t in terms], G, h)
    bar = _Barrier(aux)
    orig = _Barrier(comp)
    stats = _CenterStats()
    z, t = np.append(y0, s0), 1.0
    m = max(aux.barrier_dim, 1)
    best = None
    while True:
        budget = min(PHASE1_CENTER_STEPS, max(1, max_newton - stats.iterations))
        try:
            z = _center(bar, z, t, 1e-9, budget, stats)
        except (MaxIterations, NumericalFailure):
            if best is None:
                raise
            log.debug("phase I stopped at the precision floor, t=%.1e", t)
            break
        if best is None or z[n] > best[n]:
            best = z
        if early and z[n] > 0.0 and orig.value(z[:n], 1.0) is not None:
            break
        if m / t < tol:
            break
        t *= 10.0
    return best[:n], float(best[n])


def _strictly_feasible(comp: _Compiled, y) -> bool:
    if any(_logdet_value(t, y) is None for t in comp.lmis if t.dim):
        return False
    return bool(np.all(-(comp.G @ y + comp.h) > 0))


def check_feasibility(problem: MaxDetProblem, tol=1e-10, start=None) -> FeasibilityResult:
    """Find the point of largest constraint margin (capped at 1).

    Feasible means a positive margin at a point every constraint accepts
    strictly (Cholesky succeeds on each LMI).
    """
    comp = compile_problem(problem)
    y0 = _start_vector(comp, problem, start)
    y, s = _phase1(comp, y0, tol)
    x = comp.to_x(y)
    feasible = s > 0.0 and _strictly_feasible(comp, y)
    return FeasibilityResult(bool(feasible), s, problem.unpack(x), x)


def _start_vector(comp, problem, start):
    if start is None:
        return np.zeros(comp.n)
    x = problem.pack(start) if isinstance(start, dict) else np.asarray(start, float)
    if comp.Z is None:
        return x
    return np.linalg.lstsq(comp.Z, x - comp.x0, rcond=None)[0]


def solve_maxdet(problem: MaxDetProblem, start=None, tol=1e-8, max_newton=5000) -> MaxDetSolution:
    """Solve to a duality-gap bound ``tol``.

    The result is returned only with a certificate (KKT residual <= 1e-6,
    constraint eigenvalues >= -1e-7); ``duality_gap`` may exceed ``tol`` when
    double precision runs out first.  ``start`` (an assignment dict or packed vector) is used when strictly
    feasible; otherwise a phase-I problem supplies the starting point.
    """
    comp = compile_problem(problem)
    y0 = _start_vector(comp, problem, start)
    bar = _Barrier(comp)
    if start is None or bar.value(y0, 1.0) is None:
        y0, margin = _phase1(comp, y0, 1e-12, domain=True, early=True)
        if margin <= 0.0 or bar.value(y0, 1.0) is None:
            raise Infeasible("no strictly feasible point (best margin %.3g)" % margin)
    y, f, t, gap, kkt, iters, history = _run(comp, y0, tol, max_newton=max_newton)
    x = comp.to_x(y)
    min_eig = _min_eig(comp, y)
    if kkt > OPTIMAL_KKT or min_eig < OPTIMAL_MIN_EIG:
        raise NumericalFailure("no certified optimum: KKT residual %.2e, min LMI eigenvalue %.2e"
                               % (kkt, min_eig))
    return MaxDetSolution(
        assignment=problem.unpack(x),
        objective_value=float(f),
        kkt_residual=float(kkt),
        min_lmi_eig=min_eig,
        status="optimal",
        duality_gap=float(gap),
        newton_iterations=iters,
        history=history,
        x=x,
    )
