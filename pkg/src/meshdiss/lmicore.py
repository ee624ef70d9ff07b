"""Small LMI modeling layer lowered to a cone program.

Decision variables are structured matrices parameterized by their free
entries only. Affine matrix expressions are stored as a constant plus one
coefficient tensor per variable, so any expression can be evaluated at an
assignment or lowered to ``G x + s = h, s in K`` rows, where ``K`` is a
product of a nonnegative orthant and PSD cones.

The default backend is cvxopt's primal-dual interior-point ``conelp``.
Every solution is re-checked by direct eigenvalue computation on the
original constraints, independently of the solver's own residuals.
"""

from __future__ import annotations

import enum
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

STRUCTURES = ("symmetric", "diagonal", "scalar", "full", "pattern", "custom")
# seconds; Clarabel is only a fallback and occasionally stalls on ill-scaled problems
CLARABEL_TIME_LIMIT = 60.0


class LmiError(ValueError):
    """Malformed LMI problem."""


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"

    @property
    def ok(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


def default_tolerances() -> dict:
    """Tolerances, optionally overridden by ``MESHDISS_SOLVER_TOL``.

    The variable holds a single float applied to ``eps_feas`` and ``eps_gap``.
    """
    tol = {"eps_feas": 1e-8, "eps_gap": 1e-8, "eps_strict": 1e-6, "max_iters": 200}
    env = os.environ.get("MESHDISS_SOLVER_TOL")
    if env:
        try:
            value = float(env)
        except ValueError as exc:
            raise LmiError(f"MESHDISS_SOLVER_TOL is not a number: {env!r}") from exc
        if value <= 0:
            raise LmiError("MESHDISS_SOLVER_TOL must be positive")
        tol["eps_feas"] = tol["eps_gap"] = value
    return tol


class MatrixVariable:
    """A structured matrix decision variable.

    ``structure`` is one of ``symmetric`` (n x n, n(n+1)/2 entries),
    ``diagonal``, ``scalar`` (times identity), ``full``, ``pattern``
    (free entries only where ``pattern`` is nonzero) or ``custom``
    (value is ``sum_k x_k basis[:, :, k]`` for a caller-supplied basis).
    """

    # make numpy defer ``ndarray @ var`` and friends to the reflected operators
    __array_ufunc__ = None

    def __init__(self, name: str, shape, structure: str = "full", pattern=None, basis=None):
        if isinstance(shape, int):
            shape = (shape, shape)
        rows, cols = (int(s) for s in shape)
        if rows < 1 or cols < 1:
            raise LmiError(f"variable {name!r}: bad shape {shape}")
        if structure not in STRUCTURES:
            raise LmiError(f"variable {name!r}: unknown structure {structure!r}")
        if structure in ("symmetric", "diagonal", "scalar") and rows != cols:
            raise LmiError(f"variable {name!r}: {structure} requires a square shape")
        self.name = name
        self.shape = (rows, cols)
        self.structure = structure

        if structure == "symmetric":
            idx = [(i, j) for j in range(cols) for i in range(j, rows)]
        elif structure == "diagonal":
            idx = [(i, i) for i in range(rows)]
        elif structure == "scalar":
            idx = None
        elif structure == "full":
            idx = [(i, j) for j in range(cols) for i in range(rows)]
        elif structure == "custom":
            basis = np.asarray(basis, dtype=float)
            if basis.ndim != 3 or basis.shape[:2] != self.shape:
                raise LmiError(f"variable {name!r}: custom basis must have shape {self.shape} + (k,)")
            flat = basis.reshape(rows * cols, -1)
            if np.linalg.matrix_rank(flat) != flat.shape[1]:
                raise LmiError(f"variable {name!r}: custom basis is not linearly independent")
            self.pattern = None
            self._entries = None
            self.basis = basis.copy()
            self._pinv = np.linalg.pinv(flat)
            return
        else:
            if pattern is None:
                raise LmiError(f"variable {name!r}: pattern structure needs a pattern")
            pattern = np.asarray(pattern) != 0
            if pattern.shape != self.shape:
                raise LmiError(f"variable {name!r}: pattern shape {pattern.shape} != {self.shape}")
            idx = [(int(i), int(j)) for j, i in zip(*np.nonzero(pattern.T))]
        self.pattern = pattern

        if idx is None:
            basis = np.eye(rows)[:, :, None].copy()
        else:
            basis = np.zeros((rows, cols, len(idx)))
            for k, (i, j) in enumerate(idx):
                basis[i, j, k] = 1.0
                if structure == "symmetric":
                    basis[j, i, k] = 1.0
        self._entries = idx
        self.basis = basis

    @property
    def size(self) -> int:
        return self.basis.shape[2]

    def value_from(self, free: np.ndarray) -> np.ndarray:
        return np.tensordot(self.basis, free, axes=([2], [0]))

    def free_from(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if self.structure == "scalar":
            return np.array([value[0, 0]])
        if self.structure == "custom":
            return self._pinv @ value.reshape(-1)
        return np.array([value[i, j] for i, j in self._entries])

    @property
    def expr(self) -> "Affine":
        return Affine(np.zeros(self.shape), {self: self.basis})

    def __repr__(self):
        return f"MatrixVariable({self.name!r}, {self.shape}, {self.structure!r})"

    # let variables take part in expressions directly
    def __add__(self, other):
        return self.expr + other

    __radd__ = __add__

    def __sub__(self, other):
        return self.expr - other

    def __rsub__(self, other):
        return other - self.expr

    def __neg__(self):
        return -self.expr

    def __mul__(self, other):
        return self.expr * other

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.expr @ other

    def __rmatmul__(self, other):
        return other @ self.expr

    @property
    def T(self):
        return self.expr.T

    def __getitem__(self, key):
        return self.expr[key]

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


def as_affine(obj, shape=None) -> "Affine":
    if isinstance(obj, Affine):
        return obj
    if isinstance(obj, MatrixVariable):
        return obj.expr
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 0:
        if shape is None:
            arr = arr.reshape(1, 1)
        else:
            arr = np.full(shape, float(arr))
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return Affine(arr, {})


class Affine:
    """Affine matrix expression ``C + sum_v sum_k x_{v,k} A_{v,k}``."""

    __array_ufunc__ = None

    def __init__(self, const: np.ndarray, coeffs: dict):
        self.const = np.asarray(const, dtype=float)
        self.coeffs = coeffs
        for var, c in coeffs.items():
            if c.shape[:2] != self.const.shape:
                raise LmiError(f"term for {var.name!r} has shape {c.shape[:2]}, expected {self.const.shape}")

    @property
    def shape(self):
        return self.const.shape

    @property
    def variables(self):
        return list(self.coeffs)

    def _combine(self, other, sign: float) -> "Affine":
        other = as_affine(other, self.shape)
        if other.shape != self.shape:
            raise LmiError(f"shape mismatch {self.shape} vs {other.shape}")
        coeffs = dict(self.coeffs)
        for var, c in other.coeffs.items():
            coeffs[var] = coeffs[var] + sign * c if var in coeffs else sign * c
        return Affine(self.const + sign * other.const, coeffs)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return as_affine(other, self.shape)._combine(self, -1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            raise LmiError("Affine * only supports scalars; use @ for matrix products")
        s = float(scalar)
        return Affine(self.const * s, {v: c * s for v, c in self.coeffs.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __matmul__(self, mat):
        if isinstance(mat, (Affine, MatrixVariable)):
            raise LmiError("product of two affine expressions is not affine")
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return Affine(
            self.const @ mat,
            {v: np.einsum("rck,cd->rdk", c, mat) for v, c in self.coeffs.items()},
        )

    def __rmatmul__(self, mat):
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return Affine(
            mat @ self.const,
            {v: np.einsum("qr,rck->qck", mat, c) for v, c in self.coeffs.items()},
        )

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, {v: c.transpose(1, 0, 2) for v, c in self.coeffs.items()})

    def __getitem__(self, key):
        r, c = key if isinstance(key, tuple) else (key, slice(None))
        rows = np.atleast_1d(np.arange(self.shape[0])[r])
        cols = np.atleast_1d(np.arange(self.shape[1])[c])
        ix = np.ix_(rows, cols)
        return Affine(self.const[ix], {v: co[ix] for v, co in self.coeffs.items()})

    def sum(self) -> "Affine":
        return Affine(
            np.array([[self.const.sum()]]),
            {v: c.sum(axis=(0, 1)).reshape(1, 1, -1) for v, c in self.coeffs.items()},
        )

    def trace(self) -> "Affine":
        if self.shape[0] != self.shape[1]:
            raise LmiError("trace of a non-square expression")
        return Affine(
            np.array([[np.trace(self.const)]]),
            {v: np.einsum("iik->k", c).reshape(1, 1, -1) for v, c in self.coeffs.items()},
        )

    def value(self, assignment: dict) -> np.ndarray:
        out = self.const.copy()
        for var, c in self.coeffs.items():
            out += np.tensordot(c, var.free_from(assignment[var.name]), axes=([2], [0]))
        return out


def bmat(blocks: Sequence[Sequence]) -> Affine:
    """Assemble a block matrix; ``None`` or scalar 0 entries become zero blocks."""
    nr, nc = len(blocks), len(blocks[0])
    heights = [None] * nr
    widths = [None] * nc
    for i, row in enumerate(blocks):
        if len(row) != nc:
            raise LmiError("ragged block matrix")
        for j, b in enumerate(row):
            if b is None or (np.isscalar(b) and b == 0):
                continue
            shp = as_affine(b).shape
            if heights[i] not in (None, shp[0]) or widths[j] not in (None, shp[1]):
                raise LmiError(f"block ({i},{j}) has incompatible shape {shp}")
            heights[i], widths[j] = shp[0], shp[1]
    if None in heights or None in widths:
        raise LmiError("cannot infer the size of an all-zero block row/column")
    ro = np.concatenate([[0], np.cumsum(heights)])
    co = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((ro[-1], co[-1]))
    coeffs: dict = {}
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None or (np.isscalar(b) and b == 0):
                continue
            a = as_affine(b)
            const[ro[i]:ro[i + 1], co[j]:co[j + 1]] = a.const
            for var, c in a.coeffs.items():
                if var not in coeffs:
                    coeffs[var] = np.zeros((ro[-1], co[-1], var.size))
                coeffs[var][ro[i]:ro[i + 1], co[j]:co[j + 1]] += c
    return Affine(const, coeffs)


def block_diag(*blocks) -> Affine:
    n = len(blocks)
    grid = [[None] * n for _ in range(n)]
    shapes = [as_affine(b).shape for b in blocks]
    for i in range(n):
        for j in range(n):
            grid[i][j] = blocks[i] if i == j else np.zeros((shapes[i][0], shapes[j][1]))
    return bmat(grid)


def check_psd(m, tol: float = 0.0) -> bool:
    """True iff the symmetric part of ``m`` has smallest eigenvalue >= -tol."""
    return min_eig(m) >= -tol


def min_eig(m) -> float:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise LmiError(f"expected a square matrix, got shape {m.shape}")
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


@dataclass
class Constraint:
    kind: str  # "psd" or "nonneg"
    expr: Affine
    strict: bool
    name: str
    mask: np.ndarray | None = None  # nonneg only: entries that are constrained


@dataclass
class LmiSolution:
    status: Status
    assignment: dict
    objective_value: float | None
    residuals: dict
    detail: str = ""
    iterations: int | None = None
    constraint_margins: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.assignment[name]


class LmiProblem:
    """Collection of variables, PSD / entrywise constraints and an objective."""

    def __init__(self, eps_strict=None, eps_feas=None, eps_gap=None, max_iters=None):
        tol = default_tolerances()
        self.eps_strict = tol["eps_strict"] if eps_strict is None else float(eps_strict)
        self.eps_feas = tol["eps_feas"] if eps_feas is None else float(eps_feas)
        self.eps_gap = tol["eps_gap"] if eps_gap is None else float(eps_gap)
        self.max_iters = tol["max_iters"] if max_iters is None else int(max_iters)
        self.variables: list[MatrixVariable] = []
        self.constraints: list[Constraint] = []
        self.objective: Affine | None = None

    def variable(self, name, shape, structure="full", pattern=None, basis=None) -> MatrixVariable:
        if any(v.name == name for v in self.variables):
            raise LmiError(f"duplicate variable name {name!r}")
        var = MatrixVariable(name, shape, structure, pattern, basis)
        self.variables.append(var)
        return var

    def _check_vars(self, expr: Affine, what: str):
        for var in expr.variables:
            if not any(var is v for v in self.variables):
                raise LmiError(f"{what} references undeclared variable {var.name!r}")

    def add_psd(self, expr, strict: bool = True, name: str = "") -> Constraint:
        """Require ``expr >= eps_strict I`` (or ``>= 0`` when not strict)."""
        expr = as_affine(expr)
        if expr.shape[0] != expr.shape[1]:
            raise LmiError(f"PSD constraint {name!r} is not square: {expr.shape}")
        self._check_vars(expr, f"constraint {name!r}")
        sym = 0.5 * (expr + expr.T)
        con = Constraint("psd", sym, strict, name or f"psd{len(self.constraints)}")
        self.constraints.append(con)
        return con

    def add_nonneg(self, expr, strict: bool = False, name: str = "", mask=None) -> Constraint:
        """Require every (masked) entry of ``expr`` to be >= 0 (> eps when strict)."""
        expr = as_affine(expr)
        self._check_vars(expr, f"constraint {name!r}")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != expr.shape:
                raise LmiError(f"mask shape {mask.shape} != expression shape {expr.shape}")
        con = Constraint("nonneg", expr, strict, name or f"nonneg{len(self.constraints)}", mask)
        self.constraints.append(con)
        return con

    def minimize(self, expr):
        expr = as_affine(expr)
        if expr.shape != (1, 1):
            raise LmiError("objective must be scalar")
        self._check_vars(expr, "objective")
        self.objective = expr

    def maximize(self, expr):
        self.minimize(-as_affine(expr))

    # -- lowering -----------------------------------------------------------

    def _offsets(self):
        off, pos = {}, 0
        for v in self.variables:
            off[v] = pos
            pos += v.size
        return off, pos

    def _rows(self, expr: Affine, off, n):
        """(dense coefficient rows, constant) of vec(expr) in column-major order."""
        r, c = expr.shape
        A = np.zeros((r * c, n))
        for var, co in expr.coeffs.items():
            A[:, off[var]:off[var] + var.size] = co.reshape(r * c, -1, order="F")
        return A, expr.const.reshape(-1, order="F")

    def lower(self):
        """Lower to ``min c'x  s.t.  G x + s = h,  s in R+^l x S^{n1} x ...``."""
        off, n = self._offsets()
        c = np.zeros(n)
        c0 = 0.0
        if self.objective is not None:
            A, k = self._rows(self.objective, off, n)
            c, c0 = A[0].copy(), float(k[0])
        lin_G, lin_h, psd_G, psd_h, psd_dims = [], [], [], [], []
        for con in self.constraints:
            A, k = self._rows(con.expr, off, n)
            shift = self.eps_strict if con.strict else 0.0
            if con.kind == "nonneg":
                keep = np.ones(A.shape[0], bool) if con.mask is None else con.mask.reshape(-1, order="F")
                lin_G.append(-A[keep])
                lin_h.append(k[keep] - shift)
            else:
                m = con.expr.shape[0]
                psd_G.append(-A)
                psd_h.append(k - shift * np.eye(m).reshape(-1, order="F"))
                psd_dims.append(m)
        G = np.vstack(lin_G + psd_G) if (lin_G or psd_G) else np.zeros((0, n))
        h = np.concatenate(lin_h + psd_h) if (lin_h or psd_h) else np.zeros(0)
        nl = int(sum(g.shape[0] for g in lin_G))
        return {"c": c, "c0": c0, "G": G, "h": h, "dims": {"l": nl, "q": [], "s": psd_dims}, "n": n}

    def dump(self, path=None) -> dict:
        """Self-describing JSON export of the lowered cone program."""
        low = self.lower()
        G = low["G"]
        rows, cols = np.nonzero(G)
        out = {
            "format": "meshdiss-conic-v1",
            "convention": "minimize c'x + c0 subject to G x + s = h, s in K",
            "cones": {"nonneg": low["dims"]["l"], "psd": low["dims"]["s"], "psd_vec": "column-major full"},
            "n_vars": low["n"],
            "variables": [
                {"name": v.name, "shape": list(v.shape), "structure": v.structure, "size": v.size}
                for v in self.variables
            ],
            "G": {"shape": list(G.shape), "i": rows.tolist(), "j": cols.tolist(), "v": G[rows, cols].tolist()},
            "h": low["h"].tolist(),
            "c": low["c"].tolist(),
            "c0": low["c0"],
        }
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(out, fh)
        return out

    # -- evaluation ---------------------------------------------------------

    def unpack(self, x: np.ndarray) -> dict:
        off, _ = self._offsets()
        return {v.name: v.value_from(x[off[v]:off[v] + v.size]) for v in self.variables}

    def verify(self, assignment: dict) -> dict:
        """Residuals of the original constraints by direct eigenvalue computation.

        ``psd``: largest violation of ``lambda_min(expr) >= eps_strict`` (or 0);
        ``elementwise``: largest violation of the entrywise constraints.
        """
        psd_viol, ew_viol, margins = 0.0, 0.0, {}
        for con in self.constraints:
            val = con.expr.value(assignment)
            shift = self.eps_strict if con.strict else 0.0
            if con.kind == "psd":
                lam = min_eig(val)
                margins[con.name] = lam
                psd_viol = max(psd_viol, shift - lam)
            else:
                vals = val if con.mask is None else val[con.mask]
                lo = float(vals.min()) if vals.size else np.inf
                margins[con.name] = lo
                ew_viol = max(ew_viol, shift - lo)
        return {"psd": max(psd_viol, 0.0), "elementwise": max(ew_viol, 0.0), "margins": margins}

    def solve(self, backend: str = "auto") -> LmiSolution:
        return solve(self, backend=backend)


def _solve_cvxopt(prob: LmiProblem, low: dict):
    import cvxopt
    from cvxopt import solvers

    opts = {
        "show_progress": False,
        "maxiters": prob.max_iters,
        "abstol": prob.eps_gap,
        "reltol": prob.eps_gap,
        # cvxopt measures feasibility on its own scaled residuals, which can stall
        # at 1e-8 on well-solved problems; eps_feas is enforced by verify() instead
        "feastol": 10 * prob.eps_feas,
    }
    G = cvxopt.sparse(cvxopt.matrix(low["G"]))
    h = cvxopt.matrix(low["h"])
    c = cvxopt.matrix(low["c"])
    res = solvers.conelp(c, G, h, low["dims"], options=opts)
    x = None if res["x"] is None else np.array(res["x"]).ravel()
    status = res["status"]
    info = {
        "raw_status": status,
        "iterations": res.get("iterations"),
        "pinfres": res.get("residual as primal infeasibility certificate"),
        "dinfres": res.get("residual as dual infeasibility certificate"),
        "gap": res.get("relative gap"),
    }
    if status == "optimal":
        kind = "optimal"
    elif status == "primal infeasible":
        kind = "infeasible"
    elif status == "dual infeasible":
        kind = "unbounded"
    else:
        pinf = info["pinfres"]
        kind = "near_infeasible" if pinf is not None and pinf < 1e-6 else "unknown"
    return kind, x, info


def _solve_clarabel(prob: LmiProblem, low: dict):
    import clarabel
    from scipy import sparse

    n = low["n"]
    nl = low["dims"]["l"]
    G, h = low["G"], low["h"]
    rows_A, rows_b, cones = [], [], []
    if nl:
        rows_A.append(G[:nl])
        rows_b.append(h[:nl])
        cones.append(clarabel.NonnegativeConeT(nl))
    pos = nl
    for m in low["dims"]["s"]:
        blk_G = G[pos:pos + m * m]
        blk_h = h[pos:pos + m * m]
        pos += m * m
        # scaled upper-triangular vectorization, column by column
        idx, scale = [], []
        for j in range(m):
            for i in range(j + 1):
                idx.append(j * m + i)
                scale.append(1.0 if i == j else np.sqrt(2.0))
        idx = np.array(idx)
        scale = np.array(scale)
        rows_A.append(blk_G[idx] * scale[:, None])
        rows_b.append(blk_h[idx] * scale)
        cones.append(clarabel.PSDTriangleConeT(m))
    A = sparse.csc_matrix(np.vstack(rows_A)) if rows_A else sparse.csc_matrix((0, n))
    b = np.concatenate(rows_b) if rows_b else np.zeros(0)
    P = sparse.csc_matrix((n, n))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = prob.max_iters
    # internal targets sit below the verification tolerance
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-2 * prob.eps_gap
    settings.tol_feas = 1e-2 * prob.eps_feas
    # chordal decomposition stalls on some small dense LMIs; the problems here gain nothing from it
    settings.chordal_decomposition_enable = False
    settings.time_limit = CLARABEL_TIME_LIMIT
    solver = clarabel.DefaultSolver(P, low["c"], A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    x = np.array(sol.x)
    info = {"raw_status": status, "iterations": sol.iterations}
    if status == "Solved":
        kind = "optimal"
    elif status == "PrimalInfeasible":
        kind = "infeasible"
    elif status == "DualInfeasible":
        kind = "unbounded"
    elif status == "AlmostPrimalInfeasible":
        kind = "near_infeasible"
    else:
        kind = "unknown"
    return kind, x, info


_BACKENDS = {"cvxopt": _solve_cvxopt, "clarabel": _solve_clarabel}


def solve(prob: LmiProblem, backend: str = "auto") -> LmiSolution:
    """Solve ``prob`` and independently re-verify the returned point.

    ``backend="auto"`` tries cvxopt, then Clarabel when the first answer is
    neither verified nor a certified infeasibility.
    """
    if backend == "auto":
        return solve_first(prob, ("cvxopt", "clarabel"))
    if backend not in _BACKENDS:
        raise LmiError(f"unknown backend {backend!r}")
    low = prob.lower()
    has_obj = prob.objective is not None
    empty = {"psd": np.inf, "elementwise": np.inf, "margins": {}}

    if low["n"] == 0:
        assignment = {}
        res = prob.verify(assignment)
        ok = res["psd"] <= prob.eps_feas and res["elementwise"] <= prob.eps_feas
        obj = float(prob.objective.const[0, 0]) if has_obj else None
        status = (Status.OPTIMAL if has_obj else Status.FEASIBLE) if ok else Status.INFEASIBLE
        return LmiSolution(status, assignment, obj, res, "no decision variables", 0, res["margins"])

    try:
        kind, x, info = _BACKENDS[backend](prob, low)
    except (ArithmeticError, ValueError) as exc:
        log.debug("backend %s raised %s", backend, exc)
        return LmiSolution(Status.NUMERICAL_FAILURE, {}, None, empty, f"{backend}: {exc}")

    if kind == "infeasible":
        return LmiSolution(Status.INFEASIBLE, {}, None, empty, "certified", info.get("iterations"))
    if kind == "unbounded" or x is None or not np.all(np.isfinite(x)):
        return LmiSolution(Status.NUMERICAL_FAILURE, {}, None, empty, f"{kind} ({info['raw_status']})",
                           info.get("iterations"))

    assignment = prob.unpack(x)
    res = prob.verify(assignment)
    obj = float(prob.objective.value(assignment)[0, 0]) if has_obj else None
    passed = res["psd"] <= prob.eps_feas and res["elementwise"] <= prob.eps_feas
    if kind == "optimal" and passed:
        status, detail = (Status.OPTIMAL if has_obj else Status.FEASIBLE), ""
    elif passed:
        # the solver stopped early but the point satisfies every constraint
        status, detail = Status.FEASIBLE, f"inaccurate ({info['raw_status']})"
    elif kind == "near_infeasible":
        status, detail = Status.INFEASIBLE, "near-certificate at iteration limit"
    elif kind == "optimal":
        status, detail = Status.NUMERICAL_FAILURE, "solver optimal but verification failed"
    else:
        big = max(res["psd"], res["elementwise"]) > 1e-3
        status = Status.INFEASIBLE if big else Status.NUMERICAL_FAILURE
        detail = "max-iterations with large residual" if big else f"stalled ({info['raw_status']})"
    return LmiSolution(status, assignment, obj, res, detail, info.get("iterations"), res["margins"])


def solve_first(prob: LmiProblem, backends: Iterable[str] = ("cvxopt", "clarabel")) -> LmiSolution:
    """Try backends in order until one returns a verified or certified answer."""
    sol = None
    for backend in backends:
        sol = solve(prob, backend)
        sol.detail = f"{backend}: {sol.detail}" if sol.detail else backend
        if sol.status.ok or (sol.status is Status.INFEASIBLE and sol.detail.endswith("certified")):
            return sol
    return sol
