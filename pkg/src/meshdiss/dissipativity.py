"""Dissipativity certificates and topology design across node, group and network levels.

Conventions used throughout:

* A node certificate is ``X = [[a, b], [b, c]]`` with storage ``V = p x^2 / 2``.
  Passivity indices follow the IF-OFP sign map ``nu = -a`` and ``rho = -c``,
  so "maximize the indices" means "minimize ``a + c``".
* Group storage is ``V_i = sum_k p_ik V_ik`` and network storage is
  ``V = sum_i p_i V_i``.
* The network L2 target is ``[[g I, 0], [0, -I]]``; ``g`` is the LMI
  decision variable and the reported L2 gain is ``gamma = sqrt(g)``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from . import lmicore as lc
from .lmicore import LmiProblem, Status, bmat
from .netmodel import Group, NodeParams, SpreadingNetwork

log = logging.getLogger(__name__)


class AssumptionError(ValueError):
    """A supply-rate matrix violates a precondition (e.g. ``X11 > 0``)."""


class InfeasibleError(RuntimeError):
    """An LMI stage has no solution; carries where it failed and what to change."""

    def __init__(self, message, stage="", group=None, node=None, recommendation="", detail=None):
        super().__init__(message)
        self.stage = stage
        self.group = group
        self.node = node
        self.recommendation = recommendation
        self.detail = detail or {}

    def to_dict(self):
        return {
            "message": str(self),
            "stage": self.stage,
            "group": self.group,
            "node": self.node,
            "recommendation": self.recommendation,
            "detail": _jsonable(self.detail),
        }


class SmsError(ValueError):
    """Mesh-stability conditions do not apply to a certificate."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


# -- supply-rate matrices -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class XSpec:
    """Quadratic supply-rate matrix ``[[x11, x12], [x12.T, x22]]``."""

    x11: np.ndarray
    x12: np.ndarray
    x22: np.ndarray
    role: str = "general"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        x11 = np.atleast_2d(np.asarray(self.x11, dtype=float))
        x22 = np.atleast_2d(np.asarray(self.x22, dtype=float))
        x12 = np.atleast_2d(np.asarray(self.x12, dtype=float))
        if x11.shape[0] != x11.shape[1] or x22.shape[0] != x22.shape[1]:
            raise AssumptionError("diagonal blocks must be square")
        if x12.shape != (x11.shape[0], x22.shape[0]):
            raise AssumptionError(f"x12 has shape {x12.shape}, expected {(x11.shape[0], x22.shape[0])}")
        for name, blk in (("x11", x11), ("x22", x22)):
            if not np.allclose(blk, blk.T, atol=1e-12):
                raise AssumptionError(f"{name} must be symmetric")
        object.__setattr__(self, "x11", x11)
        object.__setattr__(self, "x12", x12)
        object.__setattr__(self, "x22", x22)
        if self.role not in ("general", "passive", "ifofp", "l2g"):
            raise AssumptionError(f"unknown role {self.role!r}")

    @property
    def x21(self) -> np.ndarray:
        return self.x12.T

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.x11, self.x12], [self.x21, self.x22]])

    @property
    def n_in(self) -> int:
        return self.x11.shape[0]

    @property
    def n_out(self) -> int:
        return self.x22.shape[0]

    @classmethod
    def passive(cls, n: int = 1) -> "XSpec":
        return cls(np.zeros((n, n)), 0.5 * np.eye(n), np.zeros((n, n)), "passive")

    @classmethod
    def ifofp(cls, nu, rho, n: int = 1) -> "XSpec":
        return cls(-nu * np.eye(n), 0.5 * np.eye(n), -rho * np.eye(n), "ifofp", {"nu": nu, "rho": rho})

    @classmethod
    def l2g(cls, gamma, n: int = 1) -> "XSpec":
        return cls(gamma**2 * np.eye(n), np.zeros((n, n)), -np.eye(n), "l2g", {"gamma": gamma})

    def role_consistent(self, tol: float = 1e-12) -> bool:
        n = self.n_in
        if self.role == "passive":
            ref = XSpec.passive(n)
        elif self.role == "ifofp":
            ref = XSpec.ifofp(self.params["nu"], self.params["rho"], n)
        elif self.role == "l2g":
            ref = XSpec.l2g(self.params["gamma"], n)
        else:
            return True
        return np.allclose(self.matrix, ref.matrix, atol=tol)

    def require_composable(self, what="subsystem"):
        lam = float(np.linalg.eigvalsh(self.x11)[0])
        if lam <= 0:
            raise AssumptionError(f"{what}: X11 must be positive definite (min eigenvalue {lam:.3g})")

    def to_dict(self):
        return {"x11": self.x11.tolist(), "x12": self.x12.tolist(), "x22": self.x22.tolist(),
                "role": self.role, "params": _jsonable(self.params)}


# -- node level ----------------------------------------------------------------


@dataclass
class NodeCertificate:
    x: XSpec
    p: float
    branch: int
    shadow: tuple | None = None  # (a_bar, b_bar, c_bar)
    objective: float | None = None
    residuals: dict = field(default_factory=dict)
    node: NodeParams | None = None

    @property
    def a(self) -> float:
        return float(self.x.x11[0, 0])

    @property
    def b(self) -> float:
        return float(self.x.x12[0, 0])

    @property
    def c(self) -> float:
        return float(self.x.x22[0, 0])

    def to_dict(self):
        return _jsonable({
            "a": self.a, "b": self.b, "c": self.c, "p": self.p, "branch": self.branch,
            "shadow": None if self.shadow is None else dict(zip(("a_bar", "b_bar", "c_bar"), self.shadow)),
            "objective": self.objective, "residuals": self.residuals,
        })


def node_branch_holds(a, b, c, p, gamma_min, tol=1e-9) -> int | None:
    """Which branch of the node dissipativity disjunction ``(a, b, c, p)`` satisfies, if any."""
    if p <= 0:
        return None
    cc = c + p * gamma_min
    if a >= -tol and 2 * b - p >= -tol and cc >= -tol:
        return 1
    if a > 0 and b <= tol and a * cc - b * b >= -tol * max(1.0, a) and cc >= -tol:
        return 2
    return None


def _node_branch_problem(gamma_min, branch, b, eps_strict, p_max, m_self=None, b_bar=None):
    pr = LmiProblem(eps_strict=eps_strict)
    p = pr.variable("p", 1, "scalar")
    a = pr.variable("a", 1, "scalar")
    c = pr.variable("c", 1, "scalar")
    bb = b if b is not None else pr.variable("b", 1, "scalar")
    pr.add_nonneg(p, strict=True, name="p>0")
    pr.add_nonneg(p_max - p.expr, name="p<=p_max")
    if branch == 1:
        pr.add_nonneg(a, name="a>=0")
        pr.add_nonneg(2 * lc.as_affine(bb) - p, name="2b-p>=0")
        pr.add_nonneg(c + gamma_min * p, name="c+p(gbar-delta)>=0")
    else:
        pr.add_nonneg(a, strict=True, name="a>0")
        pr.add_nonneg(-lc.as_affine(bb), name="b<=0")
        pr.add_psd(bmat([[a, bb], [bb, c + gamma_min * p]]), strict=False, name="branch2")
    obj = a + c
    if m_self is not None:
        ab = pr.variable("a_bar", 1, "scalar")
        cb = pr.variable("c_bar", 1, "scalar")
        pr.add_psd(node_shadow_matrix(a, bb, c, ab, b_bar, cb, m_self), name="Phi~_ik")
        obj = obj + ab + cb
    pr.minimize(obj)
    return pr


def node_shadow_matrix(a, b, c, a_bar, b_bar, c_bar, m):
    """The 4x4 node-level necessary-condition matrix (self-loop weight ``m``)."""
    z = np.zeros((1, 1))
    a, b, c = lc.as_affine(a), lc.as_affine(b), lc.as_affine(c)
    a_bar, b_bar, c_bar = lc.as_affine(a_bar), lc.as_affine(b_bar), lc.as_affine(c_bar)
    return bmat([
        [a, z, a * m, a],
        [z, -c_bar, -c_bar, z],
        [a * m, -c_bar, -2 * m * b - c, b_bar - b],
        [a, z, b_bar - b, a_bar],
    ])


def _polish(branch, a, b, c, p, gamma_min, p_max):
    """Project a solver point onto the exact branch constraints.

    Interior-point solutions satisfy non-strict constraints only up to the
    solver tolerance (``a`` around ``-1e-9``), which the grid oracle
    magnifies by ``u^2``. The moves here are of that size.
    """
    p = min(max(p, 0.0), p_max)
    if branch == 1:
        a = max(a, 0.0)
        c = max(c, -p * gamma_min)
    else:
        c = max(c, b * b / a - p * gamma_min)
    return a, c, p


def _best_branch(problems, node, what):
    best = None
    for branch, pr in problems:
        sol = pr.solve()
        log.debug("%s branch %d: %s %s", what, branch, sol.status.value, sol.detail)
        if sol.status.ok and (best is None or sol.objective_value < best[1].objective_value):
            best = (branch, sol)
    return best


def node_dissipativity(n: NodeParams, mode="max_indices", eps_strict=1e-6, p_max=1.0) -> NodeCertificate:
    """Node supply-rate certificate maximizing the passivity indices.

    ``mode="max_indices"`` fixes ``b = 1/2`` (IF-OFP form); a float fixes
    ``b`` to that value. Both branches are solved and the lower ``a + c``
    kept. ``p`` is capped at ``p_max`` because (p, X) are only defined up
    to a common positive scale.
    """
    b = 0.5 if mode == "max_indices" else float(mode)
    gmin = n.gamma_min
    if gmin <= 0:
        raise InfeasibleError("gamma_bar - delta must be positive", stage="node",
                              recommendation="increase the recovery rate or shrink its deviation bound")
    probs = [(br, _node_branch_problem(gmin, br, b, eps_strict, p_max)) for br in (1, 2)]
    best = _best_branch(probs, n, "node")
    if best is None:
        raise InfeasibleError(f"no node certificate with b={b}", stage="node")
    branch, sol = best
    a, c, p = _polish(branch, float(sol["a"][0, 0]), b, float(sol["c"][0, 0]), float(sol["p"][0, 0]),
                      gmin, p_max)
    return NodeCertificate(XSpec([[a]], [[b]], [[c]], "ifofp" if b == 0.5 else "general",
                                 {"nu": -a, "rho": -c} if b == 0.5 else {}),
                           p, branch, None, sol.objective_value,
                           {"psd": sol.residuals["psd"], "elementwise": sol.residuals["elementwise"]}, n)


def node_problem_pik(n: NodeParams, m_self: float, eps_strict=1e-6, p_max=1.0,
                     b=0.5, b_bar=0.5) -> NodeCertificate:
    """Node certificate jointly with the group-level shadow ``(a_bar, b_bar, c_bar)``.

    Minimizes ``a + c + a_bar + c_bar`` (largest node and shadow passivity
    indices) subject to the node disjunction and the 4x4 necessary condition
    built from the self-loop weight ``m_self``.
    """
    gmin = n.gamma_min
    probs = [(br, _node_branch_problem(gmin, br, b, eps_strict, p_max, m_self, b_bar)) for br in (1, 2)]
    best = _best_branch(probs, n, "P_ik")
    if best is None:
        raise InfeasibleError(
            f"node problem infeasible for self-loop weight {m_self:.6g}", stage="P_ik",
            recommendation="reduce the intra-group self-infection weight",
            detail={"m_self": m_self, "max_feasible_m_self": max_feasible_self_loop(n, eps_strict, p_max, b, b_bar)},
        )
    branch, sol = best
    a, c, p = _polish(branch, float(sol["a"][0, 0]), b, float(sol["c"][0, 0]), float(sol["p"][0, 0]),
                      gmin, p_max)
    shadow = (float(sol["a_bar"][0, 0]), b_bar, float(sol["c_bar"][0, 0]))
    return NodeCertificate(XSpec([[a]], [[b]], [[c]], "ifofp", {"nu": -a, "rho": -c}), p, branch, shadow,
                           sol.objective_value,
                           {"psd": sol.residuals["psd"], "elementwise": sol.residuals["elementwise"]}, n)


def max_feasible_self_loop(n: NodeParams, eps_strict=1e-6, p_max=1.0, b=0.5, b_bar=0.5,
                           hi=None, iters=40) -> float:
    """Bisection for the largest self-loop weight keeping the node problem feasible."""

    def feasible(m):
        for br in (1, 2):
            if _node_branch_problem(n.gamma_min, br, b, eps_strict, p_max, m, b_bar).solve().status.ok:
                return True
        return False

    lo = 0.0
    if not feasible(lo):
        return float("nan")
    hi = 4.0 * n.gamma_bar if hi is None else hi
    while feasible(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            return float("inf")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
    return lo




def passive_certificate(n: NodeParams, p: float = 1.0) -> NodeCertificate:
    """Closed-form passivity certificate (``a = c = 0``, ``b = 1/2``), valid for ``0 < p <= 1``."""
    if not 0 < p <= 1:
        raise ValueError("closed-form certificates need 0 < p <= 1")
    return NodeCertificate(XSpec.passive(1), float(p), 1, node=n)


def ifofp_certificate(n: NodeParams, p: float = 1.0) -> NodeCertificate:
    """Closed-form IF-OFP certificate with ``nu = 0`` and the largest output index ``rho = p (gamma_bar - delta)``."""
    if not 0 < p <= 1:
        raise ValueError("closed-form certificates need 0 < p <= 1")
    rho = p * n.gamma_min
    return NodeCertificate(XSpec.ifofp(0.0, rho, 1), float(p), 1, node=n)


# -- generic networked composition ---------------------------------------------


def _mul(x, y):
    """Product of two matrices where at most one carries decision variables."""
    x, y = lc.as_affine(x), lc.as_affine(y)
    if not x.coeffs:
        return y.__rmatmul__(x.const)
    if not y.coeffs:
        return x @ y.const
    raise lc.LmiError("product of two affine expressions is not affine")


def psi_matrix(Xp11, Xp12, Xp22, target, L_uy=None, L_uw=None, M_zy=None, M_zw=None,
               Xbf12=None, m_uy=None):
    """Block LMI certifying that ``u = M_uy y + M_uw w``, ``z = M_zy y + M_zw w`` is target-dissipative.

    ``Xp*`` are the storage-weighted subsystem blocks ``diag(p_i X_i^kl)``
    and ``Xbf12 = diag(X_i^11^{-1} X_i^12)``. ``target`` is an
    :class:`XSpec` or a tuple ``(T11, T12, T22)`` whose entries may be
    affine expressions. Either ``L_uy = Xp11 M_uy`` is given (design) or a
    fixed ``m_uy`` (analysis); in the latter case the cross terms are formed
    as ``Xp21 m_uy`` directly, which avoids dividing by small ``X_i^11``.
    ``L_uw = None`` pins ``M_uw = I`` and the same shortcut applies.
    ``M_zy`` and ``M_zw`` default to ``I`` and ``0``.
    """
    A = lc.as_affine
    Xp11, Xp12, Xp22 = A(Xp11), A(Xp12), A(Xp22)
    if isinstance(target, XSpec):
        T11, T12, T22 = target.x11, target.x12, target.x22
    else:
        T11, T12, T22 = target
    T11, T12, T22 = A(T11), A(T12), A(T22)
    n, r, q = Xp11.shape[0], T22.shape[0], T11.shape[0]
    if m_uy is not None:
        m_uy = np.asarray(m_uy, dtype=float)
        L_uy = Xp11 @ m_uy
        x21_luy = Xp12.T @ m_uy
    else:
        if Xbf12 is None:
            raise lc.LmiError("a free L_uy needs Xbf12")
        L_uy = A(L_uy)
        x21_luy = _mul(np.asarray(Xbf12).T, L_uy)
    if L_uw is None:
        L_uw = Xp11
        x21_luw = Xp12.T
    else:
        if Xbf12 is None:
            raise lc.LmiError("a free L_uw needs Xbf12")
        L_uw = A(L_uw)
        x21_luw = _mul(np.asarray(Xbf12).T, L_uw)
    M_zy = A(np.eye(r, n) if M_zy is None else M_zy)
    M_zw = A(np.zeros((r, q)) if M_zw is None else M_zw)
    t22_zy, t22_zw = _mul(T22, M_zy), _mul(T22, M_zw)
    t12_zy, t12_zw = _mul(T12, M_zy), _mul(T12, M_zw)
    z_nr = np.zeros((n, r))
    return bmat([
        [Xp11, z_nr, L_uy, L_uw],
        [z_nr.T, -T22, -t22_zy, -t22_zw],
        [L_uy.T, -t22_zy.T, -x21_luy - x21_luy.T - Xp22, -x21_luw + t12_zy.T],
        [L_uw.T, -t22_zw.T, -x21_luw.T + t12_zy, t12_zw.T + t12_zw + T11],
    ])


def _check_subsystems(subsystems, target):
    for i, x in enumerate(subsystems):
        x.require_composable(f"subsystem {i}")
    if float(np.linalg.eigvalsh(target.x22)[-1]) >= 0:
        raise AssumptionError("target X22 must be negative definite")


def _block_scalar_basis(sizes):
    """Basis for ``diag(p_1 I_{n_1}, ..., p_N I_{n_N})``."""
    n = int(sum(sizes))
    basis = np.zeros((n, n, len(sizes)))
    off = 0
    for i, s in enumerate(sizes):
        basis[off:off + s, off:off + s, i] = np.eye(s)
        off += s
    return basis


def _weighted_blocks(P, subsystems, key):
    """``diag(p_i X_i^key)`` as an affine expression of the block-scalar variable ``P``."""
    return P @ block_diag(*[getattr(x, key) for x in subsystems])


@dataclass
class GenericDesign:
    status: Status
    m_uy: np.ndarray | None
    m_uw: np.ndarray | None
    m_zy: np.ndarray | None
    m_zw: np.ndarray | None
    p: np.ndarray | None
    phi_min_eig: float
    detail: str = ""


def generic_design(subsystems, target: XSpec, mode="fixed_blocks", pattern=None, eps_strict=1e-6,
                   pinned=None) -> GenericDesign:
    """Design the interconnection of square subsystems so the network is ``target``-dissipative.

    ``mode="fixed_blocks"`` pins ``M_uw = I``, ``M_zy = I``, ``M_zw = 0`` and
    designs ``M_uy`` only. ``mode="full"`` also designs the disturbance and
    performance blocks; entries of ``pinned`` (keys ``m_uy``, ``m_uw``,
    ``m_zy``, ``m_zw``) fix individual blocks instead. ``pattern`` restricts
    the support of ``M_uy``.
    """
    subsystems = list(subsystems)
    _check_subsystems(subsystems, target)
    if mode not in ("fixed_blocks", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    pinned = dict(pinned or {})
    sizes = [x.n_in for x in subsystems]
    n, q, r = sum(sizes), target.n_in, target.n_out
    if mode == "fixed_blocks":
        if q != n or r != n:
            raise AssumptionError("fixed_blocks mode needs target dimensions equal to the subsystem total")
        pinned.update(m_uw=np.eye(n), m_zy=np.eye(n), m_zw=np.zeros((n, n)))
    pr = LmiProblem(eps_strict=eps_strict)
    P = pr.variable("p", n, "custom", basis=_block_scalar_basis(sizes))
    pr.add_nonneg(P.expr, strict=True, name="p>0", mask=np.eye(n, dtype=bool))
    Xp11 = _weighted_blocks(P, subsystems, "x11")
    Xp12 = _weighted_blocks(P, subsystems, "x12")
    Xp22 = _weighted_blocks(P, subsystems, "x22")
    Xbf12 = block_diag(*[np.linalg.solve(x.x11, x.x12) for x in subsystems])

    m_uy = pinned.get("m_uy")
    L_uy = None
    if m_uy is None:
        L_uy = pr.variable("L_uy", (n, n), "full" if pattern is None else "pattern", pattern=pattern)
    if "m_uw" in pinned:
        m_uw = np.asarray(pinned["m_uw"], dtype=float)
        L_uw = None if (m_uw.shape == (n, n) and np.array_equal(m_uw, np.eye(n))) else Xp11 @ m_uw
    else:
        L_uw = pr.variable("L_uw", (n, q), "full")
    M_zy = pinned["m_zy"] if "m_zy" in pinned else pr.variable("M_zy", (r, n), "full")
    M_zw = pinned["m_zw"] if "m_zw" in pinned else pr.variable("M_zw", (r, q), "full")
    if L_uw is None and q != n:
        raise AssumptionError("M_uw = I needs as many disturbance channels as subsystem inputs")
    phi = psi_matrix(Xp11, Xp12, Xp22, target, L_uy=L_uy, L_uw=L_uw, M_zy=M_zy, M_zw=M_zw,
                     Xbf12=Xbf12, m_uy=m_uy)
    pr.add_psd(phi, name="Psi" if mode == "full" else "Phi")
    sol = pr.solve()
    if not sol.status.ok:
        return GenericDesign(sol.status, None, None, None, None, None, float("nan"), sol.detail)
    Xp11v = Xp11.value(sol.assignment)
    p = np.array([sol["p"][o, o] for o in np.cumsum([0] + sizes[:-1])])
    out_uy = np.asarray(m_uy, dtype=float) if m_uy is not None else np.linalg.solve(Xp11v, sol["L_uy"])
    if "m_uw" in pinned:
        out_uw = np.asarray(pinned["m_uw"], dtype=float)
    else:
        out_uw = np.linalg.solve(Xp11v, sol["L_uw"])
    out_zy = np.asarray(pinned["m_zy"], dtype=float) if "m_zy" in pinned else sol["M_zy"]
    out_zw = np.asarray(pinned["m_zw"], dtype=float) if "m_zw" in pinned else sol["M_zw"]
    return GenericDesign(sol.status, out_uy, out_uw, out_zy, out_zw, p,
                         lc.min_eig(phi.value(sol.assignment)), sol.detail)


@dataclass
class ShadowResult:
    feasible: bool
    status: Status
    x_bar: XSpec | None
    min_eig: float
    detail: str = ""


def necessary_condition_block(x_i: XSpec, m_self, x12_bar=None, eps_strict=1e-6,
                              structure="symmetric") -> ShadowResult:
    """Check the per-subsystem necessary condition for any feasible fixed-blocks design.

    Searches shadow blocks ``(X11_bar, X12_bar, X22_bar)`` making the
    subsystem's diagonal block of the network LMI positive definite, given
    its own certificate ``x_i`` and self-interconnection ``m_self``.
    ``x12_bar`` fixes the off-diagonal shadow block (``1/2`` reproduces the
    node-level condition used in the pipeline); ``structure`` is the shape
    of the diagonal shadow blocks (``symmetric`` or ``diagonal``).
    """
    x_i.require_composable("subsystem")
    m = np.atleast_2d(np.asarray(m_self, dtype=float))
    k = x_i.n_in
    if m.shape != (k, k):
        raise AssumptionError(f"self-interconnection has shape {m.shape}, expected {(k, k)}")
    pr = LmiProblem(eps_strict=eps_strict)
    t11 = pr.variable("X11_bar", k, structure)
    t22 = pr.variable("X22_bar", k, structure)
    t12 = pr.variable("X12_bar", k, "full") if x12_bar is None else np.atleast_2d(np.asarray(x12_bar, float))
    if np.ndim(t12) == 2 and t12.shape == (1, 1) and k > 1:
        t12 = float(t12[0, 0]) * np.eye(k)
    phi = psi_matrix(x_i.x11, x_i.x12, x_i.x22, (t11, t12, t22), m_uy=m)
    pr.add_psd(phi, name="Phi~_ii")
    sol = pr.solve()
    if not sol.status.ok:
        return ShadowResult(False, sol.status, None, float("nan"), sol.detail)
    x12v = sol["X12_bar"] if x12_bar is None else np.asarray(t12, dtype=float)
    xb = XSpec(sol["X11_bar"], x12v, sol["X22_bar"])
    return ShadowResult(True, sol.status, xb, lc.min_eig(phi.value(sol.assignment)), sol.detail)


# -- group level ---------------------------------------------------------------


@dataclass
class GroupCertificate:
    """Group supply rate ``[[X11, I/2], [I/2, X22]]`` (diagonal blocks) with its node weights."""

    index: int
    x: XSpec
    p_nodes: np.ndarray
    gbar: float
    nodes: list
    phi_min_eig: float
    phi_tilde_min_eig: float
    objective: float | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def x11(self) -> np.ndarray:
        return np.diag(self.x.x11).copy()

    @property
    def x22(self) -> np.ndarray:
        return np.diag(self.x.x22).copy()

    @property
    def storage(self) -> np.ndarray:
        """``P_i`` with ``V_i = x^T P_i x``: node storages ``p_k x_k^2 / 2`` weighted by ``p_ik``."""
        return 0.5 * np.diag(self.p_nodes * np.array([c.p for c in self.nodes]))

    def to_dict(self):
        return _jsonable({
            "index": self.index, "x11": self.x11, "x22": self.x22, "x12": 0.5,
            "p_nodes": self.p_nodes, "gbar": self.gbar, "storage_diag": np.diag(self.storage),
            "phi_min_eig": self.phi_min_eig, "phi_tilde_min_eig": self.phi_tilde_min_eig,
            "objective": self.objective, "residuals": self.residuals,
            "nodes": [c.to_dict() for c in self.nodes],
        })


def group_blocks(group: Group, node_certs):
    """Constant per-node certificate blocks ``diag(a_k)``, ``diag(b_k)``, ``diag(c_k)``."""
    if len(node_certs) != group.size:
        raise ValueError(f"expected {group.size} node certificates, got {len(node_certs)}")
    a = np.diag([c.a for c in node_certs])
    b = np.diag([c.b for c in node_certs])
    c = np.diag([c.c for c in node_certs])
    return a, b, c


def _group_problem(group: Group, node_certs, eps_strict):
    n = group.size
    a, b, c = group_blocks(group, node_certs)
    pr = LmiProblem(eps_strict=eps_strict)
    P = pr.variable("p", n, "diagonal")
    X11 = pr.variable("X11", n, "diagonal")
    X22 = pr.variable("X22", n, "diagonal")
    gb = pr.variable("gbar", n, "scalar")
    pr.add_nonneg(P.expr, strict=True, name="p>0", mask=np.eye(n, dtype=bool))
    half = 0.5 * np.eye(n)
    phi = psi_matrix(P @ a, P @ b, P @ c, (X11, half, X22), m_uy=group.m_intra)
    phit = psi_matrix(X11, half, X22, (gb, np.zeros((n, n)), -np.eye(n)), m_uy=np.zeros((n, n)))
    pr.add_psd(phi, name="Phi_i")
    pr.add_psd(phit, name="Phi~_i")
    pr.minimize(X11.expr.trace() + X22.expr.trace() + gb.expr[0, 0])
    return pr, phi, phit


def group_problem_pi(group: Group, node_certs, index: int = 0, eps_strict=1e-6) -> GroupCertificate:
    """Group certificate from fixed node certificates.

    Minimizes ``tr X11 + tr X22 + gbar`` subject to the group composition
    LMI (self-interconnection ``M_ii``) and the group-level necessary
    condition for a later network L2-gain design.
    """
    for k, cert in enumerate(node_certs):
        if cert.a <= 0:
            raise AssumptionError(f"group {index} node {k}: node certificate needs a > 0 to be composed")
    pr, phi, phit = _group_problem(group, node_certs, eps_strict)
    sol = pr.solve()
    if not sol.status.ok:
        failing = []
        for k, cert in enumerate(node_certs):
            res = necessary_condition_block(cert.x, group.m_intra[k, k], x12_bar=0.5, eps_strict=eps_strict)
            if not res.feasible:
                failing.append(k)
        rec = ("reduce self-infection of the listed nodes" if failing
               else "no single diagonal block fails; reduce intra-group coupling weights")
        raise InfeasibleError(f"group problem infeasible ({sol.status.value}: {sol.detail})", stage="P_i",
                              group=index, node=failing[0] if failing else None, recommendation=rec,
                              detail={"failing_blocks": failing})
    n = group.size
    x = XSpec(sol["X11"], 0.5 * np.eye(n), sol["X22"])
    return GroupCertificate(index, x, np.diag(sol["p"]).copy(), float(sol["gbar"][0, 0]), list(node_certs),
                            lc.min_eig(phi.value(sol.assignment)), lc.min_eig(phit.value(sol.assignment)),
                            sol.objective_value,
                            {"psd": sol.residuals["psd"], "elementwise": sol.residuals["elementwise"]})


# -- mesh stability ------------------------------------------------------------


def sms_quantities(gc: GroupCertificate, eps_strict=1e-6) -> dict:
    """Gains of the group ISS bound derived from its certificate and quadratic storage.

    Uses ``Q = -sym(X22 + X21) - eps I`` and ``R = sym(X11 + X12) + eps I``.
    The cross term ``2 x^T X21 u`` is split with Young's inequality, which
    is valid here because ``X12 = I/2`` is symmetric positive semidefinite.
    """
    sym = lambda m: 0.5 * (m + m.T)  # noqa: E731
    n = gc.x.n_in
    Q = -sym(gc.x.x22 + gc.x.x21) - eps_strict * np.eye(n)
    R = sym(gc.x.x11 + gc.x.x12) + eps_strict * np.eye(n)
    lq = float(np.linalg.eigvalsh(Q)[0])
    if lq <= 0:
        raise SmsError(f"group {gc.index}: -(X22 + X21) is not positive definite (min eig {lq:.3g})")
    ev_p = np.linalg.eigvalsh(gc.storage)
    if ev_p[0] <= 0:
        raise SmsError(f"group {gc.index}: storage matrix is not positive definite")
    lr = float(np.linalg.eigvalsh(R)[-1])
    return {
        "lambda1": math.sqrt(lr * ev_p[-1] / (ev_p[0] * lq)),
        "lambda2": math.sqrt(ev_p[-1] / ev_p[0]),
        "mu": lq / ev_p[-1],
        "q_min": lq,
        "r_max": lr,
    }


def sms_report(net: SpreadingNetwork, group_certs, m_inter=None, eps_strict=1e-6) -> dict:
    """Post-hoc small-gain check ``lambda1_i * sum_j ||M_ij||_2 < 1`` for every group."""
    M = net.m_inter if m_inter is None else np.asarray(m_inter, dtype=float)
    rows = []
    for i, gc in enumerate(group_certs):
        q = sms_quantities(gc, eps_strict)
        total = sum(float(np.linalg.norm(net.block(i, j, M), 2)) for j in range(len(net.groups)) if j != i)
        lhs = q["lambda1"] * total
        rows.append({**q, "group": i, "row_norm_sum": total, "lhs": lhs, "satisfied": bool(lhs < 1.0)})
    return {"groups": rows, "satisfied": all(r["satisfied"] for r in rows)}


# -- network level -------------------------------------------------------------


@dataclass
class DesignConfig:
    """Settings for the network topology design.

    ``c_m`` weighs the L1 deviation from the nominal inter-group weights,
    ``alpha`` the entrywise L1 norm of the storage-weighted ``X11`` blocks
    and ``beta`` the L2 gain variable ``g``. ``delta_m`` bounds the
    fractional reduction of each weight. ``upper_bound=False`` replaces
    ``M <= M0`` by ``M <= (1 + delta_m) M0``.
    """

    c_m: float = 1.0
    delta_m: float = 1.0
    alpha: float = 0.0
    beta: float = 1.0
    elementwise: bool = True
    upper_bound: bool = True
    spectral: bool = False
    refine_y: bool = False
    sms: bool = False
    eps_strict: float = 1e-6
    backend: str = "auto"
    workers: int = 1

    def validate(self):
        from .netmodel import ConfigError

        for name in ("c_m", "alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be a finite nonnegative number (got {v})")
        if not 0 <= self.delta_m <= 1:
            raise ConfigError(f"delta_m must lie in [0, 1] (got {self.delta_m})")
        if self.eps_strict <= 0:
            raise ConfigError("eps_strict must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        return self

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class NetworkDesign:
    status: Status
    m_inter: np.ndarray
    l_matrix: np.ndarray
    p_groups: np.ndarray
    g: float
    objective: float | None
    j_m: float
    phi_min_eig: float
    config: DesignConfig
    residuals: dict = field(default_factory=dict)
    sms: dict | None = None
    detail: str = ""

    @property
    def gamma(self) -> float:
        return math.sqrt(max(self.g, 0.0))

    def to_dict(self):
        return _jsonable({
            "status": self.status.value, "g": self.g, "gamma": self.gamma, "objective": self.objective,
            "j_m": self.j_m, "p_groups": self.p_groups, "phi_min_eig": self.phi_min_eig,
            "m_inter": self.m_inter, "residuals": self.residuals, "sms": self.sms,
            "config": self.config.to_dict(), "detail": self.detail,
        })


@dataclass
class NetworkAnalysis:
    status: Status
    g: float
    p_groups: np.ndarray | None
    phi_min_eig: float
    detail: str = ""

    @property
    def certified(self) -> bool:
        return self.status.ok

    @property
    def gamma(self) -> float:
        return math.sqrt(max(self.g, 0.0)) if self.status.ok else float("inf")

    def to_dict(self):
        return _jsonable({"status": self.status.value, "certified": self.certified, "g": self.g,
                          "gamma": self.gamma if self.certified else None, "p_groups": self.p_groups,
                          "phi_min_eig": self.phi_min_eig, "detail": self.detail})


def _network_blocks(net: SpreadingNetwork, group_certs):
    x11 = np.concatenate([gc.x11 for gc in group_certs])
    x22 = np.concatenate([gc.x22 for gc in group_certs])
    if np.any(x11 <= 0):
        raise AssumptionError("every group certificate needs a positive definite X11")
    return x11, x22


def _network_problem(net: SpreadingNetwork, group_certs, cfg: DesignConfig, fixed_m=None, drop=(), y=None):
    n = net.n_nodes
    x11, x22 = _network_blocks(net, group_certs)
    pr = LmiProblem(eps_strict=cfg.eps_strict)
    P = pr.variable("p", n, "custom", basis=_block_scalar_basis(net.sizes))
    g = pr.variable("g", n, "scalar")
    pr.add_nonneg(P.expr, strict=True, name="p>0", mask=np.eye(n, dtype=bool))
    pr.add_nonneg(g.expr[0, 0], name="g>=0")
    Xp11 = P @ np.diag(x11)
    Xp12 = P * 0.5
    Xp22 = P @ np.diag(x22)
    target = (g, np.zeros((n, n)), -np.eye(n))
    M0 = net.m_inter
    mask = M0 != 0
    handles = {"P": P, "g": g, "Xp11": Xp11, "x11": x11}
    scale = max(1.0, cfg.c_m, cfg.alpha, cfg.beta)
    obj = (cfg.beta / scale) * g.expr[0, 0]
    if cfg.alpha:
        obj = obj + (cfg.alpha / scale) * Xp11.trace()
    if fixed_m is not None or not mask.any():
        m_fixed = np.zeros((n, n)) if fixed_m is None else np.asarray(fixed_m, dtype=float)
        phi = psi_matrix(Xp11, Xp12, Xp22, target, m_uy=m_fixed)
        handles["L"] = None
    else:
        L = pr.variable("L", n, "pattern", pattern=mask)
        handles["L"] = L
        phi = psi_matrix(Xp11, Xp12, Xp22, target, L_uy=L, Xbf12=np.diag(0.5 / x11))
        D = L - Xp11 @ M0
        T = pr.variable("T", n, "pattern", pattern=mask)
        pr.add_nonneg(T - D, name="T>=dev", mask=mask)
        pr.add_nonneg(T + D, name="T>=-dev", mask=mask)
        obj = obj + (cfg.c_m / scale) * T.expr.sum()
        if cfg.elementwise and "lower" not in drop:
            pr.add_nonneg(L - (1 - cfg.delta_m) * (Xp11 @ M0), name="lower", mask=mask)
        if cfg.elementwise and "upper" not in drop:
            top = 1.0 if cfg.upper_bound else 1.0 + cfg.delta_m
            pr.add_nonneg(top * (Xp11 @ M0) - L, name="upper", mask=mask)
        if cfg.spectral and "spectral" not in drop:
            Y = np.eye(n) if y is None else np.asarray(y, dtype=float)
            sp = bmat([
                [np.eye(n), Y.T, np.zeros((n, n))],
                [Y, _mul(Xp11, Y.T) + _mul(Y, Xp11), D],
                [np.zeros((n, n)), D.T, cfg.delta_m**2 * (M0.T @ M0)],
            ])
            pr.add_psd(sp, strict=False, name="spectral")
        if cfg.sms and "sms" not in drop:
            _add_sms_constraints(pr, net, group_certs, L, P, cfg.eps_strict)
    pr.add_psd(phi, name="Phi")
    pr.minimize(obj)
    handles["phi"] = phi
    return pr, handles


def _add_sms_constraints(pr, net, group_certs, L, P, eps_strict):
    offs = np.cumsum([0] + net.sizes[:-1])
    for i, gc in enumerate(group_certs):
        lam1 = sms_quantities(gc, eps_strict)["lambda1"]
        si = net.slices[i]
        total = None
        for j in range(len(net.groups)):
            sj = net.slices[j]
            if j == i or not np.any(net.m_inter[si, sj]):
                continue
            A = np.diag(1.0 / gc.x11) @ L[si, sj]
            ni, nj = A.shape
            t = pr.variable(f"t_{i}_{j}", ni + nj, "scalar")
            pr.add_psd(t.expr + bmat([[np.zeros((ni, ni)), A], [A.T, np.zeros((nj, nj))]]), strict=False,
                       name=f"norm_{i}_{j}")
            total = t.expr[0, 0] if total is None else total + t.expr[0, 0]
        if total is not None:
            pr.add_nonneg(P.expr[offs[i], offs[i]] - lam1 * total, strict=True, name=f"sms_{i}")


def _p_groups(net, p_value):
    offs = np.cumsum([0] + net.sizes[:-1])
    return np.array([p_value[o, o] for o in offs])


def network_design(net: SpreadingNetwork, group_certs, cfg: DesignConfig | None = None) -> NetworkDesign:
    """Redesign the inter-group weights for a small network L2 gain at little deviation cost.

    Minimizes ``c_m ||L - Xp11 M0||_1 + alpha ||Xp11||_1 + beta g`` (scaled
    by the largest weight for conditioning) over ``L`` supported on the
    nominal pattern, and returns ``M = Xp11^{-1} L``.
    """
    from .evaluation import metric_jm

    cfg = (cfg or DesignConfig()).validate()
    pr, h = _network_problem(net, group_certs, cfg)
    sol = pr.solve(cfg.backend)
    if sol.status.ok and cfg.spectral and cfg.refine_y and h["L"] is not None:
        y = h["Xp11"].value(sol.assignment)
        pr2, h2 = _network_problem(net, group_certs, cfg, y=y)
        sol2 = pr2.solve(cfg.backend)
        if sol2.status.ok:
            pr, h, sol = pr2, h2, sol2
    if not sol.status.ok:
        raise InfeasibleError(f"network design infeasible ({sol.status.value}: {sol.detail})", stage="P",
                              recommendation=_diagnose_network(net, group_certs, cfg),
                              detail={"status": sol.status.value})
    Xp11 = h["Xp11"].value(sol.assignment)
    if h["L"] is None:
        Lv = np.zeros((net.n_nodes, net.n_nodes))
        M = Lv.copy()
    else:
        Lv = sol["L"]
        M = np.linalg.solve(Xp11, Lv)
        M[~(net.m_inter != 0)] = 0.0
    jm = metric_jm(net.m_inter, M) if np.any(net.m_inter) else 0.0
    sms = sms_report(net, group_certs, M, cfg.eps_strict) if cfg.sms else None
    return NetworkDesign(sol.status, M, Lv, _p_groups(net, sol["p"]), float(sol["g"][0, 0]),
                         sol.objective_value, jm, lc.min_eig(h["phi"].value(sol.assignment)), cfg,
                         {"psd": sol.residuals["psd"], "elementwise": sol.residuals["elementwise"]},
                         sms, sol.detail)


def _diagnose_network(net, group_certs, cfg):
    """Name the constraint family whose removal restores feasibility."""
    families = [f for f, on in (("lower", cfg.elementwise), ("upper", cfg.elementwise),
                                ("spectral", cfg.spectral), ("sms", cfg.sms)) if on]
    for fam in families:
        pr, _ = _network_problem(net, group_certs, cfg, drop=(fam,))
        if pr.solve(cfg.backend).status.ok:
            return f"relax the {fam} constraint family"
    pr, _ = _network_problem(net, group_certs, cfg, drop=tuple(families))
    if pr.solve(cfg.backend).status.ok:
        return "relax several constraint families jointly: " + ", ".join(families)
    return "group certificates admit no network L2 certificate; revisit group-level design"


def network_analyze(net: SpreadingNetwork, group_certs, m_inter=None, eps_strict=1e-6,
                    backend="auto") -> NetworkAnalysis:
    """Smallest certifiable ``g`` for a fixed inter-group matrix (the nominal one by default)."""
    M = net.m_inter if m_inter is None else np.asarray(m_inter, dtype=float)
    cfg = DesignConfig(eps_strict=eps_strict, backend=backend)
    pr, h = _network_problem(net, group_certs, cfg, fixed_m=M)
    sol = pr.solve(backend)
    if not sol.status.ok:
        return NetworkAnalysis(sol.status, float("inf"), None, float("nan"), sol.detail)
    return NetworkAnalysis(sol.status, float(sol["g"][0, 0]), _p_groups(net, sol["p"]),
                           lc.min_eig(h["phi"].value(sol.assignment)), sol.detail)


# -- full pipeline -------------------------------------------------------------


@dataclass
class PipelineResult:
    nodes: list  # per group, list of NodeCertificate
    groups: list  # GroupCertificate
    design: NetworkDesign
    timings: dict = field(default_factory=dict)

    def storage_weights(self) -> np.ndarray:
        """Diagonal of the network storage matrix ``P`` with ``V = x^T P x``."""
        return np.concatenate([self.design.p_groups[i] * np.diag(gc.storage) for i, gc in enumerate(self.groups)])

    def to_dict(self, timings=False):
        out = {"groups": [gc.to_dict() for gc in self.groups], "design": self.design.to_dict()}
        if timings:
            out["timings"] = _jsonable(self.timings)
        return out


def node_stage(group: Group, index: int, eps_strict=1e-6, workers=1):
    """Node certificates for one group; nodes are independent and may be solved concurrently."""

    def one(k):
        try:
            return node_problem_pik(group.nodes[k], float(group.m_intra[k, k]), eps_strict)
        except InfeasibleError as err:
            err.group, err.node = index, k
            err.recommendation = (f"reduce M_{index}{index}[{k},{k}] below "
                                  f"{err.detail.get('max_feasible_m_self', float('nan')):.6g}")
            raise

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, range(group.size)))
    return [one(k) for k in range(group.size)]


def run_pipeline(net: SpreadingNetwork, cfg: DesignConfig | None = None) -> PipelineResult:
    """Node certificates, then group certificates, then the network design; the first failure aborts."""
    cfg = (cfg or DesignConfig()).validate()
    timings = {}
    t0 = time.perf_counter()
    nodes = [node_stage(g, i, cfg.eps_strict, cfg.workers) for i, g in enumerate(net.groups)]
    timings["nodes"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    groups = [group_problem_pi(g, nodes[i], i, cfg.eps_strict) for i, g in enumerate(net.groups)]
    timings["groups"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    design = network_design(net, groups, cfg)
    timings["network"] = time.perf_counter() - t0
    log.info("pipeline done: g=%.6g J_M=%.4f (%.2fs)", design.g, design.j_m, sum(timings.values()))
    return PipelineResult(nodes, groups, design, timings)
