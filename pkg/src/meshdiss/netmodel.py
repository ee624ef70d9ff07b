"""Hierarchical spreading-network data model, random generation and file format.

Index convention (fixed everywhere): in any transmission matrix the row is
the receiving node and the column is the infecting node, so ``M[k, l] > 0``
means node ``l`` can infect node ``k``. The inter-group matrix ``m_inter``
is stored as one dense ``n x n`` block matrix over all nodes with zero
diagonal blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid generation or run configuration."""


class NetworkFormatError(ValueError):
    """A network file or object violates the schema; ``path`` names the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class NodeParams:
    gamma_bar: float
    delta: float
    x0: float = 0.0

    def __post_init__(self):
        for name in ("gamma_bar", "delta", "x0"):
            if not math.isfinite(getattr(self, name)):
                raise NetworkFormatError(name, "must be finite")
        if self.delta < 0:
            raise NetworkFormatError("delta", f"must be >= 0, got {self.delta}")
        if self.gamma_bar - self.delta <= 0:
            raise NetworkFormatError(
                "gamma_bar", f"gamma_bar - delta must be > 0 (got {self.gamma_bar} - {self.delta})"
            )
        if not 0.0 <= self.x0 <= 1.0:
            raise NetworkFormatError("x0", f"must lie in [0, 1], got {self.x0}")

    @property
    def gamma_min(self) -> float:
        """Worst-case recovery rate ``gamma_bar - delta``."""
        return self.gamma_bar - self.delta


def _matrix(value, path: str, shape=None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise NetworkFormatError(path, f"not a numeric matrix ({exc})") from None
    if arr.ndim != 2:
        raise NetworkFormatError(path, f"expected a 2-D matrix, got {arr.ndim}-D")
    if shape is not None and arr.shape != tuple(shape):
        raise NetworkFormatError(path, f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NetworkFormatError(path, "entries must be finite")
    if np.any(arr < 0):
        raise NetworkFormatError(path, "negative transmission weight")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Group:
    nodes: tuple
    m_intra: np.ndarray
    id: str = ""

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if not nodes:
            raise NetworkFormatError("nodes", "a group needs at least one node")
        object.__setattr__(self, "nodes", nodes)
        n = len(nodes)
        object.__setattr__(self, "m_intra", _matrix(self.m_intra, "m_intra", (n, n)))

    @property
    def size(self) -> int:
        return len(self.nodes)

    def __eq__(self, other):
        return (
            isinstance(other, Group)
            and self.id == other.id
            and self.nodes == other.nodes
            and np.array_equal(self.m_intra, other.m_intra)
        )


@dataclass(frozen=True, eq=False)
class SpreadingNetwork:
    groups: tuple
    m_inter: np.ndarray

    def __post_init__(self):
        groups = tuple(self.groups)
        if not groups:
            raise NetworkFormatError("groups", "a network needs at least one group")
        object.__setattr__(self, "groups", groups)
        n = sum(g.size for g in groups)
        m = _matrix(self.m_inter, "m_inter", (n, n))
        for i, sl in enumerate(self.slices):
            if np.any(m[sl, sl] != 0):
                raise NetworkFormatError(f"m_inter[{i}][{i}]", "diagonal inter-group blocks must be zero")
        object.__setattr__(self, "m_inter", m)

    def __eq__(self, other):
        return (
            isinstance(other, SpreadingNetwork)
            and self.groups == other.groups
            and np.array_equal(self.m_inter, other.m_inter)
        )

    @property
    def sizes(self) -> list[int]:
        return [g.size for g in self.groups]

    @property
    def n_nodes(self) -> int:
        return sum(self.sizes)

    @property
    def slices(self) -> list[slice]:
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        return [slice(int(off[i]), int(off[i + 1])) for i in range(len(self.groups))]

    def block(self, i: int, j: int, m=None) -> np.ndarray:
        m = self.m_inter if m is None else m
        return m[self.slices[i], self.slices[j]]

    def node_labels(self) -> list[tuple[int, int]]:
        return [(i, k) for i, g in enumerate(self.groups) for k in range(g.size)]

    @property
    def gamma_bar(self) -> np.ndarray:
        return np.array([nd.gamma_bar for g in self.groups for nd in g.nodes])

    @property
    def delta(self) -> np.ndarray:
        return np.array([nd.delta for g in self.groups for nd in g.nodes])

    @property
    def x0(self) -> np.ndarray:
        return np.array([nd.x0 for g in self.groups for nd in g.nodes])

    def intra_block_diag(self) -> np.ndarray:
        out = np.zeros((self.n_nodes, self.n_nodes))
        for g, sl in zip(self.groups, self.slices):
            out[sl, sl] = g.m_intra
        return out

    def transmission(self, m_inter=None) -> np.ndarray:
        """Full node-level transmission matrix (intra blocks + inter matrix)."""
        m_inter = self.m_inter if m_inter is None else np.asarray(m_inter, dtype=float)
        if m_inter.shape != (self.n_nodes, self.n_nodes):
            raise ConfigError(f"inter-group matrix has shape {m_inter.shape}, expected {(self.n_nodes, self.n_nodes)}")
        return self.intra_block_diag() + m_inter

    def with_inter(self, m_inter) -> "SpreadingNetwork":
        return SpreadingNetwork(self.groups, np.asarray(m_inter, dtype=float))

    def inter_mask(self) -> np.ndarray:
        """Boolean mask of positions outside the diagonal (intra) blocks."""
        mask = np.ones((self.n_nodes, self.n_nodes), dtype=bool)
        for sl in self.slices:
            mask[sl, sl] = False
        return mask


@dataclass
class GenConfig:
    """Random-network parameters; defaults give four groups of 5, 6, 7 and 4 nodes."""

    group_sizes: list = field(default_factory=lambda: [5, 6, 7, 4])
    gamma_range: tuple = (0.4, 0.9)
    delta_frac: float = 0.05
    p_intra: float = 0.3
    p_inter: float = 0.2
    w_range: tuple = (0.1, 0.4)
    intra_scale: float = 0.9
    seed: int | None = None

    def validate(self):
        if self.seed is None:
            raise ConfigError("seed is required for reproducible generation")
        if not self.group_sizes or any(int(s) < 1 for s in self.group_sizes):
            raise ConfigError(f"group sizes must be positive, got {self.group_sizes}")
        for name in ("p_intra", "p_inter"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        for name in ("gamma_range", "w_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ConfigError(f"{name} is empty: {lo} > {hi}")
        if self.gamma_range[0] <= 0:
            raise ConfigError("recovery rates must be positive")
        if self.w_range[0] < 0:
            raise ConfigError("weights must be nonnegative")
        if not 0.0 <= self.delta_frac < 1.0:
            raise ConfigError(f"delta_frac must lie in [0, 1), got {self.delta_frac}")
        if self.intra_scale <= 0:
            raise ConfigError("intra_scale must be > 0")


def stabilizing_scale(m_intra: np.ndarray, gamma_min: np.ndarray, theta: float) -> float:
    """``min(1, theta * min(gamma_min) / rho(M))``; 1 when ``M`` is nilpotent."""
    rho = float(np.max(np.abs(np.linalg.eigvals(m_intra)))) if m_intra.size else 0.0
    if rho <= 0.0:
        return 1.0
    return min(1.0, theta * float(np.min(gamma_min)) / rho)


def generate_random(cfg: GenConfig) -> SpreadingNetwork:
    """Draw a random network.

    Draw order from ``numpy.random.Generator(PCG64(seed))``: all mean
    recovery rates (node order), all initial states, then per group an
    edge-presence matrix followed by a weight matrix (row-major), then for
    each ordered group pair ``(i, j)``, ``i != j`` in row-major order, a
    presence matrix followed by a weight matrix.
    """
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    sizes = [int(s) for s in cfg.group_sizes]
    n = sum(sizes)
    gbar = rng.uniform(cfg.gamma_range[0], cfg.gamma_range[1], size=n)
    x0 = rng.uniform(0.0, 1.0, size=n)
    delta = cfg.delta_frac * gbar

    groups = []
    pos = 0
    for i, ni in enumerate(sizes):
        present = rng.random((ni, ni)) < cfg.p_intra
        weights = rng.uniform(cfg.w_range[0], cfg.w_range[1], size=(ni, ni))
        m = np.where(present, weights, 0.0)
        sl = slice(pos, pos + ni)
        m = m * stabilizing_scale(m, gbar[sl] - delta[sl], cfg.intra_scale)
        nodes = [NodeParams(float(g), float(d), float(x)) for g, d, x in zip(gbar[sl], delta[sl], x0[sl])]
        groups.append(Group(nodes, m, id=f"G{i + 1}"))
        pos += ni

    off = np.concatenate([[0], np.cumsum(sizes)])
    m_inter = np.zeros((n, n))
    for i in range(len(sizes)):
        for j in range(len(sizes)):
            if i == j:
                continue
            shape = (sizes[i], sizes[j])
            present = rng.random(shape) < cfg.p_inter
            weights = rng.uniform(cfg.w_range[0], cfg.w_range[1], size=shape)
            m_inter[off[i]:off[i + 1], off[j]:off[j + 1]] = np.where(present, weights, 0.0)
    return SpreadingNetwork(groups, m_inter)


def assemble_group_interconnection(g: Group) -> np.ndarray:
    """``[[M_ii, I], [I, 0]]`` mapping (node outputs, group input) to (node inputs, group output)."""
    n = g.size
    eye = np.eye(n)
    return np.block([[g.m_intra, eye], [eye, np.zeros((n, n))]])


def assemble_network_interconnection(net: SpreadingNetwork) -> np.ndarray:
    """``[[M_bar, I], [I, 0]]`` at the network level."""
    n = net.n_nodes
    eye = np.eye(n)
    return np.block([[net.m_inter, eye], [eye, np.zeros((n, n))]])


def network_to_dict(net: SpreadingNetwork) -> dict:
    groups = [
        {
            "id": g.id or f"G{i + 1}",
            "nodes": [{"gamma_bar": nd.gamma_bar, "delta": nd.delta, "x0": nd.x0} for nd in g.nodes],
            "m_intra": g.m_intra.tolist(),
        }
        for i, g in enumerate(net.groups)
    ]
    inter = []
    for i in range(len(net.groups)):
        for j in range(len(net.groups)):
            blk = net.block(i, j)
            if i != j and np.any(blk != 0):
                inter.append({"to_group": i, "from_group": j, "matrix": blk.tolist()})
    return {"version": FORMAT_VERSION, "groups": groups, "m_inter": inter}


def network_from_dict(data: dict) -> SpreadingNetwork:
    if not isinstance(data, dict):
        raise NetworkFormatError("$", "top level must be an object")
    if data.get("version") != FORMAT_VERSION:
        raise NetworkFormatError("version", f"unsupported version {data.get('version')!r}")
    raw_groups = data.get("groups")
    if not isinstance(raw_groups, list) or not raw_groups:
        raise NetworkFormatError("groups", "must be a non-empty list")
    groups = []
    for gi, rg in enumerate(raw_groups):
        gp = f"groups[{gi}]"
        if not isinstance(rg, dict):
            raise NetworkFormatError(gp, "must be an object")
        raw_nodes = rg.get("nodes")
        if not isinstance(raw_nodes, list) or not raw_nodes:
            raise NetworkFormatError(f"{gp}.nodes", "must be a non-empty list")
        nodes = []
        for ki, rn in enumerate(raw_nodes):
            np_ = f"{gp}.nodes[{ki}]"
            try:
                nodes.append(NodeParams(float(rn["gamma_bar"]), float(rn["delta"]), float(rn.get("x0", 0.0))))
            except NetworkFormatError as exc:
                raise NetworkFormatError(f"{np_}.{exc.path}", str(exc).split(": ", 1)[1]) from None
            except (KeyError, TypeError, ValueError) as exc:
                raise NetworkFormatError(np_, f"bad node record ({exc})") from None
        m = _matrix(rg.get("m_intra"), f"{gp}.m_intra", (len(nodes), len(nodes)))
        groups.append(Group(nodes, m, id=str(rg.get("id", f"G{gi + 1}"))))

    sizes = [g.size for g in groups]
    off = np.concatenate([[0], np.cumsum(sizes)])
    m_inter = np.zeros((off[-1], off[-1]))
    raw_inter = data.get("m_inter", [])
    if not isinstance(raw_inter, list):
        raise NetworkFormatError("m_inter", "must be a list")
    for bi, rb in enumerate(raw_inter):
        bp = f"m_inter[{bi}]"
        try:
            i, j = int(rb["to_group"]), int(rb["from_group"])
        except (KeyError, TypeError, ValueError):
            raise NetworkFormatError(bp, "needs integer to_group and from_group") from None
        if not (0 <= i < len(groups) and 0 <= j < len(groups)):
            raise NetworkFormatError(bp, f"group index out of range ({i}, {j})")
        blk = _matrix(rb.get("matrix"), f"{bp}.matrix", (sizes[i], sizes[j]))
        if i == j and np.any(blk != 0):
            raise NetworkFormatError(bp, "diagonal inter-group blocks must be zero")
        m_inter[off[i]:off[i + 1], off[j]:off[j + 1]] = blk
    return SpreadingNetwork(groups, m_inter)


def save_network(net: SpreadingNetwork, path) -> None:
    # json uses repr() for floats, which round-trips exactly
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1), encoding="utf-8")


def load_network(path) -> SpreadingNetwork:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise NetworkFormatError("$", f"malformed JSON ({exc})") from None
    return network_from_dict(data)
