"""Unbalanced three-phase network as an equivalent circuit in rectangular coordinates.

Nodes carry per-phase complex voltages split into (re, im); branches are 3x3
conductance/susceptance blocks acting on voltage differences; constant-PQ
loads close the loop as nonlinear current injections.  KCL at every
node/phase gives two real equations; slack rows are replaced by
voltage-fixing equations so the Jacobian keeps a uniform structure.

All network quantities are per-phase per-unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

PHASES = "abc"

DEFAULT_EPS_V = 1e-12  # p.u.^2 guard for the |V|^2 denominator


class Phasor(NamedTuple):
    """Complex electrical quantity in rectangular coordinates."""

    re: float
    im: float

    @property
    def mag(self) -> float:
        return math.hypot(self.re, self.im)

    @property
    def angle_deg(self) -> float:
        return math.degrees(math.atan2(self.im, self.re))

    def to_complex(self) -> complex:
        return complex(self.re, self.im)

    @staticmethod
    def from_complex(z: complex) -> "Phasor":
        return Phasor(z.real, z.imag)

    @staticmethod
    def from_polar(mag: float, angle_deg: float) -> "Phasor":
        a = math.radians(angle_deg)
        return Phasor(mag * math.cos(a), mag * math.sin(a))


@dataclass(frozen=True)
class PerUnitBase:
    """Per-phase power base and line-to-neutral voltage base."""

    s_base: float  # VA per phase
    v_base: float  # V line-to-neutral
    freq: float = 60.0

    def __post_init__(self):
        if self.s_base <= 0 or self.v_base <= 0 or self.freq <= 0:
            raise ValueError("per-unit bases must be strictly positive")

    @property
    def i_base(self) -> float:
        return self.s_base / self.v_base

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.freq


@dataclass(frozen=True)
class NodeSpec:
    id: str
    phases: str = "abc"
    kind: str = "load"  # "slack" | "load"
    slack_voltage: tuple[Phasor, ...] = ()

    def __post_init__(self):
        if not self.phases or any(p not in PHASES for p in self.phases):
            raise ValueError(f"node {self.id}: phases must be a subset of 'abc'")
        if len(set(self.phases)) != len(self.phases):
            raise ValueError(f"node {self.id}: duplicate phase")
        if self.kind not in ("slack", "load"):
            raise ValueError(f"node {self.id}: kind must be 'slack' or 'load'")
        if self.kind == "slack" and len(self.slack_voltage) != len(self.phases):
            raise ValueError(
                f"node {self.id}: slack needs one voltage per declared phase"
            )


@dataclass(frozen=True, eq=False)
class BranchSpec:
    """Series admittance block between two nodes, 3x3 over phases abc."""

    from_node: str
    to_node: str
    g_block: np.ndarray
    b_block: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g_block, dtype=float)
        b = np.asarray(self.b_block, dtype=float)
        if g.shape != (3, 3) or b.shape != (3, 3):
            raise ValueError("branch blocks must be 3x3")
        if not (np.isfinite(g).all() and np.isfinite(b).all()):
            raise ValueError("branch blocks must be finite")
        object.__setattr__(self, "g_block", g)
        object.__setattr__(self, "b_block", b)


@dataclass(frozen=True)
class LoadSpec:
    node: str
    phase: str
    p: float  # p.u. W
    q: float  # p.u. var


def load_injection_current(v: Phasor, p: float, q: float,
                           eps_v: float = DEFAULT_EPS_V) -> Phasor:
    """Constant-PQ load current drawn at voltage v.

    I_re = (p*v_re + q*v_im) / (|v|^2 + eps_v)
    I_im = (p*v_im - q*v_re) / (|v|^2 + eps_v)
    """
    for x in (v.re, v.im, p, q):
        if not math.isfinite(x):
            raise ValueError("non-finite input to load_injection_current")
    den = v.re * v.re + v.im * v.im + eps_v
    if den <= 0.0:
        raise ValueError("singular voltage magnitude in load injection")
    return Phasor((p * v.re + q * v.im) / den, (p * v.im - q * v.re) / den)


def load_injection_partials(vr: float, vi: float, p: float, q: float,
                            eps_v: float = DEFAULT_EPS_V):
    """Partials of the load current w.r.t. (v_re, v_im).

    Returns (dIr_dvr, dIr_dvi, dIi_dvr, dIi_dvi).
    """
    den = vr * vr + vi * vi + eps_v
    num_r = p * vr + q * vi
    num_i = p * vi - q * vr
    d2 = den * den
    return (
        (p * den - num_r * 2.0 * vr) / d2,
        (q * den - num_r * 2.0 * vi) / d2,
        (-q * den - num_i * 2.0 * vr) / d2,
        (p * den - num_i * 2.0 * vi) / d2,
    )


def net_injection(loads, gens, v: Phasor, eps_v: float = DEFAULT_EPS_V) -> Phasor:
    """Net current injection: sum of load currents minus generator currents.

    ``loads`` and ``gens`` are iterables of (p, q) pairs attached at voltage v.
    """
    ir = ii = 0.0
    for p, q in loads:
        c = load_injection_current(v, p, q, eps_v)
        ir += c.re
        ii += c.im
    for p, q in gens:
        c = load_injection_current(v, p, q, eps_v)
        ir -= c.re
        ii -= c.im
    return Phasor(ir, ii)


@dataclass
class NetworkModel:
    """Immutable assembled network: index maps, constant stamps, load tables.

    The state vector interleaves (v_re, v_im) per node/phase slot, in node
    declaration order with phases ordered a, b, c.
    """

    base: PerUnitBase
    nodes: tuple[NodeSpec, ...]
    branches: tuple[BranchSpec, ...]
    loads: tuple[LoadSpec, ...]
    eps_v: float = DEFAULT_EPS_V

    # assembled fields
    slot_of: dict = field(init=False, repr=False)
    slots: list = field(init=False, repr=False)
    slack_slots: np.ndarray = field(init=False, repr=False)
    _lin: sp.csr_matrix = field(init=False, repr=False)
    _rhs: np.ndarray = field(init=False, repr=False)
    _load_slot: np.ndarray = field(init=False, repr=False)
    _load_p: np.ndarray = field(init=False, repr=False)
    _load_q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        self.branches = tuple(self.branches)
        self.loads = tuple(self.loads)
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        node_by_id = {n.id: n for n in self.nodes}

        self.slots = []
        self.slot_of = {}
        for n in self.nodes:
            for ph in PHASES:
                if ph in n.phases:
                    self.slot_of[(n.id, ph)] = len(self.slots)
                    self.slots.append((n.id, ph))

        nslot = len(self.slots)
        slack = np.zeros(nslot, dtype=bool)
        rhs = np.zeros(2 * nslot)
        for n in self.nodes:
            if n.kind != "slack":
                continue
            for ph, v in zip(n.phases, n.slack_voltage):
                k = self.slot_of[(n.id, ph)]
                slack[k] = True
                rhs[2 * k] = v.re
                rhs[2 * k + 1] = v.im
        self.slack_slots = np.flatnonzero(slack)

        rows, cols, vals = [], [], []

        def stamp(r, c, v):
            if v != 0.0:
                rows.append(r)
                cols.append(c)
                vals.append(v)

        # slack rows: identity (residual = v - v_slack)
        for k in self.slack_slots:
            stamp(2 * k, 2 * k, 1.0)
            stamp(2 * k + 1, 2 * k + 1, 1.0)

        for br in self.branches:
            for nid in (br.from_node, br.to_node):
                if nid not in node_by_id:
                    raise ValueError(f"branch references unknown node {nid!r}")
            ni, nj = node_by_id[br.from_node], node_by_id[br.to_node]
            for a, pa in enumerate(PHASES):
                for b, pb in enumerate(PHASES):
                    g = br.g_block[a, b]
                    bb = br.b_block[a, b]
                    if g == 0.0 and bb == 0.0:
                        continue
                    if pa not in ni.phases or pa not in nj.phases \
                            or pb not in ni.phases or pb not in nj.phases:
                        raise ValueError(
                            f"branch {br.from_node}-{br.to_node}: nonzero block "
                            f"entry ({pa},{pb}) touches an absent phase"
                        )
                    for this, other, sign in ((ni, nj, 1.0), (nj, ni, -1.0)):
                        k = self.slot_of[(this.id, pa)]
                        if slack[k]:
                            continue
                        ks = self.slot_of[(this.id, pb)]
                        ko = self.slot_of[(other.id, pb)]
                        # real KCL row: +G dVr - B dVi
                        stamp(2 * k, 2 * ks, g)
                        stamp(2 * k, 2 * ko, -g)
                        stamp(2 * k, 2 * ks + 1, -bb)
                        stamp(2 * k, 2 * ko + 1, bb)
                        # imaginary KCL row: +G dVi + B dVr
                        stamp(2 * k + 1, 2 * ks + 1, g)
                        stamp(2 * k + 1, 2 * ko + 1, -g)
                        stamp(2 * k + 1, 2 * ks, bb)
                        stamp(2 * k + 1, 2 * ko, -bb)

        n2 = 2 * nslot
        self._lin = sp.csr_matrix((vals, (rows, cols)), shape=(n2, n2))
        self._rhs = rhs

        # aggregate loads per slot
        agg: dict[int, list[float]] = {}
        for ld in self.loads:
            key = (ld.node, ld.phase)
            if key not in self.slot_of:
                raise ValueError(f"load attached to unknown node/phase {key}")
            k = self.slot_of[key]
            if slack[k]:
                # loads on a slack phase do not appear in any KCL row
                continue
            agg.setdefault(k, [0.0, 0.0])
            agg[k][0] += ld.p
            agg[k][1] += ld.q
        items = sorted(agg.items())
        self._load_slot = np.array([k for k, _ in items], dtype=np.int64)
        self._load_p = np.array([pq[0] for _, pq in items])
        self._load_q = np.array([pq[1] for _, pq in items])

    # -- sizes ------------------------------------------------------------
    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def n_vars(self) -> int:
        return 2 * len(self.slots)

    def is_slack_slot(self, k: int) -> bool:
        return k in self.slack_slots

    # -- residual / Jacobian ----------------------------------------------
    def kcl_residual(self, v_all: np.ndarray,
                     injections: dict | None = None) -> np.ndarray:
        """KCL residual for the full network state.

        ``injections`` optionally maps (node_id, phase) -> Phasor of extra net
        injection current (load-positive sign) added on top of the declared
        loads.  Slack rows return (v - v_slack).
        """
        v_all = np.asarray(v_all, dtype=float)
        if v_all.shape != (self.n_vars,):
            raise ValueError(
                f"state vector has {v_all.shape}, expected ({self.n_vars},)"
            )
        r = self._lin @ v_all - self._rhs
        if self._load_slot.size:
            vr = v_all[2 * self._load_slot]
            vi = v_all[2 * self._load_slot + 1]
            den = vr * vr + vi * vi + self.eps_v
            r[2 * self._load_slot] += (self._load_p * vr + self._load_q * vi) / den
            r[2 * self._load_slot + 1] += (self._load_p * vi - self._load_q * vr) / den
        if injections:
            for key, cur in injections.items():
                k = self.slot_of[key]
                if k in self.slack_slots:
                    continue
                r[2 * k] += cur.re
                r[2 * k + 1] += cur.im
        return r

    def kcl_jacobian(self, v_all: np.ndarray) -> sp.csr_matrix:
        """Analytic Jacobian of kcl_residual (without extra injections)."""
        v_all = np.asarray(v_all, dtype=float)
        rows, cols, vals = [], [], []
        for k, p, q in zip(self._load_slot, self._load_p, self._load_q):
            vr, vi = v_all[2 * k], v_all[2 * k + 1]
            drr, dri, dir_, dii = load_injection_partials(vr, vi, p, q, self.eps_v)
            rows += [2 * k, 2 * k, 2 * k + 1, 2 * k + 1]
            cols += [2 * k, 2 * k + 1, 2 * k, 2 * k + 1]
            vals += [drr, dri, dir_, dii]
        nl = sp.csr_matrix((vals, (rows, cols)), shape=self._lin.shape)
        return (self._lin + nl).tocsr()

    def flat_voltages(self) -> np.ndarray:
        """Balanced 1 p.u. start: angles 0, -120, +120 deg for phases a, b, c."""
        v = np.empty(self.n_vars)
        angle = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}
        for k, (_, ph) in enumerate(self.slots):
            v[2 * k] = math.cos(angle[ph])
            v[2 * k + 1] = math.sin(angle[ph])
        for k in self.slack_slots:
            v[2 * k] = self._rhs[2 * k]
            v[2 * k + 1] = self._rhs[2 * k + 1]
        return v
