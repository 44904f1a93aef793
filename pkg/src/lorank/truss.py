"""Ground-structure truss topology SDP generator and solution verifier.

A g x g grid of nodes with unit spacing, the left column fixed, and every
node pair connected by a candidate bar.  Bar volumes t minimize total volume
subject to a compliance bound, expressed through the Schur-complement block

    [[gamma, -f'], [-f, K(t)]] >= 0,

with box constraints on t, and optionally a vibration constraint
K(t) - lambda_bar (M(t) + M0) >= 0.  The 'tru' family carries a unit
vertical point load at the middle node of the right column; the 'vib'
family differs only in the horizontal orientation of that load.

The assembled problems use the package's canonical dual view with y = t, so
the reported dual objective b'y equals minus the truss volume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh

from .linalg import SparseSym
from .model import SdpProblem, build_problem


@dataclass
class GroundStructure:
    g: int
    variant: str
    nodes: np.ndarray        # (N, 2) coordinates
    fixed: np.ndarray        # (N,) bool, true for supported nodes
    dof_index: np.ndarray    # (N, 2) free-DOF numbering, -1 on fixed nodes
    ndof: int
    bars: np.ndarray         # (n_bars, 2) node pairs, first < second
    lengths: np.ndarray
    load: np.ndarray         # (ndof,)
    young: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.young is None:
            self.young = np.ones(len(self.bars))

    @property
    def n_bars(self) -> int:
        return len(self.bars)

    def bar_dofs_cosines(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Free DOFs touched by bar i and the matching direction cosines."""
        na, nb = self.bars[i]
        delta = self.nodes[nb] - self.nodes[na]
        full = np.array([-delta[0], -delta[1], delta[0], delta[1]]) / self.lengths[i]
        dofs = np.array(
            [
                self.dof_index[na, 0],
                self.dof_index[na, 1],
                self.dof_index[nb, 0],
                self.dof_index[nb, 1],
            ]
        )
        keep = dofs >= 0
        return dofs[keep], full[keep]


@dataclass
class TrussSdpSpec:
    gamma_compl: float = 1.0
    t_lower: float = 0.0
    t_upper: float = 1e4
    vibration: bool = False
    lambda_bar: float | None = None
    rho: float = 1.0
    m0: float = 1.0

    def validate(self):
        if self.gamma_compl <= 0:
            raise ValueError("compliance bound must be positive")
        if not (0 <= self.t_lower < self.t_upper):
            raise ValueError("volume bounds must satisfy 0 <= lower < upper")
        if self.vibration and self.lambda_bar is not None and self.lambda_bar < 0:
            raise ValueError("vibration threshold must be nonnegative")


def gen_ground(g: int, variant: str = "tru") -> GroundStructure:
    """All-pairs ground structure on a g x g grid, left column fixed, unit
    point load at the middle node of the right column (vertical for tru,
    horizontal for vib)."""
    if g < 2:
        raise ValueError("grid size must be at least 2")
    if variant not in ("tru", "vib"):
        raise ValueError(f"unknown variant {variant!r}")
    nn = g * g
    nodes = np.array([(ix, iy) for ix in range(g) for iy in range(g)], dtype=float)
    fixed = np.array([ix == 0 for ix in range(g) for _ in range(g)])
    dof_index = -np.ones((nn, 2), dtype=int)
    ndof = 0
    for v in range(nn):
        if not fixed[v]:
            dof_index[v, 0] = ndof
            dof_index[v, 1] = ndof + 1
            ndof += 2
    bars = np.array([(a, b) for a in range(nn) for b in range(a + 1, nn)], dtype=int)
    lengths = np.linalg.norm(nodes[bars[:, 1]] - nodes[bars[:, 0]], axis=1)
    load = np.zeros(ndof)
    load_node = (g - 1) * g + (g - 1) // 2
    direction = np.array([0.0, -1.0]) if variant == "tru" else np.array([1.0, 0.0])
    load[dof_index[load_node]] = direction
    gs = GroundStructure(g, variant, nodes, fixed, dof_index, ndof, bars, lengths, load)
    k1 = assemble_stiffness(gs, np.ones(gs.n_bars))
    if np.linalg.eigvalsh(k1)[0] <= 0:
        raise ValueError("fully populated stiffness matrix is singular")
    return gs


def bar_stiffness(gs: GroundStructure, i: int) -> SparseSym:
    """Rank-one bar stiffness (E/l^2) gamma gamma' restricted to free DOFs."""
    if gs.lengths[i] <= 0:
        raise ValueError(f"bar {i} has zero length")
    dofs, cos = gs.bar_dofs_cosines(i)
    coeff = gs.young[i] / gs.lengths[i] ** 2
    rows, cols, vals = [], [], []
    for a in range(len(dofs)):
        for b in range(a + 1):
            v = coeff * cos[a] * cos[b]
            if v != 0.0:
                rows.append(max(dofs[a], dofs[b]))
                cols.append(min(dofs[a], dofs[b]))
                vals.append(v)
    return SparseSym.from_triplets(gs.ndof, rows, cols, vals)


def bar_mass_diag(gs: GroundStructure, i: int, rho: float) -> np.ndarray:
    """Lumped mass per unit volume: rho l/2 on each free end DOF."""
    out = np.zeros(gs.ndof)
    dofs, _ = gs.bar_dofs_cosines(i)
    out[dofs] = rho * gs.lengths[i] / 2.0
    return out


def assemble_stiffness(gs: GroundStructure, t: np.ndarray) -> np.ndarray:
    k = np.zeros((gs.ndof, gs.ndof))
    for i in range(gs.n_bars):
        dofs, cos = gs.bar_dofs_cosines(i)
        if dofs.size == 0:
            continue
        coeff = t[i] * gs.young[i] / gs.lengths[i] ** 2
        k[np.ix_(dofs, dofs)] += coeff * np.outer(cos, cos)
    return k


def load_node_index(gs: GroundStructure) -> int:
    return (gs.g - 1) * gs.g + (gs.g - 1) // 2


def assemble_mass(gs: GroundStructure, t: np.ndarray, rho: float, m0: float) -> np.ndarray:
    """Diagonal of M(t) + M0; the nonstructural mass m0 sits on both
    components of the load node."""
    diag = np.zeros(gs.ndof)
    for i in range(gs.n_bars):
        diag += t[i] * bar_mass_diag(gs, i, rho)
    diag[gs.dof_index[load_node_index(gs)]] += m0
    return diag


def default_lambda_bar(gs: GroundStructure, spec: TrussSdpSpec) -> float:
    """Scale-aware vibration threshold: 1% of the fundamental pencil
    eigenvalue of the fully populated structure t = 1."""
    ones = np.ones(gs.n_bars)
    k1 = assemble_stiffness(gs, ones)
    mdiag = assemble_mass(gs, ones, spec.rho, spec.m0)
    lam = eigh(k1, np.diag(mdiag), eigvals_only=True)
    return 0.01 * float(lam[0])


def _compliance_block(gs: GroundStructure, spec: TrussSdpSpec):
    """Block [[gamma, -f'],[-f, K(t)]] in dual-view data: C - sum t_j A_j."""
    m = gs.ndof + 1
    mats = []
    for j in range(gs.n_bars):
        kj = bar_stiffness(gs, j)
        if kj.nnz == 0:
            continue
        mats.append(
            (j, SparseSym.from_triplets(m, kj.row + 1, kj.col + 1, -kj.val))
        )
    c_rows = [0]
    c_cols = [0]
    c_vals = [spec.gamma_compl]
    for dof in np.where(gs.load != 0.0)[0]:
        c_rows.append(dof + 1)
        c_cols.append(0)
        c_vals.append(-gs.load[dof])
    c = SparseSym.from_triplets(m, c_rows, c_cols, c_vals)
    return m, mats, c


def _box_constraints(gs: GroundStructure, spec: TrussSdpSpec):
    n = gs.n_bars
    eye = sp.identity(n, format="csr")
    d_mat = sp.vstack([eye, -eye], format="csr")
    d_vec = np.concatenate([np.full(n, spec.t_upper), np.full(n, -spec.t_lower)])
    return d_mat, d_vec


def assemble_tru_sdp(gs: GroundStructure, spec: TrussSdpSpec) -> SdpProblem:
    """Volume minimization under the compliance bound; y = t."""
    spec.validate()
    m, mats, c = _compliance_block(gs, spec)
    d_mat, d_vec = _box_constraints(gs, spec)
    b = -np.ones(gs.n_bars)
    return build_problem([m], [mats], [c], b, d_mat, d_vec)


def assemble_vib_sdp(gs: GroundStructure, spec: TrussSdpSpec) -> SdpProblem:
    """Adds the block K(t) - lambda_bar (M(t) + M0) >= 0."""
    spec.validate()
    if not spec.vibration:
        raise ValueError("vibration flag not set on the instance parameters")
    lam_bar = spec.lambda_bar if spec.lambda_bar is not None else default_lambda_bar(gs, spec)
    m1, mats1, c1 = _compliance_block(gs, spec)
    m2 = gs.ndof
    mats2 = []
    for j in range(gs.n_bars):
        kj = bar_stiffness(gs, j)
        mdiag = bar_mass_diag(gs, j, spec.rho)
        entries: dict[tuple[int, int], float] = {}
        for r, cc, v in zip(kj.row, kj.col, kj.val):
            entries[(int(r), int(cc))] = entries.get((int(r), int(cc)), 0.0) - v
        for dof in np.where(mdiag != 0.0)[0]:
            key = (int(dof), int(dof))
            entries[key] = entries.get(key, 0.0) + lam_bar * mdiag[dof]
        if not entries:
            continue
        rows = [k[0] for k in entries]
        cols = [k[1] for k in entries]
        vals = [entries[k] for k in entries]
        mats2.append((j, SparseSym.from_triplets(m2, rows, cols, vals)))
    # constant part: the slack is C2 - sum t_j A_j^(2) = K - lambda_bar (M + M0),
    # so C2 = -lambda_bar M0 (nonstructural mass on the load node)
    m0diag = assemble_mass(gs, np.zeros(gs.n_bars), spec.rho, spec.m0)
    nz = np.where(m0diag != 0.0)[0]
    c2 = SparseSym.from_triplets(m2, nz, nz, -lam_bar * m0diag[nz])
    d_mat, d_vec = _box_constraints(gs, spec)
    b = -np.ones(gs.n_bars)
    return build_problem([m1, m2], [mats1, mats2], [c1, c2], b, d_mat, d_vec)


def assemble_sdp(gs: GroundStructure, spec: TrussSdpSpec) -> SdpProblem:
    if spec.vibration:
        return assemble_vib_sdp(gs, spec)
    return assemble_tru_sdp(gs, spec)


def vanished_nodes(gs: GroundStructure, t: np.ndarray, rel_tol: float = 1e-4) -> list[int]:
    """Free nodes all of whose incident bars vanished at the optimum.

    Interior solutions keep vanishing volumes slightly positive, so a bar
    counts as gone below rel_tol times the largest volume."""
    tmax = float(np.max(t)) if t.size else 0.0
    thresh = rel_tol * max(tmax, 1.0)
    alive = np.zeros(len(gs.nodes), dtype=bool)
    for i, (a, b) in enumerate(gs.bars):
        if t[i] > thresh:
            alive[a] = True
            alive[b] = True
    return [int(v) for v in range(len(gs.nodes)) if not gs.fixed[v] and not alive[v]]


def verify_solution(
    gs: GroundStructure,
    spec: TrussSdpSpec,
    t: np.ndarray,
    dual_block: np.ndarray | None = None,
) -> dict:
    """Mechanical check of a volume vector: equilibrium compliance against
    the bound, pencil eigenvalue when the vibration constraint is active,
    and the spectrum of the supplied dual block."""
    t = np.asarray(t, dtype=float)
    k = assemble_stiffness(gs, t)
    report: dict = {"volume": float(t.sum())}
    try:
        lam_k = np.linalg.eigvalsh(k)
        singular = lam_k[0] <= 1e-12 * max(lam_k[-1], 1.0)
    except np.linalg.LinAlgError:
        singular = True
    report["stiffness_singular"] = bool(singular)
    if singular:
        u, *_ = np.linalg.lstsq(k, gs.load, rcond=None)
    else:
        u = np.linalg.solve(k, gs.load)
    compliance = float(gs.load @ u)
    report["compliance"] = compliance
    report["compliance_bound"] = spec.gamma_compl
    report["compliance_feasible"] = bool(compliance <= spec.gamma_compl * (1 + 1e-6) or singular)
    gone = vanished_nodes(gs, t)
    if spec.vibration:
        lam_bar = spec.lambda_bar if spec.lambda_bar is not None else default_lambda_bar(gs, spec)
        mdiag = assemble_mass(gs, t, spec.rho, spec.m0)
        # restrict the pencil to the surviving structure: on vanished nodes
        # both K and M are near-zero and the generalized eigenvalue is noise,
        # while a principal submatrix of K - lambda_bar (M + M0) >= 0 keeps
        # the guarantee intact
        alive = np.ones(gs.ndof, dtype=bool)
        for v in gone:
            alive[gs.dof_index[v]] = False
        ka = k[np.ix_(alive, alive)]
        ma = mdiag[alive]
        pencil = eigh(ka, np.diag(ma), eigvals_only=True)
        slack_min = float(np.linalg.eigvalsh(k - lam_bar * np.diag(mdiag)).min())
        report["pencil_min_eig"] = float(pencil[0])
        report["lambda_bar"] = lam_bar
        report["vibration_slack_min_eig"] = slack_min
        report["vibration_feasible"] = bool(pencil[0] >= lam_bar * (1 - 1e-6))
    report["vanished_nodes"] = gone
    if dual_block is not None:
        lam = np.linalg.eigvalsh(0.5 * (dual_block + dual_block.T))[::-1]
        lam_max = max(abs(lam[0]), 1e-300)
        report["dual_spectrum"] = [float(v) for v in lam]
        report["dual_outliers"] = int(np.sum(lam > 1e-4 * lam_max))
        report["dual_rank_1e8"] = int(np.sum(lam > 1e-8 * lam_max))
        second = abs(lam[1]) if lam.size > 1 else 0.0
        report["dual_gap_ratio"] = float(lam[0] / second) if second > 0 else float("inf")
    return report


# ---------------------------------------------------------------------------
# Geometry sidecar so the verifier can run on a written instance
# ---------------------------------------------------------------------------


def save_geometry(gs: GroundStructure, spec: TrussSdpSpec, path) -> None:
    payload = {
        "g": gs.g,
        "variant": gs.variant,
        "nodes": gs.nodes.tolist(),
        "fixed": gs.fixed.tolist(),
        "dof_index": gs.dof_index.tolist(),
        "ndof": gs.ndof,
        "bars": gs.bars.tolist(),
        "lengths": gs.lengths.tolist(),
        "load": gs.load.tolist(),
        "spec": {
            "gamma_compl": spec.gamma_compl,
            "t_lower": spec.t_lower,
            "t_upper": spec.t_upper,
            "vibration": spec.vibration,
            "lambda_bar": spec.lambda_bar,
            "rho": spec.rho,
            "m0": spec.m0,
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_geometry(path) -> tuple[GroundStructure, TrussSdpSpec]:
    with open(path) as fh:
        payload = json.load(fh)
    gs = GroundStructure(
        g=payload["g"],
        variant=payload["variant"],
        nodes=np.array(payload["nodes"], dtype=float),
        fixed=np.array(payload["fixed"], dtype=bool),
        dof_index=np.array(payload["dof_index"], dtype=int),
        ndof=payload["ndof"],
        bars=np.array(payload["bars"], dtype=int),
        lengths=np.array(payload["lengths"], dtype=float),
        load=np.array(payload["load"], dtype=float),
    )
    spec = TrussSdpSpec(**payload["spec"])
    return gs, spec


def instance_name(variant: str, g: int, t_lower: float) -> str:
    return f"{variant}{g}" + ("e" if t_lower > 0 else "")
