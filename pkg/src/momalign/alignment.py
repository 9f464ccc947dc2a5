"""Adaptive temporal alignment: cosine similarity matrices, cross-reference
marginal masses, and an exact balanced-transportation EMD solver, plus the
fixed-alignment baselines.

The solver is a transportation simplex with northwest-corner initialization
and MODI pricing. Supplies are epsilon-perturbed for the pivot phase so every
pivot strictly decreases the objective (no degenerate cycling); the final
basis tree is then re-solved against the unperturbed masses, so the reported
plan and objective are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptor import DescriptorSequence
from .linalg import cosine

#: Lower clamp applied to raw cross-reference masses before normalization.
EPS_MASS = 1e-6

#: Reduced costs above this threshold are treated as optimal.
_OPT_TOL = 1e-12


@dataclass(frozen=True)
class Masses:
    """Balanced marginal masses: entries >= EPS_MASS, each side sums to 1."""

    mu: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        if mu.ndim != 1 or gamma.ndim != 1 or mu.size == 0 or gamma.size == 0:
            raise ValueError("Masses: mu and gamma must be non-empty vectors")
        if np.min(mu) < EPS_MASS - 1e-15 or np.min(gamma) < EPS_MASS - 1e-15:
            raise ValueError("Masses: entries must be >= EPS_MASS")
        if abs(mu.sum() - gamma.sum()) > 1e-9:
            raise ValueError("Masses: unbalanced totals")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma", gamma)


@dataclass(frozen=True)
class TransportPlan:
    """Non-negative L_q x L_s plan with prescribed marginals and its cost."""

    values: np.ndarray
    objective: float


def similarity_matrix(q: DescriptorSequence, s: DescriptorSequence) -> np.ndarray:
    """Pairwise cosine similarities; entries lie in [-1, 1]."""
    if q.dim != s.dim:
        raise ValueError(f"similarity_matrix: descriptor length mismatch {q.dim} vs {s.dim}")
    qv = q.vectors
    sv = s.vectors
    qn = np.linalg.norm(qv, axis=1)
    sn = np.linalg.norm(sv, axis=1)
    qu = np.where(qn[:, None] < 1e-12, 0.0, qv / np.maximum(qn, 1e-300)[:, None])
    su = np.where(sn[:, None] < 1e-12, 0.0, sv / np.maximum(sn, 1e-300)[:, None])
    sim = qu @ su.T
    return np.clip(sim, -1.0, 1.0)


def cross_reference_products(
    q: DescriptorSequence, s: DescriptorSequence
) -> tuple[np.ndarray, np.ndarray]:
    """Raw cross-reference inner products, before clamping.

    mu_l = <Q[l], mean(S)>, gamma_l' = <S[l'], mean(Q)>.
    """
    if len(q) == 0 or len(s) == 0:
        raise ValueError("cross_reference_products: empty descriptor sequence")
    if q.dim != s.dim:
        raise ValueError("cross_reference_products: descriptor length mismatch")
    return q.vectors @ s.vectors.mean(axis=0), s.vectors @ q.vectors.mean(axis=0)


def _floor_normalize(raw: np.ndarray) -> np.ndarray:
    """Clamp, normalize to sum 1, and keep every entry >= EPS_MASS.

    The clamp floor is proportional to the total positive raw mass, so
    scaling every descriptor by c > 0 leaves the result unchanged. Plain
    clamp-then-normalize can also push entries back under the floor when the
    clamped sum exceeds 1, so the normalized vector is mixed with the
    absolute floor; the result still sums to exactly 1. All-non-positive raw
    masses fall back to uniform.
    """
    positive = float(np.maximum(raw, 0.0).sum())
    if positive <= 0.0:
        p = np.full(raw.size, 1.0 / raw.size)
    else:
        w = np.maximum(raw, EPS_MASS * positive)
        p = w / w.sum()
    return (1.0 - p.size * EPS_MASS) * p + EPS_MASS


def marginal_masses(q: DescriptorSequence, s: DescriptorSequence) -> Masses:
    """Cross-reference masses, clamped at EPS_MASS and normalized to sum 1."""
    raw_mu, raw_gamma = cross_reference_products(q, s)
    return Masses(_floor_normalize(raw_mu), _floor_normalize(raw_gamma))


def _northwest_corner(supply: np.ndarray, demand: np.ndarray):
    """Northwest-corner start: returns basis edges and their flows."""
    m, n = supply.size, demand.size
    s = supply.copy()
    d = demand.copy()
    basis: list[tuple[int, int]] = []
    flows: list[float] = []
    i = j = 0
    while i < m and j < n:
        amount = min(s[i], d[j])
        basis.append((i, j))
        flows.append(amount)
        s[i] -= amount
        d[j] -= amount
        if i == m - 1 and j == n - 1:
            break
        # With perturbed supplies, exact ties do not occur; advance along the
        # dimension that is exhausted (rows first on a tie for determinism).
        if s[i] <= d[j]:
            i += 1
        else:
            j += 1
    # One cell per step from (0, 0) to (m-1, n-1): always m + n - 1 cells.
    return basis, flows


def _tree_adjacency(basis, m, n):
    """Adjacency of the bipartite basis tree; rows 0..m-1, cols m..m+n-1."""
    adj: dict[int, list[tuple[int, int]]] = {k: [] for k in range(m + n)}
    for e, (i, j) in enumerate(basis):
        adj[i].append((m + j, e))
        adj[m + j].append((i, e))
    return adj


def _potentials(basis, cost, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    adj = _tree_adjacency(basis, m, n)
    stack = [0]
    while stack:
        node = stack.pop()
        for nxt, e in adj[node]:
            i, j = basis[e]
            if nxt < m:
                if np.isnan(u[nxt]):
                    u[nxt] = cost[i, j] - v[j]
                    stack.append(nxt)
            else:
                jj = nxt - m
                if np.isnan(v[jj]):
                    v[jj] = cost[i, j] - u[i]
                    stack.append(nxt)
    return u, v


def _find_cycle(basis, enter, m, n):
    """Path through the basis tree closing the cycle opened by ``enter``."""
    i0, j0 = enter
    adj = _tree_adjacency(basis, m, n)
    target = m + j0
    parent: dict[int, tuple[int, int]] = {i0: (-1, -1)}
    stack = [i0]
    while stack:
        node = stack.pop()
        if node == target:
            break
        for nxt, e in adj[node]:
            if nxt not in parent:
                parent[nxt] = (node, e)
                stack.append(nxt)
    path_edges = []
    node = target
    while node != i0:
        prev, e = parent[node]
        path_edges.append(e)
        node = prev
    path_edges.reverse()
    return path_edges


def _solve_tree_flows(basis, supply, demand, m, n):
    """Exact flows on a spanning tree by leaf stripping."""
    flows = np.zeros(len(basis))
    residual = np.concatenate([supply, demand]).astype(np.float64)
    degree = np.zeros(m + n, dtype=np.int64)
    adj = _tree_adjacency(basis, m, n)
    for node, edges in adj.items():
        degree[node] = len(edges)
    removed = [False] * len(basis)
    leaves = [node for node in range(m + n) if degree[node] == 1]
    while leaves:
        node = leaves.pop()
        edge = next((e for nxt, e in adj[node] if not removed[e]), None)
        if edge is None:
            continue
        removed[edge] = True
        flows[edge] = residual[node]
        other = basis[edge][0] if node >= m else m + basis[edge][1]
        residual[other] -= residual[node]
        residual[node] = 0.0
        degree[node] -= 1
        degree[other] -= 1
        if degree[other] == 1:
            leaves.append(other)
    return flows


def solve_emd(sim: np.ndarray, masses: Masses) -> TransportPlan:
    """Exact optimum of min <1 - SIM, A> under the marginal constraints.

    Deterministic: entering variables are chosen by most negative reduced
    cost with lowest (row, col) index on ties; leaving variables by minimum
    ratio with lowest edge index on ties.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2:
        raise ValueError("solve_emd: similarity matrix must be 2-D")
    if not np.all(np.isfinite(sim)):
        raise ValueError("solve_emd: non-finite cost entries")
    m, n = sim.shape
    if masses.mu.size != m or masses.gamma.size != n:
        raise ValueError("solve_emd: masses inconsistent with similarity shape")
    cost = 1.0 - sim

    total = float(masses.mu.sum())
    # Perturbation that breaks degeneracy during pivoting; small enough that
    # the perturbed optimum shares a basis with the exact one in practice.
    delta = 1e-13 * max(total, 1.0)
    supply = masses.mu + delta
    demand = masses.gamma.copy()
    demand[-1] += m * delta

    basis, flows = _northwest_corner(supply, demand)
    flows = list(flows)
    in_basis = set(basis)

    max_pivots = 200 * (m + n) + 1000
    for _ in range(max_pivots):
        u, v = _potentials(basis, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        # Row-major argmin gives the lowest-index tie-break for free.
        flat = int(np.argmin(reduced))
        if reduced.flat[flat] >= -_OPT_TOL:
            break
        entering = (flat // n, flat % n)
        cycle = _find_cycle(basis, entering, m, n)
        # The entering edge carries +theta; tree edges along the closing path
        # alternate starting with -theta.
        minus_edges = cycle[0::2]
        theta = min(flows[e] for e in minus_edges)
        leaving = min(e for e in minus_edges if flows[e] == theta)
        for k, e in enumerate(cycle):
            flows[e] += theta if k % 2 == 1 else -theta
        in_basis.discard(basis[leaving])
        basis[leaving] = entering
        flows[leaving] = theta
        in_basis.add(entering)
    else:
        raise RuntimeError("solve_emd: pivot limit exceeded")

    exact = _solve_tree_flows(basis, masses.mu, masses.gamma, m, n)
    if np.min(exact) < -1e-9:
        raise RuntimeError("solve_emd: negative flow beyond tolerance on final basis")
    exact = np.maximum(exact, 0.0)
    plan = np.zeros((m, n))
    for e, (i, j) in enumerate(basis):
        plan[i, j] += exact[e]
    objective = float(np.sum(cost * plan))
    return TransportPlan(plan, objective)


def alignment_score(sim: np.ndarray, plan: TransportPlan) -> float:
    """<SIM, A*>; bounded in [-1, 1] when the masses sum to 1."""
    sim = np.asarray(sim, dtype=np.float64)
    if sim.shape != plan.values.shape:
        raise ValueError("alignment_score: shape mismatch between SIM and plan")
    return float(np.sum(sim * plan.values))


def emd_score(q: DescriptorSequence, s: DescriptorSequence) -> float:
    """End-to-end adaptive alignment score for a descriptor-sequence pair."""
    sim = similarity_matrix(q, s)
    plan = solve_emd(sim, marginal_masses(q, s))
    return alignment_score(sim, plan)


def fixed_alignment_pp(q: DescriptorSequence, s: DescriptorSequence) -> float:
    """Point-to-point baseline: cosine at corresponding (scale, timestamp)
    entries, averaged."""
    if not q.same_structure(s):
        raise ValueError("fixed_alignment_pp: sequences must share scale/length structure")
    return float(
        np.mean([cosine(q.vectors[i], s.vectors[i]) for i in range(len(q))])
    )


def fixed_alignment_cross(q: DescriptorSequence, s: DescriptorSequence) -> float:
    """Cross baseline: uniform average of the full similarity matrix."""
    return float(np.mean(similarity_matrix(q, s)))
