"""Multilevel k-way graph partitioning over weighted road networks.

The pipeline is the classic three-phase scheme: coarsen by heavy-edge
matching, bisect the coarsest graph by seeded breadth-first region growing,
then project back up refining each level with boundary Kernighan-Lin moves
and swaps. k-way plans come from recursive bisection; the same mode-agnostic
pipeline is fed either mobility or communication weights to produce the two
independent plans of the bi-layer network.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .netgraph import WeightedGraph, WeightMode
from .util import stable_seed

COARSEST_NODES = 20
MIN_REDUCTION = 0.10
DEFAULT_EPSILON = 0.05
DEFAULT_OBJECTIVE = (1.0, 1.0, 10.0)
DEFAULT_RESTARTS = 4


class PartitionError(Exception):
    pass


@dataclass
class PartitionPlan:
    mode: WeightMode
    k: int
    assignment: dict[str, int]

    def validate(self, wg: WeightedGraph) -> None:
        if set(self.assignment) != set(wg.node_weights):
            raise PartitionError("assignment does not cover the graph exactly")
        parts = set(self.assignment.values())
        if parts != set(range(self.k)):
            raise PartitionError(f"partition indices not dense in [0, {self.k})")

    def to_json(self, metrics: "CutMetrics | None" = None, seed: int | None = None) -> str:
        doc = {
            "mode": self.mode.value,
            "k": self.k,
            "assignment": dict(sorted(self.assignment.items())),
        }
        if metrics is not None:
            doc["metrics"] = {
                "edge_cut": metrics.edge_cut,
                "boundary_nodes": metrics.boundary_nodes,
                "imbalance": metrics.imbalance,
            }
        if seed is not None:
            doc["seed"] = seed
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PartitionPlan":
        doc = json.loads(text)
        return cls(
            WeightMode(doc["mode"]),
            int(doc["k"]),
            {str(n): int(p) for n, p in doc["assignment"].items()},
        )


@dataclass(frozen=True)
class CutMetrics:
    edge_cut: float
    boundary_nodes: int
    imbalance: float


@dataclass
class CoarseLevel:
    """One coarsening level: the coarse graph plus the fine-to-coarse matching."""

    adjacency: dict[str, dict[str, float]]
    node_weights: dict[str, float]
    matching: dict[str, str] = field(default_factory=dict)


def cut_metrics(wg: WeightedGraph, plan: PartitionPlan) -> CutMetrics:
    """Exact edge cut, boundary node count, and imbalance for a plan."""
    for n in plan.assignment:
        if n not in wg.node_weights:
            raise PartitionError(f"plan node {n!r} missing from graph")
    plan.validate(wg)
    asn = plan.assignment
    cut = 0.0
    boundary: set[str] = set()
    for u in sorted(wg.adjacency):
        for v, w in sorted(wg.adjacency[u].items()):
            if asn[u] != asn[v]:
                boundary.add(u)
                if u < v:
                    cut += w
    part_w = [0.0] * plan.k
    for n, p in asn.items():
        part_w[p] += wg.node_weights[n]
    total = sum(part_w)
    imbalance = max(part_w) / (total / plan.k) if total > 0 else 1.0
    return CutMetrics(cut, len(boundary), imbalance)


def _coarsen_once(
    adjacency: dict[str, dict[str, float]],
    node_weights: dict[str, float],
    rng: random.Random,
) -> CoarseLevel:
    """One heavy-edge-matching pass: visit nodes in seeded random order and
    pair each unmatched node with its heaviest unmatched neighbor."""
    order = sorted(node_weights)
    rng.shuffle(order)
    matched: dict[str, str] = {}
    for u in order:
        if u in matched:
            continue
        best = None
        for v, w in sorted(adjacency[u].items()):
            if v in matched or v == u:
                continue
            if best is None or w > best[1]:
                best = (v, w)
        if best is None:
            matched[u] = u
        else:
            coarse = min(u, best[0])
            matched[u] = coarse
            matched[best[0]] = coarse

    coarse_w: dict[str, float] = {}
    for fine, coarse in matched.items():
        coarse_w[coarse] = coarse_w.get(coarse, 0.0) + node_weights[fine]
    coarse_adj: dict[str, dict[str, float]] = {c: {} for c in coarse_w}
    for u in sorted(adjacency):
        cu = matched[u]
        for v, w in sorted(adjacency[u].items()):
            if not u < v:
                continue  # visit each undirected edge once
            cv = matched[v]
            if cu == cv:
                continue  # merged edge folds away
            coarse_adj[cu][cv] = coarse_adj[cu].get(cv, 0.0) + w
            coarse_adj[cv][cu] = coarse_adj[cv].get(cu, 0.0) + w
    return CoarseLevel(coarse_adj, coarse_w, matching=dict(matched))


def coarsen(wg: WeightedGraph, k: int = 2, seed: int = 0) -> list[CoarseLevel]:
    """Coarsening ladder, finest first.

    Always attempts at least one pass, then stops once a level has at most
    max(20, 2k) nodes or a pass shrinks the graph by less than 10%.
    """
    if len(wg.node_weights) < 2:
        raise PartitionError("coarsening needs at least 2 nodes")
    rng = random.Random(stable_seed(seed, "coarsen"))
    levels: list[CoarseLevel] = []
    adjacency, node_weights = wg.adjacency, wg.node_weights
    floor = max(COARSEST_NODES, 2 * k)
    while len(node_weights) > 1:
        level = _coarsen_once(adjacency, node_weights, rng)
        reduction = 1.0 - len(level.node_weights) / len(node_weights)
        if reduction < MIN_REDUCTION:
            break
        levels.append(level)
        adjacency, node_weights = level.adjacency, level.node_weights
        if len(node_weights) <= floor:
            break
    return levels


def _grow_bisect(
    adjacency: dict[str, dict[str, float]],
    node_weights: dict[str, float],
    target_frac: float,
    rng: random.Random,
) -> dict[str, int]:
    """Breadth-first region growing from a pseudo-random seed node.

    Grows side 0 until its accumulated weight reaches target_frac of the
    total; everything else is side 1. Disconnected graphs grow per component,
    jumping to the lowest-id unvisited node when a component is exhausted.
    """
    nodes = sorted(node_weights)
    total = sum(node_weights.values())
    target = target_frac * total
    assign = {n: 1 for n in nodes}
    grown = 0.0
    unvisited = set(nodes)
    start = rng.choice(nodes)
    frontier = [start]
    added: list[str] = []
    while grown < target and unvisited:
        if not frontier:
            frontier = [min(unvisited)]
        queue = list(frontier)
        frontier = []
        for u in queue:
            if u not in unvisited or grown >= target:
                continue
            unvisited.discard(u)
            assign[u] = 0
            grown += node_weights[u]
            added.append(u)
            frontier.extend(v for v in sorted(adjacency[u]) if v in unvisited)
    # return the overshoot node when that lands closer to the target
    if len(added) > 1 and grown > target:
        last = added[-1]
        w = node_weights[last]
        if (grown - target) > (target - (grown - w)):
            assign[last] = 1
            grown -= w
    if not any(p == 0 for p in assign.values()):
        assign[start] = 0
    elif all(p == 0 for p in assign.values()):
        last = max((n for n in nodes), key=lambda n: (node_weights[n], n))
        assign[last] = 1
    return assign


def initial_bisect(
    wg_or_level: WeightedGraph | CoarseLevel,
    target_frac: float = 0.5,
    seed: int = 0,
) -> PartitionPlan:
    """Graph-growing bisection of (typically) the coarsest level."""
    if isinstance(wg_or_level, WeightedGraph):
        adjacency, node_weights = wg_or_level.adjacency, wg_or_level.node_weights
        mode = wg_or_level.mode
    else:
        adjacency, node_weights = wg_or_level.adjacency, wg_or_level.node_weights
        mode = WeightMode.MOBILITY
    rng = random.Random(stable_seed(seed, "grow"))
    assign = _grow_bisect(adjacency, node_weights, target_frac, rng)
    return PartitionPlan(mode, 2, assign)


def _bisection_cut(adjacency: dict[str, dict[str, float]], assign: dict[str, int]) -> float:
    cut = 0.0
    for u in adjacency:
        for v, w in adjacency[u].items():
            if u < v and assign[u] != assign[v]:
                cut += w
    return cut


def _refine_pass(
    adjacency: dict[str, dict[str, float]],
    node_weights: dict[str, float],
    assign: dict[str, int],
    side_w: list[float],
    side_n: list[int],
    caps: tuple[float, float],
) -> float:
    """Greedy boundary refinement until no action improves the cut.

    Actions are single-vertex moves and, when no move is feasible, classic
    Kernighan-Lin pair swaps between the sides (swaps escape the balance cap
    that blocks lone moves, e.g. the diagonal split of a 4-cycle). Only
    strictly positive gains are applied, so the cut is monotone.
    """
    total_gain = 0.0
    while True:
        gains: dict[str, float] = {}
        for u in sorted(assign):
            su = assign[u]
            ext = int_ = 0.0
            for v, w in adjacency[u].items():
                if assign[v] == su:
                    int_ += w
                else:
                    ext += w
            if ext > 0.0 or int_ == 0.0:
                gains[u] = ext - int_

        best_move = None  # (gain, node)
        for u, g in sorted(gains.items()):
            if g <= 0:
                continue
            su = assign[u]
            to = 1 - su
            if side_w[to] + node_weights[u] > caps[to] or side_n[su] <= 1:
                continue
            if best_move is None or g > best_move[0]:
                best_move = (g, u)
        if best_move is not None:
            g, u = best_move
            su = assign[u]
            side_w[su] -= node_weights[u]
            side_n[su] -= 1
            side_w[1 - su] += node_weights[u]
            side_n[1 - su] += 1
            assign[u] = 1 - su
            total_gain += g
            continue

        best_swap = None  # (gain, a, b)
        side0 = [u for u in sorted(gains) if assign[u] == 0]
        side1 = [u for u in sorted(gains) if assign[u] == 1]
        for a in side0:
            for b in side1:
                g = gains[a] + gains[b] - 2.0 * adjacency[a].get(b, 0.0)
                if g <= 0:
                    continue
                new0 = side_w[0] - node_weights[a] + node_weights[b]
                new1 = side_w[1] - node_weights[b] + node_weights[a]
                if new0 > caps[0] or new1 > caps[1]:
                    continue
                if best_swap is None or g > best_swap[0]:
                    best_swap = (g, a, b)
        if best_swap is not None:
            g, a, b = best_swap
            side_w[0] += node_weights[b] - node_weights[a]
            side_w[1] += node_weights[a] - node_weights[b]
            assign[a], assign[b] = 1, 0
            total_gain += g
            continue

        # zero-gain moves that strictly reduce the balance overshoot keep the
        # cut monotone and terminate (overshoot strictly decreases at equal cut)
        overshoot = max(side_w[0] - caps[0], side_w[1] - caps[1], 0.0)
        if overshoot <= 0:
            return total_gain
        best_bal = None  # (new_overshoot, node)
        for u, g in sorted(gains.items()):
            if g != 0:
                continue
            su = assign[u]
            if side_n[su] <= 1:
                continue
            w = node_weights[u]
            n0 = side_w[0] - w if su == 0 else side_w[0] + w
            n1 = side_w[1] + w if su == 0 else side_w[1] - w
            new_over = max(n0 - caps[0], n1 - caps[1], 0.0)
            if new_over < overshoot - 1e-12 and (best_bal is None or new_over < best_bal[0]):
                best_bal = (new_over, u)
        if best_bal is None:
            return total_gain
        _, u = best_bal
        su = assign[u]
        side_w[su] -= node_weights[u]
        side_n[su] -= 1
        side_w[1 - su] += node_weights[u]
        side_n[1 - su] += 1
        assign[u] = 1 - su


def kl_refine(
    wg_or_adj,
    plan: PartitionPlan,
    max_passes: int = 10,
    epsilon: float = DEFAULT_EPSILON,
    targets: tuple[float, float] | None = None,
) -> PartitionPlan:
    """Boundary Kernighan-Lin refinement of a bisection.

    Applies gain-ordered boundary moves and swaps subject to the balance
    caps; the returned cut is never worse than the input cut. Terminates
    after max_passes or the first pass with no improvement.
    """
    if isinstance(wg_or_adj, WeightedGraph):
        adjacency, node_weights = wg_or_adj.adjacency, wg_or_adj.node_weights
    else:
        adjacency, node_weights = wg_or_adj
    assign = dict(plan.assignment)
    total = sum(node_weights.values())
    if targets is None:
        targets = (total / 2.0, total / 2.0)
    # One-node granularity slack: with few, chunky node weights a strict
    # (1 + epsilon) cap can forbid every move, so each side may exceed its
    # target by the heaviest node if the relative cap is tighter than that.
    w_max = max(node_weights.values(), default=0.0)
    caps = (
        max(targets[0] * (1.0 + epsilon), targets[0] + w_max),
        max(targets[1] * (1.0 + epsilon), targets[1] + w_max),
    )
    side_w = [0.0, 0.0]
    side_n = [0, 0]
    for n, p in assign.items():
        side_w[p] += node_weights[n]
        side_n[p] += 1
    for _ in range(max_passes):
        if _refine_pass(adjacency, node_weights, assign, side_w, side_n, caps) <= 0:
            break
    return PartitionPlan(plan.mode, 2, assign)


def _project(assign: dict[str, int], matching: dict[str, str]) -> dict[str, int]:
    return {fine: assign[coarse] for fine, coarse in matching.items()}


def _bisect_multilevel(
    adjacency: dict[str, dict[str, float]],
    node_weights: dict[str, float],
    mode: WeightMode,
    target_frac: float,
    epsilon: float,
    seed: int,
    restarts: int = DEFAULT_RESTARTS,
) -> dict[str, int]:
    """Full coarsen / grow / refine-up bisection, best of a few seeded starts."""
    wg = WeightedGraph(mode, node_weights, {}, adjacency)
    levels = coarsen(wg, k=2, seed=seed) if len(node_weights) > 2 else []
    coarsest_adj = levels[-1].adjacency if levels else adjacency
    coarsest_w = levels[-1].node_weights if levels else node_weights
    total = sum(node_weights.values())
    targets = (target_frac * total, (1.0 - target_frac) * total)

    w_max = max(node_weights.values(), default=0.0)
    caps = (
        max(targets[0] * (1.0 + epsilon), targets[0] + w_max),
        max(targets[1] * (1.0 + epsilon), targets[1] + w_max),
    )

    best_assign: dict[str, int] | None = None
    best_key: tuple[float, float] | None = None
    for r in range(restarts):
        rng = random.Random(stable_seed(seed, "grow", r))
        assign = _grow_bisect(coarsest_adj, coarsest_w, target_frac, rng)
        plan = kl_refine(
            (coarsest_adj, coarsest_w),
            PartitionPlan(mode, 2, assign),
            epsilon=epsilon,
            targets=targets,
        )
        assign = plan.assignment
        for li in range(len(levels) - 1, -1, -1):
            assign = _project(assign, levels[li].matching)
            finer_adj = levels[li - 1].adjacency if li > 0 else adjacency
            finer_w = levels[li - 1].node_weights if li > 0 else node_weights
            plan = kl_refine(
                (finer_adj, finer_w),
                PartitionPlan(mode, 2, assign),
                epsilon=epsilon,
                targets=targets,
            )
            assign = plan.assignment
        cut = _bisection_cut(adjacency, assign)
        side_w = [0.0, 0.0]
        for n, p in assign.items():
            side_w[p] += node_weights[n]
        # balance within the caps is a constraint, the cut a preference
        overshoot = max(side_w[0] - caps[0], side_w[1] - caps[1], 0.0)
        key = (overshoot, cut)
        if best_key is None or key < best_key:
            best_assign, best_key = assign, key
    assert best_assign is not None
    return best_assign


def partition_kway(
    wg: WeightedGraph,
    k: int,
    epsilon: float = DEFAULT_EPSILON,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> PartitionPlan:
    """Recursive-bisection k-way plan with dense indices and no empty part.

    Each split targets weights proportional to ceil(k/2):floor(k/2) and gets
    a per-level share of the imbalance budget so the final plan lands within
    1 + epsilon where achievable.
    """
    n = len(wg.node_weights)
    if not 1 <= k <= n:
        raise PartitionError(f"k={k} outside [1, {n}]")
    if k == 1:
        return PartitionPlan(wg.mode, 1, {node: 0 for node in wg.node_weights})

    depth_levels = max(1, math.ceil(math.log2(k)))
    eff_eps = (1.0 + epsilon) ** (1.0 / depth_levels) - 1.0

    assignment: dict[str, int] = {}
    next_index = [0]

    def recurse(nodes: set[str], kk: int, depth: int):
        if kk == 1:
            idx = next_index[0]
            next_index[0] += 1
            for node in nodes:
                assignment[node] = idx
            return
        sub_adj = {u: {v: w for v, w in wg.adjacency[u].items() if v in nodes} for u in nodes}
        sub_w = {u: wg.node_weights[u] for u in nodes}
        k_left = (kk + 1) // 2
        frac = k_left / kk
        assign = _bisect_multilevel(
            sub_adj, sub_w, wg.mode, frac, eff_eps, stable_seed(seed, "split", depth), restarts
        )
        left = {u for u in nodes if assign[u] == 0}
        right = nodes - left
        if not left or not right:
            ordered = sorted(nodes)
            split_at = max(1, min(len(ordered) - 1, len(ordered) * k_left // kk))
            left = set(ordered[:split_at])
            right = nodes - left
        recurse(left, k_left, depth * 2 + 1)
        recurse(right, kk - k_left, depth * 2 + 2)

    recurse(set(wg.node_weights), k, 0)
    plan = PartitionPlan(wg.mode, k, assignment)
    plan.validate(wg)
    return plan


def search_k(
    wg: WeightedGraph,
    k_min: int,
    k_max: int,
    objective_coeffs: tuple[float, float, float] = DEFAULT_OBJECTIVE,
    epsilon: float = DEFAULT_EPSILON,
    seed: int = 0,
) -> tuple[PartitionPlan, CutMetrics]:
    """Try every k in [k_min, k_max]; keep the plan minimizing the objective
    a*edge_cut + b*boundary_nodes + c*(imbalance - 1). Ties prefer smaller k."""
    if not 1 <= k_min <= k_max <= len(wg.node_weights):
        raise PartitionError(f"bad k range [{k_min}, {k_max}]")
    a, b, c = objective_coeffs
    best = None
    for k in range(k_min, k_max + 1):
        plan = partition_kway(wg, k, epsilon, seed)
        m = cut_metrics(wg, plan)
        score = a * m.edge_cut + b * m.boundary_nodes + c * (m.imbalance - 1.0)
        if best is None or score < best[0]:
            best = (score, plan, m)
    return best[1], best[2]
