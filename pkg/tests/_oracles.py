"""Independent reference implementations used only to check the real code.

These deliberately use different algorithms/formulations than the package:
exhaustive enumeration for partitioning, Bellman-Ford for routing, a straight
forward-Euler IDM loop for car following.
"""

from __future__ import annotations

import math
import random


def brute_force_min_cut(
    adjacency: dict[str, dict[str, float]],
    node_weights: dict[str, float],
    k: int,
    epsilon: float = 0.05,
) -> float:
    """Exhaustive minimum edge cut over balanced k-way partitions.

    Balance cap per part mirrors the heuristic's contract: (1 + epsilon)
    around the ideal, relaxed by one-node granularity slack so the optimum is
    never infeasible on small graphs with chunky weights.
    """
    nodes = sorted(node_weights)
    n = len(nodes)
    total = sum(node_weights.values())
    ideal = total / k
    w_max = max(node_weights.values())
    cap = max(ideal * (1.0 + epsilon), ideal + w_max) + 1e-9

    w = [[0.0] * n for _ in range(n)]
    idx = {node: i for i, node in enumerate(nodes)}
    for u, nbrs in adjacency.items():
        for v, wt in nbrs.items():
            if u < v:
                w[idx[u]][idx[v]] = wt
                w[idx[v]][idx[u]] = wt

    best = [math.inf]
    labels = [0] * n
    part_w = [0.0] * k

    def rec(i: int, used: int, partial_cut: float):
        if partial_cut >= best[0]:
            return
        if i == n:
            if used == k:
                best[0] = partial_cut
            return
        if used + (n - i) < k:
            return
        node_w = node_weights[nodes[i]]
        for lab in range(min(used + 1, k)):
            if part_w[lab] + node_w > cap:
                continue
            add = 0.0
            for j in range(i):
                if labels[j] != lab:
                    add += w[i][j]
            labels[i] = lab
            part_w[lab] += node_w
            rec(i + 1, max(used, lab + 1), partial_cut + add)
            part_w[lab] -= node_w
        labels[i] = 0

    rec(0, 0, 0.0)
    return best[0]


def naive_cut_metrics(adjacency, node_weights, assignment, k):
    """Double-loop recount of edge cut / boundary nodes / imbalance."""
    cut = 0.0
    boundary = set()
    nodes = sorted(node_weights)
    for u in nodes:
        for v in nodes:
            if u < v and v in adjacency.get(u, {}):
                if assignment[u] != assignment[v]:
                    cut += adjacency[u][v]
                    boundary.add(u)
                    boundary.add(v)
    part_w = {}
    for node in nodes:
        part_w[assignment[node]] = part_w.get(assignment[node], 0.0) + node_weights[node]
    total = sum(part_w.values())
    imb = max(part_w.values()) / (total / k)
    return cut, len(boundary), imb


def random_connected_graph(n: int, seed: int, extra_edges: int = 0, max_w: int = 9):
    """Random spanning tree plus extra edges; unit node weights."""
    rng = random.Random(seed)
    names = [f"v{i:02d}" for i in range(n)]
    adjacency = {u: {} for u in names}

    def add(u, v, w):
        adjacency[u][v] = float(w)
        adjacency[v][u] = float(w)

    shuffled = names[:]
    rng.shuffle(shuffled)
    for i in range(1, n):
        u = shuffled[i]
        v = shuffled[rng.randrange(i)]
        add(u, v, rng.randint(1, max_w))
    added = 0
    while added < extra_edges:
        u, v = rng.sample(names, 2)
        if v not in adjacency[u]:
            add(u, v, rng.randint(1, max_w))
            added += 1
    node_weights = {u: 1.0 for u in names}
    return adjacency, node_weights


def bellman_ford_route(graph, origin, destination, blocked=frozenset(),
                       advisory_links=frozenset(), multiplier=5.0):
    """Independent shortest path as a link tuple (Bellman-Ford relaxation)."""
    dist = {origin: 0.0}
    prev = {}
    links = [l for l in graph.links.values() if l.lid not in blocked]
    for _ in range(len(graph.nodes)):
        changed = False
        for l in sorted(links, key=lambda x: x.lid):
            if l.frm not in dist:
                continue
            cost = l.free_flow_s() * (multiplier if l.lid in advisory_links else 1.0)
            nd = dist[l.frm] + cost
            if nd < dist.get(l.to, math.inf) - 1e-12:
                dist[l.to] = nd
                prev[l.to] = l.lid
                changed = True
        if not changed:
            break
    if destination not in dist:
        return None
    route = []
    node = destination
    while node != origin:
        lid = prev[node]
        route.append(lid)
        node = graph.links[lid].frm
    return tuple(reversed(route))


def idm_oracle_trajectories(positions, speeds, params, v0, steps, dt=0.1,
                            leader_profile=None):
    """Straight-line IDM integration for a platoon, leader first.

    Independent of the engine: plain loop, synchronous update, same quantizer
    contract (micrometer rounding) applied so trajectories are comparable.
    """
    from clops.util import quantize as quant
    from clops.util import quantize_speed as quant_s
    pos = list(positions)
    spd = list(speeds)
    history = [(tuple(pos), tuple(spd))]
    for step in range(steps):
        accels = []
        for i in range(len(pos)):
            if i == 0:
                if leader_profile is not None:
                    accels.append(None)
                    continue
                gap = None
                lv = 0.0
            else:
                gap = pos[i - 1] - params.length - pos[i]
                lv = spd[i - 1]
            if gap is not None and gap <= 0:
                a = -8.0
            else:
                free = params.a_max * (1 - (spd[i] / v0) ** 4)
                if gap is None:
                    a = free
                else:
                    dv = spd[i] - lv
                    s_star = params.s0 + max(
                        0.0,
                        spd[i] * params.headway_s
                        + spd[i] * dv / (2 * math.sqrt(params.a_max * params.b_comf)),
                    )
                    a = free - params.a_max * (s_star / gap) ** 2
            accels.append(max(a, -spd[i] / dt))
        for i in range(len(pos)):
            if accels[i] is None:
                pos[0], spd[0] = leader_profile(step)
                continue
            spd[i] = quant_s(max(0.0, spd[i] + accels[i] * dt))
            pos[i] = quant(pos[i] + spd[i] * dt)
        history.append((tuple(pos), tuple(spd)))
    return history


def binomial_sign_test_p(successes: int, trials: int) -> float:
    """One-sided exact sign test: P[X >= successes] for X ~ Bin(trials, 1/2)."""
    return sum(math.comb(trials, i) for i in range(successes, trials + 1)) / 2.0**trials
