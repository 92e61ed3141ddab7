"""Finite pointed DAGs as measurable pointed graphs, with exact flows.

Vertices are labelled ``0 .. n-1``; the source is vertex ``0`` and the sink
is vertex ``n-1``.  Everything here is dense float64 linear algebra, meant as
ground truth for the continuous machinery rather than as a fast solver.

Text format (one directive per line, ``#`` starts a comment)::

    vertices 5
    edge 0 1
    edge 0 2
    edge 1 3
    edge 2 3
    edge 3 4
    reward 3 2.5

Terminating vertices are exactly those with an edge into the sink, and each
of them needs a positive ``reward`` line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DagError(ValueError):
    """A graph violates one of the pointed-graph axioms."""


@dataclass
class PointedDag:
    n: int
    edges: list  # (u, v) pairs
    reward: np.ndarray  # (n,), zero off the terminating vertices

    def __post_init__(self):
        self.edges = sorted({(int(u), int(v)) for u, v in self.edges})
        self.reward = np.asarray(self.reward, dtype=np.float64)
        validate(self)

    @property
    def source(self):
        return 0

    @property
    def sink(self):
        return self.n - 1

    @property
    def adjacency(self):
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            a[u, v] = 1.0
        return a

    def children(self, v):
        return [b for a, b in self.edges if a == v]

    def parents(self, v):
        return [a for a, b in self.edges if b == v]

    @property
    def terminating(self):
        return np.array(sorted(u for u, v in self.edges if v == self.sink), dtype=int)

    def topological_order(self):
        return _topo_order(self.n, self.edges)

    @property
    def total_reward(self):
        return float(self.reward.sum())


def _topo_order(n, edges):
    indeg = np.zeros(n, dtype=int)
    for _, v in edges:
        indeg[v] += 1
    out = {v: [] for v in range(n)}
    for u, v in edges:
        out[u].append(v)
    ready = [v for v in range(n) if indeg[v] == 0]
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for w in sorted(out[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    if len(order) != n:
        raise DagError("graph has a cycle (violates finite absorption)")
    return order


def validate(dag):
    n, s0, bot = dag.n, 0, dag.n - 1
    if n < 3:
        raise DagError("need a source, a sink and at least one other vertex")
    for u, v in dag.edges:
        if not (0 <= u < n and 0 <= v < n):
            raise DagError(f"edge {u}->{v} references a missing vertex")
        if u == v:
            raise DagError(f"self-loop at {u} (only the sink loops, implicitly)")
        if u == bot:
            raise DagError("edges out of the sink are not allowed (absorption)")
        if v == s0:
            raise DagError("edges into the source are not allowed")
        if u == s0 and v == bot:
            raise DagError("source must not be terminating: edge 0 -> sink")
    _topo_order(n, dag.edges)
    a = np.zeros((n, n), dtype=bool)
    for u, v in dag.edges:
        a[u, v] = True
    fwd = _closure(a, s0)
    back = _closure(a.T, bot)
    if not fwd.all():
        raise DagError(f"vertices {np.flatnonzero(~fwd).tolist()} unreachable from the source (accessibility)")
    if not back.all():
        raise DagError(f"vertices {np.flatnonzero(~back).tolist()} cannot reach the sink (absorption)")
    if dag.reward.shape != (n,):
        raise DagError(f"reward vector must have length {n}")
    term = np.zeros(n, dtype=bool)
    term[[u for u, v in dag.edges if v == bot]] = True
    if np.any(dag.reward[~term] != 0):
        raise DagError("rewards may only sit on terminating vertices")
    r = dag.reward[term]
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise DagError("rewards of terminating vertices must be positive and finite")


def _closure(a, start):
    seen = np.zeros(a.shape[0], dtype=bool)
    stack = [start]
    while stack:
        v = stack.pop()
        if seen[v]:
            continue
        seen[v] = True
        stack.extend(np.flatnonzero(a[v] & ~seen).tolist())
    return seen


# text format ----------------------------------------------------------------


def parse_dag(text):
    n = None
    edges, rewards = [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key == "vertices" and len(parts) == 2:
                n = int(parts[1])
            elif key == "edge" and len(parts) == 3:
                edges.append((int(parts[1]), int(parts[2])))
            elif key == "reward" and len(parts) == 3:
                rewards[int(parts[1])] = float(parts[2])
            else:
                raise ValueError
        except ValueError:
            raise DagError(f"line {lineno}: cannot parse {raw!r}") from None
    if n is None:
        raise DagError("missing 'vertices' line")
    reward = np.zeros(n)
    for v, r in rewards.items():
        if not 0 <= v < n:
            raise DagError(f"reward for missing vertex {v}")
        reward[v] = r
    return PointedDag(n, edges, reward)


def format_dag(dag):
    lines = [f"vertices {dag.n}"]
    lines += [f"edge {u} {v}" for u, v in dag.edges]
    lines += [f"reward {int(x)} {float(dag.reward[x])!r}" for x in dag.terminating]
    return "\n".join(lines) + "\n"


def load_dag(path):
    with open(path) as fh:
        return parse_dag(fh.read())


# kernels --------------------------------------------------------------------


@dataclass
class DiscreteKernels:
    kappa: np.ndarray  # (n, n) counting kernel, sink self-loop included
    kappa_b: np.ndarray  # (n, n) backward reference kernel
    nu: np.ndarray  # (n,) reference measure
    max_len: int  # N: every walk from the source sits at the sink after N steps


def longest_path_length(dag):
    dist = np.full(dag.n, -np.inf)
    dist[0] = 0
    for v in dag.topological_order():
        for w in dag.children(v):
            dist[w] = max(dist[w], dist[v] + 1)
    return int(dist[dag.sink])


def kernels_from_dag(dag):
    n, bot = dag.n, dag.sink
    kappa = dag.adjacency
    kappa[bot, bot] = 1.0
    big_n = longest_path_length(dag)
    nu = np.zeros(n)
    row = np.zeros(n)
    row[0] = 1.0
    for _ in range(big_n + 1):
        nu += row
        row = row @ kappa
    kappa_b = np.zeros((n, n))
    flows = nu[:, None] * kappa
    for s in range(1, n - 1):
        kappa_b[s] = flows[:, s] / nu[s]
    kappa_b[bot, :bot] = flows[:bot, bot] / nu[bot]
    return DiscreteKernels(kappa, kappa_b, nu, big_n)


def balance_defect(kernels):
    """Largest entry of |nu x kappa - (nu x kappa_b)^T| off the two corner atoms."""
    fwd = kernels.nu[:, None] * kernels.kappa
    bwd = (kernels.nu[:, None] * kernels.kappa_b).T
    diff = np.abs(fwd - bwd)
    diff[0, 0] = diff[-1, -1] = 0.0
    return float(diff.max())


# flows ----------------------------------------------------------------------


@dataclass
class DiscreteFlow:
    mu: np.ndarray  # (n,) state flow, mu[sink] = Z
    pf: np.ndarray  # (n, n) forward kernel, pf[sink, sink] = 1
    pb: np.ndarray  # (n, n) backward kernel, pb[source] = 0
    z: float


def uniform_forward(dag):
    a = dag.adjacency
    a[dag.sink, dag.sink] = 1.0
    return a / a.sum(1, keepdims=True)


def random_forward(dag, rng):
    a = dag.adjacency
    a[dag.sink, dag.sink] = 1.0
    w = a * rng.gamma(1.0, size=a.shape)
    return w / w.sum(1, keepdims=True)


def random_backward(dag, rng):
    """Random kernel with each row a Dirichlet(1) draw over the parents of that vertex."""
    n = dag.n
    pb = np.zeros((n, n))
    for v in range(1, n):
        par = dag.parents(v)
        w = rng.gamma(1.0, size=len(par))
        pb[v, par] = w / w.sum()
    return pb


def exact_terminating_distribution(dag, pf):
    """P_T(x) = P_F(x, sink) * P(reach x); dynamic programming in topological order."""
    reach = np.zeros(dag.n)
    reach[0] = 1.0
    for v in dag.topological_order():
        if v == dag.sink:
            continue
        for w in dag.children(v):
            if w != dag.sink:
                reach[w] += reach[v] * pf[v, w]
    out = np.zeros(dag.n)
    term = dag.terminating
    out[term] = reach[term] * pf[term, dag.sink]
    return out


def enumerate_trajectories(dag):
    """All complete trajectories (s0, ..., x, sink) as tuples, by depth-first search."""
    out = []
    stack = [(0,)]
    while stack:
        path = stack.pop()
        for w in dag.children(path[-1]):
            if w == dag.sink:
                out.append(path + (w,))
            else:
                stack.append(path + (w,))
    return sorted(out)


def trajectory_probability(pf, path):
    return float(np.prod([pf[a, b] for a, b in zip(path[:-1], path[1:])]))


def backward_trajectory_probability(pb, path):
    """P_B(tau | x): product of reversed steps from x back to the source."""
    inner = path[:-1]
    return float(np.prod([pb[b, a] for a, b in zip(inner[:-1], inner[1:])]))


def terminating_by_enumeration(dag, pf):
    out = np.zeros(dag.n)
    for path in enumerate_trajectories(dag):
        out[path[-2]] += trajectory_probability(pf, path)
    return out


def flow_from_backward(dag, pb):
    """Exact flow whose backward kernel is ``pb`` and whose terminal flow is the reward.

    State flow is pulled back from the sink: mu(s) = R(s) + sum_c mu(c) P_B(c, s).
    The sink row of the returned backward kernel is R / R(X), the only choice
    compatible with detailed balance into the sink.
    """
    n, bot = dag.n, dag.sink
    r = dag.reward
    z = dag.total_reward
    if z <= 0:
        raise DagError("reward must have positive total mass")
    mu = np.zeros(n)
    edge = np.zeros((n, n))
    for v in reversed(dag.topological_order()):
        if v == bot:
            continue
        for c in dag.children(v):
            edge[v, c] = r[v] if c == bot else mu[c] * pb[c, v]
        mu[v] = edge[v].sum()
    mu[bot] = z
    pf = np.zeros((n, n))
    uni = uniform_forward(dag)
    for v in range(n - 1):
        pf[v] = edge[v] / mu[v] if mu[v] > 0 else uni[v]
    pf[bot, bot] = 1.0
    pb_out = np.array(pb, dtype=np.float64, copy=True)
    pb_out[0] = 0.0
    pb_out[bot] = r / z
    return DiscreteFlow(mu, pf, pb_out, z)


def flow_from_forward(dag, pf, z):
    """State flow mu(B) = Z * sum_n P_F^n(s0, B) on non-sink states; mu(sink) = Z."""
    n, bot = dag.n, dag.sink
    step = np.array(pf, dtype=np.float64, copy=True)
    step[bot] = 0.0
    row = np.zeros(n)
    row[0] = 1.0
    visits = np.zeros(n)
    for _ in range(n + 1):
        visits += row
        row = row @ step
    mu = z * visits
    mu[bot] = z
    return mu


def backward_from_flow(dag, mu, pf):
    """P_B(s', s) = mu(s) P_F(s, s') / mu(s'), the kernel detailed balance forces."""
    n, bot = dag.n, dag.sink
    pb = np.zeros((n, n))
    for v in range(1, n):
        for p in dag.parents(v):
            pb[v, p] = mu[p] * pf[p, v] / mu[v]
    return pb


# condition checks -------------------------------------------------------------


def fm_residual(dag, mu, pf):
    n = dag.n
    inflow = mu[: n - 1] @ pf[: n - 1]
    res = np.abs(mu[1:] - inflow[1:])
    return float(res.max())


def db_residual(dag, mu, pf, pb):
    worst = 0.0
    for u, v in dag.edges:
        worst = max(worst, abs(mu[u] * pf[u, v] - mu[v] * pb[v, u]))
    return worst


def rm_residual(dag, mu, pf):
    t = dag.terminating
    return float(np.abs(mu[t] * pf[t, dag.sink] - dag.reward[t]).max())


def tb_residual(dag, pf, pb, z):
    worst = 0.0
    for path in enumerate_trajectories(dag):
        x = path[-2]
        lhs = z * trajectory_probability(pf, path)
        rhs = dag.reward[x] * backward_trajectory_probability(pb, path)
        worst = max(worst, abs(lhs - rhs))
    return worst


def pb_total(dag, pb):
    """max_s |sum_n P_B^n(s, {s0}) - 1| over all states including the sink."""
    step = np.array(pb, dtype=np.float64, copy=True)
    step[0] = 0.0
    col = np.zeros(dag.n)
    col[0] = 1.0
    total = np.zeros(dag.n)
    for _ in range(dag.n + 1):
        total += col
        col = step @ col
    return float(np.abs(total - 1.0).max())


CHECKS = ("fm", "db", "tb", "rm", "pb_total")


def check_conditions(dag, flow, which=CHECKS):
    out = {}
    for name in which:
        if name == "fm":
            out[name] = fm_residual(dag, flow.mu, flow.pf)
        elif name == "db":
            out[name] = db_residual(dag, flow.mu, flow.pf, flow.pb)
        elif name == "tb":
            out[name] = tb_residual(dag, flow.pf, flow.pb, flow.z)
        elif name == "rm":
            out[name] = rm_residual(dag, flow.mu, flow.pf)
        elif name == "pb_total":
            out[name] = pb_total(dag, flow.pb)
        else:
            raise ValueError(f"unknown check {name!r}")
    return out


# density view ---------------------------------------------------------------


@dataclass
class DensityView:
    """Log-densities of a discrete flow relative to (kappa, kappa_b, nu)."""

    log_u: np.ndarray
    log_pf: np.ndarray
    log_pb: np.ndarray
    log_r: np.ndarray
    log_z: float

    def trajectory_terms(self, path):
        """(sum log p_F, sum log p_B, log r) for a complete trajectory."""
        inner = path[:-1]
        lpf = sum(self.log_pf[a, b] for a, b in zip(path[:-1], path[1:]))
        lpb = sum(self.log_pb[b, a] for a, b in zip(inner[:-1], inner[1:]))
        return lpf, lpb, self.log_r[path[-2]]


def density_view(dag, kernels, flow):
    with np.errstate(divide="ignore", invalid="ignore"):
        log_u = np.log(flow.mu / kernels.nu)
        log_pf = np.where(kernels.kappa > 0, np.log(flow.pf) - np.log(kernels.kappa), -np.inf)
        log_pb = np.where(kernels.kappa_b > 0, np.log(flow.pb) - np.log(kernels.kappa_b), -np.inf)
        log_r = np.log(dag.reward / kernels.nu)
    return DensityView(log_u, log_pf, log_pb, log_r, float(np.log(flow.z)))


# random instances -------------------------------------------------------------


def random_dag(n, rng, p=0.45, reward_range=(0.1, 2.0)):
    """Erdos-Renyi DAG over a random topological order of the interior vertices.

    Every interior vertex receives at least one earlier parent and one later
    child, which makes accessibility and absorption hold by construction.
    Interior labels are shuffled so the vertex numbering is not itself a
    topological order.
    """
    if n < 3:
        raise DagError("need at least 3 vertices")
    bot = n - 1
    edges = set()
    # positions 0..n-1 in topological order; source first, sink last
    for i in range(n - 1):
        for j in range(i + 1, n):
            if i == 0 and j == bot:
                continue
            if rng.random() < p:
                edges.add((i, j))
    for j in range(1, bot):
        if not any(b == j for _, b in edges):
            edges.add((int(rng.integers(0, j)), j))
        if not any(a == j for a, _ in edges):
            edges.add((j, int(rng.integers(j + 1, n))))
    perm = np.arange(n)
    perm[1:bot] = 1 + rng.permutation(bot - 1)
    edges = [(int(perm[a]), int(perm[b])) for a, b in edges]
    reward = np.zeros(n)
    term = sorted({a for a, b in edges if b == bot})
    reward[term] = rng.uniform(*reward_range, size=len(term))
    return PointedDag(n, edges, reward)


def two_terminal_toy(r_a=1.0, r_b=3.0):
    """s0 -> a, s0 -> b, both terminating."""
    return PointedDag(4, [(0, 1), (0, 2), (1, 3), (2, 3)], [0.0, r_a, r_b, 0.0])

