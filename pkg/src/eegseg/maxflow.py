"""Exact s-t max-flow / min-cut over pixel graphs.

A FlowNetwork has one node per pixel plus two terminals (source, sink).
Capacities are non-negative floats; hard constraints use HARD_LINK, a large
finite constant that dominates any realistic sum of data and smoothness
capacities. The solver is Dinic's algorithm (BFS level graph + blocking flow)
with fixed node and arc ordering, so results are deterministic. Arcs are
stored in mutually-reverse pairs (arc 2k and 2k+1), which makes residual
updates exact: saturating an arc leaves a residual of exactly 0.0.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import EegsegError

# Large finite capacity for hard constraints; documented contract: any sum of
# ordinary capacities in one cut stays far below this value.
HARD_LINK = 1e9


class FlowNetwork:
    """Directed flow network over n_pixels nodes plus source and sink.

    Nodes 0..n_pixels-1 are pixels; ``source`` and ``sink`` are the terminal
    ids. Build with add_edge / add_terminal / add_neighbor (insertion order is
    part of the deterministic contract), or in bulk with from_arcs.
    """

    def __init__(self, n_pixels: int):
        if n_pixels < 1:
            raise EegsegError("network needs at least one pixel node")
        self.n_pixels = int(n_pixels)
        self._frm: list[int] = []
        self._to: list[int] = []
        self._cap: list[float] = []
        self._csr = None

    @property
    def source(self) -> int:
        return self.n_pixels

    @property
    def sink(self) -> int:
        return self.n_pixels + 1

    @property
    def n_nodes(self) -> int:
        return self.n_pixels + 2

    def add_edge(self, u: int, v: int, cap: float, rcap: float = 0.0) -> None:
        """Add a directed arc u->v with capacity cap and its reverse with rcap."""
        if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
            raise EegsegError(f"node out of range: ({u}, {v})")
        if cap < 0 or rcap < 0 or not np.isfinite(cap) or not np.isfinite(rcap):
            raise EegsegError(f"capacities must be finite and >= 0, got ({cap}, {rcap})")
        self._frm.extend((u, v))
        self._to.extend((v, u))
        self._cap.extend((float(cap), float(rcap)))
        self._csr = None

    def add_terminal(self, pixel: int, source_cap: float, sink_cap: float) -> None:
        """Attach terminal links for one pixel (source->p and p->sink)."""
        self.add_edge(self.source, pixel, source_cap)
        self.add_edge(pixel, self.sink, sink_cap)

    def add_neighbor(self, p: int, q: int, cap: float) -> None:
        """Symmetric smoothness link between two pixels."""
        self.add_edge(p, q, cap, cap)

    @classmethod
    def from_arcs(cls, n_pixels: int, frm, to, cap, rcap) -> "FlowNetwork":
        """Bulk construction; arrays are per logical arc, reverses paired in."""
        net = cls(n_pixels)
        frm = np.asarray(frm, dtype=np.int64)
        to = np.asarray(to, dtype=np.int64)
        cap = np.asarray(cap, dtype=float)
        rcap = np.asarray(rcap, dtype=float)
        if not (len(frm) == len(to) == len(cap) == len(rcap)):
            raise EegsegError("arc arrays must share length")
        if cap.min(initial=0.0) < 0 or rcap.min(initial=0.0) < 0:
            raise EegsegError("capacities must be >= 0")
        m = len(frm)
        arc_frm = np.empty(2 * m, dtype=np.int32)
        arc_to = np.empty(2 * m, dtype=np.int32)
        arc_cap = np.empty(2 * m, dtype=np.float64)
        arc_frm[0::2] = frm
        arc_to[0::2] = to
        arc_cap[0::2] = cap
        arc_frm[1::2] = to
        arc_to[1::2] = frm
        arc_cap[1::2] = rcap
        net._frm = arc_frm
        net._to = arc_to
        net._cap = arc_cap
        net._csr = None
        return net

    def _arrays(self):
        frm = np.asarray(self._frm, dtype=np.int32)
        to = np.asarray(self._to, dtype=np.int32)
        cap = np.asarray(self._cap, dtype=np.float64)
        return frm, to, cap

    def _ensure_csr(self):
        if self._csr is None:
            frm, to, cap = self._arrays()
            order = np.argsort(frm, kind="stable").astype(np.int64)
            counts = np.bincount(frm, minlength=self.n_nodes)
            first = np.zeros(self.n_nodes + 1, dtype=np.int64)
            np.cumsum(counts, out=first[1:])
            self._csr = (first, order, to, cap)
        return self._csr


def max_flow(net: FlowNetwork) -> tuple[float, np.ndarray]:
    """Exact maximum flow and minimum s-t cut.

    Returns (flow value, source_side) where source_side is a boolean array
    over pixel nodes: True for pixels on the source side of the minimum cut
    (reachable in the residual graph).
    """
    first, adj, to, cap = net._ensure_csr()
    residual = cap.copy()
    flow = _dinic(first, adj, to, residual, net.source, net.sink)
    seen = _residual_reachable(first, adj, to, residual, net.source)
    return float(flow), seen[: net.n_pixels].copy()


@njit(cache=True)
def _dinic(first, adj, to, cap, s, t):
    n = first.shape[0] - 1
    level = np.empty(n, np.int32)
    it = np.empty(n, np.int64)
    queue = np.empty(n, np.int32)
    stack_node = np.empty(n + 1, np.int32)
    stack_arc = np.empty(n + 1, np.int64)
    flow = 0.0
    while True:
        # BFS: level graph over residual arcs
        level[:] = -1
        level[s] = 0
        queue[0] = s
        head, tail = 0, 1
        while head < tail:
            u = queue[head]
            head += 1
            for p in range(first[u], first[u + 1]):
                a = adj[p]
                v = to[a]
                if cap[a] > 0.0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[tail] = v
                    tail += 1
        if level[t] < 0:
            return flow
        it[:] = first[:-1]
        # blocking flow via iterative DFS with current-arc pointers
        while True:
            top = 0
            stack_node[0] = s
            found = False
            while top >= 0:
                u = stack_node[top]
                if u == t:
                    found = True
                    break
                advanced = False
                p = it[u]
                while p < first[u + 1]:
                    a = adj[p]
                    v = to[a]
                    if cap[a] > 0.0 and level[v] == level[u] + 1:
                        it[u] = p
                        stack_arc[top] = a
                        top += 1
                        stack_node[top] = v
                        advanced = True
                        break
                    p += 1
                if not advanced:
                    it[u] = first[u + 1]
                    level[u] = -2  # exhausted for this phase
                    top -= 1
            if not found:
                break
            bottleneck = np.inf
            for i in range(top):
                a = stack_arc[i]
                if cap[a] < bottleneck:
                    bottleneck = cap[a]
            for i in range(top):
                a = stack_arc[i]
                cap[a] -= bottleneck
                cap[a ^ 1] += bottleneck
            flow += bottleneck


@njit(cache=True)
def _residual_reachable(first, adj, to, cap, s):
    n = first.shape[0] - 1
    seen = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int32)
    seen[s] = True
    queue[0] = s
    head, tail = 0, 1
    while head < tail:
        u = queue[head]
        head += 1
        for p in range(first[u], first[u + 1]):
            a = adj[p]
            v = to[a]
            if cap[a] > 0.0 and not seen[v]:
                seen[v] = True
                queue[tail] = v
                tail += 1
    return seen
