"""Level-set extraction from scalar grids: marching squares (2-D) and
marching tetrahedra (3-D, Kuhn cube subdivision).

Vertices are keyed by the grid edge (pair of flat node indices) they sit on,
so they are shared exactly between neighbouring cells and can later be
refined by bisection along that edge.  Nodes with value >= 0 count as
outside (exact zeros break ties towards positive); cells touching a failed
node are skipped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

# marching-squares segment table: corner bits (c0, c1, c2, c3) counterclockwise
# from the lower-left corner, edges e0 bottom, e1 right, e2 top, e3 left.
_MS_SEGMENTS = {
    0: [],
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    5: [(3, 0), (1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(0, 2)],
    10: [(0, 1), (2, 3)],
    11: [(1, 2)],
    12: [(1, 3)],
    13: [(0, 1)],
    14: [(3, 0)],
    15: [],
}

# cube corner k has offsets (x, y, z) = (k & 1, (k >> 1) & 1, (k >> 2) & 1)
_KUHN_TETS = (
    (0, 1, 3, 7),
    (0, 1, 5, 7),
    (0, 2, 3, 7),
    (0, 2, 6, 7),
    (0, 4, 5, 7),
    (0, 4, 6, 7),
)


@dataclass
class Extraction:
    """Raw level-set geometry in grid-edge form."""

    vertex_edges: np.ndarray  # (K, 2) flat node index pairs (a, b), a < b
    vertex_t: np.ndarray  # (K,) linear-interpolation parameter along a -> b
    paths: List[np.ndarray] = field(default_factory=list)  # 2-D: chains of vertex ids
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return self.vertex_edges.shape[0]


class _VertexPool:
    def __init__(self, values):
        self.values = values  # flat node values
        self.index: Dict[Tuple[int, int], int] = {}
        self.edges: List[Tuple[int, int]] = []
        self.ts: List[float] = []

    def get(self, a: int, b: int) -> int:
        if a > b:
            a, b = b, a
        key = (a, b)
        i = self.index.get(key)
        if i is None:
            fa = self.values[a]
            fb = self.values[b]
            i = len(self.edges)
            self.index[key] = i
            self.edges.append(key)
            self.ts.append(float(fa / (fa - fb)))
        return i


def _inside(values):
    return values < 0.0  # values >= 0 (including exact zero) count as outside


def marching_squares(det: np.ndarray, ok: np.ndarray) -> Extraction:
    """Extract the det = 0 polylines of a (r0, r1) node grid."""
    r0, r1 = det.shape
    flat = det.reshape(-1)
    inside = _inside(det)
    pool = _VertexPool(flat)
    segments: List[Tuple[int, int]] = []

    def nid(i, j):
        return i * r1 + j

    for i in range(r0 - 1):
        for j in range(r1 - 1):
            if not (ok[i, j] and ok[i + 1, j] and ok[i, j + 1] and ok[i + 1, j + 1]):
                continue
            c = (
                int(inside[i, j])
                | int(inside[i + 1, j]) << 1
                | int(inside[i + 1, j + 1]) << 2
                | int(inside[i, j + 1]) << 3
            )
            segs = _MS_SEGMENTS[c]
            if not segs:
                continue
            corner = (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
            edge_nodes = (
                (corner[0], corner[1]),
                (corner[1], corner[2]),
                (corner[2], corner[3]),
                (corner[3], corner[0]),
            )
            for ea, eb in segs:
                va = pool.get(*edge_nodes[ea])
                vb = pool.get(*edge_nodes[eb])
                if va != vb:
                    segments.append((va, vb))

    paths = _assemble_paths(len(pool.edges), segments)
    return Extraction(
        vertex_edges=np.asarray(pool.edges, dtype=np.int64).reshape(-1, 2),
        vertex_t=np.asarray(pool.ts, dtype=float),
        paths=paths,
    )


def _assemble_paths(n_vertices: int, segments: List[Tuple[int, int]]) -> List[np.ndarray]:
    """Chain segments into polylines; open chains first, then closed loops."""
    adj: Dict[int, List[int]] = {}
    for a, b in segments:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    used = set()
    paths = []

    def walk(start, first):
        chain = [start, first]
        used.add(_k(start, first))
        cur, prev = first, start
        while True:
            nxt = None
            for cand in adj.get(cur, ()):
                if _k(cur, cand) not in used:
                    nxt = cand
                    break
            if nxt is None:
                break
            used.add(_k(cur, nxt))
            chain.append(nxt)
            prev, cur = cur, nxt
            if cur == start:
                break
        return np.asarray(chain, dtype=np.int64)

    def _k(a, b):
        return (a, b) if a < b else (b, a)

    endpoints = sorted(v for v, ns in adj.items() if len(ns) == 1)
    for v in endpoints:
        for w in adj[v]:
            if _k(v, w) not in used:
                paths.append(walk(v, w))
    for a, b in segments:
        if _k(a, b) not in used:
            paths.append(walk(a, b))
    return paths


def marching_tetrahedra(det: np.ndarray, ok: np.ndarray) -> Extraction:
    """Extract the det = 0 triangle mesh of a (r0, r1, r2) node grid."""
    r0, r1, r2 = det.shape
    flat = det.reshape(-1)
    inside = _inside(flat)
    okf = ok.reshape(-1)
    pool = _VertexPool(flat)
    tris: List[Tuple[int, int, int]] = []

    def nid(i, j, k):
        return (i * r1 + j) * r2 + k

    corner_offsets = [(k & 1, (k >> 1) & 1, (k >> 2) & 1) for k in range(8)]

    for i in range(r0 - 1):
        for j in range(r1 - 1):
            for k in range(r2 - 1):
                corners = [nid(i + dx, j + dy, k + dz) for dx, dy, dz in corner_offsets]
                good = True
                for cidx in corners:
                    if not okf[cidx]:
                        good = False
                        break
                if not good:
                    continue
                any_in = False
                all_in = True
                for cidx in corners:
                    if inside[cidx]:
                        any_in = True
                    else:
                        all_in = False
                if not any_in or all_in:
                    continue
                for tet in _KUHN_TETS:
                    nodes = (corners[tet[0]], corners[tet[1]], corners[tet[2]], corners[tet[3]])
                    flags = (inside[nodes[0]], inside[nodes[1]], inside[nodes[2]], inside[nodes[3]])
                    n_in = int(flags[0]) + int(flags[1]) + int(flags[2]) + int(flags[3])
                    if n_in == 0 or n_in == 4:
                        continue
                    if n_in == 1 or n_in == 3:
                        lone = flags.index(n_in == 1)
                        others = [x for x in range(4) if x != lone]
                        vs = [pool.get(nodes[lone], nodes[o]) for o in others]
                        if vs[0] != vs[1] and vs[1] != vs[2] and vs[0] != vs[2]:
                            tris.append((vs[0], vs[1], vs[2]))
                    else:
                        ins = [x for x in range(4) if flags[x]]
                        outs = [x for x in range(4) if not flags[x]]
                        a, b = ins
                        cc, dd = outs
                        quad = [
                            pool.get(nodes[a], nodes[cc]),
                            pool.get(nodes[a], nodes[dd]),
                            pool.get(nodes[b], nodes[dd]),
                            pool.get(nodes[b], nodes[cc]),
                        ]
                        if len({quad[0], quad[1], quad[2]}) == 3:
                            tris.append((quad[0], quad[1], quad[2]))
                        if len({quad[0], quad[2], quad[3]}) == 3:
                            tris.append((quad[0], quad[2], quad[3]))

    return Extraction(
        vertex_edges=np.asarray(pool.edges, dtype=np.int64).reshape(-1, 2),
        vertex_t=np.asarray(pool.ts, dtype=float),
        triangles=np.asarray(tris, dtype=np.int64).reshape(-1, 3),
    )
