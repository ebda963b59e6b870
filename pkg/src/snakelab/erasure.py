"""h-erasure of a contour function and the finite tree it codes."""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .excursion import Excursion, polyline


class EmptyWalk(ValueError):
    pass


@dataclass(frozen=True)
class AlternatingWalk:
    """gamma_times/z_values hold gamma_0..gamma_M followed by (sigma, 0)."""
    gamma_times: np.ndarray
    z_values: np.ndarray
    gamma_index: np.ndarray     # polyline vertex that closes the cell containing gamma_p
    gamma_f: np.ndarray         # contour height at gamma_p
    h: float
    M: int
    truncated: bool = False


@dataclass(frozen=True)
class Edge:
    p: int
    parent: Optional[int]
    Y: float
    Z: float
    gamma: float
    children: tuple = ()

    @property
    def is_leaf(self):
        return self.p % 2 == 1

    @property
    def length(self):
        return self.Z - self.Y


@dataclass(frozen=True)
class ErasedTree:
    edges: dict                 # p -> Edge, p = 1..M
    root_edge: int
    h: float
    truncated: bool = False

    def __len__(self):
        return len(self.edges)

    def lineage(self, p):
        """Edge ids from the root down to edge p."""
        out = []
        while p is not None:
            out.append(p)
            p = self.edges[p].parent
        return out[::-1]

    def leaves(self):
        return [p for p in self.edges if p % 2 == 1]


@njit(cache=True)
def _erase(t, v, h):
    n = v.shape[0]
    gt = np.empty(n + 2)
    gz = np.empty(n + 2)
    gi = np.empty(n + 2, dtype=np.int64)
    gf = np.empty(n + 2)
    m = 0
    looking_up = True
    ext = v[0]
    for k in range(1, n):
        x = v[k]
        if looking_up:
            thr = ext + h
            if x > thr:
                a = v[k - 1]
                frac = (thr - a) / (x - a)
                gt[m] = t[k - 1] + frac * (t[k] - t[k - 1])
                gz[m] = ext
                gi[m] = k
                gf[m] = thr
                m += 1
                looking_up = False
                ext = x
            elif x < ext:
                ext = x
        else:
            thr = ext - h
            if x < thr:
                a = v[k - 1]
                frac = (a - thr) / (a - x)
                gt[m] = t[k - 1] + frac * (t[k] - t[k - 1])
                gz[m] = thr
                gi[m] = k
                gf[m] = thr
                m += 1
                looking_up = True
                ext = x
            elif x > ext:
                ext = x
    return gt[:m], gz[:m], gi[:m], gf[:m]


def erase_polyline(t, v, h, truncated=False):
    if h <= 0:
        raise ValueError("h must be positive")
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    gt, gz, gi, gf = _erase(t, v, float(h))
    if truncated and len(gt) % 2 == 1:
        # unfinished last rise: its leaf is unknown, drop the dangling beta point
        gt, gz, gi, gf = gt[:-1], gz[:-1], gi[:-1], gf[:-1]
    if len(gt) == 0:
        return AlternatingWalk(np.array([t[-1]]), np.array([0.0]), np.zeros(0, np.int64),
                               np.zeros(0), h, 0, truncated)
    gt = np.append(gt, t[-1])
    gz = np.append(gz, 0.0)
    return AlternatingWalk(gt, gz, gi, gf, h, len(gi) - 1, truncated)


def h_erase(exc, h):
    """Alternating extrema of the excursion contour separated by more than h."""
    if isinstance(exc, Excursion):
        t, v = polyline(exc)
        return erase_polyline(t, v, h, exc.truncated)
    t, v = exc
    return erase_polyline(t, v, h)


def build_tree(walk):
    """Split recursively at the lowest Z; even (beta) minima become branch points."""
    M = walk.M
    if M < 1:
        raise EmptyWalk("cannot build a tree from an empty walk")
    z = walk.z_values
    g = walk.gamma_times
    parent = {}
    base = {}
    children = {p: [] for p in range(1, M + 1)}
    stack = [(1, M, 0.0, None)]
    while stack:
        lo, hi, y0, par = stack.pop()
        seg = z[lo:hi + 1]
        q = lo + int(np.argmin(seg))
        parent[q] = par
        base[q] = y0
        if par is not None:
            children[par].append(q)
        if q % 2 == 0:
            stack.append((q + 1, hi, z[q], q))
            stack.append((lo, q - 1, z[q], q))
    root = next(p for p in parent if parent[p] is None)
    edges = {p: Edge(p, parent[p], float(base[p]), float(z[p]), float(g[p]),
                     tuple(sorted(children[p])))
             for p in range(1, M + 1)}
    return ErasedTree(edges, root, walk.h, walk.truncated)


@dataclass(frozen=True)
class TreeSummary:
    edge_lengths: np.ndarray
    root_lengths: np.ndarray
    branching: np.ndarray       # root-branching indicator per decided tree
    edge_counts: np.ndarray
    n_truncated: int


def tree_statistics(trees, h):
    """Edge lengths of complete trees plus root-branching indicators.

    A truncated excursion still decides the indicator once its partial walk
    holds a branch point, so those trees are counted there and only there.
    """
    lengths, roots, branching, counts = [], [], [], []
    n_trunc = 0
    for tr in trees:
        if tr.truncated:
            n_trunc += 1
            if len(tr.edges) > 1:
                branching.append(True)
            continue
        ls = [e.length for e in tr.edges.values()]
        lengths.extend(ls)
        roots.append(tr.edges[tr.root_edge].length)
        branching.append(len(tr.edges) > 1)
        counts.append(len(tr.edges))
    return TreeSummary(np.asarray(lengths), np.asarray(roots), np.asarray(branching, dtype=bool),
                       np.asarray(counts, dtype=int), n_trunc)


def branch_minima_check(walk, t, v, grid_values=None, tol=0.0):
    """Compare each branch height with the contour minimum between the flanking alpha times.

    Returns the maximal absolute deviation over all branch points.
    """
    worst = 0.0
    gi = walk.gamma_index
    for p in range(2, walk.M, 2):
        k0, k1 = gi[p - 1], gi[p + 1]
        # the alpha points lie inside cells (k0-1, k0] and (k1-1, k1]
        seg = v[k0:k1]
        m = min(seg.min(), walk.gamma_f[p - 1], walk.gamma_f[p + 1])
        worst = max(worst, abs(walk.z_values[p] - m))
    return worst
