"""Dormancy subordinator, on/off Brownian motion and the marked spatial tree.

Lineages are evaluated with one canonical first-passage routine so that every
construction built on the same realization sees bit-identical ages.
"""
import bisect
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .erasure import ErasedTree, AlternatingWalk
from .excursion import Excursion, polyline


class QueryOutOfTree(ValueError):
    pass


@dataclass(frozen=True)
class SubordinatorPath:
    domain_length: float
    jump_y: np.ndarray
    jump_size: np.ndarray
    initial: float = 0.0

    def value(self, y):
        """S(y) = initial + y + sum of jumps located at or below y."""
        k = np.searchsorted(self.jump_y, y, side="right")
        return self.initial + y + self.jump_size[:k].sum()


def sample_subordinator(length, c, ctilde, rng, initial=0.0):
    if ctilde <= 0:
        raise ValueError("ctilde must be positive")
    if c < 0 or length < 0:
        raise ValueError("length and c must be nonnegative")
    n = rng.poisson(c * length)
    ys = np.sort(rng.uniform(0.0, length, n))
    sizes = rng.exponential(1.0 / ctilde, n)
    return SubordinatorPath(float(length), ys, sizes, float(initial))


@njit(cache=True)
def _passage(jy, js, nj, initial, s, end):
    # H = inf{y < end : S(y) >= s} (or end), A = 1 when s is met on drift
    cum = initial
    hc = s - cum
    if hc <= 0.0:
        if end <= 0.0 and hc < 0.0:
            return 0.0, 0
        return 0.0, 1 if hc == 0.0 else 0
    for j in range(nj):
        y = jy[j]
        if y >= end:
            break
        if hc < y:
            return hc, 1
        cum += js[j]
        hc = s - cum
        if hc <= y:
            return y, 1 if hc == y else 0
    if hc < end:
        return hc, 1
    return end, 0


def first_passage(sub, s):
    """(H, A) for age level s on a subordinator path, capped at its domain length."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    H, A = _passage(sub.jump_y, sub.jump_size, len(sub.jump_y), sub.initial, float(s),
                    sub.domain_length)
    return float(H), int(A)


def to_on_off_bm(bm_values, dy, sub, s_grid):
    """Positions B(H(s)) and states A(s) of the on/off Brownian motion.

    `bm_values` holds B on the uniform grid 0, dy, 2dy, ...; off-grid heights
    are read by linear interpolation of each coordinate.
    """
    b = np.asarray(bm_values, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    cover = (len(b) - 1) * dy
    if cover < sub.domain_length - 1e-12:
        raise ValueError("Brownian path does not cover the subordinator domain")
    grid = dy * np.arange(len(b))
    pos, state = [], []
    for s in s_grid:
        H, A = first_passage(sub, s)
        if H > cover:
            raise ValueError("H(s) beyond the Brownian path")
        pos.append([np.interp(H, grid, b[:, i]) for i in range(b.shape[1])])
        state.append(A)
    return np.asarray(pos), np.asarray(state, dtype=int)


@dataclass
class MarkedTree:
    tree: ErasedTree
    jumps: dict                  # p -> (heights, sizes) on edge p
    initial: float
    _lin: dict = field(default_factory=dict, repr=False)

    def lineage_jumps(self, p):
        """Concatenated jump heights/sizes from the root down to edge p."""
        if p not in self._lin:
            par = self.tree.edges[p].parent
            ys, ss = self.jumps[p]
            if par is None:
                self._lin[p] = (ys, ss)
            else:
                py, ps = self.lineage_jumps(par)
                self._lin[p] = (np.concatenate([py, ys]), np.concatenate([ps, ss]))
        return self._lin[p]

    def lineage_subordinator(self, p):
        ys, ss = self.lineage_jumps(p)
        return SubordinatorPath(self.tree.edges[p].Z, ys, ss, self.initial)

    def age_at_edge(self, p, s):
        """(H, A) of the lineage ending at the top of edge p."""
        ys, ss = self.lineage_jumps(p)
        H, A = _passage(ys, ss, len(ys), self.initial, float(s), self.tree.edges[p].Z)
        return float(H), int(A)

    def edge_at(self, p, y):
        """Edge on the lineage of p whose half-open interval [Y, Z) holds height y."""
        e = self.tree.edges[p]
        while e.Y > y:
            e = self.tree.edges[e.parent]
        return e.p

    def first_jump_height(self, p):
        ys, _ = self.lineage_jumps(p)
        return float(ys[0]) if len(ys) else np.inf


def mark_tree(tree, c, ctilde, initial_s, rng):
    """Independent Poisson(c) dormancy jumps with Exp(ctilde) sizes on every edge."""
    if ctilde <= 0:
        raise ValueError("ctilde must be positive")
    jumps = {}
    for p in sorted(tree.edges):
        e = tree.edges[p]
        n = rng.poisson(c * e.length)
        ys = np.sort(rng.uniform(e.Y, e.Z, n))
        jumps[p] = (ys, rng.exponential(1.0 / ctilde, n))
    return MarkedTree(tree, jumps, float(initial_s))


class SpatialAssignment:
    """Brownian positions along the edges of a tree, shared at branch points."""

    def __init__(self, tree, d, b0, rng, extra_heights=None):
        if d < 1:
            raise ValueError("d must be at least 1")
        self.tree = tree
        self.d = d
        self.b0 = np.asarray(b0, dtype=float).reshape(d)
        self._rng = rng
        self._h = {}
        self._x = {}
        order = [tree.root_edge]
        i = 0
        while i < len(order):
            order.extend(tree.edges[order[i]].children)
            i += 1
        for p in order:
            e = tree.edges[p]
            start = self.b0 if e.parent is None else self._x[e.parent][-1]
            hs = [e.Y]
            if extra_heights is not None:
                hs.extend(float(y) for y in extra_heights.get(p, ()) if e.Y < y < e.Z)
            hs = sorted(set(hs))
            hs.append(e.Z)
            xs = [start]
            for a, b in zip(hs[:-1], hs[1:]):
                xs.append(xs[-1] + np.sqrt(b - a) * rng.standard_normal(d))
            self._h[p] = hs
            self._x[p] = xs

    def position(self, p, y):
        if p not in self._h:
            raise QueryOutOfTree(f"unknown edge {p}")
        hs, xs = self._h[p], self._x[p]
        if not hs[0] <= y <= hs[-1]:
            raise QueryOutOfTree(f"height {y} outside edge {p}")
        k = bisect.bisect_left(hs, y)
        if hs[k] == y:
            return xs[k]
        y0, y1 = hs[k - 1], hs[k]
        w = (y - y0) / (y1 - y0)
        mean = xs[k - 1] + w * (xs[k] - xs[k - 1])
        sd = np.sqrt((y - y0) * (y1 - y) / (y1 - y0))
        x = mean + sd * self._rng.standard_normal(self.d)
        hs.insert(k, y)
        xs.insert(k, x)
        return x

    def materialize(self, queries):
        """Answer (edge, height) queries in canonical sorted order."""
        for p, y in sorted(set(queries)):
            self.position(p, y)

    def positions(self, queries):
        self.materialize(queries)
        return [self.position(p, y) for p, y in queries]


def attach_spatial(tree, d, b0, rng, marks=None):
    extra = None if marks is None else {p: marks.jumps[p][0] for p in marks.jumps}
    return SpatialAssignment(tree, d, b0, rng, extra)


@njit(cache=True)
def _skeleton_height(f, h):
    # highest ancestor of each vertex that still has a descendant at distance >= h
    n = f.shape[0]
    left = np.empty(n)
    right = np.empty(n)
    left[0] = f[0] - h
    for k in range(1, n):
        left[k] = max(f[k] - h, min(f[k], left[k - 1]))
    right[n - 1] = f[n - 1] - h
    for k in range(n - 2, -1, -1):
        right[k] = max(f[k] - h, min(f[k], right[k + 1]))
    return np.maximum(left, right)


def vertex_leaves(walk, n):
    """Leaf whose lineage carries the skeleton part of each polyline vertex."""
    seg = np.searchsorted(walk.gamma_index, np.arange(n), side="right") - 1
    leaf = np.where(seg < 0, 1, np.where(seg % 2 == 0, seg + 1, seg))
    return np.minimum(leaf, walk.M)


@njit(cache=True)
def _age_sweep(f, ystar, leaf, offs, jy, js, initial, s):
    n = f.shape[0]
    H = np.empty(n)
    A = np.empty(n, dtype=np.int8)
    for k in range(n):
        a = offs[leaf[k]]
        b = offs[leaf[k] + 1]
        m = a
        while m < b and jy[m] <= ystar[k]:
            m += 1
        hk, ak = _passage(jy[a:m], js[a:m], m - a, initial, s, f[k])
        H[k] = hk
        A[k] = ak
    return H, A


@dataclass(frozen=True)
class AgeProfile:
    t: np.ndarray
    f: np.ndarray
    H: np.ndarray
    A: np.ndarray
    Res: np.ndarray
    leaf: np.ndarray
    ystar: np.ndarray


class SnakeRealization:
    """One cloud item: mark, excursion, erased tree, dormancy marks and positions."""

    def __init__(self, b, s_init, exc, h, c, ctilde, d, seed_seq, keep_path=True):
        self.b = np.asarray(b, dtype=float).reshape(d)
        self.s_init = float(s_init)
        self.h = float(h)
        self.c, self.ctilde, self.d = c, ctilde, d
        self.truncated = exc.truncated
        self.height_cap = exc.height_cap
        rs = [np.random.default_rng(x) for x in seed_seq.spawn(2)]
        t, v = polyline(exc)
        from .erasure import erase_polyline, build_tree
        self.walk = erase_polyline(t, v, h, exc.truncated)
        self.tree = build_tree(self.walk) if self.walk.M >= 1 else None
        self.excursion = exc if keep_path else None
        self._poly = (t, v) if keep_path else None
        self.marks = None if self.tree is None else mark_tree(self.tree, c, ctilde, self.s_init, rs[0])
        self._spatial_rng = rs[1]
        self._spatial = None
        self._leaf_tables = None

    @property
    def spatial(self):
        """Spatial assignment, built on first use from its own stream."""
        if self._spatial is None and self.tree is not None:
            self._spatial = attach_spatial(self.tree, self.d, self.b, self._spatial_rng, self.marks)
        return self._spatial

    @property
    def active_mark(self):
        return self.s_init == 0.0

    def polyline(self):
        if self._poly is None:
            raise ValueError("contour was not kept for this realization")
        return self._poly

    def leaf_tables(self):
        if self._leaf_tables is None:
            M = self.walk.M
            offs = np.zeros(M + 2, dtype=np.int64)
            ys, ss = [], []
            for p in range(0, M + 1):
                if p % 2 == 1:
                    a, b = self.marks.lineage_jumps(p)
                else:
                    a, b = np.zeros(0), np.zeros(0)
                ys.append(a)
                ss.append(b)
                offs[p + 1] = offs[p] + len(a)
            self._leaf_tables = (offs, np.concatenate(ys), np.concatenate(ss))
        return self._leaf_tables


def evaluate_age_over_contour(real, s):
    """H_t(s), A_t(s) and Res_t(s) at every vertex of the refined contour."""
    t, f = real.polyline()
    if real.tree is None:
        z = np.zeros(len(f))
        return AgeProfile(t, f, z, np.zeros(len(f), np.int8), f - z, np.zeros(len(f), int), z)
    ystar = _skeleton_height(f, real.h)
    leaf = vertex_leaves(real.walk, len(f))
    offs, jy, js = real.leaf_tables()
    H, A = _age_sweep(f, ystar, leaf, offs, jy, js, real.s_init, float(s))
    return AgeProfile(t, f, H, A, f - H, leaf, ystar)
