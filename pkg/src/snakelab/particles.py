"""Particle systems read off a snake realization, plus a forward Gillespie oracle."""
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .motion import evaluate_age_over_contour


class InconsistentH(ValueError):
    pass


@dataclass
class MeasurePair:
    dormant_atoms: np.ndarray
    active_atoms: np.ndarray
    eps: float
    time_s: float
    keys: list = field(default_factory=list, repr=False)
    truncated: bool = False

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def counts(self):
        return len(self.dormant_atoms), len(self.active_atoms)


def _atoms(rows, d):
    return np.asarray(rows, dtype=float).reshape(-1, d)


def _check_h(reals, eps):
    for r in reals:
        if abs(r.h - eps / 2.0) > 1e-12 * max(1.0, eps):
            raise InconsistentH(f"tree built at h={r.h}, expected eps/2={eps / 2.0}")


def _dim(reals, default=1):
    for r in reals:
        return r.d
    return default


def _pair(reals, eps, s, keys):
    """Materialize positions in canonical order and split by state."""
    d = _dim(reals)
    by_item = {}
    for k in keys:
        by_item.setdefault(k[0], []).append(k)
    dorm, act = [], []
    for i in sorted(by_item):
        ks = by_item[i]
        xs = reals[i].spatial.positions([(p, H) for _, p, H, _ in ks])
        for k, x in zip(ks, xs):
            (act if k[3] == 1 else dorm).append(x)
    return MeasurePair(_atoms(dorm, d), _atoms(act, d), eps, s, sorted(keys))


def tree_keys(real, i, s):
    """(item, edge, H, state) for every edge p with H_{gamma_p}(s) in [Y_p, Z_p)."""
    out = []
    if real.tree is None:
        return out
    for p in sorted(real.tree.edges):
        e = real.tree.edges[p]
        H, A = real.marks.age_at_edge(p, s)
        if e.Y <= H < e.Z:
            out.append((i, p, H, A))
    return out


def oobbm_from_snake_tree(reals, eps, s):
    reals = list(reals)
    _check_h(reals, eps)
    keys = []
    for i, r in enumerate(reals):
        keys.extend(tree_keys(r, i, s))
    return _pair(reals, eps, s, keys)


@njit(cache=True)
def _episodes(res, state, h, want):
    # first vertex with Res > h in the wanted state after Res last hit 0
    out = np.empty(res.shape[0], dtype=np.int64)
    n = 0
    inside = False
    for k in range(res.shape[0]):
        if inside:
            if res[k] == 0.0:
                inside = False
        elif res[k] > h and state[k] == want:
            out[n] = k
            n += 1
            inside = True
    return out[:n]


def downcross_keys(real, i, s):
    out = []
    if real.tree is None:
        return out
    prof = evaluate_age_over_contour(real, s)
    for want in (0, 1):
        for k in _episodes(prof.Res, prof.A, real.h, want):
            H = float(prof.H[k])
            p = real.marks.edge_at(int(prof.leaf[k]), H)
            out.append((i, p, H, want))
    return out


def oobbm_from_snake_downcross(reals, eps, s):
    reals = list(reals)
    _check_h(reals, eps)
    keys = []
    for i, r in enumerate(reals):
        keys.extend(downcross_keys(r, i, s))
    return _pair(reals, eps, s, keys)


def bbm_keys(real, i, y):
    if real.tree is None:
        return []
    return [(i, p, float(y), 1) for p in sorted(real.tree.edges)
            if real.tree.edges[p].Y <= y < real.tree.edges[p].Z]


def bbm_from_snake(reals, eps, y):
    reals = list(reals)
    _check_h(reals, eps)
    keys = []
    for i, r in enumerate(reals):
        keys.extend(bbm_keys(r, i, y))
    return _pair(reals, eps, y, keys).active_atoms


def damped_keys(real, i, y):
    if not real.active_mark:
        return []
    return [k for k in bbm_keys(real, i, y) if real.marks.first_jump_height(k[1]) > y]


def damped_bbm_from_snake(reals, eps, y):
    """BBM atoms whose lineage is active, with no dormancy jump, up to height y."""
    reals = list(reals)
    _check_h(reals, eps)
    keys = []
    for i, r in enumerate(reals):
        keys.extend(damped_keys(r, i, y))
    return _pair(reals, eps, y, keys).active_atoms


def forward_oobbm_gillespie(init, gamma, c, ctilde, horizon, snapshot_times, rng, d=None,
                            eps=1.0, max_particles=10**6):
    """Event-driven on/off branching Brownian motion.

    Active particles split and die at rate gamma/2 each and fall asleep at
    rate c; dormant particles wake at rate ctilde and do not move.
    """
    if gamma < 0 or c < 0 or ctilde <= 0:
        raise ValueError("need gamma >= 0, c >= 0, ctilde > 0")
    init = list(init)
    if d is None:
        d = len(np.atleast_1d(init[0][0])) if init else 1
    pos = np.asarray([np.atleast_1d(x) for x, _ in init], dtype=float).reshape(-1, d)
    act = np.asarray([st for _, st in init], dtype=bool)
    snaps = sorted(snapshot_times)
    out = []
    clock = 0.0
    j = 0
    truncated = False

    def move(to):
        nonlocal clock
        if to > clock and act.any():
            pos[act] += np.sqrt(to - clock) * rng.standard_normal((int(act.sum()), d))
        clock = to

    def record():
        out.append(MeasurePair(pos[~act].copy(), pos[act].copy(), eps, clock, truncated=truncated))

    end = min(horizon, snaps[-1]) if snaps else horizon
    while True:
        na = int(act.sum())
        nd = len(act) - na
        rate = na * (gamma + c) + nd * ctilde
        t_next = clock + rng.exponential(1.0 / rate) if rate > 0 else np.inf
        while j < len(snaps) and snaps[j] <= min(t_next, end):
            move(snaps[j])
            record()
            j += 1
        if t_next > end or j >= len(snaps):
            break
        move(t_next)
        u = rng.random() * rate
        if u < na * gamma:
            i = np.flatnonzero(act)[int(rng.integers(na))]
            if u < na * gamma / 2:
                pos = np.vstack([pos, pos[i]])
                act = np.append(act, True)
            else:
                pos = np.delete(pos, i, axis=0)
                act = np.delete(act, i)
        elif u < na * (gamma + c):
            i = np.flatnonzero(act)[int(rng.integers(na))]
            act[i] = False
        else:
            i = np.flatnonzero(~act)[int(rng.integers(nd))]
            act[i] = True
        if len(act) > max_particles:
            truncated = True
            break
    while j < len(snaps):
        if not truncated:
            move(snaps[j])
        record()
        j += 1
    return out


def forward_counts(init_state, gamma, c, ctilde, t, rng):
    """(dormant, active) counts at time t without tracking positions."""
    na, nd = (1, 0) if init_state == 1 else (0, 1)
    clock = 0.0
    while True:
        rate = na * (gamma + c) + nd * ctilde
        if rate == 0:
            return nd, na
        clock += rng.exponential(1.0 / rate)
        if clock > t:
            return nd, na
        u = rng.random() * rate
        if u < na * gamma / 2:
            na += 1
        elif u < na * gamma:
            na -= 1
        elif u < na * (gamma + c):
            na -= 1
            nd += 1
        else:
            nd -= 1
            na += 1


@dataclass
class CouplingReport:
    violations: int
    atoms_checked: int
    details: list = field(default_factory=list)


def coupling_range_check(real, eps, s_list, y_resolution=None):
    """Every ooBBM atom must sit bit-exactly on a BBM path of the same realization.

    For each age s the tree and downcrossing atoms are compared, and each atom
    is matched against the BBM snapshot at its own height.  With
    ``y_resolution`` the BBM snapshots on that height grid are also checked to
    be positions of lineages that the ooBBM atoms run along.
    """
    _check_h([real], eps)
    viol, checked, details = 0, 0, []
    if real.tree is None:
        return CouplingReport(0, 0)
    sp = real.spatial
    for s in s_list:
        tk = tree_keys(real, 0, s)
        dk = downcross_keys(real, 0, s) if real.excursion is not None else tk
        if sorted(tk) != sorted(dk):
            viol += 1
            details.append(("representations differ", s))
        for _, p, H, _ in tk:
            checked += 1
            x = sp.position(p, H)
            level = bbm_keys(real, 0, H)
            if not any(np.array_equal(x, sp.position(q, H)) for _, q, _, _ in level):
                viol += 1
                details.append(("off BBM range", s, p, H))
    if y_resolution:
        top = max(e.Z for e in real.tree.edges.values())
        for y in np.arange(0.0, top, y_resolution):
            for _, q, _, _ in bbm_keys(real, 0, y):
                e = real.tree.edges[q]
                if not (e.Y <= y < e.Z):
                    viol += 1
    return CouplingReport(viol, checked, details)


@dataclass
class AccretionReport:
    retained_exact: bool
    n_dormant_marks: int
    fraction: dict
    expected: dict
    z: dict
    passed: bool


def dormant_accretion_check(reals, eps, s1, s2, ctilde, z_max=3.0):
    if not s1 < s2:
        raise ValueError("need s1 < s2")
    reals = list(reals)
    _check_h(reals, eps)
    ok = True
    marks = [r for r in reals if not r.active_mark]
    for i, r in enumerate(reals):
        if r.active_mark or r.s_init <= s2 or r.tree is None:
            continue
        a1 = [k for k in tree_keys(r, i, s1) if k[3] == 0]
        a2 = [k for k in tree_keys(r, i, s2) if k[3] == 0]
        x1 = [r.spatial.position(p, H) for _, p, H, _ in a1]
        x2 = [r.spatial.position(p, H) for _, p, H, _ in a2]
        hit1 = any(np.array_equal(x, r.b) for x in x1)
        hit2 = any(np.array_equal(x, r.b) for x in x2)
        ok &= hit1 and hit2
    frac, exp_, z = {}, {}, {}
    n = len(marks)
    passed = ok
    for s in (s1, s2):
        q = float(np.exp(-ctilde * s))
        f = float(np.mean([r.s_init > s for r in marks])) if n else float("nan")
        se = np.sqrt(q * (1 - q) / n) if n else np.nan
        frac[s], exp_[s] = f, q
        z[s] = float((f - q) / se) if n and se > 0 else 0.0
        passed &= abs(z[s]) <= z_max
    return AccretionReport(bool(ok), n, frac, exp_, z, bool(passed))
