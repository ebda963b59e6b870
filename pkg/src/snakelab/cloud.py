"""Poisson cloud of marked excursions, moment formulas and the two-state semigroup."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .excursion import sample_excursion_conditioned, default_dt, DEFAULT_DT, DEFAULT_MAX_POINTS
from .motion import SnakeRealization
from .particles import tree_keys, forward_counts, MeasurePair
from .parallel import replicate_map, as_seedseq
from .stats import mean_ci, z_gate


@dataclass(frozen=True)
class AtomicMeasure:
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.weights) < 0):
            raise ValueError("weights must be nonnegative")

    @classmethod
    def point(cls, mass, x=(0.0, 0.0)):
        return cls(np.asarray([x], dtype=float), np.asarray([float(mass)]))

    @property
    def total_mass(self):
        return float(np.sum(self.weights))

    @property
    def d(self):
        return self.positions.shape[1]


@dataclass
class MarkedCloud:
    items: list
    h: float
    params: dict

    def __len__(self):
        return len(self.items)

    @property
    def truncated(self):
        return sum(r.truncated for r in self.items)


@dataclass(frozen=True)
class SemigroupMatrix:
    p00: float
    p01: float
    p10: float
    p11: float

    def as_array(self):
        return np.array([[self.p00, self.p01], [self.p10, self.p11]])


def semigroup(c, ctilde, t):
    """Transition matrix of the dormant(0)/active(1) chain: 1->0 at rate c, 0->1 at rate ctilde."""
    if c <= 0 or ctilde <= 0:
        raise ValueError("rates must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    k = c + ctilde
    e = np.exp(-t * k)
    return SemigroupMatrix((c + ctilde * e) / k, ctilde * (1 - e) / k,
                           c * (1 - e) / k, (c * e + ctilde) / k)


def expected_masses(c, ctilde, md, ma, s):
    if c <= 0 or ctilde <= 0:
        raise ValueError("rates must be positive")
    if md < 0 or ma < 0 or s < 0:
        raise ValueError("masses and s must be nonnegative")
    P = semigroup(c, ctilde, s)
    return md * P.p00 + ma * P.p10, md * P.p01 + ma * P.p11


def scale_measure(pair):
    dn, an = pair.counts
    d = np.atleast_2d(pair.dormant_atoms) if dn else np.asarray(pair.dormant_atoms)
    a = np.atleast_2d(pair.active_atoms) if an else np.asarray(pair.active_atoms)
    return (AtomicMeasure(d, np.full(dn, pair.eps)), AtomicMeasure(a, np.full(an, pair.eps)))


def _draw_marks(mu_d, mu_a, h, ctilde, rng):
    md, ma = mu_d.total_mass, mu_a.total_mass
    tot = md + ma
    if tot <= 0:
        raise ValueError("total initial mass must be positive")
    n = rng.poisson(tot / (2.0 * h))
    dormant = rng.random(n) < md / tot
    out = []
    for dorm in dormant:
        mu = mu_d if dorm else mu_a
        j = rng.choice(len(mu.weights), p=mu.weights / mu.total_mass)
        s_i = rng.exponential(1.0 / ctilde) if dorm else 0.0
        out.append((mu.positions[j].copy(), float(s_i)))
    return out


def iter_cloud(mu_d, mu_a, h, c, ctilde, dt, seed, height_cap=None,
               max_points=DEFAULT_MAX_POINTS, keep_paths=True):
    """Yield the realizations of one cloud one at a time."""
    ss = as_seedseq(seed)
    head, body = ss.spawn(2)
    marks = _draw_marks(mu_d, mu_a, h, ctilde, np.random.default_rng(head))
    d = mu_d.d if mu_d.total_mass > 0 else mu_a.d
    for (b, s_i), child in zip(marks, body.spawn(len(marks))):
        ex_seq, real_seq = child.spawn(2)
        exc = sample_excursion_conditioned(h, dt, np.random.default_rng(ex_seq),
                                           max_points=max_points, height_cap=height_cap)
        yield SnakeRealization(b, s_i, exc, h, c, ctilde, d, real_seq, keep_path=keep_paths)


def sample_cloud(mu_d, mu_a, h, c, ctilde, dt, seed, height_cap=None,
                 max_points=DEFAULT_MAX_POINTS, keep_paths=True):
    items = list(iter_cloud(mu_d, mu_a, h, c, ctilde, dt, seed, height_cap, max_points, keep_paths))
    return MarkedCloud(items, h, dict(c=c, ctilde=ctilde, dt=dt, height_cap=height_cap))


def cloud_size(mu_d, mu_a, h, ctilde, seed):
    """Item count and mark types of a cloud, without sampling the excursions."""
    head, _ = as_seedseq(seed).spawn(2)
    return _draw_marks(mu_d, mu_a, h, ctilde, np.random.default_rng(head))


@dataclass
class MassReport:
    s_list: list
    formula: dict
    mean: dict
    se: dict
    z: dict
    passed: dict
    replicates: int
    truncated: int
    engine: str
    samples: Optional[np.ndarray] = field(default=None, repr=False)   # (replicate, s, state)
    ok: bool = field(init=False)

    def __post_init__(self):
        self.ok = all(all(v) for v in self.passed.values())

    def as_dict(self):
        return dict(s_list=self.s_list, formula=self.formula, mean=self.mean, se=self.se,
                    z=self.z, passed=self.passed, replicates=self.replicates,
                    truncated=self.truncated, engine=self.engine, ok=self.ok)


def _snake_masses(args):
    seed, p = args
    h = p["eps"] / 2.0
    cap = max(p["s_list"]) + 2.0 * h
    mu_d = AtomicMeasure.point(p["md"], np.zeros(p["d"]))
    mu_a = AtomicMeasure.point(p["ma"], np.zeros(p["d"]))
    counts = np.zeros((len(p["s_list"]), 2))
    trunc = 0
    for r in iter_cloud(mu_d, mu_a, h, p["c"], p["ctilde"], default_dt(h, p["dt"]), seed,
                        height_cap=cap, keep_paths=False):
        trunc += r.truncated
        for j, s in enumerate(p["s_list"]):
            for k in tree_keys(r, 0, s):
                counts[j, k[3]] += 1
    return p["eps"] * counts, trunc


def _forward_masses(args):
    seed, p = args
    rng = np.random.default_rng(seed)
    eps = p["eps"]
    out = np.zeros((len(p["s_list"]), 2))
    gamma = 4.0 / eps
    for state, mass in ((0, p["md"]), (1, p["ma"])):
        for _ in range(rng.poisson(mass / eps)):
            # one forward run per ancestor, read at every snapshot time
            nd, na = _forward_path_counts(state, gamma, p["c"], p["ctilde"], p["s_list"], rng)
            out[:, 0] += nd
            out[:, 1] += na
    return eps * out, 0


def _forward_path_counts(state, gamma, c, ctilde, times, rng):
    from .particles import forward_oobbm_gillespie
    snaps = forward_oobbm_gillespie([(np.zeros(1), state)], gamma, c, ctilde, max(times),
                                    times, rng, d=1)
    return (np.array([len(m.dormant_atoms) for m in snaps]),
            np.array([len(m.active_atoms) for m in snaps]))


def mass_convergence_experiment(params, workers=1, engine="snake", z_max=3.0):
    """Scaled dormant/active masses over replicate clouds against the closed forms."""
    p = dict(d=1, dt=DEFAULT_DT)
    p.update(params)
    s_list = list(p["s_list"])
    seeds = as_seedseq(p.get("seed", 0)).spawn(p["replicates"])
    fn = _snake_masses if engine == "snake" else _forward_masses
    res = replicate_map(fn, [(sd, p) for sd in seeds], workers)
    masses = np.stack([r[0] for r in res])          # (rep, s, state)
    trunc = int(sum(r[1] for r in res))
    formula, mean, se, z, passed = {}, {}, {}, {}, {}
    for j, s in enumerate(s_list):
        Ed, Ea = expected_masses(p["c"], p["ctilde"], p["md"], p["ma"], s)
        key = repr(float(s))
        formula[key] = [Ed, Ea, Ed + Ea]
        mean[key], se[key], z[key], passed[key] = [], [], [], []
        for series, target in ((masses[:, j, 0], Ed), (masses[:, j, 1], Ea),
                               (masses[:, j].sum(axis=1), Ed + Ea)):
            m, e = mean_ci(series)
            zz, ok = z_gate(m, e, target, z_max)
            mean[key].append(m)
            se[key].append(e)
            z[key].append(zz)
            passed[key].append(ok)
    return MassReport(s_list, formula, mean, se, z, passed, p["replicates"], trunc, engine, masses)
