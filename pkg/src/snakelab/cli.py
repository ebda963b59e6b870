"""Command-line entry point: configuration, experiments, reports and figures."""
import argparse
import configparser
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import verify as V
from .cloud import AtomicMeasure, iter_cloud
from .erasure import build_tree, erase_polyline
from .excursion import (DEFAULT_DT, DEFAULT_MAX_POINTS, Excursion, default_dt, polyline,
                        sample_excursion_conditioned)
from .motion import SnakeRealization, evaluate_age_over_contour
from .parallel import as_seedseq
from .particles import _episodes, forward_oobbm_gillespie, oobbm_from_snake_tree

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_GATE, EXIT_TRUNCATED = 0, 1, 2, 3
CSV_COLUMNS = ["seed", "replicate", "time", "component", "count", "scaled_mass"]


class ConfigError(ValueError):
    pass


class SelectorNotFound(LookupError):
    pass


_COMMON = dict(seed=0, dt=DEFAULT_DT, truncation_budget=0.01)

DEFAULTS = {
    "sample-excursion": dict(h=0.5, height_cap=0.0, max_points=DEFAULT_MAX_POINTS),
    "erase": dict(h=0.5, height_cap=0.0, max_points=DEFAULT_MAX_POINTS),
    "simulate-oobbm": dict(eps=0.05, c=1.0, ctilde=2.0, md=3.0, ma=6.0, s_list=[0.25, 0.5, 1.0],
                           d=2, reps=1),
    "simulate-forward": dict(eps=0.05, gamma=0.0, c=1.0, ctilde=2.0, md=3.0, ma=6.0,
                             s_list=[0.25, 0.5, 1.0], d=2, reps=1),
    "verify-counts": dict(h=0.5, total_mass=10.0, ctilde=2.0, reps=1000),
    "verify-tree-law": dict(h=0.5, reps=10_000, max_points=DEFAULT_MAX_POINTS),
    "verify-identity": dict(eps=0.5, c=1.0, ctilde=2.0, s_list=[0.2, 0.7, 1.5], d=2, reps=1000),
    "verify-dynamics": dict(eps=0.5, c=1.0, ctilde=2.0, s_list=[0.5], reps=10_000),
    "verify-mass": dict(eps=0.05, c=1.0, ctilde=2.0, md=3.0, ma=6.0, s_list=[0.25, 0.5, 1.0],
                        reps=200, z_max=3.0),
    "verify-damped": dict(eps=0.05, c=1.0, ctilde=2.0, ma=6.0, y=0.5, d=2, reps=200, z_max=3.0),
    "verify-local-time": dict(h_list=[0.04, 0.02, 0.01], level=0.05, band=0.005, duration=1.0,
                              dt=2e-7, reps=1000),
    "verify-coupling": dict(eps=0.5, c=1.0, ctilde=2.0, s_list=[0.2, 0.7, 1.5], s1=0.1, d=2,
                            reps=1000, y_resolution=0.05),
    "verify-semigroup": dict(c=1.0, ctilde=2.0),
    "calibrate-stats": dict(reps=1000),
    "emit-figure": dict(figure="contour-tree", eps=0.5, c=1.0, ctilde=2.0, md=1.0, ma=1.0,
                        s_list=[0.5], d=2, item=0, hand_trace=False, height_cap=0.0),
}
COMMANDS = sorted(DEFAULTS)
FIGURES = ("contour-tree", "age-process", "downcrossings")

# keys that only steer execution; they never enter a report
_RUNTIME = {"workers", "out", "format"}


@dataclass
class RunConfig:
    command: str
    params: dict
    out: Path = Path("snakelab-out")
    formats: tuple = ("json",)
    workers: int = 1
    sources: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.params["seed"]


def _coerce(key, raw, like):
    try:
        if isinstance(like, bool):
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, list):
            if isinstance(raw, (list, tuple)):
                return [float(x) for x in raw]
            return [float(x) for x in str(raw).replace(" ", "").split(",") if x]
        if isinstance(like, int):
            return int(float(raw)) if float(raw).is_integer() else _bad(key, raw)
        if isinstance(like, float):
            return float(raw)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r}")


def _bad(key, raw):
    raise ConfigError(f"{key}: expected an integer, got {raw!r}")


def _read_file(path, command):
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}")
    except configparser.Error as e:
        raise ConfigError(f"config: {e}")
    out = {}
    for section in ("common", command):
        if cp.has_section(section):
            out.update(dict(cp.items(section)))
    return out


def _cli_overrides(ns):
    o = {}
    for key in ("seed", "eps", "h", "c", "ctilde", "gamma", "dt", "md", "ma", "y"):
        v = getattr(ns, key)
        if v is not None:
            o[key] = v
    if ns.s is not None:
        o["s_list"] = ns.s
    if ns.reps is not None:
        o["reps"] = ns.reps
    for item in ns.set or []:
        if "=" not in item:
            raise ConfigError(f"--set: expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        o[k.strip()] = v.strip()
    return o


def build_config(ns, env=None):
    """Merge defaults, config file and flags (later wins) into a validated RunConfig."""
    env = os.environ if env is None else env
    command = ns.command
    params = dict(_COMMON)
    params.update(DEFAULTS[command])
    sources = {k: "default" for k in params}
    layers = []
    if "SNAKELAB_SEED" in env:
        layers.append(("env", {"seed": env["SNAKELAB_SEED"]}))
    if ns.config:
        layers.append(("file", _read_file(ns.config, command)))
    layers.append(("cli", _cli_overrides(ns)))
    runtime = {}
    for src, layer in layers:
        for k, v in layer.items():
            if k in _RUNTIME:
                runtime[k] = v
                continue
            if k not in params:
                # eps and h are interchangeable for commands that take either
                if k == "eps" and "h" in params:
                    params["h"] = _coerce("eps", v, 1.0) / 2.0
                    sources["h"] = src
                    continue
                if k == "h" and "eps" in params:
                    params["eps"] = 2.0 * _coerce("h", v, 1.0)
                    sources["eps"] = src
                    continue
                raise ConfigError(f"{k}: unknown parameter for {command}")
            params[k] = _coerce(k, v, params[k])
            sources[k] = src
    _validate(command, params)
    workers = ns.workers if ns.workers is not None else int(runtime.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers: must be at least 1")
    out = Path(ns.out if ns.out is not None else runtime.get("out", "snakelab-out"))
    fmt = ns.format if ns.format is not None else runtime.get("format")
    if fmt is None:
        formats = ("svg",) if command == "emit-figure" else ("json",)
    else:
        formats = tuple(sorted(set(x.strip() for x in str(fmt).split(",") if x.strip())))
    for f in formats:
        if f not in ("json", "csv", "svg"):
            raise ConfigError(f"format: unknown format {f!r}")
    return RunConfig(command, params, out, formats, workers, sources)


def _validate(command, p):
    def positive(k):
        if k in p and not p[k] > 0:
            raise ConfigError(f"{k} must be positive (got {p[k]})")

    def nonneg(k):
        if k in p and not p[k] >= 0:
            raise ConfigError(f"{k} must be nonnegative (got {p[k]})")

    if p["seed"] < 0:
        raise ConfigError(f"seed must be nonnegative (got {p['seed']})")
    for k in ("eps", "h", "ctilde", "dt", "reps", "d", "y", "level", "band", "duration",
              "total_mass", "z_max", "y_resolution", "max_points"):
        positive(k)
    for k in ("md", "ma", "gamma", "height_cap", "item", "s1", "truncation_budget"):
        nonneg(k)
    # the closed-form semigroup needs both rates positive; elsewhere c = 0 is allowed
    (positive if command in ("verify-mass", "verify-semigroup") else nonneg)("c")
    for k in ("s_list", "h_list"):
        if k in p:
            if not p[k]:
                raise ConfigError(f"{k} must not be empty")
            if min(p[k]) < 0 or (k == "h_list" and min(p[k]) <= 0):
                raise ConfigError(f"{k} has an invalid entry ({p[k]})")
    if "md" in p and "ma" in p and command != "verify-damped" and p["md"] + p["ma"] <= 0:
        raise ConfigError("md + ma must be positive")
    if p.get("height_cap", 0.0) and "h" in p and p["height_cap"] <= p["h"]:
        raise ConfigError("height_cap must exceed h (or be 0 for no cap)")
    if "figure" in p and p["figure"] not in FIGURES:
        raise ConfigError(f"figure must be one of {', '.join(FIGURES)} (got {p['figure']!r})")
    if command == "verify-coupling" and not p["s1"] < np.log(2.0) / p["ctilde"]:
        raise ConfigError("s1 must lie below ln(2)/ctilde")


# ---------------------------------------------------------------- commands

def _cmd_verify(cfg):
    p = dict(cfg.params)
    fn = V.CHECKS[cfg.command]
    reps = p.pop("reps", None)
    name = {"verify-counts": "clouds", "verify-tree-law": "n", "verify-identity": "n",
            "verify-dynamics": "n", "verify-local-time": "paths", "verify-coupling": "n",
            "calibrate-stats": "trials"}.get(cfg.command, "reps")
    if reps is not None:
        p[name] = reps
    if cfg.command == "verify-dynamics":
        p["s"] = p.pop("s_list")[0]
    if cfg.command == "verify-mass":
        p["d"] = 1
    return fn(workers=cfg.workers, **p)


def _excursion(cfg):
    p = cfg.params
    rng = np.random.default_rng(as_seedseq(p["seed"]))
    cap = p["height_cap"] or None
    return sample_excursion_conditioned(p["h"], default_dt(p["h"], p["dt"]), rng,
                                        max_points=p["max_points"], height_cap=cap)


def _cmd_sample_excursion(cfg):
    exc = _excursion(cfg)
    t, v = polyline(exc)
    summary = dict(duration=exc.sigma, grid_points=len(exc.path.values), dt=exc.path.dt,
                   max_height=exc.max_height, t_hit=exc.t_hit * exc.path.dt,
                   truncated=bool(exc.truncated))
    table = [("t", "height")] + [(float(a), float(b)) for a, b in zip(t, v)]
    return dict(passed=True, gates=[], rows=[], summary=summary, truncated=int(exc.truncated),
                items=1, _table=table)


def _cmd_erase(cfg):
    exc = _excursion(cfg)
    t, v = polyline(exc)
    walk = erase_polyline(t, v, cfg.params["h"], exc.truncated)
    edges = []
    if walk.M >= 1:
        tree = build_tree(walk)
        edges = [dict(p=e.p, parent=e.parent, Y=e.Y, Z=e.Z, leaf=e.is_leaf)
                 for e in (tree.edges[k] for k in sorted(tree.edges))]
    table = [("p", "parent", "Y", "Z")] + [(e["p"], "" if e["parent"] is None else e["parent"],
                                            e["Y"], e["Z"]) for e in edges]
    return dict(passed=True, gates=[], rows=[], truncated=int(exc.truncated), items=1,
                walk=dict(gamma_times=walk.gamma_times.tolist(), z_values=walk.z_values.tolist(),
                          M=walk.M),
                edges=edges, _table=table)


def _cloud_realizations(p, seed, keep_paths=False, cap=None):
    h = p["eps"] / 2.0
    mu_d = AtomicMeasure.point(p["md"], np.zeros(p["d"]))
    mu_a = AtomicMeasure.point(p["ma"], np.zeros(p["d"]))
    return list(iter_cloud(mu_d, mu_a, h, p["c"], p["ctilde"], default_dt(h, p["dt"]), seed,
                           height_cap=cap, keep_paths=keep_paths))


def _cmd_simulate_oobbm(cfg):
    p = cfg.params
    h = p["eps"] / 2.0
    rows, snaps, trunc, items = [], [], 0, 0
    for r_i, seed in enumerate(as_seedseq(p["seed"]).spawn(p["reps"])):
        reals = _cloud_realizations(p, seed, cap=max(p["s_list"]) + 2.0 * h)
        trunc += sum(r.truncated for r in reals)
        items += len(reals)
        for s in p["s_list"]:
            pair = oobbm_from_snake_tree(reals, p["eps"], s)
            for comp, atoms in (("dormant", pair.dormant_atoms), ("active", pair.active_atoms)):
                rows.append(dict(replicate=r_i, time=s, component=comp, count=len(atoms),
                                 scaled_mass=p["eps"] * len(atoms)))
            if r_i == 0:
                snaps.append(dict(s=s, dormant=pair.dormant_atoms.tolist(),
                                  active=pair.active_atoms.tolist()))
    return dict(passed=True, gates=[], rows=rows, truncated=trunc, items=max(items, 1),
                first_replicate=snaps)


def _cmd_simulate_forward(cfg):
    p = cfg.params
    gamma = p["gamma"] or 4.0 / p["eps"]
    rows, snaps, trunc = [], [], 0
    for r_i, seed in enumerate(as_seedseq(p["seed"]).spawn(p["reps"])):
        rng = np.random.default_rng(seed)
        init = [(np.zeros(p["d"]), 0)] * int(rng.poisson(p["md"] / p["eps"]))
        init += [(np.zeros(p["d"]), 1)] * int(rng.poisson(p["ma"] / p["eps"]))
        if not init:
            pairs = None
        else:
            pairs = forward_oobbm_gillespie(init, gamma, p["c"], p["ctilde"], max(p["s_list"]),
                                            p["s_list"], rng, d=p["d"], eps=p["eps"])
            trunc += int(any(m.truncated for m in pairs))
        for j, s in enumerate(p["s_list"]):
            nd, na = (0, 0) if pairs is None else pairs[j].counts
            for comp, n in (("dormant", nd), ("active", na)):
                rows.append(dict(replicate=r_i, time=s, component=comp, count=int(n),
                                 scaled_mass=p["eps"] * n))
            if r_i == 0 and pairs is not None:
                snaps.append(dict(s=s, dormant=pairs[j].dormant_atoms.tolist(),
                                  active=pairs[j].active_atoms.tolist()))
    return dict(passed=True, gates=[], rows=rows, truncated=trunc, items=p["reps"],
                gamma=gamma, first_replicate=snaps)


def figure_realization(p):
    """The realization a figure refers to: the hand-traced contour or a cloud item."""
    if p["hand_trace"]:
        h = 1.0
        exc = Excursion.from_values([0.0, 2.0, 0.5, 1.8, 0.0], dt=1.0, h_cond=h)
        child = as_seedseq(p["seed"])
        return SnakeRealization(np.zeros(p["d"]), 0.0, exc, h, p["c"], p["ctilde"], p["d"], child)
    h = p["eps"] / 2.0
    mu_d = AtomicMeasure.point(p["md"], np.zeros(p["d"]))
    mu_a = AtomicMeasure.point(p["ma"], np.zeros(p["d"]))
    cap = p["height_cap"] or None
    for i, r in enumerate(iter_cloud(mu_d, mu_a, h, p["c"], p["ctilde"], default_dt(h, p["dt"]),
                                     p["seed"], height_cap=cap)):
        if i == p["item"]:
            return r
    raise SelectorNotFound(f"item {p['item']} not in the cloud drawn with seed {p['seed']}")


def _fmt(x):
    return f"{x:.4f}".rstrip("0").rstrip(".") if x == x else "0"


def _thin(t, v, limit=20000):
    step = max(1, -(-len(t) // limit))
    idx = np.arange(0, len(t), step)
    if idx[-1] != len(t) - 1:
        idx = np.append(idx, len(t) - 1)
    return t[idx], v[idx]


def render_svg(real, figure, s=0.5, width=800, height=400):
    """Deterministic SVG of one realization: t to the right, height upward."""
    t, f = real.polyline()
    tmax = float(t[-1]) or 1.0
    ymax = float(f.max()) or 1.0
    pad = 30

    def X(x):
        return pad + (width - 2 * pad) * x / tmax

    def Y(y):
        return height - pad - (height - 2 * pad) * y / ymax

    def path(xs, ys):
        xs, ys = _thin(np.asarray(xs), np.asarray(ys))
        return " ".join(f"{_fmt(X(a))},{_fmt(Y(b))}" for a, b in zip(xs, ys))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<g id="axes" stroke="#888" stroke-width="1">'
           f'<line x1="{pad}" y1="{_fmt(Y(0))}" x2="{width - pad}" y2="{_fmt(Y(0))}"/>'
           f'<line x1="{pad}" y1="{_fmt(Y(0))}" x2="{pad}" y2="{pad}"/></g>',
           f'<g id="excursion"><polyline fill="none" stroke="black" stroke-width="2" '
           f'points="{path(t, f)}"/></g>']
    walk, tree = real.walk, real.tree
    if tree is not None:
        out.append(f'<g id="erased-contour"><polyline fill="none" stroke="#444" '
                   f'stroke-dasharray="6,4" '
                   f'points="{path(np.r_[0.0, walk.gamma_times], np.r_[0.0, walk.z_values])}"/></g>')
        out.append('<g id="tree" stroke="orange" stroke-width="3">')
        for p in sorted(tree.edges):
            e = tree.edges[p]
            x = _fmt(X(e.gamma))
            out.append(f'<line data-edge="{p}" x1="{x}" y1="{_fmt(Y(e.Y))}" x2="{x}" '
                       f'y2="{_fmt(Y(e.Z))}"/>')
            if e.parent is not None:
                xp = _fmt(X(tree.edges[e.parent].gamma))
                out.append(f'<line x1="{xp}" y1="{_fmt(Y(e.Y))}" x2="{x}" y2="{_fmt(Y(e.Y))}"/>')
        out.append('</g>')
        out.append('<g id="jumps" fill="blue">')
        for p in sorted(tree.edges):
            for y in real.marks.jumps[p][0]:
                out.append(f'<circle cx="{_fmt(X(tree.edges[p].gamma))}" cy="{_fmt(Y(y))}" r="4"/>')
        out.append('</g>')
    if figure in ("age-process", "downcrossings"):
        prof = evaluate_age_over_contour(real, s)
        if figure == "age-process":
            out.append(f'<g id="age-process"><polyline fill="none" stroke="red" stroke-width="2" '
                       f'points="{path(prof.t, prof.H)}"/></g>')
        else:
            out.append(f'<g id="residual"><polyline fill="none" stroke="purple" '
                       f'points="{path(prof.t, prof.Res)}"/></g>')
            out.append('<g id="downcrossings" font-size="12">')
            for want, label in ((0, "d"), (1, "a")):
                for k in _episodes(prof.Res, prof.A, real.h, want):
                    cx, cy = _fmt(X(prof.t[k])), _fmt(Y(prof.f[k]))
                    out.append(f'<circle cx="{cx}" cy="{cy}" r="4" fill="green"/>'
                               f'<text x="{cx}" y="{cy}" dy="-6">{label}</text>')
            out.append('</g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _cmd_emit_figure(cfg):
    p = cfg.params
    real = figure_realization(p)
    svg = render_svg(real, p["figure"], s=p["s_list"][0])
    edges = []
    if real.tree is not None:
        edges = [dict(p=e.p, Y=e.Y, Z=e.Z) for e in (real.tree.edges[k]
                                                      for k in sorted(real.tree.edges))]
    return dict(passed=True, gates=[], rows=[], truncated=int(real.truncated), items=1,
                edges=edges, _svg=svg)


HANDLERS = {
    "sample-excursion": _cmd_sample_excursion,
    "erase": _cmd_erase,
    "simulate-oobbm": _cmd_simulate_oobbm,
    "simulate-forward": _cmd_simulate_forward,
    "emit-figure": _cmd_emit_figure,
}


# ---------------------------------------------------------------- output

def _write_outputs(cfg, res):
    cfg.out.mkdir(parents=True, exist_ok=True)
    stem = cfg.out / cfg.command
    written = []
    if "json" in cfg.formats:
        doc = {k: v for k, v in res.items() if k != "rows" and not k.startswith("_")}
        doc.update(schema_version=SCHEMA_VERSION, command=cfg.command, seed=cfg.seed,
                   config=cfg.params, version=__version__)
        path = stem.with_suffix(".json")
        path.write_text(json.dumps(V._plain(doc), indent=2, sort_keys=True) + "\n")
        written.append(path)
    if "csv" in cfg.formats:
        path = stem.with_suffix(".csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if "_table" in res:
                w.writerows(res["_table"])
            else:
                w.writerow(CSV_COLUMNS)
                for r in res["rows"]:
                    w.writerow([cfg.seed, r["replicate"], repr(float(r["time"])), r["component"],
                                r["count"], repr(float(r["scaled_mass"]))])
        written.append(path)
    if "svg" in cfg.formats:
        if "_svg" not in res:
            raise ConfigError("format: svg output is only available for emit-figure")
        path = stem.with_suffix(".svg")
        path.write_text(res["_svg"])
        written.append(path)
    return written


def run(cfg):
    """Execute one configured command; returns the process exit status."""
    handler = HANDLERS.get(cfg.command, _cmd_verify)
    res = handler(cfg)
    written = _write_outputs(cfg, res)
    for g in res.get("gates", []):
        print(f"{'PASS' if g['passed'] else 'FAIL'}  {g['name']}")
    for path in written:
        print(f"wrote {path}")
    trunc = int(res.get("truncated", 0) or 0)
    items = int(res.get("items", 1) or 1)
    if trunc > cfg.params["truncation_budget"] * items:
        print(f"truncated items {trunc} exceed budget", file=sys.stderr)
        return EXIT_TRUNCATED
    return EXIT_OK if res.get("passed", True) else EXIT_GATE


def make_parser():
    ap = argparse.ArgumentParser(prog="snakelab",
                                 description="On/off Brownian snake simulation and checks.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key = value file with [common] and per-command sections")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--eps", type=float)
    ap.add_argument("--h", type=float)
    ap.add_argument("--c", type=float)
    ap.add_argument("--ctilde", type=float)
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--dt", type=float, help="time step in units of h^2 (absolute for local time)")
    ap.add_argument("--md", type=float)
    ap.add_argument("--ma", type=float)
    ap.add_argument("--s", help="comma separated ages")
    ap.add_argument("--y", type=float)
    ap.add_argument("--reps", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out")
    ap.add_argument("--format", help="json, csv, svg or a comma separated mix")
    ap.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override any other parameter")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None):
    ns = make_parser().parse_args(argv)
    try:
        cfg = build_config(ns)
        return run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SelectorNotFound as e:
        print(f"selector not found: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
