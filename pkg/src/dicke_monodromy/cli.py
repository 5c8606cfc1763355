"""Command line driver: one task per run, deterministic data files plus a manifest.

Example::

    python -m dicke_monodromy --preset fig3a --out out/fig3a
    python -m dicke_monodromy --task monodromy --two-j 40 --lambda 2.5 --out out/mono

Exit status is 0 on success, 2 for an invalid configuration and 3 when a
numerical step fails (eigensolver residual, integration abort, extraction).
"""
from __future__ import annotations

import argparse
import io as _io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import classical as C
from . import lattice as L
from . import quantum as Q
from . import spectral as S
from .errors import (AmbiguityError, ContractError, DickeError, DomainError, ExtractionError,
                     InsufficientDataError, IntegrationError, NotFoundError, ResourceError,
                     UndefinedError)
from .io import OutputSet, atomic_write, gnuplot_script, json_text
from .params import ModelParams

log = logging.getLogger("dicke_monodromy")

TASKS = ("spectrum", "em-lattice", "peres", "orbit", "pinched", "poincare",
         "monodromy", "density", "critical", "breakdown")

NUMERICAL_ERRORS = (ResourceError, IntegrationError, ExtractionError, AmbiguityError,
                    NotFoundError, InsufficientDataError)

BREAKDOWN_DELTAS = [0.0, 0.05, 0.2, 0.4]

# Figure presets.  Where a caption leaves a value open (the delta columns of
# the section and breakdown figures) the documented defaults above are used.
PRESETS = {
    "fig1": dict(task="critical", omega=1.0, omega0=1.0, lam=2.5, two_j=40),
    "fig1b": dict(task="critical", omega=2.0, omega0=1.0, lam=2.5, two_j=40),
    "fig2a": dict(task="pinched", omega=1.0, omega0=1.0, lam=2.5, two_j=40),
    "fig2b": dict(task="pinched", omega=2.0, omega0=1.0, lam=2.5, two_j=40),
    "fig3a": dict(task="em-lattice", omega=1.0, omega0=1.0, lam=2.5, delta=0.0, two_j=40),
    "fig3b": dict(task="em-lattice", omega=2.0, omega0=1.0, lam=2.5, delta=0.0, two_j=40),
    "fig4": dict(task="peres", omega=1.0, omega0=1.0, lam=2.5, delta=0.0, two_j=40),
    "fig5": dict(task="poincare", omega=1.0, omega0=1.0, lam=2.5, two_j=40,
                 deltas=[0.0, 0.05, 0.2], orbits=21),
    "fig6": dict(task="poincare", omega=2.0, omega0=1.0, lam=2.5, two_j=40,
                 deltas=[0.0, 0.05, 0.2], orbits=21),
    "fig7": dict(task="breakdown", omega=1.0, omega0=1.0, lam=2.5, two_j=40,
                 deltas=BREAKDOWN_DELTAS),
}
PRESETS["fig2"] = PRESETS["fig2a"]
PRESETS["fig3"] = PRESETS["fig3a"]


class ConfigError(DickeError, ValueError):
    """Configuration cannot be parsed or violates a precondition."""


@dataclass
class RunConfig:
    """Resolved run configuration; JSON config files use these field names."""

    task: str | None = None
    omega: float = 1.0
    omega0: float = 1.0
    lam: float = 2.5
    delta: float = 0.0
    two_j: int = 40
    atoms: int | None = None
    m_min: int | None = None
    m_max: int | None = None
    n_max: int | None = None
    m_value: float | None = None
    energy: float | None = None
    t_end: float | None = None
    tol: float = 1e-10
    sigma: float | None = None
    loop_dm: int = 6
    loop_dk: int = 6
    deltas: list | None = None
    orbits: int = 21
    epsilon: float = 1e-6
    phi0: float = 0.0
    out: str = "out"
    seed: int | None = None
    preset: str | None = None
    plot_script: bool = False

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.omega, self.omega0, self.lam, self.delta, self.two_j, self.atoms)

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown or missing task {self.task!r}; choose from {', '.join(TASKS)}")
        try:
            self.params
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("tol", "t_end", "sigma", "epsilon"):
            v = getattr(self, name)
            if v is not None and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        for name in ("m_min", "m_max", "n_max"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 0):
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.m_min is not None and self.m_max is not None and self.m_min > self.m_max:
            raise ConfigError("m_min exceeds m_max")
        if self.loop_dm < 0 or self.loop_dk < 0:
            raise ConfigError("loop half widths must be non-negative")
        if self.orbits < 1:
            raise ConfigError("orbits must be at least 1")
        if self.deltas is not None:
            if not all(isinstance(d, (int, float)) and 0 <= d <= 1 for d in self.deltas):
                raise ConfigError("deltas must lie in [0, 1]")
        if self.task in ("em-lattice", "monodromy", "density") and self.delta != 0:
            raise ConfigError(f"task {self.task} needs delta = 0")
        return self


def figure_recipes() -> dict:
    """Named presets binding figure parameters to tasks."""
    return {k: dict(v) for k, v in PRESETS.items()}


# ---------------------------------------------------------------------------
# argument handling

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dicke-monodromy", description=__doc__.split("\n")[0],
                                 argument_default=argparse.SUPPRESS)
    ap.add_argument("--config", help="JSON file mirroring the flags (flags win)")
    ap.add_argument("--preset", choices=sorted(PRESETS))
    ap.add_argument("--task", choices=TASKS)
    ap.add_argument("--omega", type=float)
    ap.add_argument("--omega0", type=float)
    ap.add_argument("--lambda", dest="lambda_", type=float)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--two-j", dest="two_j", type=int)
    ap.add_argument("--atoms", type=int, help="total atom number N (default 2j)")
    ap.add_argument("--m-min", dest="m_min", type=int)
    ap.add_argument("--m-max", dest="m_max", type=int)
    ap.add_argument("--n-max", dest="n_max", type=int, help="boson cutoff for delta > 0")
    ap.add_argument("--m-value", dest="m_value", type=float, help="invariant M for orbit starts")
    ap.add_argument("--energy", type=float, help="scaled energy for orbits/sections")
    ap.add_argument("--t-end", dest="t_end", type=float)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--sigma", type=float)
    ap.add_argument("--loop-dm", dest="loop_dm", type=int)
    ap.add_argument("--loop-dk", dest="loop_dk", type=int)
    ap.add_argument("--deltas", type=lambda s: [float(v) for v in s.split(",")],
                    help="comma-separated delta list for poincare/breakdown")
    ap.add_argument("--orbits", type=int)
    ap.add_argument("--epsilon", type=float)
    ap.add_argument("--phi0", type=float)
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--plot-script", dest="plot_script", action="store_true", default=None,
                    help="also write plot.gp, a gnuplot script for the CSV outputs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _normalise_keys(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        k = k.replace("-", "_")
        k = {"lambda": "lam", "lambda_": "lam"}.get(k, k)
        out[k] = v
    return out


def resolve_config(argv=None) -> RunConfig:
    """Defaults, then preset, then config file, then flags."""
    ns = vars(build_parser().parse_args(argv))
    ns.pop("verbose", None)
    flags = _normalise_keys(ns)
    file_vals = {}
    path = flags.pop("config", None)
    if path is not None:
        try:
            with open(path) as fh:
                file_vals = _normalise_keys(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(file_vals, dict):
            raise ConfigError("config file must hold a JSON object")
    preset = flags.get("preset", file_vals.get("preset"))
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        merged.update(PRESETS[preset])
    merged.update(file_vals)
    merged.update(flags)
    known = {f.name for f in fields(RunConfig)}
    extra = set(merged) - known
    if extra:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
    return RunConfig(**merged).validate()


def _workers() -> int:
    raw = os.environ.get("DICKE_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"DICKE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("DICKE_THREADS must be at least 1")
    return n


def _pmap(fn, items):
    """Ordered parallel map; results keep the input order."""
    items = list(items)
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _text(writer) -> str:
    buf = _io.StringIO()
    writer(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# tasks


def _m_range(cfg: RunConfig, lo_default=0, hi_default=None):
    p = cfg.params
    lo = cfg.m_min if cfg.m_min is not None else lo_default
    hi = cfg.m_max if cfg.m_max is not None else (hi_default if hi_default is not None
                                                  else int(round(3 * p.j)))
    return int(lo), int(hi)


def _parity_sectors(cfg: RunConfig):
    p = cfg.params
    m_cap = cfg.m_max if cfg.m_max is not None else 2 * p.two_j
    n_max = cfg.n_max if cfg.n_max is not None else m_cap
    return [Q.ParityBlock(par, int(n_max), int(m_cap)) for par in (1, -1)]


def _spectra(cfg: RunConfig):
    p = cfg.params
    if p.delta == 0:
        lo, hi = _m_range(cfg)
        return _pmap(lambda M: Q.solve_sector(p, Q.MBlock(M)), range(lo, hi + 1))
    return _pmap(lambda s: Q.solve_sector(p, s), _parity_sectors(cfg))


def task_spectrum(cfg, out: OutputSet):
    rows = []
    for sp in _spectra(cfg):
        cols = [sp.expectation(o) for o in ("n", "J3", "M", "parity")]
        for k, e in enumerate(sp.energies):
            rows.append([sp.sector.label, k, e, cols[0][k], cols[1][k], cols[2][k],
                         int(round(cols[3][k]))])
    out.csv("spectrum.csv", ["sector", "k", "E", "exp_n", "exp_J3", "exp_M", "parity"], rows)
    return {"levels": len(rows)}


def _chain_summary(lat, cfg):
    p = cfg.params
    ec = p.omega0 * p.j
    summary = {"below": {}, "above": {}}
    summary["m_range"] = list(L.default_chain_range(lat))
    spikes = set()
    for ch in L.chains(lat, m_range=summary["m_range"]):
        cols = list(ch.columns)
        if ch.truncated or p.two_j not in cols:
            continue
        # side of the critical energy where the chain crosses M = 2j; the
        # chain within half a spacing of it runs through the defect itself
        e = ch.energies[cols.index(p.two_j)]
        col = lat.columns[p.two_j]
        k = int(np.clip(np.searchsorted(col, e), 1, len(col) - 1))
        if abs(e - ec) < 0.5 * (col[k] - col[k - 1]):
            summary["through_defect"] = ch.k
            continue
        side = "below" if e < ec else "above"
        key = ch.classify()
        summary[side][key] = summary[side].get(key, 0) + 1
        if side == "above" and key == "sharp break":
            spikes.add(ch.spike_column)
    summary["spike_columns"] = sorted(spikes)
    return summary


def task_em_lattice(cfg, out):
    p = cfg.params
    lat = L.em_lattice(_spectra(cfg))
    out.text("em_lattice.csv", _text(lat.to_csv))
    result = {"columns": len(lat.columns), "ties": len(lat.ties),
              "chains": _chain_summary(lat, cfg)}
    try:
        result["defect"] = list(L.defect_locate(lat))
    except NotFoundError as exc:
        result["defect"] = None
        result["defect_note"] = str(exc)
    try:
        mono = L.transport_loop(lat, (p.two_j, p.omega0 * p.j), (cfg.loop_dm, cfg.loop_dk))
        result["monodromy"] = json.loads(mono.to_json())
    except (DickeError,) as exc:
        result["monodromy"] = None
        result["monodromy_note"] = str(exc)
    out.json("em_lattice.json", result)
    return result


def task_peres(cfg, out):
    spectra = _spectra(cfg)
    obs = ["n", "J3"] + (["M"] if cfg.params.delta != 0 else [])
    for o in obs:
        lat = L.peres_lattice(spectra, o)
        out.text(f"peres_{o}.csv", _text(lat.to_csv))
    return {"observables": obs}


def _energy(cfg):
    if cfg.energy is not None:
        return cfg.energy
    ec = C.critical_values(cfg.params).ec_prime
    return ec if ec is not None else cfg.params.omega0 / 2


def task_orbit(cfg, out):
    p = cfg.params
    m = cfg.m_value if cfg.m_value is not None else 0.9
    start = C.section_start(p, m, _energy(cfg))
    t_end = cfg.t_end if cfg.t_end is not None else 100.0
    tr = C.integrate(start, p, t_end, tol=cfg.tol)
    out.text("orbit.csv", _text(tr.to_csv))
    res = {"m_value": m, "energy": _energy(cfg), "t_end": t_end,
           "energy_drift": tr.energy_drift(), "m_drift": tr.m_drift(),
           "m_average": tr.m_average(),
           "events": [[e.kind, e.t] for e in tr.events]}
    out.json("orbit.json", res)
    return res


def task_pinched(cfg, out):
    p = cfg.params
    tr = C.pinched_orbit(p, phi0=cfg.phi0, epsilon=cfg.epsilon,
                         tol=min(cfg.tol, 1e-12))
    out.text("pinched.csv", _text(tr.to_csv))
    res = {"epsilon": cfg.epsilon, "escape_time": tr.meta["escape_time"],
           "return_time": tr.meta["return_time"], "return_radius": tr.meta["return_radius"],
           "energy_drift": tr.energy_drift(), "m_drift": tr.m_drift(),
           "north": tr.event_times("north"), "south": tr.event_times("south"),
           "equator": tr.event_times("equator")}
    try:
        a, w = C.spiral_fit(tr)
        res["spiral"] = {"exponent": a, "frequency": w}
    except InsufficientDataError as exc:
        res["spiral"] = None
        res["spiral_note"] = str(exc)
    out.json("pinched.json", res)
    return res


def _section_run(p, energy, count, seed, t_end, tol):
    targets = C.section_targets(p, energy, count=count, seed=seed)
    starts = [C.section_start(p, m, energy) for m in targets]
    per_orbit = _pmap(lambda a: C.poincare_section([a[1]], p, t_end=t_end, tol=tol),
                      list(enumerate(starts)))
    crossings = []
    for k, cr in enumerate(per_orbit):
        for c in cr:
            c.orbit_id = k
        crossings.extend(cr)
    return targets, crossings


def task_poincare(cfg, out):
    p0 = cfg.params
    deltas = cfg.deltas if cfg.deltas is not None else [p0.delta]
    t_end = cfg.t_end if cfg.t_end is not None else 600.0
    energy = _energy(cfg)
    summary = {"energy": energy, "t_end": t_end, "runs": {}}
    for d in deltas:
        p = p0.with_(delta=float(d))
        targets, cr = _section_run(p, energy, cfg.orbits, cfg.seed, t_end, cfg.tol)
        tag = f"{float(d):g}"
        out.text(f"poincare_delta{tag}.csv", _text(lambda fh: C.crossings_to_csv(cr, fh)))
        morph = C.section_morphology(cr)
        # the orbit launched on the critical torus M = 1 (black in the figures)
        critical = int(np.argmin(np.abs(np.asarray(targets) - 1.0)))
        summary["runs"][tag] = {"targets": targets, "crossings": len(cr),
                                "critical_orbit": critical, **morph}
    out.json("poincare.json", summary)
    return summary


def task_monodromy(cfg, out):
    p = cfg.params
    lo, hi = _m_range(cfg, lo_default=max(0, p.two_j - cfg.loop_dm - 4),
                      hi_default=p.two_j + cfg.loop_dm + 4)
    lat = L.em_lattice(_pmap(lambda M: Q.solve_sector(p, Q.MBlock(M)), range(lo, hi + 1)))
    mono = L.transport_loop(lat, (p.two_j, p.omega0 * p.j), (cfg.loop_dm, cfg.loop_dk))
    res = json.loads(mono.to_json())
    res["determinant"] = mono.determinant
    out.json("monodromy.json", res)
    return res


def task_density(cfg, out):
    p = cfg.params
    lv = Q.sector_levels(p, Q.MBlock(p.two_j))
    block = S.smoothed_density(lv, sigma=cfg.sigma)
    out.text("density_block.csv", _text(block.to_csv))
    e_pk, h_pk = block.peak()
    res = {"block": {"M": p.two_j, "sigma": block.sigma, "peak_energy": e_pk,
                     "peak_height": h_pk, "integral": block.integral(), "levels": block.count}}
    try:
        fit = S.esqpt_fit(block)
        res["block"]["fit"] = asdict(fit)
    except NotFoundError as exc:
        res["block"]["fit"] = None
        res["block"]["fit_note"] = str(exc)
    stacked, slv = S.stacked_density(p)
    out.text("density_stacked.csv", _text(stacked.to_csv))
    ec = p.omega0 * p.j
    e_j, jump = S.derivative_jump(stacked, (0.5 * ec, 1.5 * ec))
    res["stacked"] = {"sigma": stacked.sigma, "levels": int(len(slv)), "jump_energy": e_j,
                      "jump": jump, "significance": S.jump_significance(stacked, e_j, jump)}
    out.json("density.json", res)
    return res


def task_critical(cfg, out):
    p = cfg.params
    cv = C.critical_values(p).as_dict()
    try:
        cv["tc"] = C.critical_temperature(p)
    except UndefinedError:
        cv["tc"] = None
    res = {"params": p.as_dict(), "critical": cv}
    try:
        n_plus, n_minus, degenerate = C.hessian_signature(p)
        eigs, kind = C.linear_stability(p)
        res["stationary_point"] = {"hessian_signature": [n_plus, n_minus],
                                   "degenerate": bool(degenerate), "stability": kind}
    except DomainError:
        res["stationary_point"] = None
    out.json("critical.json", res)
    # energy contours of the reduced Hamiltonian around M = 1
    rows = []
    for m in (0.9, 1.0, 1.1):
        r_min, r_max = C.domain_radii(m)
        g = np.linspace(-r_max, r_max, 81)
        X, P = (a.ravel() for a in np.meshgrid(g, g))
        r2 = X ** 2 + P ** 2
        ok = (r2 <= r_max ** 2) & (r2 >= r_min ** 2)
        E = C.reduced_energy(X[ok], P[ok], m, p)
        rows.extend([m, xv, pv, ev] for xv, pv, ev in zip(X[ok], P[ok], E))
    out.csv("contours.csv", ["M", "xp", "pp", "E"], rows)
    return res


def task_breakdown(cfg, out):
    p0 = cfg.params
    deltas = cfg.deltas if cfg.deltas is not None else BREAKDOWN_DELTAS
    lattices = {}
    for d in deltas:
        p = p0.with_(delta=float(d))
        c2 = RunConfig(**{**asdict(cfg), "delta": float(d), "task": "spectrum"})
        sp = _pmap(lambda s: Q.solve_sector(p, s), _parity_sectors(c2))
        lat = L.binned_lattice(sp)
        lattices[float(d)] = lat
        out.text(f"breakdown_delta{float(d):g}.csv", _text(lat.to_csv))
    cols, window = S.default_window(p0)
    reps = S.breakdown_metric(lattices, cols, window)
    scores = [reps[d].score for d in sorted(reps)]
    res = {"columns": list(cols), "energy_window": list(window),
           "scores": {f"{d:g}": asdict(r) for d, r in reps.items()},
           "monotone": bool(np.all(np.diff(scores) > 0))}
    out.json("breakdown.json", res)
    return res


RUNNERS = {
    "spectrum": task_spectrum, "em-lattice": task_em_lattice, "peres": task_peres,
    "orbit": task_orbit, "pinched": task_pinched, "poincare": task_poincare,
    "monodromy": task_monodromy, "density": task_density, "critical": task_critical,
    "breakdown": task_breakdown,
}


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute one task; returns ``(exit_status, result)`` after writing outputs."""
    t0 = time.perf_counter()
    out = OutputSet()
    result = RUNNERS[cfg.task](cfg, out)
    if cfg.plot_script:
        out.text("plot.gp", gnuplot_script(out.files))
    sums = out.commit(cfg.out)
    manifest = {"version": __version__, "config": asdict(cfg),
                "wall_time": time.perf_counter() - t0, "files": sums}
    atomic_write(Path(cfg.out) / "manifest.json", json_text(manifest))
    return 0, result


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if argv is None:
        argv = sys.argv[1:]
    if "-v" in argv or "--verbose" in argv:
        logging.getLogger().setLevel(logging.INFO)
    try:
        cfg = resolve_config(argv)
    except SystemExit as exc:  # argparse already printed the message
        return 2 if exc.code else 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        _workers()
        status, result = run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, ContractError) as exc:
        print(f"error: invalid configuration for {cfg.task}: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure in {cfg.task}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(json_text({"task": cfg.task, "out": cfg.out, "result": result}), end="")
    return status


if __name__ == "__main__":
    sys.exit(main())
