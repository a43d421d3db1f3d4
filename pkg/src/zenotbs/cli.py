"""Command-line entry point: ``zenotbs <subcommand> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (adiabatic_length, decompose, phase_diagram, right_boundary_band,
                       run_tbs)
from .config import SCENARIOS, ConfigError, RunConfig, load_config
from .evolve import basis_state, projective_chain, propagate
from .spectral import band_structure, boundary_state_index, eigenframe, metric_map, zeta


def fmt(x) -> str:
    """Fixed 12-significant-digit rendering; integers and labels pass through."""
    if isinstance(x, (str, np.str_)):
        return str(x)
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x + 0.0:.11e}"


def _rounded(x: float) -> float:
    return float(fmt(x))


class Outputs:
    """Collects written files for the manifest, in write order."""

    def __init__(self, out: Path):
        self.out = out
        self.files: List[dict] = []

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        n = 0
        with open(self.out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
                n += 1
        self.files.append({"name": name, "rows": n, "columns": len(header)})


# --- shared helpers ---------------------------------------------------------

def _initial_state(cfg: RunConfig, spec):
    r = cfg["ramp"]
    if r["initial"] == "site":
        return basis_state(spec.M, r["initial_site"])
    frame = eigenframe(spec, r["phi0"], cell=cfg["numerics"]["cell"])
    side = "right" if r["initial"] == "right_tbs" else "left"
    return frame.state(boundary_state_index(frame, side))


def _trace_rows(trace, extra=()):
    pops = trace.populations
    norms = trace.norms
    for k in range(len(trace)):
        yield (trace.z[k], *pops[k], norms[k], *(col[k] for col in extra))


def _pop_header(M: int) -> List[str]:
    return ["z"] + [f"pop_{i}" for i in range(1, M + 1)] + ["norm"]


def _ramp_length(cfg: RunConfig, spec) -> float:
    r = cfg["ramp"]
    if not r["auto_length"]:
        return r["L"]
    if r["dphi"] == 0:
        raise ConfigError("ramp.auto_length: needs a nonzero ramp.dphi")
    band = right_boundary_band(spec, r["phi0"])
    return adiabatic_length(spec, r["phi0"], r["dphi"], band,
                            target=cfg["numerics"]["target_leak"])


# --- subcommands ------------------------------------------------------------

def cmd_rabi(cfg: RunConfig, out: Outputs) -> dict:
    spec = cfg.lattice()
    trace = propagate(spec, cfg.ramp(), None, _initial_state(cfg, spec), steps=cfg.steps)
    out.csv("trace.csv", _pop_header(spec.M), _trace_rows(trace))
    return {"L": cfg["ramp"]["L"], "final_populations": [_rounded(p) for p in trace.populations[-1]]}


def cmd_zeno_two_level(cfg: RunConfig, out: Outputs) -> dict:
    spec = cfg.lattice()
    psi0 = _initial_state(cfg, spec)
    m = cfg["measurement"]
    if m["profile"] == "projective":
        n = m["pulses"]
        substeps = max(1, (cfg.steps or 16 * n) // n)
        trace = projective_chain(spec, psi0, n, cfg["ramp"]["L"], substeps=substeps)
    else:
        trace = propagate(spec, cfg.ramp(), cfg.program(), psi0, steps=cfg.steps)
    out.csv("trace.csv", _pop_header(spec.M) + ["survival"], _trace_rows(trace, (trace.survival,)))
    return {"final_populations": [_rounded(p) for p in trace.populations[-1]],
            "final_survival": _rounded(trace.survival[-1])}


def cmd_tbs(cfg: RunConfig, out: Outputs) -> dict:
    spec = cfg.lattice()
    L = _ramp_length(cfg, spec)
    side = "left" if cfg["ramp"]["initial"] == "left_tbs" else "right"
    if cfg["ramp"]["initial"] == "site":
        raise ConfigError("ramp.initial: boundary-state scenarios launch 'right_tbs' or 'left_tbs'")
    res = run_tbs(spec, cfg.ramp(L), cfg.program(L), steps=cfg.steps,
                  cell=cfg["numerics"]["cell"], side=side)
    out.csv("trace.csv", _pop_header(spec.M) + ["zeta"], _trace_rows(res.trace, (res.zeta_series,)))
    return {"L": _rounded(L), "initial_band": res.initial_index,
            "final_zeta": _rounded(res.final_zeta),
            "fidelity_left": _rounded(res.fidelity_left),
            "fidelity_right": _rounded(res.fidelity_right),
            "max_norm_error": _rounded(float(np.max(np.abs(res.trace.norms - 1))))}


def cmd_bands(cfg: RunConfig, out: Outputs) -> dict:
    spec = cfg.lattice()
    phis = cfg.grid("phi0")
    num = cfg["numerics"]
    rows = []
    point = 0
    for db in cfg.grid("dbeta"):
        frames = band_structure(spec, [(p, db) for p in phis], site=cfg["measurement"]["site"],
                                min_overlap=num["min_overlap"], cell=num["cell"])
        for f in frames:
            for b in range(spec.M):
                rows.append((point, f.phi, f.dbeta, b, f.eigenvalues[b], zeta(f.state(b), num["cell"])))
            point += 1
    out.csv("bands.csv", ["point", "phi", "dbeta", "band", "energy", "zeta"], rows)
    return {"points": point}


def _band(cfg: RunConfig, spec, phi: float) -> int:
    b = cfg["sweep"]["band"]
    return right_boundary_band(spec, phi) if b < 0 else b


def cmd_metric_map(cfg: RunConfig, out: Outputs) -> dict:
    spec = cfg.lattice()
    phis, dbs = cfg.grid("phi0"), cfg.grid("dbeta")
    band = _band(cfg, spec, phis[0])
    mm = metric_map(spec, band, phis, dbs, site=cfg["measurement"]["site"],
                    workers=cfg["numerics"]["threads"], form=cfg["numerics"]["metric_form"])
    det = mm.abs_det

    def rows():
        for i, db in enumerate(dbs):
            for k, p in enumerate(phis):
                g = mm.g[i, k]
                valid = not np.isnan(g[0, 0])
                yield p, db, g[0, 0], g[0, 1], g[1, 1], det[i, k], int(valid)

    out.csv("metric.csv", ["phi", "dbeta", "g_phiphi", "g_phidbeta", "g_dbetadbeta", "abs_det", "valid"],
            rows())
    return {"band": band, "missing": mm.missing}


def cmd_phase_diagram(cfg: RunConfig, out: Outputs) -> dict:
    spec = cfg.lattice()
    s, r, num = cfg["sweep"], cfg["ramp"], cfg["numerics"]
    pd = phase_diagram(spec, cfg.grid("phi0"), cfg.grid("dphi"), cfg.grid("dbeta"),
                       band=None if s["band"] < 0 else s["band"], site=cfg["measurement"]["site"],
                       L=r["L"], z=None if s["z"] < 0 else s["z"], threshold=s["threshold"],
                       workers=num["threads"], track_points=num["track_points"])
    out.csv("phase.csv", ["phi0", "dphi", "dbeta", "chi", "label"], pd.rows())
    labels = pd.labels
    return {"missing": pd.missing, **{k: int(np.sum(labels == k)) for k in ("ZE", "AZE", "neutral")}}


def cmd_decompose(cfg: RunConfig, out: Outputs) -> dict:
    spec = cfg.lattice()
    L = _ramp_length(cfg, spec)
    ramp = cfg.ramp(L)
    trace = propagate(spec, ramp, cfg.program(L), _initial_state(cfg, spec), steps=cfg.steps)
    basis = eigenframe(spec, ramp.phi0, cell=cfg["numerics"]["cell"])
    picks = np.unique(np.round(np.linspace(0, len(trace) - 1, cfg["numerics"]["samples"])).astype(int))
    rows = []
    for k in picks:
        d = decompose(trace.states[k], basis, trace.z[k])
        for i in range(spec.M):
            rows.append((trace.z[k], i, d.eigenvalues[i], d.omega[i].real, d.omega[i].imag, d.weights[i]))
    out.csv("weights.csv", ["z", "index", "energy", "omega_re", "omega_im", "weight"], rows)
    return {"L": _rounded(L), "samples": len(picks)}


COMMANDS = {
    "rabi": cmd_rabi,
    "zeno-two-level": cmd_zeno_two_level,
    "bands": cmd_bands,
    "metric-map": cmd_metric_map,
    "ze-tbs": cmd_tbs,
    "aze-tbs": cmd_tbs,
    "phase-diagram": cmd_phase_diagram,
    "ramp-tunnel": cmd_tbs,
    "decompose": cmd_decompose,
}
assert set(COMMANDS) == set(SCENARIOS)


def run(cfg: RunConfig, out_dir) -> dict:
    """Execute ``cfg.scenario`` and write its outputs plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = Outputs(out_dir)
    t0 = time.perf_counter()
    summary = COMMANDS[cfg.scenario](cfg, out)
    manifest = {
        "artifact": "zenotbs",
        "version": __version__,
        "scenario": cfg.scenario,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "files": out.files,
        "summary": summary,
        "duration_s": round(time.perf_counter() - t0, 3),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zenotbs",
                                description="Zeno / anti-Zeno boundary-state simulations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name in SCENARIOS:
        sp = sub.add_parser(name, help=f"run the {name} workflow")
        sp.add_argument("--config", required=True, type=Path, help="flat TOML config file")
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="sweep workers (overrides numerics.threads)")
        sp.add_argument("--steps", type=int, default=None, help="propagation steps (overrides numerics.steps)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, scenario=args.command)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("numerics.threads: must be >= 1")
            cfg.values["numerics"]["threads"] = args.threads
        if args.steps is not None:
            if args.steps < 0:
                raise ConfigError("numerics.steps: must be >= 0")
            cfg.values["numerics"]["steps"] = args.steps
        manifest = run(cfg, args.out)
    except ConfigError as exc:
        print(f"zenotbs: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"zenotbs: I/O error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"zenotbs: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(manifest["summary"], sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
