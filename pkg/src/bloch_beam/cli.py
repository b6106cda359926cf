"""Command-line entry point ``bloch-beam``.

Exit codes: 0 success, 2 invalid input or violated assumption, 3 numerical
accuracy or I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .config import RunConfig, effective_config, parse_config
from .errors import BlochBeamError, InvalidInput
from .io import Emitter, dumps, jsonable
from .orbit import area_profile
from .phases import CONVENTIONS
from .pipeline import build_orbit, level_density_sweep, make_sampler, resolve_E0, run_slice
from .quasimode import eikonal_residual, residual_scaling

log = logging.getLogger("bloch_beam")

COMMANDS = ("bands", "orbit", "beam", "phases", "levels", "verify", "sweep")

LEVELS_HEADER = ("k3", "n", "eps_n", "gamma", "theta_b", "theta_rw", "N_M")
ORBIT_HEADER = ("s", "k1", "k2", "vy1", "vy2")
AREA_HEADER = ("k3", "S")
DENSITY_HEADER = ("eps_bin", "count")
RESIDUAL_HEADER = ("eps", "sup_residual")


def _frame_header():
    cols = ["s"]
    for name in ("Y", "N", "M"):
        for i in (1, 2):
            for j in (1, 2):
                cols += [f"{name}{i}{j}_re", f"{name}{i}{j}_im"]
    return cols + ["absdetY", "argdetY"]


def _frame_rows(frame):
    for j, s in enumerate(frame.s):
        row = [s]
        for mat in (frame.Y[j], frame.N[j], frame.M[j]):
            for z in mat.ravel():
                row += [z.real, z.imag]
        row += [abs(frame.det_y[j]), frame.arg_det_y[j]]
        yield row


def _level_rows(table):
    for n, eps in table.entries:
        yield [table.k3, n, eps, table.gamma, table.theta_b, table.theta_rw, table.N_M]


def _executor(cfg: RunConfig):
    return ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None


def cmd_bands(cfg, sampler, out: Emitter) -> dict:
    path = np.asarray(cfg.bands.path, dtype=float)
    nb = min(cfg.bands.n_bands, sampler.basis.size)
    rows, dist = [], 0.0
    pts = []
    for a, b in zip(path[:-1], path[1:]):
        for t in np.linspace(0.0, 1.0, cfg.bands.points_per_segment, endpoint=False):
            pts.append(a + t * (b - a))
    pts.append(path[-1])
    prev = pts[0]
    for i, k in enumerate(pts):
        dist += float(np.linalg.norm(k - prev))
        prev = k
        rows.append([i, dist, *k, *sampler.spectrum(k)[:nb]])
    out.table("bands", ["index", "path_length", "k1", "k2", "k3"] + [f"E{n}" for n in range(1, nb + 1)], rows)
    return {"n_points": len(pts), "n_bands": nb, "basis_size": sampler.basis.size}


def cmd_orbit(cfg, sampler, out: Emitter) -> dict:
    E0 = resolve_E0(cfg.orbit, sampler)
    orb = build_orbit(sampler, E0, cfg.orbit.k3, cfg.orbit)
    out.table("orbit", ORBIT_HEADER, ([s, *k, *v] for s, k, v in zip(orb.s, orb.k, orb.velocity)))
    result = {"E0": E0, "k3": orb.k3, "period": orb.period, "area": orb.area, "orientation": orb.orientation,
              "closure_error": orb.closure_error}
    if cfg.orbit.k3_grid is not None:
        ob = cfg.orbit
        ex = _executor(cfg)
        try:
            prof = area_profile(
                sampler, E0, ob.k3_grid, seed_direction=ob.seed_direction, seed_origin=ob.seed_origin,
                executor=ex, n_samples=ob.n_samples, rtol=ob.rtol, atol=ob.atol, v_min=ob.v_min,
                s_max=ob.s_max, tol_close=ob.tol_close, tol_level=ob.tol_level,
            )
        finally:
            if ex:
                ex.shutdown()
        out.table("area", AREA_HEADER, ([k, S] for k, S in zip(prof.k3, prof.area) if np.isfinite(S)))
        result["extrema"] = [{"k3": k, "S": S, "kind": kind} for k, S, kind in prof.extrema]
        result["failures"] = prof.failures
    else:
        out.table("area", AREA_HEADER, [[orb.k3, orb.area]])
    return result


def _slice(cfg, sampler):
    E0 = resolve_E0(cfg.orbit, sampler)
    return run_slice(sampler, E0, cfg.orbit.k3, orbit=cfg.orbit, beam=cfg.beam, phases=cfg.phases)


def cmd_beam(cfg, sampler, out: Emitter) -> dict:
    res = _slice(cfg, sampler)
    out.table("frame", _frame_header(), _frame_rows(res.frame))
    return {"N_M": res.ledger.N_M, "theta_M": res.ledger.theta_M, "invariants": res.frame.diagnostics}


def cmd_phases(cfg, sampler, out: Emitter) -> dict:
    res = _slice(cfg, sampler)
    ledger = res.ledger.as_dict()
    out.json("phases", {"k3": res.k3, "E0": res.E0, **ledger, "conventions": CONVENTIONS})
    return ledger


def cmd_levels(cfg, sampler, out: Emitter) -> dict:
    E0 = resolve_E0(cfg.orbit, sampler)
    rows, tables = [], []
    for k3 in cfg.k3_values():
        res = run_slice(sampler, E0, k3, orbit=cfg.orbit, beam=cfg.beam, phases=cfg.phases)
        rows.extend(_level_rows(res.levels))
        tables.append({"k3": k3, "S": res.orbit.area, **res.ledger.as_dict(),
                       "max_equation_residual": float(np.abs(res.levels.residuals()).max(initial=0.0))})
    out.table("levels", LEVELS_HEADER, rows)
    return {"E0": E0, "slices": tables}


def cmd_verify(cfg, sampler, out: Emitter) -> dict:
    res = _slice(cfg, sampler)
    rb = cfg.residual
    jet = res.jet()
    eik = eikonal_residual(jet, sampler, rb.eikonal_deltas, rb.eikonal_rays)
    rep = residual_scaling(
        jet, sampler, rb.eps_list, tube_factor=rb.tube_factor, n_s=rb.n_tube_s, n_t=rb.n_tube_t,
        include_m1perp=rb.include_m1perp,
    )
    out.table("residual", RESIDUAL_HEADER, zip(rep.eps_list, rep.sup_residual))
    return {
        "residual_slope": rep.slope,
        "residual_target": [1.35, 1.65],
        "residual_diagnostics": rep.diagnostics,
        "eikonal_slope": eik.slope,
        "eikonal_vacuous": eik.vacuous,
        "eikonal_sup_G": eik.sup_G,
        "transport_mismatch": res.amplitude.mismatch,
        "monodromy": res.amplitude.monodromy(),
        "monodromy_defect": res.monodromy_defect(),
        "transverse_floor": jet.transverse_floor,
        "ledger": res.ledger.as_dict(),
    }


def cmd_sweep(cfg, sampler, out: Emitter) -> dict:
    if cfg.orbit.k3_grid is None:
        raise InvalidInput("sweep needs orbit.k3_grid")
    E0 = resolve_E0(cfg.orbit, sampler)
    ex = _executor(cfg)
    try:
        sw = level_density_sweep(
            sampler, E0, cfg.orbit.k3_grid, eps_window=cfg.phases.eps_window, eps_bins=cfg.phases.eps_bins,
            orbit=cfg.orbit, beam=cfg.beam, phases=cfg.phases, executor=ex,
        )
    finally:
        if ex:
            ex.shutdown()
    d = sw.density
    out.table("density", DENSITY_HEADER, zip(d.centers, d.counts))
    out.table("area", AREA_HEADER, sorted(sw.areas.items()))
    rows = []
    for t in sw.tables:
        rows.extend(_level_rows(t))
    out.table("levels", LEVELS_HEADER, rows)
    return {
        "E0": E0,
        "peak_bin": d.peak_bin,
        "peak_eps": None if d.peak_bin is None else float(d.centers[d.peak_bin]),
        "peak_k3": d.peak_k3,
        "area_extrema": [{"k3": k, "S": S, "kind": kind} for k, S, kind in d.area_extrema],
        "failures": d.failures,
    }


HANDLERS = {
    "bands": cmd_bands, "orbit": cmd_orbit, "beam": cmd_beam, "phases": cmd_phases,
    "levels": cmd_levels, "verify": cmd_verify, "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bloch-beam", description="Gaussian-beam quasimodes and magnetic levels of a Bloch band.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML or JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--json", action="store_true", help="print the run summary (or error) as JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def run_command(command: str, cfg: RunConfig, out_dir=None) -> dict:
    """Execute one command and write its outputs; returns the summary."""
    out = Emitter(out_dir or cfg.output.directory, cfg.output.formats)
    out.always_json("effective_config", effective_config(cfg))
    sampler = make_sampler(cfg)
    result = HANDLERS[command](cfg, sampler, out)
    summary = {
        "command": command,
        "version": __version__,
        "conventions": CONVENTIONS,
        "tolerances": {
            "solver": cfg.solver.model_dump(), "orbit": cfg.orbit.model_dump(),
            "beam": cfg.beam.model_dump(), "phases": cfg.phases.model_dump(),
        },
        "result": result,
    }
    out.json("summary", summary)
    summary["files"] = sorted(p.name for p in out.written)
    return summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        summary = run_command(args.command, cfg, args.out)
    except BlochBeamError as exc:
        return _fail(args, exc, exc.exit_code)
    except Exception as exc:  # every failure path maps onto {2, 3}
        log.exception("unexpected failure")
        return _fail(args, exc, 3)
    if args.json:
        sys.stdout.write(dumps(summary))
    else:
        print(f"{args.command}: ok ({', '.join(summary['files'])})", file=sys.stderr)
    return 0


def _fail(args, exc, code: int) -> int:
    if args.json:
        sys.stderr.write(json.dumps(jsonable({"error": type(exc).__name__, "message": str(exc), "exit_code": code})) + "\n")
    else:
        print(f"bloch-beam {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
