"""Command-line front end.

    mspks analyze --model model.json [--parts parts.json] [--v0 V0]
    mspks simulate --scenario preset:single_subcritical --out runs/a
    mspks self-similar --scenario scenario.json --out runs/b
    mspks sweep --scenario preset:single_supercritical --axis mass.0 --from 6*pi --to 10*pi --steps 9 --out runs/c
    mspks presets

Exit codes: 0 completed, 2 invalid input, 3 blow-up detected,
4 negativity abort, 5 solver failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fields as fc
from . import scenarios as sc
from . import species as sm
from .diagnostics import decay_fit, energy_monotone, slope_fit
from .dynamics import Mode, Status, run

log = logging.getLogger("mspks")

EXIT_OK, EXIT_INVALID, EXIT_BLOWUP, EXIT_NEGATIVE, EXIT_SOLVER = 0, 2, 3, 4, 5
STATUS_EXIT = {Status.COMPLETED: EXIT_OK, Status.BLOWUP: EXIT_BLOWUP, Status.NEGATIVITY: EXIT_NEGATIVE}


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_jsonable)


class InputError(ValueError):
    """Bad model, scenario or axis specification."""


def thread_count(requested: int | None) -> int:
    env = os.environ.get("PKS_THREADS")
    if env:
        try:
            requested = int(env)
        except ValueError:
            raise InputError(f"PKS_THREADS must be an integer, got {env!r}") from None
    n = requested or 1
    if n < 1:
        raise InputError("thread count must be >= 1")
    return n


# --------------------------------------------------------------------------
# analyze
# --------------------------------------------------------------------------

def _subset_str(J) -> list[int]:
    return sorted(int(a) for a in J)


def analyze_model(model: sm.CouplingModel, parts=None, v0: float | None = None) -> dict:
    """Condition report as a JSON-ready dict."""
    tagged = sm.rescale_sensitivities(model) if np.any(model.chi != 1.0) else model
    v = sm.subcritical_check(tagged)
    rep = {
        "species_count": model.species_count,
        "symmetric": model.symmetric,
        "sensitivity_rescaled": tagged is not model,
        "verdict": v.verdict.value,
        "q_full": v.q_full,
        "q_full_over_pi": v.q_full / np.pi,
        "q_full_signed": v.q_full_signed,
        "worst_subset": None if v.worst_subset is None else _subset_str(v.worst_subset),
        "worst_q": v.worst_q,
    }
    chain = sm.essentially_dissipative(tagged.B)
    rep["essentially_dissipative"] = chain.is_essentially_dissipative
    rep["dissipativity_chain"] = [_subset_str(s) for s in chain.chain]
    Bp = sm.positive_part(tagged.B)
    if sm.is_symmetric(Bp):
        hls = sm.log_hls_condition(Bp, tagged.M)
        rep["lambda"] = [{"subset": _subset_str(J), "value": val} for J, val in hls.lambdas.items()]
        rep["log_hls_bounded_below"] = hls.bounded_below
        rep["log_hls_minimizer_exists"] = hls.minimizer_exists
        sb = sm.spectral_sufficient(tagged)
        rep["spectral_radius"] = sb.rho
        rep["spectral_bound_holds"] = sb.bound_holds
    if tagged.symmetric:
        slope = sm.second_moment_slope(tagged)
        rep["second_moment_slope"] = slope
        if v0 is not None and slope < 0:
            rep["v_zero_time"] = v0 / -slope
    else:
        rep["note"] = ("non-symmetric: free-energy conditions not applicable; essentially dissipative: "
                       + ("yes" if chain.is_essentially_dissipative else "no"))
    try:
        s = sm.symmetrize_tridiagonal(tagged.B)
        rep["symmetrizable"] = True
        rep["eta"] = s.eta.tolist()
        rep["B_sym"] = s.B_sym.tolist()
    except ValueError as exc:
        rep["symmetrizable"] = False
        rep["symmetrize_reason"] = str(exc)
    if parts is not None:
        d = sm.check_decomposition_condition(tagged, parts)
        rep["decomposition"] = {
            "valid_decomposition": d.valid_decomposition,
            "condition_holds": d.condition_holds,
            "parts": [{"support": list(p.support), "C": p.C, "subset_ok": p.subset_ok} for p in d.parts],
            "row_sums": list(d.row_sums),
            "note": d.note,
        }
    return rep


def _read_json(path, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {what} file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_model(path) -> sm.CouplingModel:
    d = _read_json(path, "model")
    if isinstance(d, dict) and "model" in d:
        d = d["model"]
    if not isinstance(d, dict):
        raise InputError(f"{path}: expected a JSON object with B and M")
    try:
        return sc.model_from_dict(d, where=str(path))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def load_parts(path, k: int):
    d = _read_json(path, "parts")
    if isinstance(d, dict):
        d = d.get("parts")
    if not isinstance(d, list):
        raise InputError(f"{path}: expected a list of matrices")
    out = []
    for i, p in enumerate(d):
        try:
            out.append(np.array([[sc.parse_number(x) for x in row] for row in p], dtype=float))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: part {i}: {exc}") from None
    return out


def cmd_analyze(args) -> int:
    model = load_model(args.model)
    parts = load_parts(args.parts, model.species_count) if args.parts else None
    try:
        v0 = sc.parse_number(args.v0) if args.v0 is not None else None
        rep = analyze_model(model, parts, v0)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    print(dumps(rep))
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate / self-similar
# --------------------------------------------------------------------------

def load_scenario(source: str) -> sc.ScenarioConfig:
    try:
        if source.startswith("preset:"):
            return sc.preset(source.split(":", 1)[1])
        return sc.load(source)
    except KeyError as exc:
        raise InputError(exc.args[0]) from None
    except OSError as exc:
        raise InputError(f"cannot read scenario {source}: {exc.strerror}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"{source}: {exc}") from None


def _override(config: sc.ScenarioConfig, args) -> sc.ScenarioConfig:
    kw = {}
    try:
        if getattr(args, "t_end", None) is not None:
            kw["t_end"] = sc.parse_number(args.t_end)
        if getattr(args, "sample_dt", None) is not None:
            kw["sample_dt"] = sc.parse_number(args.sample_dt)
        if getattr(args, "grid", None) is not None:
            kw["grid"] = fc.GridSpec(args.grid, config.grid.half_width)
        return replace(config, **kw) if kw else config
    except ValueError as exc:
        raise InputError(str(exc)) from None


def summarize(traj, config: sc.ScenarioConfig) -> dict:
    recs = traj.records
    out = traj.outcome
    r0, r1 = recs[0], recs[-1]
    summary = {
        "scenario": config.name,
        "status": out.status.value,
        "t_final": out.t_final,
        "indicator": None if out.indicator is None else out.indicator.value,
        "steps": out.steps,
        "samples": len(recs),
        "mass_drift": [abs(b - a) / a for a, b in zip(r0.mass, r1.mass)],
        "max_undershoot": traj.max_undershoot,
        "v_zero_time": traj.v_zero_time,
    }
    try:
        f = slope_fit(recs)
        summary["slope_fit"] = {"slope": f.slope, "intercept": f.intercept, "r2": f.r2}
    except ValueError:
        summary["slope_fit"] = None
    try:
        d = decay_fit(recs)
        summary["decay_fit"] = {"sup_scaled": d.sup_scaled, "monotone_tail": d.monotone_tail}
    except ValueError:
        summary["decay_fit"] = None
    summary["energy_monotone"] = energy_monotone(recs) if r0.E is not None else None
    return summary


def simulate(config: sc.ScenarioConfig, out_dir: Path | None) -> tuple[int, dict]:
    """Run one scenario, writing outputs under ``out_dir`` when given."""
    try:
        sc.validate(config)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "diagnostics.ndjson", "w")
    try:
        traj = run(config, on_record=(lambda r: fh.write(r.to_json() + "\n")) if fh else None)
    finally:
        if fh:
            fh.close()
    summary = summarize(traj, config)
    if out_dir is not None:
        if traj.snapshots:
            snap = out_dir / "snapshots"
            snap.mkdir(exist_ok=True)
            for t, st in sorted(traj.snapshots.items()):
                fc.write_snapshot(snap / f"t_{t:012.6f}.field", st.fields, st.t)
        (out_dir / "summary.json").write_text(dumps(summary) + "\n")
        sc.save(config, out_dir / "scenario.json")
    return STATUS_EXIT[traj.outcome.status], summary


def cmd_simulate(args, mode: Mode | None = None) -> int:
    fc.set_fft_workers(thread_count(args.threads))
    config = _override(load_scenario(args.scenario), args)
    if mode is not None:
        config = replace(config, mode=mode)
    code, summary = simulate(config, Path(args.out) if args.out else None)
    print(json.dumps({k: summary[k] for k in ("status", "t_final", "indicator", "steps")}))
    return code


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

def _set_path(d: dict, path: str, value: float) -> None:
    keys = path.split(".")
    node = d
    try:
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node[k]
        last = keys[-1]
        if isinstance(node, list):
            idx = int(last)
            if isinstance(node[idx], (list, dict)):
                raise TypeError
            node[idx] = value
        else:
            if last not in node or isinstance(node[last], (list, dict)):
                raise TypeError
            node[last] = value
    except (KeyError, IndexError, ValueError, TypeError):
        raise InputError(f"axis {path!r} does not name a scalar field of the scenario") from None


def apply_axis(config: sc.ScenarioConfig, axis: str, value: float) -> sc.ScenarioConfig:
    """Scenario with one scalar replaced; ``mass.i`` / ``model.M.i`` also scale the blobs."""
    parts = axis.split(".")
    if parts[0] == "mass" and len(parts) == 2 or parts[:2] == ["model", "M"] and len(parts) == 3:
        try:
            i = int(parts[-1])
            if not 0 <= i < config.model.species_count:
                raise IndexError
            return config.with_mass(i, value)
        except (ValueError, IndexError):
            raise InputError(f"axis {axis!r}: species index out of range") from None
    d = copy.deepcopy(sc.to_dict(config))
    _set_path(d, axis, value)
    try:
        return sc.from_dict(d)
    except ValueError as exc:
        raise InputError(f"axis {axis!r} = {value}: {exc}") from None


def _sweep_point(args):
    config, out = args
    fc.set_fft_workers(1)
    try:
        code, summary = simulate(config, out)
        return code, summary["status"], summary["t_final"], summary["indicator"]
    except FloatingPointError as exc:
        return EXIT_SOLVER, "SolverFailure", None, str(exc)


def bracket(values, statuses):
    """Last Completed value before the first BlowUpDetected value."""
    first_blow = next((i for i, s in enumerate(statuses) if s == Status.BLOWUP.value), None)
    if first_blow is None:
        return None
    done = [i for i in range(first_blow) if statuses[i] == Status.COMPLETED.value]
    lo = values[done[-1]] if done else None
    return [lo, values[first_blow]]


def sweep(config: sc.ScenarioConfig, axis: str, lo: float, hi: float, steps: int,
          out_dir: Path | None = None, workers: int = 1) -> dict:
    if steps < 1:
        raise InputError("steps must be >= 1")
    values = [lo] if steps == 1 else list(np.linspace(lo, hi, steps))
    configs = [apply_axis(config, axis, float(v)) for v in values]
    for c in configs:
        try:
            sc.validate(c)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    outs = [None if out_dir is None else out_dir / f"point_{i:03d}" for i in range(len(values))]
    jobs = list(zip(configs, outs))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows = [{"value": float(v), "status": r[1], "t_final": r[2], "indicator": r[3], "exit": r[0]}
            for v, r in zip(values, results)]
    table = {"axis": axis, "rows": rows,
             "bracket": bracket([r["value"] for r in rows], [r["status"] for r in rows])}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "sweep.json").write_text(dumps(table) + "\n")
    return table


def cmd_sweep(args) -> int:
    workers = thread_count(args.threads)
    config = _override(load_scenario(args.scenario), args)
    try:
        lo, hi = sc.parse_number(args.start), sc.parse_number(args.stop)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    table = sweep(config, args.axis, lo, hi, args.steps, Path(args.out) if args.out else None, workers)
    for r in table["rows"]:
        print(f"{r['value']:.10g}\t{r['status']}\t{r['t_final']}\t{r['indicator']}")
    print(f"bracket\t{table['bracket']}")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in sc.preset_names():
        c = sc.preset(name)
        print(f"{name}\t{sc.PRESET_CLASS[name]}\tB={c.model.B.tolist()}\t"
              f"M/pi={[round(float(m) / np.pi, 6) for m in c.model.M]}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mspks", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="condition report for a coupling model")
    a.add_argument("--model", required=True)
    a.add_argument("--parts")
    a.add_argument("--v0", help="initial second moment, for the V-zero time")
    a.set_defaults(func=cmd_analyze)

    for name, mode in (("simulate", None), ("self-similar", Mode.SELF_SIMILAR)):
        s = sub.add_parser(name, help=f"{name} run of a scenario file or preset:NAME")
        s.add_argument("--scenario", required=True)
        s.add_argument("--out")
        s.add_argument("--threads", type=int)
        s.add_argument("--t-end", dest="t_end")
        s.add_argument("--sample-dt", dest="sample_dt")
        s.add_argument("--grid", type=int)
        s.set_defaults(func=lambda args, mode=mode: cmd_simulate(args, mode))

    w = sub.add_parser("sweep", help="run a scenario along one scalar axis")
    w.add_argument("--scenario", required=True)
    w.add_argument("--axis", required=True)
    w.add_argument("--from", dest="start", required=True)
    w.add_argument("--to", dest="stop", required=True)
    w.add_argument("--steps", type=int, required=True)
    w.add_argument("--out")
    w.add_argument("--threads", type=int)
    w.add_argument("--t-end", dest="t_end")
    w.add_argument("--sample-dt", dest="sample_dt")
    w.add_argument("--grid", type=int)
    w.set_defaults(func=cmd_sweep)

    sub.add_parser("presets", help="list named scenarios").set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FloatingPointError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
