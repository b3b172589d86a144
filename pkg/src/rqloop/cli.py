"""
Command-line experiment runner.

    rqloop bounds   --config sweep.json --out results/sweep
    rqloop run      --config preset:markov-stable --out results/ms --threads 4
    rqloop lyapunov --config vec.json --out results/lyap
    rqloop riccati  --config vec.json --out results/dare
    rqloop presets  [NAME]

Each command writes ``<out>.csv`` and ``<out>.report.json``. The CSV is a
pure function of config and seed (shortest round-trip floats); the
timestamp lives only in the JSON report.

Exit codes: 0 ok, 2 config error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
from typing import Any

import numpy as np

from . import __version__
from . import config as cfgmod
from .analysis import (
    ChannelModel, bernoulli_scalar_bound, contraction_factor, lyapunov_residual,
    markov_scalar_bound, solve_stationary_covariance, variance_sequence_scalar,
    vector_bernoulli_bound, vector_markov_bound,
)
from .config import Overrides
from .errors import ConfigError, IllPosedError, RQLoopError
from .lqr import ScalarPlant, VectorPlant, lqr_gain, riccati_residual, scalar_lqr
from .simulation import LoopConfig, run_ensemble, run_scalar, run_vector
from .switching import RNG_ALGORITHM, SwitchModel, stationary_pi

log = logging.getLogger("rqloop")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

VERB_MODES = {
    "bounds": ("bounds_sweep",),
    "run": ("variance_curve", "trajectory", "ensemble"),
    "lyapunov": ("lyapunov",),
    "riccati": ("riccati",),
}


# -- formatting ----------------------------------------------------------------


def fmt(v) -> str:
    """Shortest round-trip text for a CSV cell."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return repr(f)
    return str(v)


def jsonable(v) -> Any:
    """Convert numpy values and non-finite floats to plain JSON."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return v


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


# -- shared pieces ---------------------------------------------------------------


def _scalar_stability(plant: ScalarPlant, switch: SwitchModel, ch: ChannelModel) -> dict:
    if switch.kind == "bernoulli":
        rep = bernoulli_scalar_bound(plant, ch, switch.p)
    else:
        rep = markov_scalar_bound(plant, ch, switch)
    return rep.to_dict()


def _vector_stability(A, closed, switch: SwitchModel) -> dict:
    try:
        nb = vector_bernoulli_bound(A, closed) if switch.kind == "bernoulli" else vector_markov_bound(A, closed)
    except IllPosedError as exc:
        return {"stable": False, "bound": None, "warnings": [str(exc)]}
    param = switch.p if switch.kind == "bernoulli" else (
        math.inf if switch.q == 0 else switch.p / switch.q)
    return {
        "bound_kind": nb.bound_kind, "bound": nb.bound, "raw_bound": nb.raw_bound,
        "open_norm": nb.open_norm, "closed_norm": nb.closed_norm, "parameter": param,
        "stable": bool(param < nb.bound), "warnings": [nb.warning] if nb.warning else [],
    }


def _switch_weight(switch: SwitchModel) -> float:
    return switch.p if switch.kind == "bernoulli" else stationary_pi(switch)


def _vector_gain(doc, plant: VectorPlant) -> np.ndarray:
    if "gain" in doc:
        L = np.atleast_2d(np.array(doc["gain"], dtype=float))
        if L.shape != (plant.m, plant.n):
            raise ConfigError("gain", f"expected a {plant.m}x{plant.n} matrix, got {L.shape}")
        return L
    return lqr_gain(plant).L


def _loop_config(doc: dict) -> LoopConfig:
    plant = cfgmod.build_plant(doc)
    switch = cfgmod.build_switch(doc)
    gain = doc.get("gain")
    if gain is not None and not cfgmod.is_vector(doc):
        if isinstance(gain, list):
            raise ConfigError("gain", "scalar plants take a number")
    gpath = doc.get("gamma_path")
    horizon = doc.get("horizon", 100)
    if gpath is not None and len(gpath) < horizon:
        raise ConfigError("gamma_path", f"needs at least horizon={horizon} entries")
    x0 = doc.get("x0")
    n = plant.n if isinstance(plant, VectorPlant) else 1
    if x0 is not None and np.size(x0) != n:
        raise ConfigError("x0", f"expected {n} entries")
    try:
        return LoopConfig(
            plant=plant, switch=switch, channel=cfgmod.build_channel(doc), horizon=horizon,
            seed=doc.get("seed", 0), gain=gain,
            divergence_threshold=doc.get("divergence_threshold", 1e9),
            x0=x0, gamma_path=None if gpath is None else np.array(gpath, dtype=np.int8),
            overflow=doc.get("overflow", "extend"),
        )
    except ValueError as exc:
        if isinstance(exc, RQLoopError) and not isinstance(exc, ConfigError):
            raise
        raise ConfigError("<root>", str(exc)) from exc


def _theory(lc: LoopConfig) -> dict:
    """Analytic asymptote of the second moment (trace for vector plants)."""
    if lc.is_scalar:
        rep = _scalar_stability(lc.plant, lc.switch, lc.channel)
        return {"asymptote": rep["asymptotic_second_moment"], "source": "scalar closed form"}
    A, closed = lc.plant.A, lc.plant.A - lc.plant.B @ lc.feedback_matrix()
    w = _switch_weight(lc.switch)
    try:
        P = solve_stationary_covariance(A, closed, lc.plant.W, w)
    except RQLoopError as exc:
        return {"asymptote": None, "source": "stationary covariance", "note": str(exc)}
    return {"asymptote": float(np.trace(P)), "stationary_covariance": P, "source": "stationary covariance"}


# -- commands --------------------------------------------------------------------


def cmd_bounds_sweep(doc: dict):
    sweep = doc.get("sweep")
    if sweep is None:
        raise ConfigError("sweep", "bounds_sweep needs a sweep block with a capacity grid")
    if cfgmod.is_vector(doc):
        raise ConfigError("plant", "bounds_sweep works on scalar plants")
    pl = doc["plant"]
    kind = sweep.get("bound") or doc.get("switch", {}).get("kind", "bernoulli")
    alphas = sweep.get("alpha", [pl["alpha"]])
    caps = [cfgmod.capacity(c) for c in sweep["capacity_bits"]]
    col = "p_max" if kind == "bernoulli" else "ratio_max"
    rows = []
    for a in alphas:
        if "closed_gain" in sweep:
            gains = sweep["closed_gain"]
        elif "closed_gain" in pl:
            gains = [pl["closed_gain"]]
        else:
            base = cfgmod.build_scalar_plant(pl, alpha=a)
            gains = [base.closed_loop_gain()]
        for c in gains:
            plant = cfgmod.build_scalar_plant(pl, alpha=a, closed_gain=c)
            for C in caps:
                ch = ChannelModel(C, doc.get("channel", {}).get("epsilon", 1e-3))
                rep = bernoulli_scalar_bound(plant, ch) if kind == "bernoulli" else markov_scalar_bound(plant, ch)
                rows.append((C, float(a), float(c), rep.bound, rep.regime))
    header = ["capacity_bits", "alpha", "closed_gain", col, "regime"]
    results = {"bound": kind, "points": len(rows), "column": col}
    return header, rows, None, {}, results


def cmd_variance_curve(doc: dict):
    if cfgmod.is_vector(doc):
        raise ConfigError("plant", "variance_curve works on scalar plants")
    plant = cfgmod.build_scalar_plant(doc["plant"])
    switch = cfgmod.build_switch(doc)
    ch = cfgmod.build_channel(doc)
    N = doc.get("horizon", 100)
    s, d = variance_sequence_scalar(plant, switch, ch, N)
    stab = _scalar_stability(plant, switch, ch)
    rows = [(k, s[k], d[k]) for k in range(N + 1)]
    results = {"final_variance": s[-1], "final_delta_sq": d[-1]}
    return ["k", "variance", "delta_sq"], rows, stab, {"asymptote": stab["asymptotic_second_moment"]}, results


def _stability_for(lc: LoopConfig) -> dict:
    if lc.is_scalar:
        return _scalar_stability(lc.plant, lc.switch, lc.channel)
    return _vector_stability(lc.plant.A, lc.plant.A - lc.plant.B @ lc.feedback_matrix(), lc.switch)


def cmd_trajectory(doc: dict):
    lc = _loop_config(doc)
    tr = run_scalar(lc) if lc.is_scalar else run_vector(lc)
    n = 1 if lc.is_scalar else lc.plant.n
    m = 1 if lc.is_scalar else lc.plant.m
    xcols = ["x"] if n == 1 else [f"x{i + 1}" for i in range(n)]
    ucols = ["u"] if m == 1 else [f"u{i + 1}" for i in range(m)]
    states = np.asarray(tr.states).reshape(len(tr.states), n)
    inputs = np.asarray(tr.inputs).reshape(len(tr.inputs), m)
    rows = []
    for k in range(len(states)):
        step = k < len(tr.gammas)
        rows.append((k, *states[k], int(tr.gammas[k]) if step else None,
                     tr.deltas_sq[k] if step else None, *(inputs[k] if step else [None] * m)))
    results = {"steps": len(tr.gammas), "first_divergence": tr.first_divergence,
               "overflow_count": tr.overflow_count}
    return ["k", *xcols, "gamma", "delta_sq", *ucols], rows, _stability_for(lc), _theory(lc), results


def cmd_ensemble(doc: dict):
    lc = _loop_config(doc)
    runs = doc.get("runs", 1000)
    st = run_ensemble(lc, runs, threads=doc.get("threads", 1), ci_z=doc.get("ci_z", 3.0))
    rows = [(k, st.second_moment[k], st.ci_halfwidth[k], st.diverged_fraction[k]) for k in st.k]
    theory = _theory(lc)
    final, half = float(st.second_moment[-1]), float(st.ci_halfwidth[-1])
    results = {
        "runs": runs, "final_moment": final, "final_ci_halfwidth": half, "ci_z": st.ci_z,
        "final_diverged_fraction": float(st.diverged_fraction[-1]),
        "final_alive": int(st.alive[-1]), "overflow_count": st.overflow_count,
    }
    a = theory.get("asymptote")
    if isinstance(a, float) and math.isfinite(a) and math.isfinite(final):
        results["relative_error"] = abs(final - a) / a
        results["asymptote_within_ci"] = bool(abs(final - a) <= half)
    if st.covariance is not None:
        results["final_covariance"] = st.covariance[-1]
    return ["k", "moment_estimate", "ci_halfwidth", "diverged_fraction"], rows, _stability_for(lc), theory, results


def _matrix_setup(doc: dict):
    """(A, closed loop, W) from a vector plant, or the 1x1 form of a scalar one."""
    if cfgmod.is_vector(doc):
        plant = cfgmod.build_vector_plant(doc["plant"])
        L = _vector_gain(doc, plant)
        return plant.A, plant.A - plant.B @ L, plant.W, plant
    plant = cfgmod.build_scalar_plant(doc["plant"])
    return (np.array([[plant.alpha]]), np.array([[plant.closed_loop_gain()]]),
            np.array([[plant.sigma_w2]]), plant)


def cmd_lyapunov(doc: dict):
    A, closed, W, plant = _matrix_setup(doc)
    switch = cfgmod.build_switch(doc)
    w = _switch_weight(switch)
    method = doc.get("lyapunov", {}).get("method", "linear_system")
    P = solve_stationary_covariance(A, closed, W, w, method=method)
    n = A.shape[0]
    rows = [(i, j, P[i, j]) for i in range(n) for j in range(n)]
    theory: dict = {"asymptote": float(np.trace(P))}
    if isinstance(plant, ScalarPlant):
        omega2 = plant.alpha ** 2 * w + plant.closed_loop_gain() ** 2 * (1.0 - w)
        theory["scalar_formula"] = plant.sigma_w2 / (1.0 - omega2) if omega2 < 1 else math.inf
    results = {
        "method": method, "weight": w, "P": P, "trace": float(np.trace(P)),
        "residual": lyapunov_residual(A, closed, W, w, P),
        "contraction_factor": contraction_factor(A, closed, w),
    }
    return ["i", "j", "value"], rows, _vector_stability(A, closed, switch), theory, results


def cmd_riccati(doc: dict):
    if cfgmod.is_vector(doc):
        plant = cfgmod.build_vector_plant(doc["plant"])
    else:
        pl = doc["plant"]
        if "q_cost" not in pl or "r_cost" not in pl:
            raise ConfigError("plant.q_cost", "riccati needs q_cost and r_cost for a scalar plant")
        plant = cfgmod.build_scalar_plant(pl).as_vector()
    res = lqr_gain(plant)
    rows = [("P", i, j, res.P[i, j]) for i in range(plant.n) for j in range(plant.n)]
    rows += [("L", i, j, res.L[i, j]) for i in range(plant.m) for j in range(plant.n)]
    results = {
        "P": res.P, "L": res.L, "closed_loop": res.closed_loop,
        "residual": riccati_residual(plant, res.P), "closed_loop_norm": res.closed_loop_norm,
        "spectral_radius": res.spectral_radius, "norm_contracting": res.norm_contracting,
    }
    theory: dict = {"asymptote": None}
    if plant.n == 1 and plant.m == 1:
        l, p = scalar_lqr(plant.A[0, 0], plant.B[0, 0], plant.Q[0, 0], plant.R[0, 0])
        theory.update({"scalar_p": p, "scalar_l": l})
    return ["matrix", "i", "j", "value"], rows, None, theory, results


COMMANDS = {
    "bounds_sweep": cmd_bounds_sweep,
    "variance_curve": cmd_variance_curve,
    "trajectory": cmd_trajectory,
    "ensemble": cmd_ensemble,
    "lyapunov": cmd_lyapunov,
    "riccati": cmd_riccati,
}


# -- driver ----------------------------------------------------------------------


def execute(verb: str, doc: dict) -> tuple[str, dict]:
    """Validate ``doc`` for ``verb`` and run it. Returns (csv text, report)."""
    if isinstance(doc, dict) and "mode" not in doc and len(VERB_MODES.get(verb, ())) == 1:
        doc = {**doc, "mode": VERB_MODES[verb][0]}
    cfgmod.validate_config(doc)
    mode = doc["mode"]
    if mode not in VERB_MODES[verb]:
        raise ConfigError("mode", f"mode {mode!r} is not handled by '{verb}' (expected {', '.join(VERB_MODES[verb])})")
    if "out" not in doc:
        raise ConfigError("out", "no output prefix: pass --out or set 'out' in the config")
    header, rows, stability, theory, results = COMMANDS[mode](doc)
    out = doc["out"]
    report = jsonable({
        "tool": "rqloop", "version": __version__, "schema_version": 1, "mode": mode,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "seed": doc.get("seed") if mode in ("trajectory", "ensemble") else None,
        "rng": RNG_ALGORITHM, "config": doc, "stability": stability, "theory": theory,
        "results": results, "outputs": {"csv": f"{out}.csv", "report": f"{out}.report.json"},
    })
    cfgmod.validate_report(report)
    return csv_text(header, rows), report


def write_outputs(out: str, text: str, report: dict) -> None:
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(f"{out}.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    with open(f"{out}.report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, allow_nan=False)
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rqloop", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--version", action="version", version=f"rqloop {__version__}")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in VERB_MODES:
        p = sub.add_parser(verb, help=f"modes: {', '.join(VERB_MODES[verb])}")
        p.add_argument("--config", required=True, help="JSON config path, or preset:<name>")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output prefix for <out>.csv and <out>.report.json")
        p.add_argument("--runs", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("presets", help="list bundled configs or print one")
    p.add_argument("name", nargs="?")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "presets":
            if args.name is None:
                print("\n".join(cfgmod.PRESETS))
            else:
                print(json.dumps(cfgmod.load_preset(args.name), indent=2))
            return EXIT_OK
        doc = cfgmod.load_config(args.config)
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        doc = cfgmod.apply_overrides(doc, Overrides(args.seed, args.runs, args.horizon, args.threads, args.out))
        text, report = execute(args.verb, doc)
        write_outputs(doc["out"], text, report)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RQLoopError, ArithmeticError, ValueError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {doc['out']}.csv and {doc['out']}.report.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
