"""Command-line runner driven by a strict JSON configuration.

    odoheom run CONFIG.json        propagate and write trajectory.csv + manifest.json
    odoheom decompose CONFIG.json  print the bath decomposition and its report

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 capacity (hierarchy or memory budget).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bath as _bath
from . import decomp as _decomp
from . import dynamics as _dyn
from . import hierarchy as _hier
from . import observables as _obs
from . import propagator as _prop
from .errors import (CapacityExceeded, ConfigError, DimensionBudget, EigenSolveFailure,
                     IllConditioned, InvalidDensityMatrix, ModelUnsupported, NonFiniteState,
                     PairingRequired, QuadratureFailure, ShapeMismatch, StepLimitExceeded,
                     TraceDriftExceeded, UnpairedTerms, UnstableRoots)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CAPACITY = 0, 2, 3, 4

MODELS = {
    "drude_lorentz": (_bath.DrudeLorentz, ("lam", "gamma")),
    "brownian_oscillator": (_bath.BrownianOscillator, ("lam", "w0", "zeta")),
    "ohmic_exponential": (_bath.OhmicExponential, ("alpha", "s", "wc")),
    "discrete": (_bath.DiscreteModes, ("couplings", "frequencies")),
}
TOP_KEYS = {"system", "bath", "decomposition", "hierarchy", "truncation", "propagation",
            "observables", "output"}
SCALAR_OBSERVABLES = {"trace", "purity"}


# -- strict parsing helpers ------------------------------------------------------

def _section(cfg, key, allowed, required=(), path=None):
    path = path or key
    val = cfg.get(key)
    if not isinstance(val, dict):
        raise ConfigError(path, "must be an object")
    for k in val:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}", "unknown key")
    for k in required:
        if k not in val:
            raise ConfigError(f"{path}.{k}", "is required")
    return val


def _number(val, path, positive=False, allow_inf=False, integer=False, minimum=None):
    if allow_inf and val in ("inf", "Infinity"):
        return math.inf
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(path, "must be a number")
    if integer and (not isinstance(val, int) and not float(val).is_integer()):
        raise ConfigError(path, "must be an integer")
    x = int(val) if integer else float(val)
    if not math.isfinite(x):
        raise ConfigError(path, "must be finite")
    if positive and not x > 0:
        raise ConfigError(path, "must be > 0")
    if minimum is not None and x < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return x


def _complex_matrix(val, d, path):
    """Row-major complex matrix: d*d [re, im] pairs, flat or nested by row."""
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "must be an array of [re, im] pairs") from None
    if arr.shape == (d, d, 2):
        arr = arr.reshape(d * d, 2)
    if arr.shape != (d * d, 2):
        raise ConfigError(path, f"must hold {d * d} [re, im] pairs in row-major order")
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(d, d)


# -- resolved configuration -------------------------------------------------------

@dataclass
class RunConfig:
    raw: dict
    system: _dyn.SystemSpec
    rho0: np.ndarray
    model: object
    state: _bath.BathThermalState
    method: str
    terms: int
    horizon: float
    samples_file: str
    side: str
    tier: int
    tier_section: str
    budget: int
    quadratic: bool
    propagation: _prop.PropagationConfig
    observables: list
    out_dir: Path


def parse_config(cfg: dict, base: Path = Path("."), need_run=True) -> RunConfig:
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    for k in cfg:
        if k not in TOP_KEYS:
            raise ConfigError(k, "unknown key")
    if "hierarchy" in cfg and "truncation" in cfg:
        raise ConfigError("truncation", "give either hierarchy or truncation, not both")

    # bath
    b = _section(cfg, "bath", {"model", "params", "beta"}, ("model", "beta"))
    tag = b["model"]
    if tag not in MODELS:
        raise ConfigError("bath.model", f"unknown model {tag!r}; expected one of {sorted(MODELS)}")
    cls, names = MODELS[tag]
    params = b.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("bath.params", "must be an object")
    for k in params:
        if k not in names:
            raise ConfigError(f"bath.params.{k}", "unknown key")
    for k in names:
        if k not in params:
            raise ConfigError(f"bath.params.{k}", "is required")
    try:
        if tag == "discrete":
            model = cls(tuple(params["couplings"]), tuple(params["frequencies"]))
        else:
            model = cls(*(_number(params[k], f"bath.params.{k}") for k in names))
    except (TypeError, ValueError) as exc:
        raise ConfigError("bath.params", str(exc)) from None
    beta = _number(b["beta"], "bath.beta", positive=True, allow_inf=True)
    state = _bath.BathThermalState(beta)

    # decomposition
    dsec = _section(cfg, "decomposition", {"method", "terms", "horizon", "samples_file"},
                    ("method",))
    method = dsec["method"]
    if method not in ("matsubara", "pade", "prony", "discrete"):
        raise ConfigError("decomposition.method", f"unknown method {method!r}")
    if method == "discrete":
        terms = int(_number(dsec.get("terms", 0), "decomposition.terms", integer=True, minimum=0))
        if tag != "discrete" and terms < 1:
            raise ConfigError("decomposition.terms", "discretizing a continuous bath needs terms >= 1")
    else:
        if "terms" not in dsec:
            raise ConfigError("decomposition.terms", "is required")
        terms = int(_number(dsec["terms"], "decomposition.terms", integer=True,
                            minimum=0 if method == "matsubara" else 1))
        if tag == "discrete":
            raise ConfigError("decomposition.method", "discrete baths use method 'discrete'")
    horizon = dsec.get("horizon")
    if horizon is not None:
        horizon = _number(horizon, "decomposition.horizon", positive=True)
    samples_file = dsec.get("samples_file")
    if samples_file is not None:
        if method != "prony":
            raise ConfigError("decomposition.samples_file", "only used with method 'prony'")
        samples_file = str((base / samples_file).resolve())

    system = rho0 = None
    side = tier_section = None
    tier = budget = 0
    quadratic = False
    prop = None
    observables = []
    out_dir = None
    if need_run:
        s = _section(cfg, "system", {"dim", "h_s", "couplings", "rho0"}, ("dim", "h_s", "couplings"))
        d = int(_number(s["dim"], "system.dim", integer=True, minimum=1))
        H = _complex_matrix(s["h_s"], d, "system.h_s")
        c = _section(s, "couplings", {"q", "q0", "q1", "q2", "alpha0", "alpha1", "alpha2"},
                     path="system.couplings")
        ops = {k: _complex_matrix(c[k], d, f"system.couplings.{k}")
               for k in ("q", "q0", "q1", "q2") if k in c}
        alphas = {k: _number(c[k], f"system.couplings.{k}") for k in ("alpha0", "alpha1", "alpha2")
                  if k in c}
        quadratic = any(k in c for k in ("q0", "q1", "q2", "alpha0", "alpha1", "alpha2"))
        if "q" in ops and quadratic and "q1" in ops:
            raise ConfigError("system.couplings.q", "give q or q1, not both")
        if not quadratic and "q" not in ops:
            raise ConfigError("system.couplings.q", "is required")
        try:
            system = _dyn.SystemSpec(H=H, Q=ops.get("q"), Q0=ops.get("q0"), Q1=ops.get("q1"),
                                     Q2=ops.get("q2"), alpha0=alphas.get("alpha0", 0.0),
                                     alpha1=alphas.get("alpha1", 1.0),
                                     alpha2=alphas.get("alpha2", 0.0))
        except ValueError as exc:
            raise ConfigError("system", str(exc)) from None
        if system.alpha2 and system.Q2 is None:
            raise ConfigError("system.couplings.q2", "is required when alpha2 is non-zero")
        if system.alpha0 and system.Q0 is None:
            raise ConfigError("system.couplings.q0", "is required when alpha0 is non-zero")
        if system.alpha1 and system.Q1 is None:
            raise ConfigError("system.couplings.q1", "is required when alpha1 is non-zero")
        if "rho0" in s:
            rho0 = _complex_matrix(s["rho0"], d, "system.rho0")
        else:
            rho0 = np.zeros((d, d), dtype=complex)
            rho0[0, 0] = 1.0
        try:
            rho0 = _dyn.validate_density_matrix(rho0, d)
        except InvalidDensityMatrix as exc:
            raise ConfigError("system.rho0", str(exc)) from None

        tier_section = "hierarchy" if "hierarchy" in cfg else "truncation"
        h = _section(cfg, tier_section, {"side", "tier", "memory_budget_bytes"}, ("side", "tier"))
        side = h["side"]
        if side not in ("single", "double"):
            raise ConfigError(f"{tier_section}.side", "must be 'single' or 'double'")
        tier = int(_number(h["tier"], f"{tier_section}.tier", integer=True, minimum=0))
        budget = int(_number(h.get("memory_budget_bytes", _hier.DEFAULT_BUDGET_BYTES),
                             f"{tier_section}.memory_budget_bytes", integer=True, positive=True))
        if quadratic and side != "single":
            raise ConfigError(f"{tier_section}.side", "quadratic coupling needs the single-side hierarchy")

        p = _section(cfg, "propagation", {"method", "dt", "rtol", "atol", "t_final", "snapshots",
                                          "max_steps"}, ("method", "t_final"))
        pm = p["method"]
        if pm not in ("rk4", "rk45"):
            raise ConfigError("propagation.method", "must be 'rk4' or 'rk45'")
        t_final = _number(p["t_final"], "propagation.t_final", positive=True)
        snaps = int(_number(p.get("snapshots", 101), "propagation.snapshots", integer=True, minimum=2))
        kw = {"method": pm, "t_final": t_final,
              "snapshot_times": tuple(np.linspace(0.0, t_final, snaps))}
        if pm == "rk4":
            if "dt" not in p:
                raise ConfigError("propagation.dt", "is required for rk4")
            kw["dt"] = _number(p["dt"], "propagation.dt", positive=True)
        else:
            for k in ("rtol", "atol"):
                if k in p:
                    kw[k] = _number(p[k], f"propagation.{k}", positive=True)
        if "max_steps" in p:
            kw["max_steps"] = int(_number(p["max_steps"], "propagation.max_steps", integer=True,
                                          minimum=1))
        prop = _prop.PropagationConfig(**kw)

        obs = cfg.get("observables", ["populations", "coherences"])
        if not isinstance(obs, list) or not obs:
            raise ConfigError("observables", "must be a non-empty list of names")
        for i, name in enumerate(obs):
            observables.extend(_expand_observable(name, d, side, quadratic, f"observables[{i}]"))

        o = _section(cfg, "output", {"dir"}, ("dir",))
        if not isinstance(o["dir"], str) or not o["dir"]:
            raise ConfigError("output.dir", "must be a non-empty string")
        out_dir = (base / o["dir"]).resolve()

    return RunConfig(cfg, system, rho0, model, state, method, terms, horizon, samples_file,
                     side, tier, tier_section, budget, quadratic, prop, observables, out_dir)


def _expand_observable(name, d, side, quadratic, path):
    if not isinstance(name, str):
        raise ConfigError(path, "observable names are strings")
    if name == "populations":
        return [f"rho_{i}{i}" for i in range(d)]
    if name == "coherences":
        return [f"rho_{i}{j}" for i in range(d) for j in range(i + 1, d)]
    if name in SCALAR_OBSERVABLES:
        return [name]
    if name.startswith("rho_") and len(name) == 6 and name[4:].isdigit():
        i, j = int(name[4]), int(name[5])
        if i < d and j < d:
            return [name]
    if name in ("f_q", "f2"):
        if side != "single":
            raise ConfigError(path, f"{name} needs the single-side hierarchy")
        return [name]
    raise ConfigError(path, f"unknown observable {name!r}")


# -- building blocks ------------------------------------------------------------------

def _load_samples(path):
    data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if data.shape[1] != 3:
        raise ConfigError("decomposition.samples_file", "expects columns t, re, im")
    return data[:, 0], data[:, 1] + 1j * data[:, 2]


def build_decomposition(rc: RunConfig, keep_zero=False):
    kw = {} if rc.horizon is None else {"T": rc.horizon}
    if rc.method == "discrete":
        modes = rc.model
        if not isinstance(modes, _bath.DiscreteModes):
            modes = _bath.discretize_bath(rc.model, rc.state, rc.terms)
        return _decomp.discrete_to_decomposition(modes, rc.state, keep_zero=keep_zero)
    if rc.method == "matsubara":
        return _decomp.matsubara_decomposition(rc.model, rc.state, rc.terms, **kw)
    if rc.method == "pade":
        return _decomp.pade_decomposition(rc.model, rc.state, rc.terms, **kw)
    if rc.samples_file is not None:
        t, c = _load_samples(rc.samples_file)
        return _decomp.prony_fit(t, c, rc.terms)
    return _decomp.prony_decomposition(rc.model, rc.state, rc.terms, **kw)


def build_generator(rc: RunConfig, dec):
    space = _hier.enumerate_hierarchy(dec.K, rc.tier, rc.side, d=rc.system.d,
                                      budget_bytes=rc.budget)
    if rc.side == "double":
        if dec.origin == "discrete":
            return _dyn.build_discrete_double(space, rc.system, dec)
        return _dyn.build_continuous_double(space, rc.system, dec)
    dec = _decomp.pairing_map(dec)
    rescale = dec.origin != "discrete"
    if rc.quadratic:
        return _dyn.build_quadratic(space, rc.system, dec, rescale=rescale)
    return _dyn.build_single_side(space, rc.system, dec, rescale=rescale)


def _observable_values(name, st, rc, dec):
    rho = st.block(0)
    if name == "trace":
        return np.trace(rho).real
    if name == "purity":
        return np.einsum("ij,ji->", rho, rho).real
    if name == "f_q":
        return _obs.correlated_moment(st, rc.system.Q1 if rc.system.Q1 is not None else rc.system.Q, 1)
    if name == "f2":
        return _obs.correlated_moment(st, np.eye(st.d), 2, dec)
    return rho[int(name[4]), int(name[5])]


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(path, times, names, rows):
    header = ["t"]
    for n in names:
        header += [n] if n in SCALAR_OBSERVABLES else [f"{n}_re", f"{n}_im"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for t, vals in zip(times, rows):
            line = [_fmt(t)]
            for n, v in zip(names, vals):
                line += [_fmt(v)] if n in SCALAR_OBSERVABLES else [_fmt(v.real), _fmt(v.imag)]
            w.writerow(line)


def _json_ready(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    return obj


# -- commands ---------------------------------------------------------------------------

def _load(path):
    p = Path(path)
    try:
        with open(p, encoding="utf-8") as fh:
            return json.load(fh), p.parent
    except FileNotFoundError:
        raise ConfigError("<file>", f"{path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None


def cmd_run(path):
    started = time.perf_counter()
    cfg, base = _load(path)
    rc = parse_config(cfg, base)
    keep_zero = rc.side == "single" and rc.state.zero_temperature
    dec = build_decomposition(rc, keep_zero=keep_zero)
    gen = build_generator(rc, dec)
    if rc.side == "single":
        dec = _decomp.pairing_map(dec)
    rows = []

    def observe(t, st):
        rows.append([_observable_values(n, st, rc, dec) for n in rc.observables])

    traj = _prop.propagate(gen.initial_state(rc.rho0), gen, rc.propagation, observer=observe)
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(rc.out_dir / "trajectory.csv", traj.times, rc.observables, rows)
    manifest = {
        "config": _json_ready(cfg),
        "decomposition": dec.to_dict(),
        "hierarchy": {"side": rc.side, "K": gen.space.K, "tier": rc.tier,
                      "count": gen.space.count, "generator": gen.kind,
                      "rescaled": gen.scale is not None},
        "telemetry": traj.telemetry,
        "max_trace_drift": traj.max_trace_drift,
        "max_hermiticity_defect": traj.max_hermiticity_defect,
        "wall_time": time.perf_counter() - started,
    }
    with open(rc.out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return EXIT_OK


def cmd_decompose(path, out=None):
    cfg, base = _load(path)
    rc = parse_config(cfg, base, need_run=False)
    dec = build_decomposition(rc)
    json.dump(dec.to_dict(), out or sys.stdout, indent=2)
    (out or sys.stdout).write("\n")
    return EXIT_OK


def _exit_code(exc):
    if isinstance(exc, (ConfigError, ModelUnsupported, UnpairedTerms, PairingRequired)):
        return EXIT_CONFIG
    if isinstance(exc, (CapacityExceeded, DimensionBudget)):
        return EXIT_CAPACITY
    if isinstance(exc, (NonFiniteState, StepLimitExceeded, TraceDriftExceeded, QuadratureFailure,
                        IllConditioned, UnstableRoots, EigenSolveFailure, ShapeMismatch)):
        return EXIT_NUMERICAL
    return None


def main(argv=None):
    parser = argparse.ArgumentParser(prog="odoheom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "propagate a configured hierarchy"),
                        ("decompose", "print the bath decomposition as JSON")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="path to the JSON configuration")
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config)
        return cmd_decompose(args.config)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
