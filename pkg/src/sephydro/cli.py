"""Command-line batch runner.

Every subcommand reads a YAML configuration (keys are checked strictly),
lets flags override it, writes its report files and a ``run-manifest.json``
into the output directory, and exits with 0 on success, 2 on a validation
error and 3 on a numerical failure.

Usage::

    sephydro estimate-d --config cfg.yaml --out runs/d
"""
import argparse
import copy
import json
import math
import os
import platform
import shutil
import sys
import time

import numpy as np
import yaml

from . import __version__
from .environment import EnvironmentLaw, save_environment
from .laws import Law
from .seeding import seed_derive  # re-exported for scripting

__all__ = ["main", "run", "validate", "load_config", "seed_derive", "DEFAULTS", "SUBCOMMANDS"]

SCHEMA_VERSION = 1
OUT_ENV = "SEPHYDRO_OUT"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

SUBCOMMANDS = ("gen-env", "estimate-d", "simulate-sep", "duality-test", "nagy-test", "hydro")

DEFAULTS = {
    "seed": 0,
    "out": None,
    "strict": False,
    "workers": 1,
    "environment": {"model": "zd_conductance", "d": 1, "L": 16, "law": {"kind": "constant", "value": 1.0}},
    "solver": {"tol": 1e-10, "preconditioner": "auto", "rank_rel": 1e-8},
    "msd": {"enabled": False, "t": 50.0, "replicas": 10000},
    "sep": {"T": 1.0, "t0": None, "density": 0.5, "snapshots": [0.5, 1.0], "cap": 1000},
    "duality": {"cases": [{"x": 2, "t": 0.7, "occupied": [0]}], "replicas": 100000},
    "nagy": {"instances": 20, "max_points": 16, "max_events": 5, "t": 1.0, "quad_tol": 1e-8},
    "hydro": {
        "eps": [0.015625, 0.0078125],
        "T": 0.5,
        "replicas": 20,
        "n_times": 64,
        "width": None,
        "D": None,
        "profile": {"kind": "step", "offset": 0.0, "high": 1.0, "low": 0.0},
        "phi": [{"kind": "bump", "r": 1.0}],
        "thresholds": [0.01, 0.05, 0.1],
    },
}

_ENV_KEYS = {
    "zd_conductance": {"model", "d", "L", "law"},
    "crystal_conductance": {"model", "preset", "L", "law"},
    "mott_ppp": {"model", "d", "L", "intensity", "energy_law", "R_max", "rate_floor"},
    "percolation_cluster": {"model", "lattice", "d", "L", "p"},
}


class ValidationError(ValueError):
    def __init__(self, diagnostics):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


def _merge(base, over, path, diags):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k in ("environment", "profile"):
            out[k] = v  # kind-specific keys, checked in validate()
        elif k not in base:
            diags.append(f"unknown key '{path}{k}'")
        elif isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{path}{k}.", diags)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the YAML file, then flag overrides; returns ``(cfg, diags)``."""
    diags = []
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            return copy.deepcopy(DEFAULTS), ["configuration must be a mapping"]
    cfg = _merge(DEFAULTS, raw, "", diags)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return cfg, diags


def _positive(diags, name, value, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0
    if integer:
        ok = ok and float(value).is_integer()
    if not ok:
        diags.append(f"{name} must be a positive {'integer' if integer else 'number'} (got {value!r})")
    return ok


def validate(cfg, command=None):
    """Diagnostics for a merged configuration; an empty list means valid.

    Pure: reads nothing and draws no random numbers.
    """
    diags = []
    env = cfg.get("environment") or {}
    model = env.get("model")
    if model not in _ENV_KEYS:
        diags.append(f"environment.model must be one of {sorted(_ENV_KEYS)}")
    else:
        for k in env:
            if k not in _ENV_KEYS[model]:
                diags.append(f"unknown key 'environment.{k}' for model {model}")
        if "L" not in env:
            diags.append("environment.L is required")
        elif _positive(diags, "environment.L", env["L"]) and model != "mott_ppp" and env["L"] < 2:
            diags.append("environment.L must be at least 2")
        if model in ("zd_conductance", "mott_ppp") and env.get("d", 1) not in (1, 2, 3):
            diags.append("environment.d must be 1, 2 or 3")
        if model in ("zd_conductance", "crystal_conductance"):
            try:
                law = Law.from_dict(env.get("law", {}))
                if not law.support_positive():
                    diags.append("conductance law must be supported in (0, inf)")
            except (ValueError, TypeError, KeyError) as exc:
                diags.append(f"environment.law: {exc}")
        if model == "percolation_cluster":
            p = env.get("p")
            if not isinstance(p, (int, float)) or not 0.0 <= p <= 1.0:
                diags.append("percolation parameter out of [0,1]")
            if env.get("lattice", "zd") not in ("zd", "hexagonal"):
                diags.append("environment.lattice must be 'zd' or 'hexagonal'")
        if model == "mott_ppp":
            _positive(diags, "environment.intensity", env.get("intensity"))
            R = env.get("R_max", 18.5)
            if isinstance(env.get("L"), (int, float)) and 2 * R >= env["L"]:
                diags.append(f"mott: 2 R_max = {2 * R} must be below L = {env['L']}")
    s = cfg["solver"]
    if not isinstance(s["tol"], (int, float)) or not 0 < s["tol"] < 1:
        diags.append("solver.tol must lie in (0, 1)")
    if s["preconditioner"] not in ("auto", "jacobi", "amg", "direct"):
        diags.append("solver.preconditioner must be auto, jacobi, amg or direct")
    _positive(diags, "workers", cfg["workers"], integer=True)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        diags.append("seed must be a nonnegative integer")
    if cfg["msd"]["enabled"]:
        _positive(diags, "msd.t", cfg["msd"]["t"])
        if not isinstance(cfg["msd"]["replicas"], int) or cfg["msd"]["replicas"] < 1000:
            diags.append("msd.replicas must be an integer >= 1000")
    sep = cfg["sep"]
    _positive(diags, "sep.T", sep["T"])
    if sep["t0"] is not None and not (isinstance(sep["t0"], (int, float)) and 0 < sep["t0"] <= sep["T"]):
        diags.append("sep.t0 must lie in (0, T]")
    if not 0.0 <= sep["density"] <= 1.0:
        diags.append("sep.density must lie in [0, 1]")
    if any(not 0 <= t <= sep["T"] for t in sep["snapshots"]):
        diags.append("sep.snapshots must lie in [0, T]")
    _positive(diags, "sep.cap", sep["cap"], integer=True)
    du = cfg["duality"]
    if not isinstance(du["replicas"], int) or du["replicas"] < 100:
        diags.append("duality.replicas must be an integer >= 100")
    for k, case in enumerate(du["cases"]):
        if set(case) - {"x", "t", "occupied"}:
            diags.append(f"duality.cases[{k}] has unknown keys {sorted(set(case) - {'x', 't', 'occupied'})}")
        if case.get("t", -1) < 0:
            diags.append(f"duality.cases[{k}].t must be nonnegative")
    na = cfg["nagy"]
    if na["max_points"] > 64:
        diags.append("nagy.max_points must be at most 64 (dense kernels)")
    if na["quad_tol"] < 1e-8:
        diags.append("nagy.quad_tol must be at least 1e-8")
    _positive(diags, "nagy.instances", na["instances"], integer=True)
    hy = cfg["hydro"]
    eps = hy["eps"]
    if not eps or any(not (isinstance(e, (int, float)) and 0 < e <= 1) for e in eps):
        diags.append("hydro.eps must be a nonempty list of numbers in (0, 1]")
    _positive(diags, "hydro.T", hy["T"])
    _positive(diags, "hydro.replicas", hy["replicas"], integer=True)
    if hy["n_times"] < 2:
        diags.append("hydro.n_times must be at least 2")
    for k, ph in enumerate(hy["phi"]):
        if ph.get("kind") not in ("bump", "plateau"):
            diags.append(f"hydro.phi[{k}].kind must be bump or plateau")
    if command == "hydro" and not diags:
        diags.extend(_hydro_support_diagnostics(cfg))
    return diags


def _phi_list(cfg, d):
    from .testfunctions import bump, plateau

    out = []
    for ph in cfg["hydro"]["phi"]:
        if ph["kind"] == "bump":
            out.append(bump(d, ph.get("r", 1.0), ph.get("amplitude", 1.0)))
        else:
            out.append(plateau(d, ph.get("ell", 1)))
    return out


def _hydro_D(cfg, d):
    D = cfg["hydro"]["D"]
    return np.eye(d) if D is None else np.atleast_2d(np.asarray(D, dtype=float))


def _hydro_support_diagnostics(cfg):
    env = cfg["environment"]
    hy = cfg["hydro"]
    d = env.get("d", 2 if env["model"] == "crystal_conductance" else 1)
    D = _hydro_D(cfg, d)
    r = max(ph.get("r", ph.get("ell", 1) + 1.0) for ph in hy["phi"])
    need = r + 6 * math.sqrt(2 * max(float(np.linalg.eigvalsh(D).max()), 0.0) * hy["T"])
    diags = []
    for e in hy["eps"]:
        L = (hy["width"] / e) if hy["width"] else env["L"]
        if need > e * L / 2:
            diags.append(f"support violation at eps={e}: r_supp + 6 sqrt(2 lambda_max T) = {need:.4g} "
                         f"> eps L / 2 = {e * L / 2:.4g}")
    return diags


# -------------------------------------------------------------------------


def _env_law(env_cfg):
    p = {k: v for k, v in env_cfg.items() if k not in ("model", "R_max")}
    if env_cfg["model"] in ("zd_conductance", "crystal_conductance"):
        p["law"] = Law.from_dict(p["law"])
    return EnvironmentLaw(env_cfg["model"], p, env_cfg.get("R_max"))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)


def _cmd_gen_env(cfg, out, manifest):
    env = _env_law(cfg["environment"]).generate(cfg["seed"])
    save_environment(env, os.path.join(out, "environment.txt"))
    manifest["outputs"].append("environment.txt")
    manifest["results"] = {"n_points": env.n_points, "n_edges": env.n_edges, "intensity": env.intensity}


def _cmd_estimate_d(cfg, out, manifest):
    from .homogenization import effective_matrix, msd_diffusivity

    env = _env_law(cfg["environment"]).generate(cfg["seed"])
    s = cfg["solver"]
    em = effective_matrix(env, tol=s["tol"], rank_rel=s["rank_rel"], preconditioner=s["preconditioner"])
    em.write_report(os.path.join(out, "d-report.json"), model=env.model_tag, seed=cfg["seed"])
    manifest["outputs"].append("d-report.json")
    manifest["results"] = {"D": em.D.tolist(), "eigenvalues": em.eigenvalues.tolist()}
    if cfg["msd"]["enabled"]:
        est = msd_diffusivity(env, cfg["msd"]["t"], cfg["msd"]["replicas"], seed=cfg["seed"],
                              strict=cfg["strict"])
        est.to_csv(os.path.join(out, "msd.csv"))
        manifest["outputs"].append("msd.csv")
        manifest["results"]["msd"] = est.D.tolist()


def _cmd_simulate_sep(cfg, out, manifest):
    from .exclusion import evolve, sample_clocks, slab_certificates, write_trajectory_csv, snapshots_from_clocks
    from .seeding import rng_for

    env = _env_law(cfg["environment"]).generate(cfg["seed"])
    sep = cfg["sep"]
    xi = (rng_for(cfg["seed"], "initial_config").random(env.n_points) < sep["density"]).astype(np.int8)
    K = sample_clocks(env, sep["T"], sep["t0"], seed=cfg["seed"])
    res = evolve(env, K, xi, sep["T"], cap=sep["cap"], return_log=True)
    snaps = snapshots_from_clocks(env, K, xi, sep["snapshots"], cap=sep["cap"])
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), res, list(zip(sep["snapshots"], snaps)))
    certs = slab_certificates(env, K.with_t0(res.t0), sep["cap"])
    manifest["outputs"].append("trajectory.csv")
    manifest["results"] = {"events": len(K), "t0": res.t0, "halvings": res.halvings,
                           "max_component": max((c.max_size for c in certs), default=1),
                           "particles": int(xi.sum())}
    manifest["decisions"]["t0"] = res.t0


def _cmd_duality(cfg, out, manifest):
    from .exclusion import duality_mc

    env = _env_law(cfg["environment"]).generate(cfg["seed"])
    rows = []
    for k, case in enumerate(cfg["duality"]["cases"]):
        xi = np.zeros(env.n_points, dtype=np.int8)
        xi[list(case.get("occupied", []))] = 1
        mean, se, kern, z = duality_mc(env, xi, case["x"], case["t"], cfg["duality"]["replicas"],
                                       seed=seed_derive(cfg["seed"], "duality", k))
        rows.append({"case": k, "x": case["x"], "t": case["t"], "mc_mean": mean, "stderr": se,
                     "kernel": kern, "z": z})
    _write_json(os.path.join(out, "duality.json"), {"schema_version": SCHEMA_VERSION, "cases": rows})
    manifest["outputs"].append("duality.json")
    manifest["results"] = {"max_abs_z": max(abs(r["z"]) for r in rows)}


def _cmd_nagy(cfg, out, manifest):
    from .environment import gen_zd_conductance
    from .exclusion import nagy_check, sample_clocks
    from .seeding import rng_for

    na = cfg["nagy"]
    rows = []
    for k in range(na["instances"]):
        rng = rng_for(cfg["seed"], "nagy", k)
        N = int(rng.integers(3, na["max_points"] + 1))
        env = gen_zd_conductance(1, N, Law.uniform(0.5, 2.0), seed=seed_derive(cfg["seed"], "conductances", k))
        # shrink T until the clock realization has at most max_events rings
        T = na["t"]
        K = sample_clocks(env, T, seed=seed_derive(cfg["seed"], "clocks", k))
        while len(K) > na["max_events"]:
            T *= 0.5
            K = sample_clocks(env, T, seed=seed_derive(cfg["seed"], "clocks", k))
        xi = (rng.random(N) < 0.5).astype(np.int8)
        x = int(rng.integers(N))
        res = nagy_check(env, K, xi, x, T, quad_tol=na["quad_tol"])
        rows.append({"instance": k, "N": N, "events": len(K), "t": T, "x": x, "residual": res})
    _write_json(os.path.join(out, "nagy.json"), {"schema_version": SCHEMA_VERSION, "instances": rows})
    manifest["outputs"].append("nagy.json")
    worst = max(r["residual"] for r in rows)
    manifest["results"] = {"max_residual": worst}
    if worst > 10 * na["quad_tol"] + 1e-10:
        raise ArithmeticError(f"pathwise identity residual {worst:.3e} above tolerance")


def _cmd_hydro(cfg, out, manifest):
    from .heat import MacroProfile
    from .hydrodynamics import hydro_experiment

    env_cfg = dict(cfg["environment"])
    hy = cfg["hydro"]
    d = env_cfg.get("d", 1)
    D = _hydro_D(cfg, d)
    prof_cfg = dict(hy["profile"])
    kind = prof_cfg.pop("kind")
    profile = MacroProfile(kind, D, prof_cfg)
    phis = _phi_list(cfg, d)
    envs = []
    for k, e in enumerate(hy["eps"]):
        c = dict(env_cfg)
        if hy["width"]:
            c["L"] = int(round(hy["width"] / e))
        envs.append(_env_law(c).generate(seed_derive(cfg["seed"], "conductances", k)))
    rep = hydro_experiment(envs, profile, hy["eps"], hy["T"], phis, hy["replicas"], seed=cfg["seed"],
                           n_times=hy["n_times"], thresholds=hy["thresholds"])
    rep.config["environment"] = env_cfg
    rep.write(out, profile)
    manifest["outputs"] += ["hydro-report.json", "deviations.csv", "profile.csv"]
    manifest["results"] = {"median_sup_deviation": rep.medians.tolist()}
    manifest["decisions"]["quad_tol"] = rep.diagnostics["quad_tol"]
    manifest["decisions"]["engine"] = rep.diagnostics["engine"]


_HANDLERS = {
    "gen-env": _cmd_gen_env,
    "estimate-d": _cmd_estimate_d,
    "simulate-sep": _cmd_simulate_sep,
    "duality-test": _cmd_duality,
    "nagy-test": _cmd_nagy,
    "hydro": _cmd_hydro,
}


def run(command, cfg, keep_partial=False):
    """Run one subcommand on a merged configuration; returns the exit code."""
    diags = validate(cfg, command)
    if diags:
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_VALIDATION
    out = cfg["out"] or os.path.join(os.environ.get(OUT_ENV, "sephydro-runs"), command)
    created = not os.path.exists(out)
    os.makedirs(out, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "versions": {"sephydro": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "outputs": [],
        "decisions": {"solver_tol": cfg["solver"]["tol"], "rank_rel": cfg["solver"]["rank_rel"],
                      "preconditioner": cfg["solver"]["preconditioner"]},
    }
    t0 = time.time()
    try:
        _HANDLERS[command](cfg, out, manifest)
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        _cleanup(out, manifest, created, keep_partial)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        _cleanup(out, manifest, created, keep_partial)
        return EXIT_VALIDATION
    manifest["wall_time_s"] = time.time() - t0
    _write_json(os.path.join(out, "run-manifest.json"), manifest)
    print(json.dumps(manifest.get("results", {}), default=float))
    return EXIT_OK


def _cleanup(out, manifest, created, keep_partial):
    if keep_partial:
        return
    if created:
        shutil.rmtree(out, ignore_errors=True)
        return
    for name in manifest["outputs"]:
        p = os.path.join(out, name)
        if os.path.exists(p):
            os.remove(p)


def _parser():
    p = argparse.ArgumentParser(prog="sephydro", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML configuration file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
        s.add_argument("--workers", type=int)
        s.add_argument("--strict", action="store_true", default=None)
        s.add_argument("--keep-partial", action="store_true")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg, diags = load_config(args.config, {"seed": args.seed, "out": args.out, "workers": args.workers,
                                               "strict": args.strict})
    except (OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if diags:
        try:
            diags += validate(cfg, args.command)
        except (KeyError, TypeError):
            pass
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_VALIDATION
    return run(args.command, cfg, keep_partial=args.keep_partial)


if __name__ == "__main__":
    sys.exit(main())
