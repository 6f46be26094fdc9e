"""Command-line driver.

Every subcommand reads a JSON payload (``--config``), applies environment
overrides (``ROUGHGIBBS_<FIELD>``) and command-line flags, validates the
result against a schema that rejects unknown fields, runs a library
pipeline and writes its outputs together with ``manifest.json`` to
``--out``.

Exit codes: 0 success, 1 numerical gate failure, 2 invalid configuration,
3 input/output failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .brownian import PathLawSpec, sample_batch
from .cluster import (Partition1D, enumerate_clusters, estimate_activities, estimate_activity, Chain, Cluster,
                      log_z_series, random_polymer_instance, regrouping_identity, tree_graph_bound_check,
                      ursell, write_activity_csv, z_cluster_sum)
from .fields import Constant, LinearCoordinate
from .gibbs import GibbsSpec, sample_mu_T
from .io import fmt, write_block, write_path_csv
from .potentials import (EnergyConfig, GaussExp, HarmonicRef, gap_decay_fit, mehler_pi, omega_quadrature,
                         pair_energies, w_energy)
from .rng import as_stream
from .rough import GridPath, Scheme, chen_defect_max, lift, linear_integral_closed_form, rough_integral

ENV_PREFIX = "ROUGHGIBBS_"
EXIT_OK, EXIT_GATE, EXIT_SCHEMA, EXIT_IO = 0, 1, 2, 3

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_LEVEL = {"type": "integer", "minimum": 1, "maximum": 16}
_POTENTIAL = {
    "A": {"type": "number", "minimum": 0},
    "sigma": {"type": "number", "exclusiveMinimum": 0},
    "ell": {"type": "number", "exclusiveMinimum": 0},
}
_COMMON = {
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "workers": _POS_INT,
    "out": {"type": "string"},
}

# name -> (payload properties, defaults)
COMMANDS = {
    "sample": ({
        "law": {"enum": ["bm", "bridge", "ou", "ou_bridge"]},
        "interval": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "level": _LEVEL, "dim": _POS_INT, "n_paths": _POS_INT,
        "start": {"type": ["array", "null"], "items": _NUM},
        "end": {"type": ["array", "null"], "items": _NUM},
    }, {"law": "bm", "interval": [0.0, 1.0], "level": 10, "dim": 1, "n_paths": 10, "start": None, "end": None}),
    "lift-check": ({
        "n_paths": _POS_INT, "level": _LEVEL, "dim": _POS_INT,
        "scheme": {"enum": [s.value for s in Scheme]}, "tol": _NUM,
    }, {"n_paths": 5, "level": 8, "dim": 2, "scheme": "ito", "tol": 1e-12}),
    "integrate": ({
        "n_paths": _POS_INT, "level": _LEVEL, "dim": _POS_INT,
        "field": {"enum": ["constant", "linear"]}, "i": {"type": "integer", "minimum": 0},
        "j": {"type": "integer", "minimum": 0}, "tol": _NUM,
    }, {"n_paths": 10, "level": 10, "dim": 2, "field": "linear", "i": 0, "j": 1, "tol": 1e-12}),
    "energy": ({
        "T": {"type": "number", "exclusiveMinimum": 0}, "level": _LEVEL, "n_paths": _POS_INT,
        "N": {"type": "array", "items": {"type": "integer", "minimum": 2}}, "tol": _NUM, **_POTENTIAL,
    }, {"T": 2.0, "level": 7, "n_paths": 20, "N": [2, 4], "tol": 1e-10, "A": 1.0, "sigma": 1.0, "ell": 0.5}),
    "gibbs": ({
        "T": {"type": "number", "exclusiveMinimum": 0}, "level": _LEVEL, "lambda": _NUM,
        "lambda_star": {"type": "number", "exclusiveMinimum": 0},
        "n_paths": {"type": "integer", "minimum": 100},
        "reference": {"enum": ["nu_stationary", "chi"]}, "N": {"type": ["integer", "null"], "minimum": 2},
        **_POTENTIAL,
    }, {"T": 1.0, "level": 6, "lambda": 0.05, "lambda_star": 1.0, "n_paths": 2000, "reference": "nu_stationary",
        "N": None, "A": 1.0, "sigma": 1.0, "ell": 0.5}),
    "cluster": ({
        "N": {"type": "integer", "minimum": 2, "maximum": 8}, "b": {"type": "number", "exclusiveMinimum": 0},
        "lambda": _NUM, "lambda_star": {"type": "number", "exclusiveMinimum": 0},
        "max_weight": {"type": ["integer", "null"], "minimum": 2, "maximum": 6},
        "n_samples": _POS_INT, "segment_level": {"type": "integer", "minimum": 1, "maximum": 8},
        "check": {"enum": ["none", "z-identity"]}, "gate_se": _NUM, **_POTENTIAL,
    }, {"N": 4, "b": 1.0, "lambda": 0.05, "lambda_star": 1.0, "max_weight": None, "n_samples": 20000,
        "segment_level": 4, "check": "none", "gate_se": 3.0, "A": 1.0, "sigma": 1.0, "ell": 0.5}),
    "diag": ({
        "suite": {"enum": ["chen", "mehler", "regrouping", "polymer", "tree-graph", "loose-end"]},
        "n": {"type": ["integer", "null"], "minimum": 1},
    }, {"suite": "chen", "n": None}),
}


class ConfigError(Exception):
    pass


def schema_for(command: str) -> dict:
    props, _ = COMMANDS[command]
    return {"type": "object", "additionalProperties": False, "properties": {**_COMMON, **props}}


def _parse_env(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(command: str, config_file=None, cli: dict | None = None, environ=None) -> dict:
    """Merge defaults, the config file, environment overrides and flags, then validate."""
    props, defaults = COMMANDS[command]
    cfg = {"seed": 0, "workers": 1, "out": "out", **defaults}
    if config_file:
        try:
            with open(config_file) as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        cmd = loaded.pop("command", command)
        if cmd != command:
            raise ConfigError(f"config is for {cmd!r}, not {command!r}")
        cfg.update(loaded)
    environ = os.environ if environ is None else environ
    for key in list(_COMMON) + list(props):
        env = ENV_PREFIX + key.upper().replace("-", "_")
        if env in environ:
            cfg[key] = _parse_env(environ[env])
    for k, v in (cli or {}).items():
        if v is not None:
            cfg[k] = v
    try:
        jsonschema.validate(cfg, schema_for(command))
    except jsonschema.ValidationError as exc:
        raise ConfigError(exc.message) from exc
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"roughgibbs": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _potential(cfg) -> GaussExp:
    return GaussExp(cfg["A"], cfg["sigma"], cfg["ell"], 1)


# ---------------------------------------------------------------------------
# pipelines: each returns (list of written file names, gate passed)


def run_sample(cfg, out: Path):
    spec = PathLawSpec(cfg["law"], tuple(cfg["interval"]), cfg["level"], cfg["dim"],
                       None if cfg["start"] is None else tuple(cfg["start"]),
                       None if cfg["end"] is None else tuple(cfg["end"]))
    vals = sample_batch(spec, cfg["n_paths"], as_stream(cfg["seed"]).generator())
    write_block(vals, spec.interval, spec.level, out / "paths.bin")
    write_path_csv(GridPath(spec.interval, spec.level, vals[0]), out / "path_0.csv")
    return ["paths.bin", "path_0.csv"], True


def _bm_paths(cfg, n_paths):
    spec = PathLawSpec("bm", (0.0, 1.0), cfg["level"], cfg["dim"])
    vals = sample_batch(spec, n_paths, as_stream(cfg["seed"]).generator())
    return [GridPath(spec.interval, spec.level, v) for v in vals]


def run_lift_check(cfg, out: Path):
    rows = []
    for k, path in enumerate(_bm_paths(cfg, cfg["n_paths"])):
        rows.append((k, chen_defect_max(lift(path, cfg["scheme"]), relative=True)))
    _write_csv(out / "chen.csv", ["path", "max_relative_defect"], rows)
    worst = max(r[1] for r in rows)
    _write_json(out / "summary.json", {"max_relative_defect": worst, "tol": cfg["tol"]})
    return ["chen.csv", "summary.json"], worst <= cfg["tol"]


def run_integrate(cfg, out: Path):
    d = cfg["dim"]
    if max(cfg["i"], cfg["j"]) >= d:
        raise ConfigError("coordinate indices must be below dim")
    rows = []
    ok = True
    for k, path in enumerate(_bm_paths(cfg, cfg["n_paths"])):
        rp = lift(path)
        if cfg["field"] == "constant":
            c = np.arange(1.0, d + 1.0)
            got = rough_integral(rp, Constant(c))
            expected = float(c @ (path.values[-1] - path.values[0]))
        else:
            got = rough_integral(rp, LinearCoordinate(cfg["i"], cfg["j"], d))
            expected = linear_integral_closed_form(rp, cfg["i"], cfg["j"])
        err = abs(got - expected)
        ok &= err <= cfg["tol"] * max(1.0, abs(expected))
        rows.append((k, got, expected, err))
    _write_csv(out / "integrate.csv", ["path", "integral", "closed_form", "abs_error"], rows)
    return ["integrate.csv"], bool(ok)


def run_energy(cfg, out: Path):
    W = _potential(cfg)
    level = cfg["level"]
    for N in cfg["N"]:
        if N % 2 or (2 ** level) % N:
            raise ConfigError("each N must be even and divide 2**level")
    spec = PathLawSpec("ou", (-cfg["T"], cfg["T"]), level, 1)
    vals = sample_batch(spec, cfg["n_paths"], as_stream(cfg["seed"]).generator())
    rows = []
    ok = True
    for k, v in enumerate(vals):
        rp = lift(GridPath(spec.interval, level, v))
        wt = w_energy(rp, W)
        ok &= wt >= 0
        for N in cfg["N"]:
            total = float(sum(pair_energies(rp, W, N).values()))
            err = abs(total - wt)
            ok &= err <= cfg["tol"] * max(1.0, abs(wt))
            rows.append((k, N, wt, total, err))
    _write_csv(out / "energy.csv", ["path", "N", "W_T", "pair_sum", "abs_error"], rows)
    return ["energy.csv"], bool(ok)


def run_gibbs(cfg, out: Path):
    try:
        EnergyConfig(cfg["lambda"], cfg["lambda_star"])
        spec = GibbsSpec(cfg["T"], cfg["level"], cfg["lambda"], _potential(cfg), HarmonicRef(1),
                         cfg["reference"], None, cfg["N"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ens = sample_mu_T(spec, cfg["n_paths"], as_stream(cfg["seed"]), workers=cfg["workers"])
    mid = len(spec.times) // 2
    observables = {
        "x0_squared": lambda v, t: v[:, mid, 0] ** 2,
        "mean_square": lambda v, t: np.mean(v[:, :, 0] ** 2, axis=1),
        "W_T": lambda v, t: ens.extras["W_T"],
    }
    rows = []
    for name, F in observables.items():
        m, se = ens.expect(F)
        rows.append((name, float(m), float(se)))
    _write_csv(out / "expectations.csv", ["observable", "mean", "se"], rows)
    _write_json(out / "summary.json", ens.summary())
    return ["expectations.csv", "summary.json"], not ens.diverged


def run_cluster(cfg, out: Path):
    try:
        EnergyConfig(cfg["lambda"], cfg["lambda_star"])
        part = Partition1D.from_b(cfg["N"], cfg["b"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    mw = cfg["max_weight"] if cfg["max_weight"] is not None else min(cfg["N"], 6)
    clusters = enumerate_clusters(part, mw)
    with open(out / "clusters.json", "w") as fh:
        json.dump([c.to_dict() for c in clusters], fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    tab = estimate_activities(part, clusters, cfg["lambda"], _potential(cfg), cfg["n_samples"],
                              as_stream(cfg["seed"]), level=cfg["segment_level"], workers=cfg["workers"])
    write_activity_csv(tab, out / "activities.csv")
    z = z_cluster_sum(clusters, tab, max_terms=0)
    zd, zd_se = tab.extras["z_direct"], tab.extras["z_direct_se"]
    pooled = float(np.hypot(z.se, zd_se))
    summary = {"N": cfg["N"], "b": cfg["b"], "lambda": cfg["lambda"], "n_clusters": len(clusters),
               "max_weight": mw, "z_cluster": z.value, "z_cluster_se": z.se, "z_direct": zd,
               "z_direct_se": zd_se, "pooled_se": pooled, "difference": z.value - zd}
    ok = True
    if cfg["check"] == "z-identity":
        complete = mw >= cfg["N"]
        ok = complete and abs(z.value - zd) <= cfg["gate_se"] * pooled
        summary["z_identity_pass"] = bool(ok)
        summary["exhaustive"] = bool(complete)
    _write_json(out / "z.json", summary)
    return ["clusters.json", "activities.csv", "z.json"], ok


def _diag_chen(cfg, n):
    rows = []
    for k, path in enumerate(_bm_paths({"level": 8, "dim": 2, "seed": cfg["seed"]}, n or 5)):
        d = chen_defect_max(lift(path), relative=True)
        rows.append((k, d, d <= 1e-12))
    return ["path", "max_relative_defect", "pass"], rows


def _diag_mehler(cfg, n):
    ext = HarmonicRef(1)
    z, w = omega_quadrature(80)
    rows = []
    for b in (0.5, 1.0, 2.0, 4.0):
        for x in (-2.0, 0.0, 1.5):
            err = abs(float(np.sum(w * mehler_pi(ext, b, np.full_like(z, x), z))) - 1.0)
            rows.append((f"normalization b={b} x={x}", err, err <= 1e-8))
    rate, _ = gap_decay_fit(ext)
    rows.append(("gap_rate", float(rate), 0.9 <= rate <= 1.1))
    return ["check", "value", "pass"], rows


def _diag_regrouping(cfg, n):
    g = as_stream(cfg["seed"]).generator()
    rows = []
    for k in range(n or 200):
        N = int(g.integers(2, 5))
        f = {(i, j): float(g.uniform(-1, 1)) for i in range(N) for j in range(i + 1, N)}
        gg = g.uniform(-1, 1, N)
        prod, direct, comps = regrouping_identity(N, f, gg)
        err = max(abs(prod - direct), abs(prod - comps))
        rows.append((k, N, err, err <= 1e-12))
    return ["draw", "N", "abs_error", "pass"], rows


def _diag_polymer(cfg, n):
    g = as_stream(cfg["seed"]).generator()
    rows = []
    for k in range(n or 100):
        masks, K = random_polymer_instance(g)
        zs = z_cluster_sum(masks, K, max_terms=0).value
        err = abs(float(np.exp(log_z_series(masks, K, 6))) - zs)
        rows.append((f"instance {k}", err, err <= 1e-4))
    fixtures = [(ursell([[1]]), 1.0), (ursell([[1, 0], [0, 1]]), 0.0), (ursell(np.ones((3, 3))), 2.0)]
    for name, (got, want) in zip(("ursell n=1", "ursell disjoint", "ursell triangle"), fixtures):
        rows.append((name, abs(got - want), got == want))
    return ["check", "abs_error", "pass"], rows


def _diag_tree(cfg, n):
    g = as_stream(cfg["seed"]).generator()
    rows = []
    for k in range(n or 300):
        r = int(g.integers(3, 6))
        w = np.triu(g.uniform(0, 1, (r, r)), 1)
        rep = tree_graph_bound_check(r, w + w.T)
        rows.append((k, r, rep.lhs, rep.rhs, rep.holds))
    return ["draw", "r", "lhs", "rhs", "pass"], rows


def _diag_loose(cfg, n):
    part = Partition1D.from_b(4, 1.0)
    est = estimate_activity(Cluster((), (Chain(0, 1),)), part, 0.05, GaussExp(1.0, 1.0, 0.5, 1), n or 10000,
                            as_stream(cfg["seed"]), level=3)
    return ["K", "se", "pass"], [(est.K, est.se, abs(est.K) <= 2 * est.se)]


_SUITES = {"chen": _diag_chen, "mehler": _diag_mehler, "regrouping": _diag_regrouping,
           "polymer": _diag_polymer, "tree-graph": _diag_tree, "loose-end": _diag_loose}


def run_diag(cfg, out: Path):
    header, rows = _SUITES[cfg["suite"]](cfg, cfg["n"])
    ok = all(bool(r[-1]) for r in rows)
    rows = [r[:-1] + (str(bool(r[-1])).lower(),) for r in rows]
    name = f"diag_{cfg['suite']}.csv"
    _write_csv(out / name, header, rows)
    return [name], ok


RUNNERS = {"sample": run_sample, "lift-check": run_lift_check, "integrate": run_integrate, "energy": run_energy,
           "gibbs": run_gibbs, "cluster": run_cluster, "diag": run_diag}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON payload for the subcommand")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output directory")
    parser = argparse.ArgumentParser(prog="roughgibbs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (props, _) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common])
        for key, schema in props.items():
            flag = "--" + key.replace("_", "-")
            types = schema.get("type")
            if types == "array" or (isinstance(types, list) and "array" in types):
                item = float if schema.get("items", {}).get("type") == "number" else int
                p.add_argument(flag, dest=key, type=item, nargs="+")
            elif "enum" in schema:
                p.add_argument(flag, dest=key, choices=schema["enum"])
            elif types == "integer" or (isinstance(types, list) and "integer" in types):
                p.add_argument(flag, dest=key, type=int)
            else:
                p.add_argument(flag, dest=key, type=float)
    return parser


def run(command: str, cfg: dict) -> int:
    """Execute a validated configuration; always writes ``manifest.json``."""
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO
    t0 = time.perf_counter()
    status, files, message = EXIT_OK, [], ""
    try:
        files, ok = RUNNERS[command](cfg, out)
        if not ok:
            status, message = EXIT_GATE, "numerical gate failed"
    except ConfigError as exc:
        status, message = EXIT_SCHEMA, str(exc)
    except OSError as exc:
        status, message = EXIT_IO, str(exc)
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash({k: v for k, v in cfg.items() if k != "out"}),
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "exit_status": status,
        "message": message,
        "outputs": {f: _sha256(out / f) for f in files if (out / f).exists()},
    }
    try:
        _write_json(out / "manifest.json", manifest)
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return EXIT_IO
    if message:
        print(f"{command}: {message}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(command, args.config, flags)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    return run(command, cfg)


if __name__ == "__main__":
    sys.exit(main())
