"""Command line entry point: ``hpfrac <subcommand> --config run.yaml --out DIR``.

Exit codes: 0 success, 2 invalid configuration (field-level diagnostics),
3 numerical failure (assembly, quadrature or solver diagnostics).  Errors
are printed to stderr as JSON and also written to ``DIR/error.json``.
"""

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np
import yaml

from . import __version__
from .assembly import AssemblyError, assemble_system, dump_system
from .interpolation import PATCH_COLUMNS, patch_study
from .kernel import KernelError, KernelParams
from .mesh import MeshError, mesh_report, preset_mesh
from .pairs import QuadConfig, QuadratureError
from .solve import (REPORT_COLUMNS, EnergyCheckError, SolveError, StudyConfig, convergence_study,
                    energy_value, q_of_L, report_rows, resolve_preset, solve, solve_level)
from .space import HpSpace, SpaceError

SUBCOMMANDS = ("mesh-report", "patch-study", "assemble-check", "solve", "converge")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "polygon": "square",
    "s": 0.5,
    "sigma": 0.5,
    "L_list": [1, 2, 3],
    "q_rule": "L",
    "beta": None,
    "ref_offset": 2,
    "symmetry": True,
    "quadrature": {},
}
QUAD_KEYS = ("gauss_order", "sing_order", "grading_levels", "aniso_split", "admissibility", "grading_ratio")


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(f"{p['field']}: {p['error']}" for p in problems))
        self.problems = problems


def load_config(path):
    """Parse a YAML config file (or an empty config when ``path`` is None)."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError([{"field": "config", "error": str(err)}])
    except yaml.YAMLError as err:
        raise ConfigError([{"field": "config", "error": f"not valid structured text: {err}"}])
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError([{"field": "config", "error": "top level must be a mapping"}])
    return data


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def resolve_config(raw, subcommand):
    """Merge defaults, validate every field and return the resolved config."""
    problems = []
    unknown = sorted(set(raw) - set(DEFAULTS))
    for k in unknown:
        problems.append({"field": k, "error": "unknown key"})
    cfg = {**DEFAULTS, **{k: v for k, v in raw.items() if k in DEFAULTS}}
    try:
        cfg["polygon"] = resolve_preset(str(cfg["polygon"]))
    except ValueError as err:
        problems.append({"field": "polygon", "error": str(err)})
    s_vals = cfg["s"] if isinstance(cfg["s"], list) else [cfg["s"]]
    if not s_vals or not all(_is_num(v) and 0 < v < 1 for v in s_vals):
        problems.append({"field": "s", "error": "must be a number (or list of numbers) in (0, 1)"})
    elif len(s_vals) > 1 and subcommand != "patch-study":
        problems.append({"field": "s", "error": "a list of values is only accepted by patch-study"})
    if not (_is_num(cfg["sigma"]) and 0 < cfg["sigma"] < 1):
        problems.append({"field": "sigma", "error": "must be a number in (0, 1)"})
    L = cfg["L_list"]
    if isinstance(L, int) and not isinstance(L, bool):
        L = [L]
    if (not isinstance(L, list) or not L or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1
                                                     for v in L) or any(b <= a for a, b in zip(L, L[1:]))):
        problems.append({"field": "L_list", "error": "must be an increasing list of positive integers"})
    else:
        cfg["L_list"] = L
        try:
            for v in L:
                q_of_L(cfg["q_rule"], v)
        except ValueError as err:
            problems.append({"field": "q_rule", "error": str(err)})
    if cfg["beta"] is not None:
        if not _is_num(cfg["beta"]):
            problems.append({"field": "beta", "error": "must be a number or null"})
        elif len(s_vals) == 1 and _is_num(s_vals[0]) and not (0.5 - s_vals[0] < cfg["beta"] < 1 - s_vals[0]):
            problems.append({"field": "beta", "error": "must lie in (1/2 - s, 1 - s)"})
    if not (isinstance(cfg["ref_offset"], int) and cfg["ref_offset"] >= 0):
        problems.append({"field": "ref_offset", "error": "must be a nonnegative integer"})
    if not isinstance(cfg["symmetry"], bool):
        problems.append({"field": "symmetry", "error": "must be true or false"})
    quad = cfg["quadrature"] or {}
    if not isinstance(quad, dict):
        problems.append({"field": "quadrature", "error": "must be a mapping"})
        quad = {}
    for k in sorted(set(quad) - set(QUAD_KEYS)):
        problems.append({"field": f"quadrature.{k}", "error": "unknown key"})
    qc_kw = {k: quad[k] for k in QUAD_KEYS if k in quad}
    try:
        qc = QuadConfig(**qc_kw)
    except (ValueError, TypeError) as err:
        problems.append({"field": "quadrature", "error": str(err)})
        qc = QuadConfig()
    if problems:
        raise ConfigError(problems)
    cfg["s"] = s_vals if subcommand == "patch-study" else float(s_vals[0])
    cfg["quadrature"] = {k: getattr(qc, k) for k in QUAD_KEYS}
    return cfg, qc


# ----------------------------------------------------------------------------
# artifacts


class Run:
    def __init__(self, args, cfg, qc):
        self.args, self.cfg, self.qc = args, cfg, qc
        self.out = args.out
        os.makedirs(self.out, exist_ok=True)

    def meta(self):
        return {"version": __version__, "seed": self.args.seed, "deterministic": self.args.deterministic,
                "threads": self.args.threads, "subcommand": self.args.subcommand, "config": self.cfg}

    def write_json(self, name, payload):
        data = {**self.meta(), **payload}
        with open(os.path.join(self.out, name), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def write_csv(self, name, columns, rows):
        buf = io.StringIO()
        buf.write("# hpfrac " + __version__ + " " + json.dumps(self.meta(), sort_keys=True,
                                                                default=_json_default) + "\n")
        w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            if self.args.deterministic and "wallclock_s" in r:
                r = {**r, "wallclock_s": ""}
            w.writerow(r)
        with open(os.path.join(self.out, name), "w", newline="") as fh:
            fh.write(buf.getvalue())


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def cmd_mesh_report(run):
    reports = []
    for L in run.cfg["L_list"]:
        mesh = preset_mesh(run.cfg["polygon"], run.cfg["sigma"], L)
        reports.append({"L": L, **mesh_report(mesh), "mesh": mesh.to_dict()})
    run.write_json("mesh_report.json", {"reports": reports})
    return reports


def cmd_patch_study(run):
    qs = run.cfg["L_list"]
    rows = patch_study(s_values=tuple(run.cfg["s"]), sigma=run.cfg["sigma"], qs=qs, beta=run.cfg["beta"])
    run.write_csv("patch_study.csv", PATCH_COLUMNS, rows)
    run.write_json("patch_study.json", {"rows": rows})
    return rows


def _one(x):
    return np.ones(len(x))


def cmd_assemble_check(run):
    rng = np.random.default_rng(run.args.seed)
    results = []
    for L in run.cfg["L_list"]:
        q = q_of_L(run.cfg["q_rule"], L)
        mesh = preset_mesh(run.cfg["polygon"], run.cfg["sigma"], L)
        space = HpSpace(mesh, q)
        t0 = time.perf_counter()
        sysm = assemble_system(space, KernelParams(run.cfg["s"]), _one, run.qc, symmetry=False,
                               threads=run.args.threads)
        A = sysm.A
        dense = A.to_dense()
        asym = float(np.abs(dense - dense.T).max())
        c, info = solve(A, sysm.b, return_info=True)
        e = energy_value(c, sysm.b, A)
        v = rng.standard_normal((20, A.N))
        quad_forms = [float(x @ A.matvec(x)) for x in v]
        row = {"L": L, "q": q, "N": A.N, "max_asymmetry": asym, "solver": info.method,
               "galerkin_residual": info.residual, "energy": e,
               "energy_identity_gap": abs(float(c @ A.matvec(c)) - e) / abs(e),
               "min_random_quadratic_form": min(quad_forms),
               "assembly_s": None if run.args.deterministic else time.perf_counter() - t0,
               "stats": vars(sysm.stats)}
        if A.N <= 4000:
            row["min_eigenvalue"] = float(np.linalg.eigvalsh(dense)[0])
        if run.args.dump:
            path = os.path.join(run.out, f"system_L{L}_q{q}.bin")
            dump_system(path, A, sysm.b, run.cfg["s"], run.cfg["sigma"], L, q)
            row["dump"] = os.path.basename(path)
        results.append(row)
    run.write_json("assemble_check.json", {"results": results})
    return results


SOLVE_COLUMNS = ["L", "q", "N", "energy", "solver", "wallclock_s"]


def cmd_solve(run):
    rows = []
    for L in run.cfg["L_list"]:
        q = q_of_L(run.cfg["q_rule"], L)
        row, *_ = solve_level(run.cfg["polygon"], run.cfg["s"], run.cfg["sigma"], L, q, run.qc,
                              symmetry=run.cfg["symmetry"], threads=run.args.threads)
        rows.append({"L": row.L, "q": row.q, "N": row.N, "energy": repr(row.energy), "solver": row.method,
                     "wallclock_s": None if run.args.deterministic else f"{row.wallclock_s:.3f}"})
    run.write_csv("solve.csv", SOLVE_COLUMNS, rows)
    run.write_json("solve.json", {"rows": rows})
    return rows


def cmd_converge(run):
    sc = StudyConfig(polygon=run.cfg["polygon"], s=run.cfg["s"], sigma=run.cfg["sigma"],
                     levels=run.cfg["L_list"], q_rule=run.cfg["q_rule"], beta=run.cfg["beta"],
                     quadrature=run.qc, ref_offset=run.cfg["ref_offset"] if len(run.cfg["L_list"]) > 1 else 0,
                     symmetry=run.cfg["symmetry"], threads=run.args.threads)
    report = convergence_study(sc)
    rows = report_rows(report)
    run.write_csv("converge.csv", REPORT_COLUMNS, rows)
    payload = report.to_dict()
    if run.args.deterministic:
        for r in payload["rows"] + ([payload["reference"]] if payload["reference"] else []):
            r["wallclock_s"] = None
    run.write_json("converge.json", {"report": payload})
    return report


COMMANDS = {"mesh-report": cmd_mesh_report, "patch-study": cmd_patch_study,
            "assemble-check": cmd_assemble_check, "solve": cmd_solve, "converge": cmd_converge}

NUMERIC_ERRORS = (SolveError, EnergyCheckError, AssemblyError, QuadratureError, KernelError, MeshError,
                  SpaceError, np.linalg.LinAlgError)


def build_parser():
    p = argparse.ArgumentParser(prog="hpfrac", description="hp-FEM for the integral fractional Laplacian")
    p.add_argument("--version", action="version", version=f"hpfrac {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML config file (defaults are used for missing keys)")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="assembly worker threads")
        sp.add_argument("--deterministic", action="store_true",
                        help="fixed reduction order and no timings in artifacts")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
        if name == "assemble-check":
            sp.add_argument("--dump", action="store_true", help="write binary matrix/rhs dumps")
    return p


def _fail(out, code, payload):
    payload = {"version": __version__, "exit_code": code, **payload}
    text = json.dumps(payload, sort_keys=True, default=_json_default)
    print(text, file=sys.stderr)
    if out:
        try:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "error.json"), "w") as fh:
                fh.write(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail(args.out, EXIT_CONFIG, {"error": "config", "problems": [
            {"field": "--threads", "error": "must be at least 1"}]})
    try:
        cfg, qc = resolve_config(load_config(args.config), args.subcommand)
    except ConfigError as err:
        return _fail(args.out, EXIT_CONFIG, {"error": "config", "problems": err.problems})
    try:
        run = Run(args, cfg, qc)
    except OSError as err:
        return _fail(None, EXIT_CONFIG, {"error": "config", "problems": [{"field": "--out", "error": str(err)}]})
    np.random.seed(args.seed)
    try:
        COMMANDS[args.subcommand](run)
    except NUMERIC_ERRORS as err:
        diag = {"error": "numerical", "type": type(err).__name__, "message": str(err), "config": cfg}
        if getattr(err, "pivot", None) is not None:
            diag["pivot"] = err.pivot
        return _fail(args.out, EXIT_NUMERIC, diag)
    print(json.dumps({"status": "ok", "subcommand": args.subcommand, "out": args.out, "config": cfg},
                     sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
