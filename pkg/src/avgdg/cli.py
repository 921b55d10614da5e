"""Command-line front end: mesh, solve, study and probe runs.

Configuration comes from an optional flat ``key=value`` file
(``--config path``) overridden by ``--key value`` flags. Every output file
starts with the effective configuration and the package version.

Exit codes: 0 all declared checks pass, 1 check or solver failure,
2 configuration error.
"""

import argparse
import difflib
import inspect
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import analysis
from .averaged import OracleBudgetError
from .dg_space import BrokenSpace
from .forms import CoercivityError, PenaltySpec, assemble_oipg, assemble_rhs, assemble_sipg
from .mesh import MeshError, build_structured_unit_square, load_mesh, mesh_metrics
from .mollifier import Mollifier
from .solver import SolverError, cg_solve

COMMANDS = ("mesh", "solve", "study", "probe")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit status 2."""


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text):
    return [int(p) for p in str(text).replace(" ", "").split(",") if p]


# key -> (parser, default, help)
SCHEMA = {
    "command": (str, None, "one of mesh, solve, study, probe"),
    "name": (str, None, "probe name for probe runs; output basename (default: the command)"),
    "output_dir": (str, ".", "directory for output files"),
    "problem": (str, "sin2", "manufactured problem: sin2, bubble, zero"),
    "method": (str, "oipg", "sipg or oipg"),
    "k": (int, 1, "polynomial degree"),
    "s": (float, 1.6, "averaging / overpenalty exponent"),
    "sigma0": (float, 10.0, "classical penalty constant (sipg)"),
    "n": (int, 8, "cells per side for mesh and solve"),
    "mesh_file": (str, "", "mesh file for solve (overrides n)"),
    "mesh_sizes": (_int_list, [8, 16, 32], "cells per side for a study"),
    "tube_refinement": (int, 4, "cells across a face tube in averaged norms"),
    "averaged": (_bool, True, "report the averaged H1 error"),
    "min_eoc": (float, 0.9, "EOC every checked study metric must reach"),
    "check_metrics": (str, "averaged_h1_error,broken_h1_error", "metrics checked by min_eoc"),
    "tol": (float, 1e-10, "CG relative residual tolerance"),
    "max_iter": (int, 20000, "CG iteration limit"),
    "seed": (int, 0, "random seed"),
    "threads": (int, 1, "assembly threads"),
    "dump_matrix": (_bool, False, "write <name>.mtx"),
}


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def lines(self):
        out = [f"version={__version__}"]
        for key in SCHEMA:
            v = self.values[key]
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            out.append(f"config.{key}={'' if v is None else v}")
        return out


def _normalise_key(key):
    return key.strip().lstrip("-").replace("-", "_")


def _check_key(key):
    if key not in SCHEMA:
        near = difflib.get_close_matches(key, SCHEMA, n=1, cutoff=0.6)
        hint = f"; did you mean {near[0]!r}?" if near else ""
        raise ConfigError(f"unknown configuration key {key!r}{hint}")


def parse_config_text(text):
    """Flat key=value lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = _normalise_key(key)
        _check_key(key)
        out[key] = value.strip()
    return out


def parse_config(text="", flags=()):
    """Merge file content and ``--key value`` flags into a validated RunConfig."""
    raw = parse_config_text(text)
    flags = list(flags)
    i = 0
    while i < len(flags):
        tok = flags[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}; flags take the form --key value")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(flags):
                raise ConfigError(f"flag {tok!r} needs a value")
            key, value = tok[2:], flags[i + 1]
            i += 2
        key = _normalise_key(key)
        _check_key(key)
        raw[key] = value
    values = {}
    for key, (conv, default, _) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        else:
            values[key] = list(default) if isinstance(default, list) else default
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.command is None:
        raise ConfigError("missing required key 'command' (mesh, solve, study or probe)")
    if cfg.command not in COMMANDS:
        raise ConfigError(f"'command' must be one of {', '.join(COMMANDS)}, got {cfg.command!r}")
    if cfg.method not in ("sipg", "oipg"):
        raise ConfigError(f"'method' must be sipg or oipg, got {cfg.method!r}")
    if cfg.method == "oipg" and not cfg.s > 1.5:
        raise ConfigError(
            f"'s' = {cfg.s} is not allowed with method oipg: the overpenalised form "
            "needs the restriction s > 1.5"
        )
    if not cfg.s > 1:
        raise ConfigError(f"'s' must exceed 1, got {cfg.s}")
    if cfg.k < 0:
        raise ConfigError("'k' must be non-negative")
    if cfg.n < 1:
        raise ConfigError("'n' must be positive")
    sizes = cfg.mesh_sizes
    if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])) or min(sizes) < 1:
        raise ConfigError("'mesh_sizes' must be a non-empty increasing list of positive integers")
    if cfg.command == "study" and len(sizes) < 3:
        raise ConfigError("'mesh_sizes' needs at least 3 entries for a study")
    if cfg.problem not in analysis.PROBLEMS:
        raise ConfigError(f"'problem' must be one of {sorted(analysis.PROBLEMS)}")
    if cfg.command == "probe":
        if cfg.name is None:
            raise ConfigError(f"probe runs need 'name', one of {', '.join(analysis.PROBES)}")
        if cfg.name not in analysis.PROBES:
            near = difflib.get_close_matches(cfg.name, analysis.PROBES, n=1)
            hint = f"; did you mean {near[0]!r}?" if near else ""
            raise ConfigError(f"'name' {cfg.name!r} is not a probe{hint}")
    elif cfg.name is None:
        cfg.values["name"] = cfg.command
    if cfg.threads < 1:
        raise ConfigError("'threads' must be at least 1")
    if not 0 < cfg.tol < 1:
        raise ConfigError("'tol' must lie in (0, 1)")
    metrics = [m for m in cfg.check_metrics.split(",") if m]
    known = {"averaged_h1_error", "broken_h1_error", "l2_error"}
    bad = [m for m in metrics if m not in known]
    if bad:
        raise ConfigError(f"'check_metrics' has unknown metric {bad[0]!r}")


# ------------------------------------------------------------------ commands


class _Outputs:
    def __init__(self, cfg):
        self.cfg = cfg
        os.makedirs(cfg.output_dir, exist_ok=True)
        self.base = os.path.join(cfg.output_dir, cfg.name)

    def write(self, ext, text, comment="#"):
        head = "".join(f"{comment} {line}\n" for line in self.cfg.lines())
        with open(f"{self.base}.{ext}", "w", encoding="utf-8") as fh:
            fh.write(head + text)

    def summary(self, pairs):
        body = "".join(f"{k}={_summary_value(v)}\n" for k, v in pairs)
        with open(f"{self.base}.summary", "w", encoding="utf-8") as fh:
            fh.write("".join(f"{line}\n" for line in self.cfg.lines()) + body)


def _summary_value(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v).replace("\n", " ")


def _table(rows):
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0]) if rows else []
    w.writerow(cols)
    for r in rows:
        w.writerow([analysis._fmt(r[c]) for c in cols])
    return buf.getvalue()


def _load_mesh(cfg):
    if cfg.mesh_file:
        with open(cfg.mesh_file, encoding="utf-8") as fh:
            return load_mesh(fh.read())
    return build_structured_unit_square(cfg.n)


def cmd_mesh(cfg, out):
    mesh = _load_mesh(cfg)
    metrics = mesh_metrics(mesh)
    out.write("mesh", mesh.to_text())
    out.write("csv", _table([metrics]))
    out.summary([("status", "ok")] + list(metrics.items()))
    return 0


def _assemble(cfg, space):
    if cfg.method == "oipg":
        return assemble_oipg(space, cfg.s, threads=cfg.threads)
    return assemble_sipg(space, PenaltySpec(kind="classical", sigma0=cfg.sigma0),
                         threads=cfg.threads)


def cmd_solve(cfg, out):
    problem = analysis.get_problem(cfg.problem)
    mesh = _load_mesh(cfg)
    space = BrokenSpace(mesh, cfg.k)
    A = _assemble(cfg, space)
    if cfg.dump_matrix:
        out.write("mtx", A.to_coordinate_text(), comment="%")
    b = assemble_rhs(space, problem.g)
    pairs = [("dofs", space.total_dofs), ("h", mesh.h_global)]
    try:
        x, rep = cg_solve(A, b, cfg.tol, cfg.max_iter)
    except SolverError as exc:
        pairs += [("status", "solver_failure"), ("error", str(exc))]
        if exc.report is not None:
            pairs += [("iterations", exc.report.iterations),
                      ("final_relative_residual", exc.report.final_relative_residual)]
        out.summary(pairs)
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    from .dg_space import DgFunction

    fn = DgFunction(space, x, provenance=cfg.method)
    residual = float(np.max(np.abs(A @ x - b)))
    pairs += [
        ("status", "ok"),
        ("iterations", rep.iterations),
        ("final_relative_residual", rep.final_relative_residual),
        ("condition_estimate", rep.condition_estimate),
        ("galerkin_residual_inf", residual),
        ("broken_h1_error", analysis.broken_h1_error(problem.grad, fn)),
        ("l2_error", analysis.l2_error(problem.u, fn)),
    ]
    if cfg.averaged:
        m = Mollifier(mesh.h_global, cfg.s)
        pairs.append(("averaged_h1_error",
                      analysis.averaged_h1_error(problem.grad, fn, m, cfg.tube_refinement)))
    out.write("csv", fn.to_csv(n=cfg.n, k=cfg.k, seed=cfg.seed))
    out.summary(pairs)
    return 0


def cmd_study(cfg, out):
    rep = analysis.run_convergence_study(
        cfg.problem, cfg.method, cfg.s, cfg.k, cfg.mesh_sizes, cfg.sigma0, cfg.tol,
        cfg.max_iter, cfg.tube_refinement, cfg.threads, cfg.averaged,
    )
    out.write("csv", rep.to_csv())
    pairs = []
    ok = not rep.failure and len(rep.rows) == len(cfg.mesh_sizes)
    checked = [m for m in cfg.check_metrics.split(",") if m and m in rep.eoc]
    for metric, rates in rep.eoc.items():
        for i, r in enumerate(rates):
            pairs.append((f"eoc.{metric}.{i}", float(r)))
        if metric in checked and rates:
            passed = bool(min(rates) >= cfg.min_eoc)
            pairs.append((f"check.{metric}", passed))
            ok &= passed
    if rep.failure:
        pairs.append(("failure", rep.failure))
        print(f"study aborted: {rep.failure}", file=sys.stderr)
    pairs = [("status", "pass" if ok else "fail"), ("rows", len(rep.rows))] + pairs
    out.summary(pairs)
    return 0 if ok else 1


def cmd_probe(cfg, out):
    fn = analysis.PROBES[cfg.name]
    params = inspect.signature(fn).parameters
    kwargs = {key: cfg.values[key] for key in ("s", "seed", "threads", "k", "problem")
              if key in params}
    res = fn(**kwargs)
    out.write("csv", res.to_csv())
    out.summary([("status", "pass" if res.passed else "fail")]
                + [tuple(line.split("=", 1)) for line in res.summary_lines()])
    return 0 if res.passed else 1


HANDLERS = {"mesh": cmd_mesh, "solve": cmd_solve, "study": cmd_study, "probe": cmd_probe}


def build_parser():
    p = argparse.ArgumentParser(
        prog="avgdg",
        description="Interior penalty dG runs with local averaging.",
        epilog="Further settings: " + ", ".join(f"--{k.replace('_', '-')}" for k in SCHEMA
                                                 if k != "command"),
    )
    p.add_argument("command", nargs="?", help="mesh, solve, study or probe")
    p.add_argument("--config", help="flat key=value configuration file")
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    ns, rest = parser.parse_known_args(argv)
    try:
        text = ""
        if ns.config:
            try:
                with open(ns.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from None
        if ns.command is not None:
            rest = ["--command", ns.command] + rest
        cfg = parse_config(text, rest)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = _Outputs(cfg)
    try:
        return HANDLERS[cfg.command](cfg, out)
    except (OracleBudgetError, MeshError, CoercivityError, SolverError) as exc:
        out.summary([("status", "error"), ("error", str(exc))])
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
