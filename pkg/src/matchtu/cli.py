"""Command-line entry point: ``matchtu {solve,identify,fit,se,simulate}``.

Each command reads a JSON config (``--config``) and/or flags; flags win.
The merged config is validated against a per-command JSON schema that
rejects unknown keys. Outputs are tidy CSV files plus ``summary.json``;
only the summary carries run-specific values (wall time), everything else
is a deterministic function of the config.

Exit codes: 0 success, 2 input error, 3 data-validity error,
4 non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__
from . import io
from .equilibrium import SolverOptions, solve
from .errors import ConvergenceError, DimensionError, InputError, MatchingError, ZeroCellError
from .estimation import FitOptions, asymptotic_covariance, fit, sample_frequencies
from .identification import choo_siow, split_utilities_logit
from .model import BasisSystem, ParameterVector, SampleCounts, TypeSpace
from .simulation import (
    SimConfig,
    equilibrium_frequencies,
    sample_from_frequencies,
    simulate_micro_market,
)

log = logging.getLogger("matchtu")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4
PATH_KEYS = ("phi", "basis", "margins", "counts", "params", "out")

_pos = {"type": "number", "exclusiveMinimum": 0}
_COMMON = {
    "schema_version": {"const": SCHEMA_VERSION},
    "out": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "tol": _pos,
    "max_iter": {"type": "integer", "minimum": 1},
}
_SURPLUS = {
    "phi": {"type": "string"},
    "basis": {"type": "string"},
    "lambda": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    "margins": {"type": "string"},
}
_PROPS = {
    "solve": {**_SURPLUS, "algorithm": {"enum": ["ipfp", "gradient"]}, "step_size": _pos},
    "identify": {"counts": {"type": "string"}, "pseudo_count": {"type": "number", "minimum": 0}},
    "fit": {
        "counts": {"type": "string"},
        "basis": {"type": "string"},
        "estimator": {"enum": ["moment", "mle", "max-score"]},
        "algorithm": {"enum": ["gradient", "coordinate-hybrid"]},
        "pseudo_count": {"type": "number", "minimum": 0},
        "n_starts": {"type": "integer", "minimum": 1},
        "step_size": {"type": "number", "minimum": 0},
    },
    "se": {
        "counts": {"type": "string"},
        "basis": {"type": "string"},
        "params": {"type": "string"},
        "pseudo_count": {"type": "number", "minimum": 0},
    },
    "simulate": {
        **_SURPLUS,
        "mode": {"enum": ["households", "exact", "micro"]},
        "n_households": {"type": "integer", "minimum": 0},
    },
}
_REQUIRED = {
    "solve": ["margins"],
    "identify": ["counts"],
    "fit": ["counts", "basis"],
    "se": ["counts", "basis", "params"],
    "simulate": ["margins"],
}


def config_schema(command: str) -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": {**_COMMON, **_PROPS[command]},
        "required": _REQUIRED[command],
        "additionalProperties": False,
    }


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def _surplus(cfg: dict, types: TypeSpace | None) -> tuple[np.ndarray, TypeSpace, BasisSystem | None]:
    """Phi from a matrix file, or from basis + lambda; reordered to ``types`` when given."""
    if "phi" in cfg:
        if "basis" in cfg or "lambda" in cfg:
            raise InputError("give either phi or basis + lambda, not both")
        phi, ptypes = io.read_matrix(cfg["phi"])
        basis = None
    elif "basis" in cfg and "lambda" in cfg:
        basis, ptypes = io.read_basis(cfg["basis"])
        lam = np.asarray(cfg["lambda"], dtype=float)
        if lam.size != basis.K:
            raise InputError(f"lambda has {lam.size} entries but the basis has K={basis.K}")
        phi = basis.surplus(lam)
    else:
        raise InputError("the surplus needs either phi or basis + lambda")
    if types is not None:
        phi = io.align_matrix(phi, ptypes, types)
        if basis is not None:
            basis = io.align_basis(basis, ptypes, types)
        ptypes = types
    return phi, ptypes, basis


def _counts_and_basis(cfg: dict) -> tuple[SampleCounts, BasisSystem, TypeSpace]:
    sample = io.read_counts(cfg["counts"])
    basis, btypes = io.read_basis(cfg["basis"])
    basis = io.align_basis(basis, btypes, sample.types)
    return sample, basis, sample.types


def _param_rows(alpha: ParameterVector, basis: BasisSystem, types: TypeSpace, se=None):
    names = [("lambda", n) for n in basis.k_names]
    names += [("u", s) for s in types.x_labels[: alpha.u.size]]
    names += [("v", s) for s in types.y_labels[: alpha.v.size]]
    values = alpha.as_vector()
    rows = []
    for i, (block, name) in enumerate(names):
        err = "" if se is None else io.format_number(se[i])
        rows.append((block, name, io.format_number(values[i]), err))
    return rows


def _read_params(path, basis: BasisSystem, types: TypeSpace) -> ParameterVector:
    header, rows = io.read_table(path)
    if tuple(header[:3]) != ("block", "name", "value"):
        raise InputError("parameter file must start with columns block,name,value", path, 1)
    blocks: dict[str, dict[str, float]] = {"lambda": {}, "u": {}, "v": {}}
    for line, row in enumerate(rows, start=2):
        if len(row) < 3 or row[0] not in blocks:
            raise InputError("malformed parameter row", path, line)
        try:
            blocks[row[0]][row[1]] = float(row[2])
        except ValueError:
            raise InputError(f"value {row[2]!r} is not a number", path, line) from None

    def pick(block, names):
        missing = [n for n in names if n not in blocks[block]]
        if missing:
            raise InputError(f"parameter file lacks {block} entries {missing}", path)
        return [blocks[block][n] for n in names]

    return ParameterVector(pick("lambda", basis.k_names), pick("u", types.x_labels),
                           pick("v", types.y_labels))


def _write_covariance(path, cov, rows):
    names = [f"{b}:{n}" for b, n, *_ in rows]
    io.write_table(path, ["parameter"] + names,
                   ([names[i]] + [float(c) for c in cov[i]] for i in range(len(names))))


def _labelled(exc: ZeroCellError, types: TypeSpace | None) -> ZeroCellError:
    """Translate 1-based (x, y) cells, 0 meaning single, into type labels."""
    if types is None:
        return exc
    xs = ("0",) + types.x_labels
    ys = ("0",) + types.y_labels
    return ZeroCellError([(xs[x], ys[y]) for x, y in exc.cells])


def _utilities_rows(u, v, types: TypeSpace):
    rows = [("x", s, io.format_number(val)) for s, val in zip(types.x_labels, u)]
    rows += [("y", s, io.format_number(val)) for s, val in zip(types.y_labels, v)]
    return rows


# ---------------------------------------------------------------- commands

def run_solve(cfg: dict, out: Path) -> dict:
    margins, types = io.read_margins(cfg["margins"])
    phi, types, _ = _surplus(cfg, types)
    opts = SolverOptions(tol=cfg.get("tol", 1e-12), max_iter=cfg.get("max_iter", 100_000),
                         step_size=cfg.get("step_size"), seed=cfg.get("seed", 0))
    sol = solve(phi, margins, cfg.get("algorithm", "ipfp"), opts)
    io.write_counts(out / "mu.csv", sol.mu, types)
    io.write_table(out / "utilities.csv", ("side", "type", "value"), _utilities_rows(sol.u, sol.v, types))
    return {
        "algorithm": cfg.get("algorithm", "ipfp"),
        "total_surplus": sol.total_surplus,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "converged": sol.converged,
    }


def run_identify(cfg: dict, out: Path) -> dict:
    sample = io.read_counts(cfg["counts"])
    pc = cfg.get("pseudo_count", 0.0)
    mu = sample.with_pseudo_count(pc).mu_hat if pc else sample.mu_hat
    try:
        phi = choo_siow(mu)
    except ZeroCellError as exc:
        raise _labelled(exc, sample.types) from None
    dec = split_utilities_logit(mu)
    io.write_matrix(out / "phi.csv", phi, sample.types)
    io.write_matrix(out / "U.csv", dec.U, sample.types)
    io.write_matrix(out / "V.csv", dec.V, sample.types)
    return {"pseudo_count": pc, "n_households": sample.n_households}


def run_fit(cfg: dict, out: Path) -> dict:
    sample, basis, types = _counts_and_basis(cfg)
    estimator = cfg.get("estimator", "moment")
    if estimator == "moment":
        algorithm = cfg.get("algorithm", "gradient")
    elif "algorithm" in cfg:
        raise InputError("algorithm applies only to the moment estimator")
    else:
        algorithm = estimator
    opts = FitOptions(
        algorithm=algorithm,
        tol=cfg.get("tol", 1e-10),
        max_iter=cfg.get("max_iter", 200_000),
        step_size=cfg.get("step_size"),
        seed=cfg.get("seed", 0),
        pseudo_count=cfg.get("pseudo_count", 0.0),
        n_starts=cfg.get("n_starts", 8),
    )
    try:
        report = fit(sample, basis, opts)
    except ZeroCellError as exc:
        raise _labelled(exc, types) from None
    rows = _param_rows(report.alpha_hat, basis, types, report.std_errors)
    io.write_table(out / "parameters.csv", ("block", "name", "value", "std_error"), rows)
    if report.mu_fit is not None:
        io.write_counts(out / "mu_fit.csv", report.mu_fit, types)
    if report.covariance is not None:
        _write_covariance(out / "covariance.csv", report.covariance, rows)
    io.write_table(out / "trace.csv", ("step", "value"), ((i, float(v)) for i, v in enumerate(report.trace)))
    return {
        "estimator": estimator,
        "algorithm": report.algorithm,
        "objective_value": report.objective_value,
        "iterations": report.iterations,
        "converged": report.converged,
        "n_households": report.n_households,
        "lambda": report.lam,
        "diagnostics": report.diagnostics,
    }


def run_se(cfg: dict, out: Path) -> dict:
    sample, basis, types = _counts_and_basis(cfg)
    alpha = _read_params(cfg["params"], basis, types)
    sample, pi_hat = sample_frequencies(sample, basis, cfg.get("pseudo_count", 0.0))
    cov, se = asymptotic_covariance(alpha, sample, basis, pi_hat)
    rows = _param_rows(alpha, basis, types, se)
    io.write_table(out / "se.csv", ("block", "name", "value", "std_error"), rows)
    _write_covariance(out / "covariance.csv", cov, rows)
    return {"n_households": sample.n_households, "n_parameters": len(rows)}


def run_simulate(cfg: dict, out: Path) -> dict:
    margins, types = io.read_margins(cfg["margins"])
    phi, types, _ = _surplus(cfg, types)
    mode = cfg.get("mode", "households")
    seed = cfg.get("seed", 0)
    result: dict[str, Any] = {"mode": mode, "seed": seed}
    if mode == "micro":
        men, women = margins.n, margins.m
        if np.any(men != np.round(men)) or np.any(women != np.round(women)):
            raise InputError("micro mode needs integer head counts in the margins file")
        sol, counts = simulate_micro_market(phi, men.astype(int), women.astype(int), SimConfig(seed=seed))
        counts = SampleCounts(counts.mu_hat, types=types)
        result["primal_value"] = sol.primal_value
        result["dual_value"] = sol.dual_value
    else:
        n_h = cfg.get("n_households", 10_000)
        pi = equilibrium_frequencies(phi, margins)
        if mode == "exact":
            counts = SampleCounts.from_frequencies(pi, n_h, types=types)
        else:
            counts = SampleCounts(sample_from_frequencies(pi, n_h, seed).mu_hat, types=types)
        result["n_households"] = n_h
    io.write_counts(out / "counts.csv", counts)
    return result


COMMANDS = {
    "solve": run_solve,
    "identify": run_identify,
    "fit": run_fit,
    "se": run_se,
    "simulate": run_simulate,
}


# ---------------------------------------------------------------- argument handling

def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchtu", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int, dest="max_iter")
        p.add_argument("--algorithm")
        p.add_argument("--estimator")
        p.add_argument("--seed", type=int)
        p.add_argument("--pseudo-count", type=float, nargs="?", const=0.5, dest="pseudo_count",
                       help="add this many households to every category (default 0.5)")
        p.add_argument("--phi")
        p.add_argument("--basis")
        p.add_argument("--lambda", type=_float_list, dest="lambda")
        p.add_argument("--margins")
        p.add_argument("--counts")
        p.add_argument("--params")
        p.add_argument("--mode")
        p.add_argument("--n-households", type=int, dest="n_households")
    return parser


def _load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError("config file not found", p) from None
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON ({exc.msg})", p, exc.lineno) from None
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object", p)
    return cfg, p.parent


def merged_config(args: argparse.Namespace) -> tuple[dict, dict]:
    """(config as given, with flags applied) and the same with resolved paths."""
    cfg, base = _load_config(args.config)
    cfg.setdefault("schema_version", SCHEMA_VERSION)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("config", "command", "verbose") and v is not None}
    resolved_paths = {k: str(base / cfg[k]) for k in PATH_KEYS if k in cfg and k not in overrides}
    cfg.update(overrides)
    try:
        jsonschema.validate(cfg, config_schema(args.command))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "config"
        raise InputError(f"{where}: {exc.message}") from None
    resolved = {**cfg, **resolved_paths}
    return cfg, resolved


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg, resolved = merged_config(args)
        out = Path(resolved.get("out", "out"))
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        results = COMMANDS[args.command](resolved, out)
        summary = {
            "schema_version": SCHEMA_VERSION,
            "command": args.command,
            "package_version": __version__,
            "config": cfg,
            "config_hash": config_hash(cfg),
            "wall_time_s": time.perf_counter() - start,
            "results": results,
        }
        (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
        return EXIT_OK
    except (InputError, DimensionError, ValueError) as exc:
        if isinstance(exc, MatchingError) and not isinstance(exc, (InputError, DimensionError)):
            log.error("%s", exc)
            return EXIT_DATA
        log.error("%s", exc)
        return EXIT_INPUT
    except (ConvergenceError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
