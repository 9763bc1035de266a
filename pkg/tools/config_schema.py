#!/usr/bin/env python3
"""
Experiment config schema and validator.
Configs are TOML or JSON documents naming one registered recipe.
"""

from typing import Any, Dict, List

RECIPES = (
    "disk_nonuniqueness",
    "sign_data",
    "semigroup_decay",
    "comparison_pairs",
    "plap_convergence",
    "stability_sequence",
    "extinction_probe",
    "verify",
)

GRID_KINDS = ("square", "disk")

_TOPLEVEL_KEYS = {"recipe", "seed", "grid", "solver", "plap", "evolution", "params", "output"}
_GRID_KEYS = {"kind", "n", "size"}
_SOLVER_KEYS = {"max_iters", "tolerance", "div_tolerance", "step_primal", "step_dual",
                "seed", "check_every", "power_iters"}
_PLAP_KEYS = {"p", "epsilon", "newton_tol", "max_newton", "armijo", "backtrack", "min_step"}
_EVOLUTION_KEYS = {"tau", "t_end", "f", "source"}
_OUTPUT_KEYS = {"svg", "workers"}
_F_KINDS = ("zero", "linear", "table")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_table(cfg: Dict[str, Any], name: str, allowed: set, errors: List[str]) -> Dict[str, Any]:
    section = cfg.get(name, {})
    if not isinstance(section, dict):
        errors.append(f"{name} must be a table")
        return {}
    extra = set(section) - allowed
    if extra:
        errors.append(f"unknown keys in {name}: {sorted(extra)}")
    return section


def validate_config_dict(cfg: Dict[str, Any]) -> List[str]:
    """Validate an experiment config.

    Returns a list of human-readable error strings.
    Empty list means valid.
    """
    errors: List[str] = []

    if not isinstance(cfg, dict):
        return ["config must be a table (dict)"]

    extra_top = set(cfg) - _TOPLEVEL_KEYS
    if extra_top:
        errors.append(f"unknown top-level keys: {sorted(extra_top)}")

    # -- recipe --
    if "recipe" not in cfg:
        errors.append("missing required key: recipe")
    elif cfg["recipe"] not in RECIPES:
        errors.append(f"unknown recipe {cfg['recipe']!r}; valid: {', '.join(RECIPES)}")

    if "seed" in cfg and (not _is_int(cfg["seed"]) or cfg["seed"] < 0):
        errors.append("seed must be a nonnegative integer")

    # -- grid --
    if "grid" not in cfg:
        errors.append("missing required key: grid.kind")
        errors.append("missing required key: grid.n")
    else:
        grid = _check_table(cfg, "grid", _GRID_KEYS, errors)
        if "kind" not in grid:
            errors.append("missing required key: grid.kind")
        elif grid["kind"] not in GRID_KINDS:
            errors.append(f"grid.kind must be one of {GRID_KINDS}, got {grid['kind']!r}")
        if "n" not in grid:
            errors.append("missing required key: grid.n")
        elif not _is_int(grid["n"]) or grid["n"] < 2:
            errors.append("grid.n must be an integer >= 2")
        if "size" in grid and (not _is_real(grid["size"]) or grid["size"] <= 0):
            errors.append("grid.size must be a positive real")

    # -- solver / plap --
    solver = _check_table(cfg, "solver", _SOLVER_KEYS, errors)
    for key in ("max_iters", "check_every", "power_iters"):
        if key in solver and (not _is_int(solver[key]) or solver[key] < 1):
            errors.append(f"solver.{key} must be a positive integer")
    for key in ("tolerance", "div_tolerance"):
        if key in solver and (not _is_real(solver[key]) or solver[key] < 0):
            errors.append(f"solver.{key} must be a nonnegative real")

    plap = _check_table(cfg, "plap", _PLAP_KEYS, errors)
    if "p" in plap and (not _is_real(plap["p"]) or not (1.0 < plap["p"] <= 2.0)):
        errors.append("plap.p must lie in (1, 2]")
    if "epsilon" in plap and (not _is_real(plap["epsilon"]) or plap["epsilon"] <= 0):
        errors.append("plap.epsilon must be a positive real")

    # -- evolution --
    evo = _check_table(cfg, "evolution", _EVOLUTION_KEYS, errors)
    for key in ("tau", "t_end"):
        if key in evo and (not _is_real(evo[key]) or evo[key] <= 0):
            errors.append(f"evolution.{key} must be a positive real")
    if "f" in evo:
        f = evo["f"]
        if not isinstance(f, dict):
            errors.append("evolution.f must be a table")
        elif f.get("kind", "zero") not in _F_KINDS:
            errors.append(f"evolution.f.kind must be one of {_F_KINDS}")

    # -- params / output --
    if "params" in cfg and not isinstance(cfg["params"], dict):
        errors.append("params must be a table")
    output = _check_table(cfg, "output", _OUTPUT_KEYS, errors)
    if "svg" in output and not isinstance(output["svg"], bool):
        errors.append("output.svg must be a boolean")
    if "workers" in output and (not _is_int(output["workers"]) or output["workers"] < 1):
        errors.append("output.workers must be a positive integer")

    return errors
