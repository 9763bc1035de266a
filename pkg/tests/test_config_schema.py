#!/usr/bin/env python3
"""
Config Schema Gate Test: experiment config validation

Proves:
  A. A minimal valid config validates with no errors
  B. Missing recipe and grid keys are reported by name
  C. Unknown recipes, grid kinds and keys are rejected
  D. Out-of-range solver, plap, evolution and output values are rejected
  E. Every shipped recipe config under config/recipes validates

Deterministic, headless, offline (<5s).
"""

import glob
import os
import sys
import tomllib

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from tools.config_schema import RECIPES, validate_config_dict

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _valid():
    return {"recipe": "sign_data", "seed": 3, "grid": {"kind": "square", "n": 8}}


# ---------------------------------------------------------------------------
# Test A: valid
# ---------------------------------------------------------------------------

def test_a_valid_config():
    assert validate_config_dict(_valid()) == []
    cfg = _valid()
    cfg.update(solver={"tolerance": 1e-6, "max_iters": 100},
               plap={"p": 2.0, "epsilon": 1e-4},
               evolution={"tau": 0.1, "t_end": 1.0, "f": {"kind": "linear", "omega": 0.5}},
               params={"data": "random"},
               output={"svg": False, "workers": 2})
    assert validate_config_dict(cfg) == []


# ---------------------------------------------------------------------------
# Test B: missing keys
# ---------------------------------------------------------------------------

def test_b_missing_keys():
    errors = validate_config_dict({"grid": {"kind": "disk", "n": 16}})
    assert "missing required key: recipe" in errors

    errors = validate_config_dict({"recipe": "verify"})
    assert "missing required key: grid.kind" in errors
    assert "missing required key: grid.n" in errors

    errors = validate_config_dict({"recipe": "verify", "grid": {"kind": "disk"}})
    assert errors == ["missing required key: grid.n"]

    assert validate_config_dict([1, 2]) == ["config must be a table (dict)"]


# ---------------------------------------------------------------------------
# Test C: unknown names
# ---------------------------------------------------------------------------

def test_c_unknown_names():
    cfg = _valid()
    cfg["recipe"] = "mystery"
    assert any("unknown recipe" in e for e in validate_config_dict(cfg))

    cfg = _valid()
    cfg["grid"]["kind"] = "hexagon"
    assert any("grid.kind" in e for e in validate_config_dict(cfg))

    cfg = _valid()
    cfg["colour"] = "blue"
    cfg["solver"] = {"tolerance": 1e-6, "speed": "fast"}
    errors = validate_config_dict(cfg)
    assert any("unknown top-level keys" in e and "colour" in e for e in errors)
    assert any("unknown keys in solver" in e and "speed" in e for e in errors)

    assert set(RECIPES) >= {"verify", "sign_data", "disk_nonuniqueness"}


# ---------------------------------------------------------------------------
# Test D: ranges
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("patch,fragment", [
    ({"seed": -1}, "seed"),
    ({"seed": True}, "seed"),
    ({"grid": {"kind": "square", "n": 1}}, "grid.n"),
    ({"grid": {"kind": "square", "n": 4, "size": 0}}, "grid.size"),
    ({"solver": {"max_iters": 0}}, "solver.max_iters"),
    ({"solver": {"tolerance": -1e-3}}, "solver.tolerance"),
    ({"plap": {"p": 1.0}}, "plap.p"),
    ({"plap": {"p": 2.5}}, "plap.p"),
    ({"plap": {"epsilon": 0.0}}, "plap.epsilon"),
    ({"evolution": {"tau": 0.0}}, "evolution.tau"),
    ({"evolution": {"f": {"kind": "cubic"}}}, "evolution.f.kind"),
    ({"params": [1]}, "params"),
    ({"output": {"svg": "yes"}}, "output.svg"),
    ({"output": {"workers": 0}}, "output.workers"),
    ({"solver": "fast"}, "solver must be a table"),
])
def test_d_out_of_range(patch, fragment):
    cfg = _valid()
    cfg.update(patch)
    errors = validate_config_dict(cfg)
    assert any(fragment in e for e in errors), errors


# ---------------------------------------------------------------------------
# Test E: shipped recipes
# ---------------------------------------------------------------------------

def test_e_shipped_recipes_validate():
    paths = sorted(glob.glob(os.path.join(_ROOT, "config", "recipes", "*.toml")))
    assert len(paths) == len(RECIPES)
    seen = set()
    for path in paths:
        with open(path, "rb") as f:
            cfg = tomllib.load(f)
        assert validate_config_dict(cfg) == [], path
        seen.add(cfg["recipe"])
    assert seen == set(RECIPES)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
