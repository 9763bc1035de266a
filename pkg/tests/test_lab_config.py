#!/usr/bin/env python3
"""
Lab Config Gate Test: defaults, experiment configs and logging setup

Proves:
  A. load_defaults reads the shipped config.json and fills every section
  B. A missing defaults file means empty sections; unknown sections raise
  C. parse_config / load_config accept TOML and JSON and reject invalid configs
  D. solver_options applies defaults, then the config, then seed/tol overrides
  E. evolution_settings and plap_options fall back to the dataclass defaults
  F. attach_file_log writes "lsgrad" records to a rotating log file

Deterministic, headless, offline (<5s).
"""

import json
import logging
import os
import sys
import tempfile

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import InvalidArgument
from evolution import NemytskiiSpec
from lab_config import (DEFAULT_SECTIONS, attach_file_log, detach_file_log,
                        evolution_settings, load_config, load_defaults, parse_config,
                        plap_options, solver_options)
from plap import PlapOptions

TOML_CONFIG = """
recipe = "semigroup_decay"
seed = 5

[grid]
kind = "square"
n = 8

[solver]
tolerance = 1e-4

[evolution]
tau = 0.2
"""


# ---------------------------------------------------------------------------
# Test A / B: defaults
# ---------------------------------------------------------------------------

def test_a_shipped_defaults():
    defaults = load_defaults()
    assert set(defaults) == set(DEFAULT_SECTIONS)
    solver_options({}, defaults).validate()
    plap_options({}, defaults).validate()


def test_b_missing_and_unknown_defaults():
    with tempfile.TemporaryDirectory(prefix="cfg_b_") as tmp:
        missing = load_defaults(os.path.join(tmp, "nope.json"))
        assert missing == {name: {} for name in DEFAULT_SECTIONS}

        bad = os.path.join(tmp, "bad.json")
        with open(bad, "w", encoding="utf-8") as f:
            json.dump({"solver": {}, "gui": {}}, f)
        with pytest.raises(InvalidArgument, match="unknown sections"):
            load_defaults(bad)

        broken = os.path.join(tmp, "broken.json")
        with open(broken, "w", encoding="utf-8") as f:
            f.write("{not json")
        with pytest.raises(InvalidArgument):
            load_defaults(broken)


# ---------------------------------------------------------------------------
# Test C: experiment configs
# ---------------------------------------------------------------------------

def test_c_parse_and_load():
    cfg = parse_config(TOML_CONFIG, "toml")
    assert cfg["recipe"] == "semigroup_decay"
    assert parse_config(json.dumps(cfg), "json") == cfg

    with pytest.raises(InvalidArgument, match="invalid config"):
        parse_config('recipe = "nope"\n[grid]\nkind = "square"\nn = 4\n', "toml")
    with pytest.raises(InvalidArgument, match="malformed"):
        parse_config("recipe = ", "toml")
    with pytest.raises(InvalidArgument):
        parse_config("{}", "yaml")

    with tempfile.TemporaryDirectory(prefix="cfg_c_") as tmp:
        path = os.path.join(tmp, "run.toml")
        with open(path, "w", encoding="utf-8") as f:
            f.write(TOML_CONFIG)
        assert load_config(path) == cfg
        with pytest.raises(InvalidArgument, match=".toml or .json"):
            load_config(os.path.join(tmp, "run.yaml"))
        with pytest.raises(InvalidArgument):
            load_config(os.path.join(tmp, "absent.toml"))


# ---------------------------------------------------------------------------
# Test D / E: option builders
# ---------------------------------------------------------------------------

def test_d_solver_precedence():
    defaults = {"solver": {"tolerance": 1e-6, "max_iters": 300}}
    cfg = parse_config(TOML_CONFIG, "toml")
    opts = solver_options(cfg, defaults)
    assert opts.tolerance == 1e-4
    assert opts.max_iters == 300
    assert opts.seed == 5
    opts = solver_options(cfg, defaults, seed=9, tol=1e-7)
    assert opts.seed == 9
    assert opts.tolerance == 1e-7
    # the caller's dictionaries are left alone
    assert defaults == {"solver": {"tolerance": 1e-6, "max_iters": 300}}


def test_e_evolution_and_plap_defaults():
    settings = evolution_settings({})
    assert settings["tau"] == 0.05
    assert settings["t_end"] == 1.0
    assert settings["f"] == NemytskiiSpec.zero()

    cfg = parse_config(TOML_CONFIG, "toml")
    settings = evolution_settings(cfg, {"evolution": {"t_end": 3.0, "f": {"kind": "linear", "omega": 0.5}}})
    assert settings["tau"] == 0.2
    assert settings["t_end"] == 3.0
    assert settings["f"] == NemytskiiSpec.linear(0.5)

    assert plap_options({}) == PlapOptions()
    assert plap_options({"plap": {"p": 1.5}}, {"plap": {"p": 1.2, "max_newton": 7}}).p == 1.5
    with pytest.raises(InvalidArgument):
        plap_options({"plap": {"p": 0.5}})


# ---------------------------------------------------------------------------
# Test F: file logging
# ---------------------------------------------------------------------------

def test_f_file_log():
    with tempfile.TemporaryDirectory(prefix="cfg_f_") as tmp:
        path = os.path.join(tmp, "logs", "run.log")
        handler = attach_file_log(path)
        try:
            logging.getLogger("lsgrad.test").info("TEST | FILE_LOG | k=1")
        finally:
            detach_file_log(handler)
        detach_file_log(None)
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        assert "TEST | FILE_LOG | k=1" in text
        assert "lsgrad.test" in text
        assert handler not in logging.getLogger("lsgrad").handlers


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
