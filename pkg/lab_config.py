#!/usr/bin/env python3
"""
Configuration for the laboratory: project defaults from config.json,
experiment configs (TOML or JSON), option builders and logging setup.

Missing default keys fall back to the dataclass defaults of the solvers.
"""

import copy
import json
import logging
import os
import tomllib
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Optional

from errors import InvalidArgument
from evolution import NemytskiiSpec
from plap import PlapOptions
from tools.config_schema import validate_config_dict
from tvmin import SolverOptions

logger = logging.getLogger("lsgrad.config")

_PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
DEFAULTS_PATH = os.path.join(_PROJECT_ROOT, "config.json")
DEFAULT_SECTIONS = ("solver", "plap", "evolution", "oracle", "lab", "logging")

LOG_FORMAT = "%(name)s: %(message)s"
LOG_FILE_BYTES = 5 * 1024 * 1024
LOG_FILE_BACKUPS = 5


def load_defaults(path: Optional[str] = None) -> Dict[str, Any]:
    """Project defaults; a missing file means in-code defaults only."""
    path = path or DEFAULTS_PATH
    if not os.path.exists(path):
        logger.info(f"CONFIG | DEFAULTS_MISSING | path={path}")
        return {name: {} for name in DEFAULT_SECTIONS}
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (json.JSONDecodeError, OSError) as e:
        raise InvalidArgument(f"cannot read defaults {path}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidArgument(f"defaults {path} must hold a JSON object")
    unknown = set(data) - set(DEFAULT_SECTIONS)
    if unknown:
        raise InvalidArgument(f"unknown sections in {path}: {sorted(unknown)}")
    for name in DEFAULT_SECTIONS:
        data.setdefault(name, {})
    return data


def parse_config(text: str, fmt: str) -> Dict[str, Any]:
    """Parse and validate config text; ``fmt`` is 'toml' or 'json'."""
    try:
        if fmt == "toml":
            cfg = tomllib.loads(text)
        elif fmt == "json":
            cfg = json.loads(text)
        else:
            raise InvalidArgument(f"unknown config format {fmt!r}")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise InvalidArgument(f"malformed config: {e}") from e
    errors = validate_config_dict(cfg)
    if errors:
        raise InvalidArgument("invalid config: " + "; ".join(errors))
    return cfg


def load_config(path: str) -> Dict[str, Any]:
    """Load an experiment config; the format follows the file extension."""
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".toml", ".json"):
        raise InvalidArgument(f"config must be .toml or .json, got {path!r}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise InvalidArgument(f"cannot read config {path}: {e}") from e
    cfg = parse_config(text, ext[1:])
    logger.info(f"CONFIG | LOAD_OK | recipe={cfg['recipe']} | path={path}")
    return cfg


def _merged(defaults: Dict[str, Any], cfg: Dict[str, Any], section: str) -> Dict[str, Any]:
    out = copy.deepcopy(defaults.get(section, {}))
    out.update(copy.deepcopy(cfg.get(section, {})))
    return out


def solver_options(cfg: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None, *,
                   seed: Optional[int] = None, tol: Optional[float] = None) -> SolverOptions:
    """defaults -> config -> CLI overrides."""
    data = _merged(defaults or {}, cfg, "solver")
    if "seed" in cfg:
        data["seed"] = cfg["seed"]
    if seed is not None:
        data["seed"] = seed
    if tol is not None:
        data["tolerance"] = tol
    opts = SolverOptions.from_dict(data)
    opts.validate()
    return opts


def plap_options(cfg: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None) -> PlapOptions:
    opts = PlapOptions.from_dict(_merged(defaults or {}, cfg, "plap"))
    opts.validate()
    return opts


def evolution_settings(cfg: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    data = _merged(defaults or {}, cfg, "evolution")
    return {
        "tau": float(data.get("tau", 0.05)),
        "t_end": float(data.get("t_end", 1.0)),
        "f": NemytskiiSpec.from_dict(data.get("f", {"kind": "zero"})),
    }


def configure_logging(verbose: bool = False, log_file: Optional[str] = None) -> Optional[logging.Handler]:
    """Console logging for the CLI plus an optional rotating file handler.

    Returns the file handler (if any) so callers can detach it.
    """
    level = logging.INFO if verbose else logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)
    # console stays at the requested level even when a file log raises "lsgrad" to INFO
    for handler in logging.getLogger().handlers:
        handler.setLevel(level)
    if not log_file:
        return None
    return attach_file_log(log_file)


def attach_file_log(log_file: str) -> logging.Handler:
    os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
    handler = RotatingFileHandler(log_file, maxBytes=LOG_FILE_BYTES,
                                  backupCount=LOG_FILE_BACKUPS, encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(name)s: %(message)s"))
    handler.setLevel(logging.INFO)
    root = logging.getLogger("lsgrad")
    root.addHandler(handler)
    if root.level == logging.NOTSET or root.level > logging.INFO:
        root.setLevel(logging.INFO)
    return handler


def detach_file_log(handler: Optional[logging.Handler]) -> None:
    if handler is None:
        return
    logging.getLogger("lsgrad").removeHandler(handler)
    handler.close()
