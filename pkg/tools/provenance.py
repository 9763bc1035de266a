#!/usr/bin/env python3
"""
Provenance metadata for experiment directories: revision, versions,
config hash and a deterministic digest of the produced files.
"""

import hashlib
import json
import os
import platform
import subprocess
from typing import Any, Dict, Iterable

_PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Files whose content legitimately differs between reruns.
DIGEST_EXCLUDED = ("provenance.json", "manifest.json", "run.log")


def git_short_rev() -> str:
    """Return short git revision hash, or 'unknown'."""
    try:
        return subprocess.check_output(
            ["git", "rev-parse", "--short", "HEAD"],
            stderr=subprocess.DEVNULL, cwd=_PROJECT_ROOT
        ).decode().strip()
    except Exception:
        return "unknown"


def python_version() -> str:
    return platform.python_version()


def library_versions() -> Dict[str, str]:
    import numpy
    import scipy

    versions = {"numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        import maxflow
        versions["PyMaxflow"] = getattr(maxflow, "__version__", "unknown")
    except ImportError:
        versions["PyMaxflow"] = "missing"
    return versions


def config_hash(cfg: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form (first 12 hex chars)."""
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def provenance(cfg: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "git_rev": git_short_rev(),
        "python": python_version(),
        "platform": platform.platform(),
        "libraries": library_versions(),
        "config_hash": config_hash(cfg),
    }


def _walk(directory: str, excluded: Iterable[str]) -> list:
    excluded = set(excluded)
    out = []
    for root, _, files in os.walk(directory):
        for name in files:
            rel = os.path.relpath(os.path.join(root, name), directory).replace(os.sep, "/")
            if rel not in excluded and not rel.endswith(".tmp"):
                out.append(rel)
    return sorted(out)


def file_digests(directory: str, excluded: Iterable[str] = DIGEST_EXCLUDED) -> Dict[str, str]:
    digests = {}
    for rel in _walk(directory, excluded):
        with open(os.path.join(directory, rel), "rb") as f:
            digests[rel] = hashlib.sha256(f.read()).hexdigest()
    return digests


def directory_digest(directory: str, excluded: Iterable[str] = DIGEST_EXCLUDED) -> str:
    """Order-independent digest over (relative path, content hash) pairs."""
    h = hashlib.sha256()
    for rel, digest in file_digests(directory, excluded).items():
        h.update(rel.encode("utf-8"))
        h.update(b"\0")
        h.update(digest.encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()
