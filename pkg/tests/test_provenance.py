#!/usr/bin/env python3
"""
Provenance Gate Test: config hashes and artifact digests

Proves:
  A. config_hash is 12 hex chars and independent of key order
  B. directory_digest ignores provenance.json, manifest.json, run.log and .tmp files
  C. directory_digest changes when content or a file name changes
  D. provenance() names the revision, Python and library versions

Deterministic, headless, offline (<5s).
"""

import os
import re
import sys
import tempfile

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from tools.provenance import (DIGEST_EXCLUDED, config_hash, directory_digest,
                              file_digests, git_short_rev, provenance)


def _write(directory, rel, text):
    path = os.path.join(directory, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


# ---------------------------------------------------------------------------
# Test A: config hash
# ---------------------------------------------------------------------------

def test_a_config_hash():
    a = {"recipe": "verify", "grid": {"kind": "square", "n": 8}, "seed": 0}
    b = {"seed": 0, "grid": {"n": 8, "kind": "square"}, "recipe": "verify"}
    assert config_hash(a) == config_hash(b)
    assert re.fullmatch(r"[0-9a-f]{12}", config_hash(a))
    assert config_hash(a) != config_hash({**a, "seed": 1})


# ---------------------------------------------------------------------------
# Test B / C: directory digest
# ---------------------------------------------------------------------------

def test_b_digest_ignores_volatile_files():
    with tempfile.TemporaryDirectory(prefix="prov_b_") as tmp:
        _write(tmp, "results.json", "{}")
        _write(tmp, "states/state_00000.csv", "0.5\n")
        before = directory_digest(tmp)
        for name in DIGEST_EXCLUDED:
            _write(tmp, name, "volatile")
        _write(tmp, "results.json.tmp", "partial")
        assert directory_digest(tmp) == before
        assert sorted(file_digests(tmp)) == ["results.json", "states/state_00000.csv"]


def test_c_digest_tracks_content():
    with tempfile.TemporaryDirectory(prefix="prov_c_") as tmp:
        _write(tmp, "a.csv", "1\n")
        first = directory_digest(tmp)
        _write(tmp, "a.csv", "2\n")
        second = directory_digest(tmp)
        assert second != first
        os.rename(os.path.join(tmp, "a.csv"), os.path.join(tmp, "b.csv"))
        assert directory_digest(tmp) != second


# ---------------------------------------------------------------------------
# Test D: provenance record
# ---------------------------------------------------------------------------

def test_d_provenance_record():
    cfg = {"recipe": "verify", "grid": {"kind": "square", "n": 4}}
    record = provenance(cfg)
    assert record["config_hash"] == config_hash(cfg)
    assert isinstance(git_short_rev(), str) and git_short_rev()
    assert {"numpy", "scipy", "PyMaxflow"} <= set(record["libraries"])
    assert record["python"].count(".") >= 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
