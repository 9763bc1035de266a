#!/usr/bin/env python3
"""
Event Bus Gate Test: progress events for solves, steps and recipe stages

Proves:
  A. subscribe / emit / unsubscribe deliver events to live subscribers only
  B. Unknown event types raise ValueError
  C. A failing callback is logged and does not block other subscribers
  D. emitted() counts events per type, including events from worker threads

Deterministic, headless, offline (<5s).
"""

import os
import sys
from concurrent.futures import ThreadPoolExecutor

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from event_bus import RECIPE_STAGE, SOLVE_DONE, STEP_DONE, EventBus


# ---------------------------------------------------------------------------
# Test A: delivery
# ---------------------------------------------------------------------------

def test_a_subscribe_and_unsubscribe():
    bus = EventBus()
    seen = []
    token = bus.subscribe(lambda kind, payload: seen.append((kind, payload["step"])))
    assert bus.get_subscriber_count() == 1
    bus.emit(STEP_DONE, {"step": 1})
    assert bus.unsubscribe(token)
    assert not bus.unsubscribe(token)
    bus.emit(STEP_DONE, {"step": 2})
    assert seen == [(STEP_DONE, 1)]
    assert bus.get_subscriber_count() == 0


# ---------------------------------------------------------------------------
# Test B: validation
# ---------------------------------------------------------------------------

def test_b_unknown_event_type():
    bus = EventBus()
    with pytest.raises(ValueError, match="unknown event type"):
        bus.emit("SOLVE_STARTED", {})
    assert bus.emitted("SOLVE_STARTED") == 0


# ---------------------------------------------------------------------------
# Test C: failing callbacks
# ---------------------------------------------------------------------------

def test_c_failing_callback_is_isolated(caplog):
    bus = EventBus()
    seen = []

    def broken(kind, payload):
        raise RuntimeError("boom")

    bus.subscribe(broken)
    bus.subscribe(lambda kind, payload: seen.append(kind))
    with caplog.at_level("WARNING", logger="lsgrad.event_bus"):
        bus.emit(SOLVE_DONE, {"kind": "dirichlet"})
    assert seen == [SOLVE_DONE]
    assert "CALLBACK_FAILED" in caplog.text


# ---------------------------------------------------------------------------
# Test D: counts
# ---------------------------------------------------------------------------

def test_d_counts_across_threads():
    bus = EventBus()
    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(lambda i: bus.emit(RECIPE_STAGE, {"stage": str(i)}), range(20)))
    bus.emit(SOLVE_DONE, {})
    assert bus.emitted(RECIPE_STAGE) == 20
    assert bus.emitted(SOLVE_DONE) == 1
    assert bus.emitted(STEP_DONE) == 0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
