#!/usr/bin/env python3
"""
Progress bus for long-running solves and trajectories.
Thread-safe in-process pub/sub; recipes fanning out over worker threads emit
into one shared bus.
"""

import logging
import threading
import uuid
from typing import Any, Callable, Dict

logger = logging.getLogger("lsgrad.event_bus")

SOLVE_DONE = "SOLVE_DONE"
STEP_DONE = "STEP_DONE"
RECIPE_STAGE = "RECIPE_STAGE"
EVENT_TYPES = (SOLVE_DONE, STEP_DONE, RECIPE_STAGE)


class EventBus:
    """Thread-safe in-process pub/sub event bus"""

    def __init__(self):
        self._subscribers: Dict[str, Callable[[str, Dict[str, Any]], None]] = {}
        self._lock = threading.RLock()
        self._counts: Dict[str, int] = {name: 0 for name in EVENT_TYPES}

    def subscribe(self, callback: Callable[[str, Dict[str, Any]], None]) -> str:
        """
        Subscribe to events

        Args:
            callback: Function that takes (event_type, payload)

        Returns:
            Token for unsubscribing
        """
        with self._lock:
            token = str(uuid.uuid4())
            self._subscribers[token] = callback
            return token

    def unsubscribe(self, token: str) -> bool:
        with self._lock:
            return self._subscribers.pop(token, None) is not None

    def emit(self, event_type: str, payload: Dict[str, Any]) -> None:
        """
        Deliver an event to all subscribers.

        Raises:
            ValueError: for an event type outside EVENT_TYPES
        """
        if event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {event_type!r}; valid: {EVENT_TYPES}")
        with self._lock:
            subscribers = list(self._subscribers.values())
            self._counts[event_type] += 1

        # Callbacks run outside the lock
        for callback in subscribers:
            try:
                callback(event_type, payload)
            except Exception as e:
                logger.warning(f"BUS | CALLBACK_FAILED | event={event_type} | error={e}")

    def emitted(self, event_type: str) -> int:
        with self._lock:
            return self._counts.get(event_type, 0)

    def get_subscriber_count(self) -> int:
        with self._lock:
            return len(self._subscribers)
