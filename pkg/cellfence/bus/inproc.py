"""
Synchronous in-process publish/subscribe for deterministic runs and tests.

Publications made from inside a subscriber callback are queued and
delivered after the current one, so delivery order is always the global
publication order.
"""

import logging
from collections import deque

import numpy as np

logger = logging.getLogger("MessageBus")


class InProcessBus:
    """
    Args:
        loss_rate (float): Probability that a publication is dropped for one subscriber.
        seed (int): Seed for the loss draws.
        strict (bool): Re-raise subscriber exceptions instead of logging them.
    """

    def __init__(self, loss_rate=0.0, seed=0, strict=False):
        self.loss_rate = loss_rate
        self.strict = strict
        self._rng = np.random.default_rng(seed)
        self._subscribers = {}
        self._pending = deque()
        self._delivering = False
        self.published = 0
        self.delivered = 0
        self.dropped = 0

    def subscribe(self, topic, callback):
        """callback(topic, payload) is invoked for every later publication on topic."""
        self._subscribers.setdefault(topic, []).append(callback)
        return callback

    def unsubscribe(self, topic, callback):
        callbacks = self._subscribers.get(topic, [])
        if callback in callbacks:
            callbacks.remove(callback)

    def publish(self, topic, payload):
        """Queue payload for every current subscriber of topic; returns how many will receive it."""
        self.published += 1
        queued = 0
        # Snapshot subscribers now: anyone joining later misses this message
        for callback in list(self._subscribers.get(topic, ())):
            if self.loss_rate and self._rng.random() < self.loss_rate:
                self.dropped += 1
                continue
            self._pending.append((callback, topic, bytes(payload)))
            queued += 1
        if self._delivering:
            return queued
        self._delivering = True
        try:
            while self._pending:
                callback, t, data = self._pending.popleft()
                try:
                    callback(t, data)
                    self.delivered += 1
                except Exception as e:
                    if self.strict:
                        self._pending.clear()
                        raise
                    logger.error(f"Subscriber on '{t}' failed: {str(e)}")
        finally:
            self._delivering = False
        return queued

    def get_status(self):
        return {
            "published": self.published,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "topics": {t: len(c) for t, c in self._subscribers.items()},
        }

    def close(self):
        self._subscribers.clear()
        self._pending.clear()
