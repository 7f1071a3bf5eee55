"""Movability filters: decide which candidate masks are safe to contact.

Each filter is a callable ``(prompt, candidates) -> list[Mask]`` returning a
subset of the candidate objects themselves.
"""
from __future__ import annotations

import json
import logging
import socket
import urllib.error
import urllib.request

import numpy as np

from ..errors import FilterUnavailableError

log = logging.getLogger(__name__)


class GroundTruthFilter:
    """Keeps candidates whose object is movable according to ``labels``."""

    def __init__(self, labels):
        self.labels = dict(labels)

    def __call__(self, prompt, candidates):
        return [m for m in candidates if self.labels.get(m.obj_id, False)]


class RejectAllFilter:
    """Treats every obstacle as contact-intolerant."""

    def __call__(self, prompt, candidates):
        return []


class CorruptedFilter:
    """Ground truth with independent per-mask flips.

    A movable candidate is dropped with probability ``p_false_neg``; a fixed
    one is kept with probability ``p_false_pos``.
    """

    def __init__(self, labels, p_false_neg=0.0, p_false_pos=0.0, seed=0):
        if not (0 <= p_false_neg <= 1 and 0 <= p_false_pos <= 1):
            raise ValueError("flip probabilities must lie in [0, 1]")
        self.labels = dict(labels)
        self.p_false_neg = p_false_neg
        self.p_false_pos = p_false_pos
        self.rng = np.random.default_rng(seed)

    def __call__(self, prompt, candidates):
        out = []
        for m in candidates:
            draw = self.rng.random()
            movable = self.labels.get(m.obj_id, False)
            if (movable and draw >= self.p_false_neg) or (not movable and draw < self.p_false_pos):
                out.append(m)
        return out


class RemoteFilter:
    """JSON-over-HTTP client.

    Sends ``{"prompt", "candidates": [{"id", "caption", "bbox"}]}`` and expects
    ``{"keep": [ids]}``. Ids not among the candidates are ignored.
    """

    def __init__(self, url, timeout=10.0):
        self.url = url
        self.timeout = float(timeout)

    def __call__(self, prompt, candidates):
        candidates = list(candidates)
        body = json.dumps({"prompt": prompt, "candidates": [m.to_dict() for m in candidates]}).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                reply = json.loads(resp.read().decode())
            keep = {int(k) for k in reply["keep"]}
        except (urllib.error.URLError, socket.timeout, TimeoutError, ConnectionError,
                ValueError, KeyError, TypeError) as exc:
            raise FilterUnavailableError(f"movability filter at {self.url} failed: {exc}") from exc
        return [m for m in candidates if m.obj_id in keep]
