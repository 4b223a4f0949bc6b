"""Atomic JSON checkpoints.

Parameters are serialized as decimal 64-bit reals; Python's float repr round
trips exactly, so a resumed run restarts from bit-identical parameters.
Files are written to a temp path then renamed into place.
"""

from __future__ import annotations

import json
import os

FORMAT_VERSION = 1


def save_json_atomic(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)
