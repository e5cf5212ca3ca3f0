"""Run manifests: canonical config hashing and environment capture."""

from __future__ import annotations

import hashlib
import json
import platform

import numpy as np
import scipy

from . import __version__

__all__ = ["canonical_json", "config_hash", "versions", "build_manifest"]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: dict) -> str:
    """sha256 of the key-sorted compact JSON, so field order never matters."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def versions() -> dict:
    return {
        "muskat": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def build_manifest(config: dict, seed=None, timings=None, abort=None, extra=None) -> dict:
    manifest = {
        "config": config,
        "config_hash": config_hash(config),
        "versions": versions(),
        "timings": dict(timings or {}),
        "seed": seed,
        "abort": abort,
    }
    manifest.update(extra or {})
    return manifest
