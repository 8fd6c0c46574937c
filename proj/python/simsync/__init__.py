"""Synchronized multi-sensor data collection."""

import json
from typing import Any, Mapping, Union

from . import _simsync
from ._simsync import (
    ConfigError,
    ProtocolError,
    StoreError,
    batch_file_size,
    classify_occlusion,
    decode_depth,
    decode_depth_code,
    encode_depth,
    observation_angle,
    rotation_angle,
    truncation_ratio,
)

__all__ = [
    "ConfigError",
    "ProtocolError",
    "StoreError",
    "batch_file_size",
    "classify_occlusion",
    "collect_episode",
    "compare_episodes",
    "config_digest",
    "convert_outputs",
    "decode_depth",
    "decode_depth_code",
    "derive_timing",
    "encode_depth",
    "load_manifest",
    "observation_angle",
    "rotation_angle",
    "truncation_ratio",
    "validate",
]

ConfigLike = Union[str, Mapping[str, Any]]


def _as_json(config: ConfigLike) -> str:
    return config if isinstance(config, str) else json.dumps(config)


def validate(config: ConfigLike) -> list:
    """Constraint violations of a run config; an empty list when it is valid."""
    return _simsync.validation_errors(_as_json(config))


def derive_timing(config: ConfigLike) -> dict:
    return _simsync.derive_timing(_as_json(config))


def config_digest(config: ConfigLike) -> int:
    return _simsync.config_digest(_as_json(config))


def collect_episode(config: ConfigLike, output_dir: str, mode: str = "pipelined", workers: int = 0) -> dict:
    """Runs one episode against an in-process server; returns the episode report."""
    return json.loads(_simsync.run_local_episode(_as_json(config), str(output_dir), mode, workers))


def convert_outputs(manifest_path: str, workers: int = 0) -> dict:
    return _simsync.convert_outputs(str(manifest_path), workers)


def load_manifest(path: str) -> dict:
    return json.loads(_simsync.load_manifest(str(path)))


def compare_episodes(a: str, b: str) -> str:
    """The first difference between two episode directories, or an empty string."""
    return _simsync.compare_episodes(str(a), str(b))
