"""Run manifests: one ``manifest.yaml`` per CLI run recording what went in and what came out"""

import logging
import os
from dataclasses import dataclass
from dataclasses import field
from typing import Any

import yaml

from .util.serialize import file_digest

logger = logging.getLogger("darkproxy.manifest")

MANIFEST_NAME = "manifest.yaml"


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seeds: dict[str, int] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = ""

    def add_input(self, name: str, path: str) -> None:
        self.inputs[name] = os.path.abspath(path)

    def collect_outputs(self, directory: str) -> dict[str, str]:
        """SHA-256 of every file below ``directory`` except the manifest itself"""
        outputs: dict[str, str] = {}
        for root, dirs, files in os.walk(directory):
            dirs.sort()
            for name in sorted(files):
                path = os.path.join(root, name)
                rel = os.path.relpath(path, directory).replace(os.sep, "/")
                if rel == MANIFEST_NAME:
                    continue
                outputs[rel] = file_digest(path)
        self.outputs = outputs
        return outputs

    def to_record(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config_digest": self.config_digest,
            "seeds": {k: int(v) for k, v in self.seeds.items()},
            "inputs": dict(self.inputs),
            "outputs": dict(self.outputs),
            "version": self.version,
        }


def write_manifest(manifest: RunManifest, directory: str) -> str:
    manifest.collect_outputs(directory)
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "w") as fh:
        yaml.safe_dump(manifest.to_record(), fh, default_flow_style=False, sort_keys=True)
    logger.debug(f"{path}: {len(manifest.outputs)} outputs")
    return path


def read_manifest(directory: str) -> RunManifest:
    with open(os.path.join(directory, MANIFEST_NAME)) as fh:
        record = yaml.safe_load(fh)
    return RunManifest(**record)
