"""Run manifests: a JSON record of what a command did, written atomically.

The manifest captures the resolved configuration, the seed, and content
hashes of every input and output file, so re-running a command with the
same inputs can be verified byte for byte by comparing output hashes.
"""

import hashlib
import json
import os
import time


def content_hash(path) -> str:
    """sha256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    path,
    command: str,
    config: dict,
    seed: int | None,
    inputs: list,
    outputs: list,
    started: float,
) -> dict:
    """Hash inputs/outputs and atomically write the manifest JSON."""
    record = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): content_hash(p) for p in inputs},
        "outputs": {str(p): content_hash(p) for p in outputs},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "elapsed_s": round(time.time() - started, 3),
    }
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="ascii") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return record
