"""Key=value config files and deterministic seed fan-out.

One master seed drives a whole run; per-stage sub-seeds are derived by
hashing the stage name with the master, so adding a stage never perturbs
the draws of existing ones.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, stage: str) -> int:
    """Stable 63-bit sub-seed for a named stage of a run."""
    digest = hashlib.sha256(f"{master}/{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def read_kv(path: str) -> dict[str, str]:
    """Plain `key=value` lines; blanks and # comments skipped."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            out[key.strip()] = value.strip()
    return out


def write_kv(mapping: dict, path: str) -> None:
    """Write keys in sorted order so identical configs give identical files."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(mapping):
            fh.write(f"{key}={mapping[key]}\n")
