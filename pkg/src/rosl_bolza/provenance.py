from __future__ import annotations

import hashlib
import os
import platform
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from typing import Any, Dict, List, Optional, Sequence


def package_version() -> str:
    """Installed version of rosl-bolza, or the VERSION file of a source checkout."""
    try:
        return version("rosl-bolza")
    except PackageNotFoundError:
        root = os.path.dirname(os.path.dirname(os.path.dirname(__file__)))
        path = os.path.join(root, "VERSION")
        if os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                return f.read().strip()
        return "unknown"


def file_digest(path: str) -> str:
    """sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Provenance:
    """Reproducibility header echoed into every CLI output."""

    def __init__(
        self,
        command: str,
        seed: Optional[int] = None,
        inputs: Sequence[str] = (),
        timestamp: Optional[bool] = None,
    ):
        """Collect the run context.

        Args:
            command: Subcommand name
            seed: Random seed of the run
            inputs: Input files to hash
            timestamp: Include the wall-clock time; defaults to the
                ROSL_TIMESTAMP environment variable (true unless "false")
        """
        if timestamp is None:
            timestamp = os.getenv("ROSL_TIMESTAMP", "true").lower() == "true"
        self.command = command
        self.seed = seed
        self.version = package_version()
        self.platform = platform.system()
        self.python_version = platform.python_version()
        self.hashes = {os.path.basename(p): file_digest(p) for p in inputs}
        self.created = (
            datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            if timestamp
            else None
        )

    def to_dict(self) -> Dict[str, Any]:
        properties: Dict[str, Any] = {
            "command": self.command,
            "version": self.version,
            "platform": self.platform,
            "python_version": self.python_version,
            "seed": self.seed,
            "inputs": dict(sorted(self.hashes.items())),
        }
        if self.created is not None:
            properties["created"] = self.created
        return properties

    def comment_lines(self) -> List[str]:
        """Header lines for CSV outputs, one key per line."""
        lines = [
            f"rosl-bolza {self.version} {self.command}",
            f"platform={self.platform} python={self.python_version}",
            f"seed={self.seed}",
        ]
        lines += [f"sha256 {name}={h}" for name, h in sorted(self.hashes.items())]
        if self.created is not None:
            lines.append(f"created={self.created}")
        return lines
