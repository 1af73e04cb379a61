"""Artifact manifests with verifiable hash chains.

Every artifact ``X`` gets a sidecar ``X.manifest.json`` recording the
artifact's content hash, the producing command line, the effective config
and the content hashes of its upstream artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError

SUFFIX = ".manifest.json"


def content_hash(path) -> str:
    """sha256 of a file, or of a directory's files (names and bytes, sorted).

    Sidecar files of the artifact itself (manifests, metadata) are part of
    the hash unless they are manifests.
    """
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file() and not p.name.endswith(SUFFIX)):
            h.update(str(f.relative_to(path)).encode())
            h.update(b"\0")
            h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
        for side in sorted(path.parent.glob(path.name + ".*")):
            if not side.name.endswith(SUFFIX):
                h.update(side.name[len(path.name):].encode())
                h.update(side.read_bytes())
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def manifest_path(artifact) -> Path:
    return Path(str(artifact) + SUFFIX)


@dataclass
class ArtifactManifest:
    kind: str
    content_hash: str
    command: list
    config: dict
    config_hash: str
    upstream: list = field(default_factory=list)  # [{"path", "content_hash"}]

    def write(self, artifact) -> Path:
        p = manifest_path(artifact)
        p.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return p

    @classmethod
    def read(cls, artifact) -> ArtifactManifest:
        p = manifest_path(artifact)
        if not p.exists():
            raise ConfigError(f"{artifact}: no manifest found at {p}")
        return cls(**json.loads(p.read_text()))


def write_manifest(artifact, kind, command, config, upstream=()) -> ArtifactManifest:
    ups = [{"path": str(u), "content_hash": content_hash(u)} for u in upstream]
    # commands and paths are recorded but kept out of the config hash
    m = ArtifactManifest(kind, content_hash(artifact), list(command), config, config_hash(config), ups)
    m.write(artifact)
    return m


def verify_chain(artifact, _seen=None) -> list[str]:
    """Check an artifact and, recursively, all upstream artifacts.

    Returns the list of verified paths; raises ConfigError on the first
    mismatch (tampered or missing input).
    """
    seen = set() if _seen is None else _seen
    artifact = Path(artifact)
    if str(artifact) in seen:
        return []
    seen.add(str(artifact))
    m = ArtifactManifest.read(artifact)
    if not artifact.exists():
        raise ConfigError(f"{artifact}: artifact is missing")
    if content_hash(artifact) != m.content_hash:
        raise ConfigError(f"{artifact}: content hash does not match its manifest")
    if config_hash(m.config) != m.config_hash:
        raise ConfigError(f"{artifact}: config hash does not match its manifest")
    verified = [str(artifact)]
    for up in m.upstream:
        p = Path(up["path"])
        if not p.exists():
            raise ConfigError(f"{artifact}: upstream {p} is missing")
        if content_hash(p) != up["content_hash"]:
            raise ConfigError(f"{artifact}: upstream {p} changed since it was consumed")
        if manifest_path(p).exists():
            verified += verify_chain(p, seen)
    return verified
