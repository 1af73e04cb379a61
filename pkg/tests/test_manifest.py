import json

import pytest

from statereach.errors import ConfigError
from statereach.manifest import ArtifactManifest, config_hash, content_hash, verify_chain, write_manifest


def test_chain_verifies_and_detects_tampering(tmp_path):
    raw = tmp_path / "raw.txt"
    raw.write_text("data")
    write_manifest(raw, "raw", ["make"], {"a": 1})
    out = tmp_path / "out"
    out.mkdir()
    (out / "w.bin").write_bytes(b"\x00\x01")
    write_manifest(out, "derived", ["derive"], {"b": 2}, [raw])
    assert len(verify_chain(out)) == 2
    raw.write_text("data!")
    with pytest.raises(ConfigError):
        verify_chain(out)


def test_directory_hash_covers_every_file(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "a").write_text("1")
    h = content_hash(d)
    (d / "b").write_text("2")
    assert content_hash(d) != h


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def test_missing_manifest(tmp_path):
    (tmp_path / "x").write_text("x")
    with pytest.raises(ConfigError):
        ArtifactManifest.read(tmp_path / "x")


def test_manifest_records_config(tmp_path):
    p = tmp_path / "x"
    p.write_text("x")
    m = write_manifest(p, "k", ["cmd", "--flag"], {"seed": 3})
    data = json.loads((tmp_path / "x.manifest.json").read_text())
    assert data["config"] == {"seed": 3} and data["content_hash"] == m.content_hash
