import hashlib
import os
from importlib.metadata import PackageNotFoundError
from unittest.mock import patch

from rosl_bolza.provenance import Provenance, file_digest, package_version


def test_file_digest(tmp_path):
    """Test the sha256 of a file."""
    path = tmp_path / "problem.json"
    path.write_bytes(b"{}")
    assert file_digest(str(path)) == hashlib.sha256(b"{}").hexdigest()


def test_package_version_falls_back_to_version_file():
    """Test the source-checkout version when the package is not installed."""
    with patch(
        "rosl_bolza.provenance.version", side_effect=PackageNotFoundError("rosl-bolza")
    ):
        value = package_version()
    assert value != ""
    assert "\n" not in value


def test_provenance_with_timestamp(tmp_path):
    """Test that the creation time is recorded by default."""
    path = tmp_path / "problem.json"
    path.write_text("{}")
    with patch.dict(os.environ, {"ROSL_TIMESTAMP": "true"}):
        provenance = Provenance("solve", seed=3, inputs=[str(path)])
    data = provenance.to_dict()
    assert data["command"] == "solve"
    assert data["seed"] == 3
    assert data["inputs"] == {"problem.json": file_digest(str(path))}
    assert data["created"].endswith("Z")
    assert data["version"] == provenance.version


def test_provenance_without_timestamp():
    """Test that ROSL_TIMESTAMP=false drops the creation time."""
    with patch.dict(os.environ, {"ROSL_TIMESTAMP": "false"}):
        provenance = Provenance("study")
    assert "created" not in provenance.to_dict()
    assert Provenance("study", timestamp=False).created is None


def test_comment_lines(tmp_path):
    """Test the CSV header lines."""
    path = tmp_path / "ref.csv"
    path.write_text("t,x1,xdot1\n")
    provenance = Provenance("approx", seed=0, inputs=[str(path)], timestamp=False)
    lines = provenance.comment_lines()
    assert lines[0] == f"rosl-bolza {provenance.version} approx"
    assert lines[1].startswith("platform=")
    assert lines[2] == "seed=0"
    assert lines[3] == f"sha256 ref.csv={file_digest(str(path))}"
    assert len(lines) == 4
