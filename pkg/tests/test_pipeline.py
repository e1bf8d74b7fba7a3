import json
import shutil

import pytest

from geosom import artifacts, cli, pipeline, synthetic

OUTPUTS = sorted(pipeline.FILES.values())

# the fixture lattice is small enough that the two indices disagree
pytestmark = pytest.mark.filterwarnings("ignore::geosom.validity.IndexDisagreementWarning")


@pytest.fixture
def workdir(fixture_dir, tmp_path):
    d = tmp_path / "fx"
    shutil.copytree(fixture_dir, d)
    return d


def run(workdir, *args):
    return cli.main([args[0], "--config", str(workdir / "config.json"), *args[1:]])


def manifest(out):
    return artifacts.read_json(out / "manifest.json", "run_manifest")


def test_end_to_end(workdir, capsys):
    assert run(workdir, "run") == 0
    out = workdir / "out"
    assert sorted(p.name for p in out.iterdir()) == OUTPUTS
    m = manifest(out)
    assert set(m["artifacts"]) == set(OUTPUTS) - {"manifest.json"}
    assert m["config"]["som"]["theta0"] == 0.57
    assert m["tool_version"]
    text = capsys.readouterr().out
    assert "cases/pop" in text and "Cluster 1" in text
    h = artifacts.read_json(out / "hopkins.json", "hopkins")
    assert 0.0 <= h["before"] <= 1.0 and 0.0 <= h["after"] <= 1.0


def test_two_runs_identical(workdir, tmp_path):
    assert run(workdir, "run") == 0
    assert run(workdir, "run", "--output-dir", str(tmp_path / "second")) == 0
    a = manifest(workdir / "out")["artifacts"]
    b = manifest(tmp_path / "second")["artifacts"]
    assert a == b


def test_k_max_exceeds_neurons_fails_early(workdir, capsys):
    assert run(workdir, "run", "--rows", "2", "--cols", "2", "--sigma0", "1", "--k-max", "9") == 2
    assert "exceeds the neuron count" in capsys.readouterr().err
    assert not (workdir / "out").exists()


@pytest.mark.parametrize("flag,value", [("--theta0", "1.5"), ("--sigma0", "50"), ("--components", "0")])
def test_invalid_overrides(workdir, flag, value):
    assert run(workdir, "run", flag, value) == 2


def test_missing_config(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == 2


def test_phases_individually(workdir):
    for phase in pipeline.PHASES:
        assert run(workdir, phase) == 0
    full = manifest(workdir / "out")["artifacts"]
    validity_csv = (workdir / "out" / "validity.csv").read_bytes()
    assert run(workdir, "validate") == 0
    assert (workdir / "out" / "validity.csv").read_bytes() == validity_csv
    assert manifest(workdir / "out")["artifacts"] == full


def test_train_override_changes_model_only(workdir):
    assert run(workdir, "run") == 0
    before = manifest(workdir / "out")["artifacts"]
    assert run(workdir, "train", "--seed", "99") == 0
    after = manifest(workdir / "out")["artifacts"]
    assert after["som_model.json"] != before["som_model.json"]
    assert after["reduced.csv"] == before["reduced.csv"]


def test_missing_upstream_artifact(workdir, capsys):
    assert run(workdir, "train") == 3
    assert (workdir / "out" / "train.failed").exists()
    assert "reduced.csv" in capsys.readouterr().err


def test_failed_marker_cleared_on_success(workdir):
    assert run(workdir, "ingest") == 0
    assert run(workdir, "train") == 3
    assert run(workdir, "reduce") == 0
    assert run(workdir, "train") == 0
    assert not (workdir / "out" / "train.failed").exists()


def test_version_mismatch_rejected(workdir):
    assert run(workdir, "run") == 0
    path = workdir / "out" / "som_model.json"
    doc = json.loads(path.read_text())
    doc["format_version"] = "2.0"
    path.write_text(json.dumps(doc))
    assert run(workdir, "validate") == 3


def test_csv_version_mismatch_rejected(workdir):
    assert run(workdir, "run") == 0
    path = workdir / "out" / "assignment.csv"
    path.write_text(path.read_text().replace("format_version=1.0", "format_version=9.0", 1))
    assert run(workdir, "report") == 3


def test_bad_census_reports_line(workdir, capsys):
    census = workdir / "census.csv"
    lines = census.read_text().splitlines()
    lines[3] = lines[3].replace(",", ",x", 3)
    census.write_text("\n".join(lines) + "\n")
    assert run(workdir, "run") == 3
    assert ":4" in capsys.readouterr().err


def test_committed_fixture_regenerates(fixture_dir, tmp_path):
    paths = synthetic.write_mini_census(tmp_path, seed=2020)
    for p in paths.values():
        assert p.read_bytes() == (fixture_dir / p.name).read_bytes(), p.name


def test_committed_blobs_regenerate(blobs_path, tmp_path):
    p = synthetic.write_blobs(tmp_path / "b.csv")
    assert p.read_bytes() == blobs_path.read_bytes()


def test_make_fixture_cli(tmp_path, capsys):
    assert cli.main(["make-fixture", str(tmp_path / "x")]) == 0
    assert (tmp_path / "x" / "config.json").exists()
