import json

import pytest

from rosl_bolza.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    load_problem,
    run,
)
from rosl_bolza.errors import InvalidProblemError


@pytest.fixture
def solution_file(tmp_path, problem_file, capsys):
    """Solve the descent problem once and return the solution path."""
    path = tmp_path / "solution.json"
    code = run(
        ["solve", "--problem", problem_file, "--k", "8", "--out", str(path)]
        + ["--no-timestamp"]
    )
    assert code == EXIT_OK
    capsys.readouterr()
    return path


def test_load_problem(problem_file):
    """Test reading a JSON problem file."""
    problem = load_problem(problem_file)
    assert problem.meta.T == 1.0


def test_load_problem_missing_file(tmp_path):
    """Test a path that does not exist."""
    with pytest.raises(InvalidProblemError) as exc_info:
        load_problem(str(tmp_path / "missing.json"))
    assert "Cannot read problem file" in str(exc_info.value)


def test_step(problem_file, capsys):
    """Test one implicit step printed as JSON."""
    code = run(
        ["step", "--problem", problem_file, "--x", "0", "--t", "0.1", "--h", "0.1"]
        + ["--guess", "-1", "--no-timestamp"]
    )
    assert code == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["y"] == pytest.approx([-0.1])
    assert document["explicit"] is False
    assert "created" not in document["provenance"]
    assert document["provenance"]["command"] == "step"


def test_explicit_step(problem_file, capsys):
    """Test the explicit step toward a target."""
    code = run(
        ["step", "--problem", problem_file, "--x", "0", "--t", "0", "--h", "0.1"]
        + ["--guess", "1", "--explicit"]
    )
    assert code == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["y"] == pytest.approx([0.1])
    assert document["explicit"] is True


def test_step_outside_domain(problem_file, capsys):
    """Test that configuration errors exit with code 2."""
    code = run(
        ["step", "--problem", problem_file, "--x", "9", "--t", "0", "--h", "0.1"]
    )
    assert code == EXIT_CONFIG
    assert "DomainError" in capsys.readouterr().err


def test_approx(tmp_path, problem_file, capsys):
    """Test the approximation report and trajectory CSV."""
    path = tmp_path / "traj.csv"
    code = run(
        ["approx", "--problem", problem_file, "--k", "8", "--out", str(path)]
        + ["--seed", "5", "--no-timestamp"]
    )
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["k"] == 8
    assert report["eta_k"] == pytest.approx(0.0, abs=1e-9)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# rosl-bolza ")
    assert "# seed=5" in lines
    assert "j,t,x1,v1" in lines


def test_solve(solution_file):
    """Test the solution document of the descent problem."""
    document = json.loads(solution_file.read_text())
    assert document["mode"] == "pktilde"
    assert document["status"] == "optimal-local"
    assert document["cost"] == pytest.approx(-1.0, abs=1e-6)
    assert document["multipliers"]["lambda"][0] == pytest.approx(0.5, abs=1e-6)
    assert document["provenance"]["seed"] is None


def test_solve_infeasible(tmp_path, valid_problem, capsys):
    """Test that an unreachable endpoint set exits with code 3."""
    valid_problem["constraints"] = {
        "omega": {"type": "box", "lo": [5.0], "hi": [5.0]}
    }
    valid_problem["solver"]["max_outer"] = 4
    path = tmp_path / "problem.json"
    path.write_text(json.dumps(valid_problem))
    code = run(["solve", "--problem", str(path), "--k", "4"])
    assert code == EXIT_NUMERICAL
    assert json.loads(capsys.readouterr().out)["status"] == "infeasible"


def test_check(problem_file, solution_file, capsys):
    """Test the KKT report of a solution."""
    code = run(["check", "--problem", problem_file, "--sol", str(solution_file)])
    assert code == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["report"]["passed"] is True
    assert "multipliers" not in document


def test_check_with_recovery(problem_file, solution_file, capsys):
    """Test the check with recovered multipliers."""
    code = run(
        ["check", "--problem", problem_file, "--sol", str(solution_file), "--recover"]
    )
    assert code == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["multipliers"]["lambda"][0] == pytest.approx(0.5, abs=1e-6)


def test_check_fails_on_perturbed_adjoint(problem_file, solution_file, capsys):
    """Test exit code 1 for multipliers that do not certify the solution."""
    document = json.loads(solution_file.read_text())
    document["multipliers"]["p"][5][0] += 0.1
    solution_file.write_text(json.dumps(document))
    code = run(["check", "--problem", problem_file, "--sol", str(solution_file)])
    assert code == EXIT_CHECK_FAILED
    report = json.loads(capsys.readouterr().out)["report"]
    assert report["euler_lagrange"] == pytest.approx(0.8, abs=1e-4)


def test_check_malformed_solution(tmp_path, problem_file, capsys):
    """Test a solution file without the expected keys."""
    path = tmp_path / "solution.json"
    path.write_text(json.dumps({"x": [[0.0]]}))
    code = run(["check", "--problem", problem_file, "--sol", str(path)])
    assert code == EXIT_CONFIG
    assert "Malformed solution file" in capsys.readouterr().err


def test_study_to_stdout(problem_file, capsys):
    """Test that the study table is printed without --out."""
    code = run(["study", "--problem", problem_file, "--k", "4,8", "--threads", "2"])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "k,h,eta_k,J_k,sup_err,w12_err,el_residual"
    assert lines[1].startswith("4,0.25,")
    assert len(lines) == 3


def test_study_to_csv(tmp_path, problem_file):
    """Test the provenance comments of the study CSV."""
    path = tmp_path / "study.csv"
    code = run(
        ["study", "--problem", problem_file, "--k", "4", "--out", str(path)]
        + ["--no-timestamp"]
    )
    assert code == EXIT_OK
    text = path.read_text()
    assert "# mode=pktilde\n" in text
    assert "# sup_monotone=None\n" in text
    assert "created=" not in text


@pytest.mark.parametrize(
    "command,name",
    [(["solve", "--k", "8"], "solution.json"), (["study", "--k", "4,8"], "study.csv")],
)
def test_outputs_repeat_byte_for_byte(tmp_path, problem_file, command, name):
    """Test that a fixed seed without timestamps reproduces the output file."""
    contents = []
    for attempt in ("first", "second"):
        path = tmp_path / f"{attempt}-{name}"
        code = run(
            command
            + ["--problem", problem_file, "--seed", "3", "--no-timestamp"]
            + ["--out", str(path)]
        )
        assert code == EXIT_OK
        contents.append(path.read_bytes())
    assert contents[0] == contents[1]


def test_invalid_problem_file(tmp_path, invalid_problem, capsys):
    """Test that validation errors exit with code 2."""
    path = tmp_path / "problem.json"
    path.write_text(json.dumps(invalid_problem))
    code = run(["solve", "--problem", str(path), "--k", "4"])
    assert code == EXIT_CONFIG
    assert "ValidationError" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv,expected",
    [
        ([], EXIT_CONFIG),
        (["--help"], EXIT_OK),
        (["solve", "--k", "4"], EXIT_CONFIG),
        (["study", "--problem", "p.json", "--k", "4,x"], EXIT_CONFIG),
    ],
)
def test_argument_errors(argv, expected, capsys):
    """Test exit codes of the argument parser."""
    assert run(argv) == expected
