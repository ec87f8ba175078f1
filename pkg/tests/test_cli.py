import json

import pytest

from indist.cli import main
from indist.matrices import read_matrix, sylvester


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def s4(tmp_path):
    path = tmp_path / "s4.json"
    assert run("matrix", "gen", "--kind", "sylvester", "--p", 2, "--out", path) == 0
    return path


@pytest.fixture
def events(tmp_path, s4):
    path = tmp_path / "events.tsv"
    assert run("scattershot", "simulate", "--matrix", s4, "-n", 2, "--x", 0.738, "--count", 3000, "--seed", 1, "--out", path) == 0
    return path


class TestMatrixAndTvd:
    def test_sylvester_tvd(self, s4, tmp_path, capsys):
        out = tmp_path / "tvd.tsv"
        assert run("tvd", "--matrix", s4, "--photons", 2, "--policy", "col", "--all", "--out", out) == 0
        assert "avg_tvd 0.500000" in capsys.readouterr().out
        assert (read_matrix(s4) == sylvester(2)).all()

    def test_fourier_tvd(self, tmp_path, capsys):
        f4 = tmp_path / "f4.json"
        run("matrix", "gen", "--kind", "fourier", "--m", 4, "--out", f4)
        assert run("tvd", "--matrix", f4, "--photons", 2, "--policy", "col", "--all") == 0
        assert "avg_tvd 0.333333" in capsys.readouterr().out

    def test_fixed_input(self, s4, capsys):
        assert run("tvd", "--matrix", s4, "-n", 2, "--input", "1,3") == 0
        assert "max_tvd 0.500000 (input 1-0-1-0)" in capsys.readouterr().out

    def test_manifest(self, tmp_path):
        out = tmp_path / "haar.json"
        assert run("matrix", "gen", "--kind", "haar", "--m", 3, "--seed", 12, "--out", out) == 0
        manifest = json.loads((tmp_path / "haar.json.manifest.json").read_text())
        assert manifest["command"] == "matrix gen"
        assert manifest["seed"] == 12
        assert manifest["parameters"]["m"] == 3
        assert set(manifest["outputs"]) == {str(out)}

    def test_auto_seed_recorded(self, tmp_path, capsys):
        out = tmp_path / "haar.json"
        assert run("matrix", "gen", "--kind", "haar", "--m", 3, "--out", out) == 0
        seed = json.loads((tmp_path / "haar.json.manifest.json").read_text())["seed"]
        assert f"seed: {seed}" in capsys.readouterr().out
        again = tmp_path / "again.json"
        run("matrix", "gen", "--kind", "haar", "--m", 3, "--seed", seed, "--out", again)
        assert again.read_bytes() == out.read_bytes()


class TestExitCodes:
    def test_malformed_matrix(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n "rows": 2,\n oops\n}\n')
        assert run("tvd", "--matrix", bad, "-n", 2) == 2
        assert "bad.json:" in capsys.readouterr().err

    def test_not_unitary(self, tmp_path):
        path = tmp_path / "m.json"
        run("matrix", "gen", "--kind", "sylvester", "--p", 1, "--out", path)
        path.write_text(path.read_text().replace("0.70710678118654746", "0.9", 1))
        assert run("tvd", "--matrix", path, "-n", 2) == 2

    def test_missing_file(self, tmp_path):
        assert run("tvd", "--matrix", tmp_path / "nope.json", "-n", 2) == 2

    def test_bad_event_line(self, tmp_path, s4, capsys):
        ev = tmp_path / "ev.tsv"
        ev.write_text("input\toutput\n1-1-0-0\t0-1-1-0\n1-1-0-0\t1-1-1-0\n")
        assert run("scattershot", "analyze", "--matrix", s4, "--events", ev, "-n", 2, "--out", tmp_path / "o.tsv") == 2
        assert "ev.tsv:3" in capsys.readouterr().err

    def test_convergence_failure(self, tmp_path, capsys):
        ident = tmp_path / "id.json"
        run("matrix", "gen", "--kind", "fast", "--p", 1, "--tau", 1.0, "--out", ident)
        # with an identity interferometer Q equals P and no threshold exists
        assert run("bayes", "threshold", "--matrix", ident, "-n", 1, "--seed", 1, "--out", tmp_path / "t.tsv") == 3

    def test_bad_device(self, tmp_path):
        assert run("tomo", "synth", "--device", "5", "--seed", 1, "--prefix", tmp_path / "d") == 2

    def test_argparse_error(self):
        with pytest.raises(SystemExit) as exc:
            run("matrix", "gen", "--kind", "bogus", "--out", "x")
        assert exc.value.code == 2


class TestWorkflows:
    def test_scattershot(self, tmp_path, s4, events, capsys):
        out, post = tmp_path / "summary.tsv", tmp_path / "post.tsv"
        assert run("scattershot", "analyze", "--matrix", s4, "--events", events, "-n", 2, "--out", out, "--posterior-out", post) == 0
        assert "x_est = " in capsys.readouterr().out
        assert out.read_text().startswith("N\t3000\n")

    def test_bayes_infer_and_convex(self, tmp_path, s4, events):
        assert run("bayes", "infer", "--matrix", s4, "--events", events, "-n", 2, "--out", tmp_path / "post.tsv") == 0
        out = tmp_path / "convex.tsv"
        argv = ["bayes", "convex", "--matrix", s4, "--events", events, "-n", 2, "--n-sim", 2000, "--repeats", 4]
        assert run(*argv, "--seed", 3, "--out", out) == 0
        assert out.read_text().startswith("favored\t")

    def test_tomography(self, tmp_path, capsys):
        prefix = tmp_path / "dev"
        assert run("tomo", "synth", "--device", 4, "--seed", 2, "--prefix", prefix) == 0
        report = tmp_path / "report.tsv"
        argv = ["tomo", "fit", "--probs", f"{prefix}.probs.json", "--errors", f"{prefix}.errors.json", "--vis", f"{prefix}.vis.tsv"]
        assert run(*argv, "--seed", 0, "--out", report) == 0
        text = report.read_text()
        assert "tau[1](1,3)\t0.687" in text
        assert "# fidelity" in text


DETERMINISM_CASES = {
    "haar": ["search", "haar", "--m", 4, "-n", 2, "--samples", 60, "--seed", 5],
    "phases": ["search", "phases", "--p", 2, "-n", 2, "--samples", 60, "--seed", 5],
    "optimize": ["search", "optimize", "--m", 3, "-n", 2, "--restarts", 3, "--max-evals", 300, "--seed", 5],
    "test": ["bayes", "test", "--matrix", "{s4}", "-n", 2, "--max-events", 20, "--trials", 30, "--seed", 5],
    "threshold": ["bayes", "threshold", "--matrix", "{s4}", "-n", 2, "--n-events", 50, "--samples", 10, "--seed", 5],
    "convex": ["bayes", "convex", "--matrix", "{s4}", "--events", "{events}", "-n", 2, "--n-sim", 500, "--repeats", 5, "--seed", 5],
    "simulate": ["scattershot", "simulate", "--matrix", "{s4}", "-n", 2, "--x", 0.5, "--count", 500, "--seed", 5],
    "analyze": ["scattershot", "analyze", "--matrix", "{s4}", "--events", "{events}", "-n", 2, "--resequence", 8, "--seed", 5],
}


@pytest.mark.parametrize("name", sorted(DETERMINISM_CASES))
def test_byte_identical_across_threads(name, tmp_path, s4, events):
    files = {"s4": s4, "events": events}
    outputs = []
    for threads in (1, 3):
        out = tmp_path / f"{name}.{threads}.out"
        argv = [str(a).format(**files) for a in DETERMINISM_CASES[name]]
        assert run("--threads", threads, *argv, "--out", out) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_tomography_bootstrap_byte_identical(tmp_path):
    prefix = tmp_path / "dev"
    run("tomo", "synth", "--device", 4, "--noise", 0.01, "--seed", 4, "--prefix", prefix)
    argv = ["tomo", "fit", "--probs", f"{prefix}.probs.json", "--errors", f"{prefix}.errors.json", "--vis", f"{prefix}.vis.tsv"]
    reports = []
    for threads in (1, 4):
        out = tmp_path / f"report.{threads}.tsv"
        assert run("--threads", threads, *argv, "--bootstrap", 4, "--seed", 9, "--out", out) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1]
