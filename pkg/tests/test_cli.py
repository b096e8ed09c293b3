import csv
import json
import subprocess
import sys

import pytest

from ssdcm.choice_data import SynthConfig, load_dataset, mask_labels, synth_generate, write_dataset
from ssdcm.cli import main
from ssdcm.experiments import Itinerary, TravelRequest, load_itineraries, write_itineraries

FAST_SGD = {"step_size": 10.0, "sampling_rate": 0.5, "max_iterations": 600, "tolerance": 1e-3}
FAST_FLAGS = ["--step-size", "10", "--sampling-rate", "0.5", "--max-iterations", "600", "--tolerance", "1e-3"]


def _two_segments(n, seed=0):
    cfg = SynthConfig(
        n_requests=n, alts_per_request=3, isf_dim=2, msf_dim=2,
        segment_coefficients=[[1.5, -1.0], [-1.5, 1.0]], segment_isf_means=[[-3.0, 0.0], [3.0, 0.0]],
    )
    return synth_generate(cfg, seed)


@pytest.fixture(scope="module")
def partly_labeled(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.csv"
    write_dataset(mask_labels(_two_segments(400), 0.4, 1), path)
    return path


@pytest.fixture(scope="module")
def fully_labeled(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "full.csv"
    write_dataset(_two_segments(200, seed=2), path)
    return path


class TestFit:
    def test_baseline_theta_length(self, partly_labeled, tmp_path):
        out = tmp_path / "r.json"
        code = main(["fit", "--algo", "baseline", "--data", str(partly_labeled), "--seed", "1", "--out", str(out)])
        assert code == 0
        rep = json.loads(out.read_text())
        assert len(rep["theta"]) == load_dataset(partly_labeled).R
        assert rep["algorithm"] == "baseline"

    def test_xcl1_has_cluster_tree(self, partly_labeled, tmp_path):
        out = tmp_path / "r.json"
        code = main(["fit", "--algo", "xcl1", "--data", str(partly_labeled), "--seed", "1", "--out", str(out),
                     *FAST_FLAGS])
        assert code == 0
        tree = json.loads(out.read_text())["cluster_tree"]
        assert len(tree["nodes"]) >= 1

    @pytest.mark.parametrize("algo,extra", [("cl", ["--k", "2"]), ("em", ["--beta", "0.1"]), ("xcl2", [])])
    def test_other_algorithms(self, partly_labeled, algo, extra, capsys):
        code = main(["fit", "--algo", algo, "--data", str(partly_labeled), "--seed", "3", *extra, *FAST_FLAGS])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["algorithm"] == algo

    def test_zero_clusters(self, partly_labeled, capsys):
        code = main(["fit", "--algo", "cl", "--k", "0", "--data", str(partly_labeled), "--seed", "1"])
        assert code == 1
        assert "K=0" in capsys.readouterr().err

    def test_unknown_algorithm(self, partly_labeled, capsys):
        assert main(["fit", "--algo", "svm", "--data", str(partly_labeled), "--seed", "1"]) == 1

    def test_seed_required(self, partly_labeled):
        assert main(["fit", "--algo", "baseline", "--data", str(partly_labeled)]) == 1

    def test_missing_data_file(self, tmp_path):
        assert main(["fit", "--algo", "baseline", "--data", str(tmp_path / "nope.csv"), "--seed", "1"]) == 1

    def test_malformed_data_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("request_id,alt_id,chosen,isf:a,msf:x\nr,1,1,0,1\nr,2,1,0,2\n")
        assert main(["fit", "--algo", "baseline", "--data", str(bad), "--seed", "1"]) == 2
        assert "'r'" in capsys.readouterr().err

    def test_fit_failure_exit_code(self, tmp_path):
        # five labeled requests cannot satisfy the default labeled-count floor of XCL1
        path = tmp_path / "few.csv"
        write_dataset(mask_labels(_two_segments(50), 0.1, 0), path)
        assert main(["fit", "--algo", "xcl1", "--data", str(path), "--seed", "1"]) == 3

    def test_config_file_with_override(self, partly_labeled, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"algo": "cl", "k": 3, "data": str(partly_labeled), "sgd": FAST_SGD}))
        out = tmp_path / "r.json"
        assert main(["fit", "--config", str(cfg), "--k", "2", "--seed", "1", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["info"]["K"] == 2

    def test_deterministic(self, partly_labeled, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            main(["fit", "--algo", "cl", "--k", "2", "--data", str(partly_labeled), "--seed", "4", "--out", str(out),
                  *FAST_FLAGS])
        ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
        ra.pop("seconds"), rb.pop("seconds")
        assert ra == rb


@pytest.fixture(scope="module")
def plan_config(fully_labeled, tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "plan.json"
    path.write_text(json.dumps({
        "data": str(fully_labeled), "q_pcts": [10, 20], "folds": 10, "roster": ["baseline", "cl"],
        "cl_ks": [2], "sgd": FAST_SGD,
    }))
    return path


class TestExperiment:
    def test_csv_cardinality_and_rerun(self, plan_config, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["experiment", "--config", str(plan_config), "--seed", "0", "--out-dir", str(out)]) == 0
            outs.append(out)
        rows = list(csv.DictReader((outs[0] / "metrics.csv").open()))
        assert len(rows) == 2 * 10 * 2 * 4
        assert {r["metric"] for r in rows} == {"ROLIK", "RD", "PD", "RR"}
        assert (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
        timings = list(csv.DictReader((outs[0] / "timings.csv").open()))
        assert len(timings) == 2 * 10 * 2
        assert all(float(t["seconds"]) > 0 for t in timings)
        summary = json.loads((outs[0] / "summary.json").read_text())
        assert summary["plan"]["q_pcts"] == [10, 20]

    def test_bad_q(self, fully_labeled, tmp_path):
        code = main(["experiment", "--data", str(fully_labeled), "--seed", "0", "--q", "70",
                     "--out-dir", str(tmp_path)])
        assert code == 1


class TestAirline:
    def test_table_layout_and_planted_fraction(self, tmp_path):
        itin = tmp_path / "it.csv"
        assert main(["synth", "--kind", "itinerary", "--n", "300", "--planted-fraction", "0.2", "--seed", "5",
                     "--out", str(itin)]) == 0
        out = tmp_path / "air"
        code = main(["airline", "--itineraries", str(itin), "--seed", "5", "--out-dir", str(out),
                     "--roster", "baseline", "cl", "--k", "2", "--max-iterations", "500"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["labeled_fraction"] == pytest.approx(0.2)
        with (out / "accuracy.csv").open() as fh:
            table = list(csv.reader(fh))
        assert table[0] == ["algorithm", "metric", "10%", "20%", "30%", "40%", "50%"]
        assert len(table) == 1 + 2 * 2
        assert {"dep1", "dep2"} <= set(summary["algorithms"]["baseline"]["value_of_time"])

    def test_all_equal_request_never_labeled(self, tmp_path):
        same = tuple(Itinerary(300.0, 9.0, 57.0) for _ in range(3))
        distinct = (Itinerary(100.0, 8.0, 56.0), Itinerary(200.0, 10.0, 58.0))
        reqs = [TravelRequest("flat", 8.0, 56.0, same)] + [TravelRequest(f"ok{i}", 8.0, 56.0, distinct)
                                                           for i in range(30)]
        itin = tmp_path / "it.csv"
        write_itineraries(reqs, itin)
        assert load_itineraries(itin)[0].id == "flat"
        out = tmp_path / "air"
        assert main(["airline", "--itineraries", str(itin), "--seed", "1", "--out-dir", str(out)]) == 0
        labeled = load_dataset(out / "labeled.csv")
        flat = next(r for r in labeled.requests if r.id == "flat")
        assert flat.label is None
        assert labeled.n == 30

    def test_missing_file(self, tmp_path):
        assert main(["airline", "--itineraries", str(tmp_path / "none.csv"), "--seed", "1"]) == 1


class TestSynthAndValidate:
    def test_choice_synth_then_validate(self, tmp_path, capsys):
        out = tmp_path / "d.csv"
        assert main(["synth", "--kind", "choice", "--n", "50", "--seed", "2", "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["validate", "--data", str(out)]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["requests"] == 50 and info["labeled"] == 50

    def test_synth_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            main(["synth", "--n", "30", "--seed", "9", "--out", str(p)])
        assert a.read_bytes() == b.read_bytes()

    def test_no_command(self):
        assert main([]) == 1

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "ssdcm.cli", "validate"], capture_output=True, text=True)
        assert res.returncode == 1
        assert "--data" in res.stderr
