import json
import os

import numpy as np
import pytest

from rwre import reports
from rwre.cli import main


class TestReports:
    def test_canonical_json_sorted_and_stable(self):
        a = reports.canonical_json({"b": 1, "a": [1.5, 2]})
        b = reports.canonical_json({"a": [1.5, 2], "b": 1})
        assert a == b == '{"a":[1.5,2],"b":1}'

    def test_sanitize_handles_numpy_and_nonfinite(self):
        out = reports.sanitize({"x": np.float64(1.5), "y": np.int32(3),
                                "z": float("nan"), "w": np.array([1, 2])})
        assert out == {"x": 1.5, "y": 3, "z": "NaN", "w": [1, 2]}

    def test_config_hash_changes_with_config(self):
        h1 = reports.config_hash({"seed": 1})
        h2 = reports.config_hash({"seed": 2})
        assert h1 != h2 and len(h1) == 64

    def test_payload_bytes_exclude_timestamp(self):
        e1 = reports.envelope("x", {"seed": 1}, {"v": 2})
        e2 = reports.envelope("x", {"seed": 1}, {"v": 2})
        e2["timestamp"] = "someday"
        assert reports.payload_bytes(e1) == reports.payload_bytes(e2)


class TestCli:
    def run(self, *argv):
        return main(list(argv))

    def test_env_gen_inspect_round_trip(self, tmp_path, capsys):
        out = tmp_path / "e.bin"
        assert self.run("env", "gen", "--kind", "iid", "--d", "2",
                        "--kappa", "0.05", "--region=-8:8,-8:8",
                        "--seed", "7", "--out", str(out)) == 0
        # inspect echoes the generator parameters
        assert self.run("env", "inspect", str(out)) == 0
        text = capsys.readouterr().out
        assert '"kappa": 0.05' in text and '"seed": 7' in text

    def test_env_gen_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        for p in (a, b):
            assert self.run("env", "gen", "--kind", "iid", "--d", "2",
                            "--kappa", "0.05", "--region=-6:6,-6:6",
                            "--seed", "3", "--out", str(p)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_walk_sim_report_and_dump(self, tmp_path):
        env = tmp_path / "e.bin"
        self.run("env", "gen", "--d", "2", "--kappa", "0.05",
                 "--region=-40:40,-40:40", "--seed", "1", "--out", str(env))
        rep = tmp_path / "walk.json"
        dump = tmp_path / "traj.jsonl"
        assert self.run("walk", "sim", "--env", str(env), "--start", "0,0",
                        "--stops", "up:1,0:5;down:1,0:-5;horizon:4000",
                        "--n", "50", "--seed", "3", "--out", str(rep),
                        "--dump", str(dump)) == 0
        payload = json.loads(rep.read_text())["payload"]
        assert sum(payload["fired"].values()) == 50
        lines = [json.loads(l) for l in dump.read_text().splitlines()]
        assert len(lines) == 50
        assert {"start", "steps", "annotations"} <= set(lines[0])

    def test_same_config_same_bytes(self, tmp_path):
        outs = []
        for name in ("r1.json", "r2.json"):
            p = tmp_path / name
            assert self.run("oracle", "exit", "--probs", "0.7,0.1,0.1,0.1",
                            "--box", "4,4,8", "--start", "0,0",
                            "--out", str(p)) == 0
            env = json.loads(p.read_text())
            outs.append(reports.payload_bytes(env))
        assert outs[0] == outs[1]

    def test_thread_count_leaves_payload_unchanged(self, tmp_path):
        payloads = []
        for threads in ("1", "8"):
            p = tmp_path / f"t{threads}.json"
            assert self.run("walk", "sim", "--probs", "0.4,0.1,0.25,0.25",
                            "--kappa", "0.05", "--start", "0,0",
                            "--stops", "up:1,0:8;horizon:4000",
                            "--n", "600", "--seed", "5", "--threads", threads,
                            "--out", str(p)) == 0
            payloads.append(reports.canonical_json(
                json.loads(p.read_text())["payload"]))
        assert payloads[0] == payloads[1]

    def test_check_ec_empty_grid_exit_code(self, tmp_path, capsys):
        code = self.run("check", "ec", "--d", "2", "--kappa", "0.05",
                        "--Lgrid", "3", "--Ltildegrid", "2", "--agrid", "0.5",
                        "--out", str(tmp_path / "ec.json"))
        assert code == 1
        assert "empty feasible grid" in capsys.readouterr().err

    def test_unknown_stop_clause_exit_code(self, tmp_path, capsys):
        code = self.run("walk", "sim", "--probs", "0.25,0.25,0.25,0.25",
                        "--stops", "bogus:1", "--out", str(tmp_path / "x.json"))
        assert code == 1

    def test_strict_inconclusive_exit_code(self, tmp_path):
        # symmetric environment: no decay, fit is degenerate -> inconclusive
        code = self.run("check", "tgamma", "--probs", "0.25,0.25,0.25,0.25",
                        "--levels", "3,4,5", "--n-walks", "2000",
                        "--seed", "2", "--strict",
                        "--out", str(tmp_path / "tg.json"))
        assert code == 2

    def test_report_envelope_structure(self, tmp_path):
        p = tmp_path / "lad.json"
        assert self.run("renorm", "ladder", "--kind", "poly", "--N0", "100",
                        "--kappa", "0.05", "--k-max", "2", "--out", str(p)) == 0
        env = json.loads(p.read_text())
        assert {"tool", "command", "config", "config_hash", "seed",
                "timestamp", "warnings", "payload"} <= set(env)
        assert env["payload"]["N"] == [100, 2336400, 2401856582400]

    def test_env_gen_gibbs(self, tmp_path, capsys):
        out = tmp_path / "g.bin"
        assert self.run("env", "gen", "--kind", "gibbs", "--d", "2",
                        "--kappa", "0.05", "--region=-5:5,-5:5",
                        "--C", "1.0", "--g", "1.0", "--r", "1", "--sweeps", "4",
                        "--seed", "2", "--out", str(out)) == 0
        assert self.run("env", "inspect", str(out)) == 0
        assert '"kind": "gibbs"' in capsys.readouterr().out

    def test_check_pj_report(self, tmp_path):
        p = tmp_path / "pj.json"
        assert self.run("check", "pj", "--probs", "0.94,0.02,0.02,0.02",
                        "--kappa", "0.01", "--N0", "11", "--J", "1",
                        "--n-env", "30", "--out", str(p)) == 0
        payload = json.loads(p.read_text())["payload"]
        assert payload["verdict"] == "holds"
        assert payload["details"]["threshold"] == pytest.approx(1 / 11)

    def test_renorm_classify(self, tmp_path):
        p = tmp_path / "cls.json"
        assert self.run("renorm", "classify", "--probs", "0.7,0.1,0.1,0.1",
                        "--kappa", "0.05", "--N0", "5", "--level", "0",
                        "--preset", "mini", "--anchors", "0,0;5,0",
                        "--out", str(p)) == 0
        payload = json.loads(p.read_text())["payload"]
        assert payload["status"] == {"(0, 0)": True, "(5, 0)": True}

    def test_clt_check_report(self, tmp_path):
        p = tmp_path / "clt.json"
        assert self.run("clt", "check", "--probs", "0.4,0.1,0.25,0.25",
                        "--kappa", "0.05", "--n-grid", "2000", "--reps", "300",
                        "--seed", "4", "--out", str(p)) == 0
        payload = json.loads(p.read_text())["payload"]
        assert "2000" in payload["grid"]
        assert abs(payload["velocity"]["v_hat"][0] - 0.3) < 0.02

    def test_clt_atypical_report(self, tmp_path):
        p = tmp_path / "at.json"
        assert self.run("clt", "atypical", "--M", "3", "--beta", "0.9",
                        "--c", "1.0", "--d", "2", "--kappa", "0.05",
                        "--n-env", "10", "--seed", "5", "--out", str(p)) == 0
        payload = json.loads(p.read_text())["payload"]
        assert payload["frequency"] == 0.0

    def test_config_file_supplies_defaults(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n": 40}))
        p = tmp_path / "w.json"
        assert self.run("walk", "sim", "--probs", "0.25,0.25,0.25,0.25",
                        "--stops", "horizon:50", "--config", str(cfg),
                        "--out", str(p)) == 0
        assert json.loads(p.read_text())["payload"]["n"] == 40
