import json
import socket
import threading

import pytest

from azsl import cli
from azsl.config import emit_config, with_overrides
from azsl.data import load_features
from azsl.experiment import run_experiment, serve_experiment

from conftest import tiny_config

RUN_FILES = [
    "config.azsl",
    "gen.azw",
    "student.azw",
    "trace.csv",
    "transcript.json",
    "report_czsl.txt",
    "report_gzsl.txt",
]


def write_config(tmp_path, cfg, name="exp.azsl"):
    path = tmp_path / name
    path.write_text(emit_config(cfg))
    return path


@pytest.fixture(scope="module")
def black_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("blackrun")
    cfg = tiny_config(scenario="black", out=str(out / "run"))
    path = out / "exp.azsl"
    path.write_text(emit_config(cfg))
    assert cli.main(["run", str(path)]) == cli.EXIT_OK
    return out / "run"


class TestRun:
    def test_outputs_present(self, black_run):
        for name in RUN_FILES:
            assert (black_run / name).exists(), name

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_a = tiny_config(out=str(tmp_path / "a"))
        cfg_b = tiny_config(out=str(tmp_path / "b"))
        assert cli.main(["run", str(write_config(tmp_path, cfg_a, "a.azsl"))]) == 0
        assert cli.main(["run", str(write_config(tmp_path, cfg_b, "b.azsl"))]) == 0
        for name in ["report_czsl.txt", "report_gzsl.txt", "gen.azw", "student.azw", "trace.csv"]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_rerun_from_stored_canonical_config(self, black_run, tmp_path):
        stored = black_run / "config.azsl"
        rerun_cfg = with_overrides(
            __import__("azsl.config", fromlist=["parse_config"]).parse_config(stored),
            out=str(tmp_path / "rerun"),
        )
        result = run_experiment(rerun_cfg, outdir=rerun_cfg.out)
        for name in ["report_czsl.txt", "report_gzsl.txt"]:
            assert (tmp_path / "rerun" / name).read_bytes() == (black_run / name).read_bytes()

    def test_black_transcript_has_no_mid_entries(self, black_run):
        body = json.loads((black_run / "transcript.json").read_text())
        assert body["entries"], "transcript must not be empty"
        assert all(e["risk"] == "low" for e in body["entries"])

    def test_env_seed_override(self, tmp_path, monkeypatch):
        cfg_a = tiny_config(seed=1, out=str(tmp_path / "a"))
        cfg_b = tiny_config(seed=2, out=str(tmp_path / "b"))
        monkeypatch.setenv("AZSL_SEED", "777")
        assert cli.main(["run", str(write_config(tmp_path, cfg_a, "a.azsl"))]) == 0
        assert cli.main(["run", str(write_config(tmp_path, cfg_b, "b.azsl"))]) == 0
        assert (tmp_path / "a" / "report_gzsl.txt").read_bytes() == (
            tmp_path / "b" / "report_gzsl.txt"
        ).read_bytes()


class TestExitCodes:
    def test_usage(self):
        assert cli.main([]) == cli.EXIT_USAGE
        assert cli.main(["sweep", "x.azsl", "--param", "up"]) == cli.EXIT_USAGE

    def test_config_error(self, tmp_path):
        bad = tmp_path / "bad.azsl"
        bad.write_text("nonsense = 1\n")
        assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG

    def test_runtime_error(self, tmp_path):
        assert cli.main(["audit", str(tmp_path / "missing.json")]) == cli.EXIT_RUNTIME

    def test_bind_failure(self, tmp_path):
        taken = socket.socket()
        taken.bind(("127.0.0.1", 0))
        port = taken.getsockname()[1]
        cfg = tiny_config(endpoint=("127.0.0.1", port), out=str(tmp_path / "srv"))
        path = write_config(tmp_path, cfg, "srv.azsl")
        assert cli.main(["serve", str(path)]) == cli.EXIT_RUNTIME
        taken.close()


class TestAudit:
    def test_black_verdict_clean(self, black_run, capsys):
        assert cli.main(["audit", str(black_run / "transcript.json")]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[-1] == "BLACKBOX-CLEAN"

    def test_white_counts_mid_messages(self, tmp_path, capsys):
        cfg = tiny_config(scenario="white", t_g=25, out=str(tmp_path / "run"))
        run_experiment(cfg, outdir=cfg.out)
        assert cli.main(["audit", str(tmp_path / "run" / "transcript.json")]) == 0
        out = capsys.readouterr().out
        body = json.loads((tmp_path / "run" / "transcript.json").read_text())
        n_mid = sum(1 for e in body["entries"] if e["risk"] == "mid")
        n_ce = sum(1 for e in body["entries"] if e["kind"] == "ce_grad")
        assert n_mid == n_ce == 25  # one gradient response per generator epoch
        assert f"WHITEBOX ({n_mid} mid-risk messages)" in out

    def test_byte_totals_match_recorded_payloads(self, tmp_path, capsys):
        # recompute up/down totals from the raw frames the channel recorded
        from azsl.channel import InProcessChannel
        from azsl.experiment import build_dataset, build_server, build_split, client_setup, train_config
        from azsl.client import run_algorithm1

        cfg = tiny_config(scenario="black", t_g=10, t_s=5, out=str(tmp_path / "x"))
        ds = build_dataset(cfg)
        split = build_split(cfg, ds)
        server, _ = build_server(cfg, ds, split)
        channel = InProcessChannel(server, record_payloads=True)
        run_algorithm1(channel, ds.semantics, train_config(cfg), client_setup(cfg, ds, split))
        channel.transcript.save(tmp_path / "t.json")
        assert cli.main(["audit", str(tmp_path / "t.json")]) == 0
        out = capsys.readouterr().out
        up = sum(len(p) for _, p in channel.sent)
        down = sum(len(p) for _, p in channel.received)
        assert f"bytes up: {up}" in out
        assert f"bytes down: {down}" in out

    def test_corrupt_transcript(self, tmp_path):
        bad = tmp_path / "t.json"
        bad.write_text("{not json")
        assert cli.main(["audit", str(bad)]) == cli.EXIT_RUNTIME


class TestSweep:
    def test_single_value_single_row(self, tmp_path, capsys):
        cfg = tiny_config(scenario="black", out=str(tmp_path / "sweep"))
        path = write_config(tmp_path, cfg)
        assert cli.main(["sweep", str(path), "--param", "alpha", "--values", "0.5"]) == 0
        rows = (tmp_path / "sweep" / "sweep.csv").read_text().splitlines()
        assert rows[0] == "value,u,s,H"
        assert len(rows) == 2

    def test_h_column_consistent_and_cells_isolated(self, tmp_path):
        cfg = tiny_config(scenario="black", t_g=60, t_s=30, out=str(tmp_path / "sweep"))
        path = write_config(tmp_path, cfg)
        assert cli.main(["sweep", str(path), "--param", "noise_dim", "--values", "4,6"]) == 0
        rows = (tmp_path / "sweep" / "sweep.csv").read_text().splitlines()[1:]
        assert len(rows) == 2
        for row in rows:
            _, u, s, h = row.split(",")
            u, s, h = float(u), float(s), float(h)
            expect = 0.0 if u + s == 0 else 2 * u * s / (u + s)
            assert abs(h - expect) < 1e-9
        assert (tmp_path / "sweep" / "cell_000" / "report_gzsl.txt").exists()
        assert (tmp_path / "sweep" / "cell_001" / "report_gzsl.txt").exists()

    def test_reference_noise_grid(self, tmp_path):
        cfg = tiny_config(scenario="black", t_g=60, t_s=30, per_class_count=40, out=str(tmp_path / "sweep"))
        path = write_config(tmp_path, cfg)
        assert cli.main(["sweep", str(path), "--param", "noise_dim", "--values", "20,100,400,768"]) == 0
        rows = (tmp_path / "sweep" / "sweep.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == ["20", "100", "400", "768"]

    def test_empty_values_rejected(self, tmp_path):
        path = write_config(tmp_path, tiny_config())
        assert cli.main(["sweep", str(path), "--param", "alpha", "--values", " "]) == cli.EXIT_CONFIG


class TestFileBackedRun:
    def test_run_from_azb_file(self, tmp_path):
        data_path = tmp_path / "data.azb"
        gen_cfg = write_config(tmp_path, tiny_config(), "gen.azsl")
        assert cli.main(["gen-data", str(gen_cfg), str(data_path)]) == 0
        cfg = with_overrides(
            tiny_config(out=str(tmp_path / "run")), synthetic=None, dataset_path=str(data_path)
        )
        assert cli.main(["run", str(write_config(tmp_path, cfg, "file.azsl"))]) == 0
        assert (tmp_path / "run" / "report_gzsl.txt").exists()

    def test_inductive_run_writes_classifier(self, tmp_path):
        cfg = tiny_config(teacher_mode="inductive", out=str(tmp_path / "run"))
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        assert (tmp_path / "run" / "classifier.azw").exists()

    def test_inductive_blackbox_combination(self, tmp_path):
        cfg = tiny_config(teacher_mode="inductive", scenario="black", out=str(tmp_path / "run"))
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        body = json.loads((tmp_path / "run" / "transcript.json").read_text())
        assert all(e["risk"] == "low" for e in body["entries"])
        assert (tmp_path / "run" / "classifier.azw").exists()


class TestGenData:
    def test_write_and_reload(self, tmp_path):
        path = write_config(tmp_path, tiny_config())
        out = tmp_path / "data.azb"
        assert cli.main(["gen-data", str(path), str(out)]) == 0
        ds = load_features(out)
        assert ds.n == 10 * 80

    def test_requires_synthetic_spec(self, tmp_path):
        out = tmp_path / "d.azb"
        from azsl.data import save_features, make_synthetic, SyntheticSpec

        save_features(make_synthetic(SyntheticSpec(per_class=2), 0), out)
        cfg = tiny_config()
        cfg = with_overrides(cfg, synthetic=None, dataset_path=str(out))
        path = write_config(tmp_path, cfg)
        assert cli.main(["gen-data", str(path), str(tmp_path / "x.azb")]) == cli.EXIT_CONFIG


class TestServeCli:
    def test_sigterm_flushes_transcript(self, tmp_path):
        import os
        import signal
        import socket
        import subprocess
        import sys
        import time

        free = socket.socket()
        free.bind(("127.0.0.1", 0))
        port = free.getsockname()[1]
        free.close()
        cfg = tiny_config(endpoint=("127.0.0.1", port), out=str(tmp_path / "srv"))
        path = write_config(tmp_path, cfg, "srv.azsl")
        proc = subprocess.Popen(
            [sys.executable, "-m", "azsl.cli", "serve", str(path)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE,
        )
        try:
            deadline = time.time() + 120
            while time.time() < deadline:
                try:
                    socket.create_connection(("127.0.0.1", port), timeout=1).close()
                    break
                except OSError:
                    if proc.poll() is not None:
                        raise AssertionError(proc.stderr.read().decode())
                    time.sleep(0.3)
            else:
                raise AssertionError("server never came up")
            os.kill(proc.pid, signal.SIGTERM)
            assert proc.wait(timeout=30) == 0
        finally:
            if proc.poll() is None:
                proc.kill()
        assert (tmp_path / "srv" / "server_transcript.json").exists()

    def test_serve_then_remote_run_matches_local(self, tmp_path):
        local_cfg = tiny_config(out=str(tmp_path / "local"))
        run_experiment(local_cfg, outdir=local_cfg.out)

        serve_cfg = tiny_config(endpoint=("127.0.0.1", 0), out=str(tmp_path / "server"))
        stop = threading.Event()
        ready = threading.Event()
        bound = {}

        def on_ready(addr):
            bound["port"] = addr[1]
            ready.set()

        thread = threading.Thread(
            target=serve_experiment, args=(serve_cfg,), kwargs={"stop_event": stop, "ready": on_ready},
            daemon=True,
        )
        thread.start()
        assert ready.wait(120)
        try:
            remote_cfg = tiny_config(
                channel="tcp", endpoint=("127.0.0.1", bound["port"]), out=str(tmp_path / "remote")
            )
            run_experiment(remote_cfg, outdir=remote_cfg.out)
        finally:
            stop.set()
            thread.join(timeout=30)
        for name in ["report_czsl.txt", "report_gzsl.txt", "gen.azw", "student.azw"]:
            assert (tmp_path / "remote" / name).read_bytes() == (tmp_path / "local" / name).read_bytes()
        # the serve loop flushed its own transcript on shutdown
        assert (tmp_path / "server" / "server_transcript.json").exists()
