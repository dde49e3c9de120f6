import csv
import io
import json
import subprocess
import sys
import threading

import pytest

from dispkey.cli import RunConfig, UsageError, main
from dispkey.fock import PureFockState


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_run_config_validation():
    with pytest.raises(UsageError):
        RunConfig("x", sigma_sq=[-1.0])
    with pytest.raises(UsageError):
        RunConfig("x", format="xml")
    with pytest.raises(UsageError):
        RunConfig("x", workers=0)


def test_verify_bound_fock_pair(capsys):
    code, out, _ = _run(capsys, "verify-bound", "--pair", "fock:0,fock:1", "--sigma-sq", "4,16,64", "--no-timestamp")
    rows = _rows(out)
    assert code == 0 and len(rows) == 3
    assert all(r["satisfied"] == "true" for r in rows)
    assert {"sigma", "n", "stateA", "stateB", "measured", "bound", "cutoff", "tail_eps", "satisfied"} <= set(rows[0])


def test_verify_bound_identical_and_precondition(capsys):
    code, out, _ = _run(capsys, "verify-bound", "--pair", "plus:1,plus:1", "--pair", "fock:0,fock:1", "--sigma-sq", "1", "--no-timestamp")
    rows = _rows(out)
    assert code == 0
    assert float(rows[0]["measured"]) == 0.0
    assert rows[1]["bound"] == "precondition-violated"


def test_byte_identical_reruns(capsys, tmp_path):
    args = ["verify-bound", "--random-pairs", "2", "--sigma-sq", "2,4", "--no-timestamp", "--format", "json"]
    _, first, _ = _run(capsys, *args)
    _, second, _ = _run(capsys, *args)
    assert first == second
    doc = json.loads(first)
    assert "generated" not in doc and all(r["runtime_ms"] is None for r in doc["rows"])
    _, stamped, _ = _run(capsys, *args[:-3], "--format", "json")
    assert "generated" in json.loads(stamped)


def test_workers_give_same_rows(capsys):
    args = ["verify-bound", "--random-pairs", "3", "--sigma-sq", "2", "--no-timestamp"]
    _, serial, _ = _run(capsys, *args)
    _, pooled, _ = _run(capsys, *args, "--workers", "2")
    assert serial == pooled


def test_out_file(capsys, tmp_path):
    path = tmp_path / "r.csv"
    code, out, _ = _run(capsys, "oracle-check", "--nmax", "2", "--sigma-sq", "2", "--out", str(path))
    assert code == 0 and "0 violated" in out
    assert _rows(path.read_text())[0]["satisfied"] == "true"


def test_oracle_check_limits(capsys):
    code, _, err = _run(capsys, "oracle-check", "--nmax", "9")
    assert code == 2 and "8" in err


def test_mc_check(capsys):
    code, out, _ = _run(capsys, "mc-check", "--states", "fock:0", "--samples", "20000", "--cutoff", "15", "--no-timestamp")
    assert code in (0, 1)
    assert _rows(out)[0]["state"] == "fock:0"


def test_lemma_checks_flag_row_sum_violations(capsys):
    code, out, _ = _run(capsys, "lemma-checks", "--no-timestamp")
    rows = _rows(out)
    bad = [r for r in rows if r["satisfied"] == "false"]
    assert code == 1
    assert bad and all(r["experiment"] == "offdiag-row-sum" for r in bad)


def test_protocol_demo(capsys):
    code, out, _ = _run(capsys, "protocol-demo", "--state", "fock:1,1", "--sigma", "0.5", "--runs", "2", "--no-timestamp")
    rows = _rows(out)
    assert code == 0 and len(rows) == 2
    assert all(float(r["measured"]) >= 1 - 1e-6 for r in rows)
    code, out, _ = _run(capsys, "protocol-demo", "--sigma", "0", "--no-timestamp")
    assert code == 0 and abs(float(_rows(out)[0]["measured"]) - 1) <= 1e-12


def test_adaptive_demo(capsys):
    code, out, _ = _run(capsys, "adaptive-demo", "--runs", "40", "--no-timestamp")
    rows = _rows(out)
    assert code == 0
    freq = [r for r in rows if r["experiment"] == "adaptive-frequency"]
    assert len(freq) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["verify-bound", "--pair", "/nonexistent.json,fock:0"],
        ["verify-bound", "--sigma-sq", "abc"],
        ["verify-bound", "--sigma-sq", "-2"],
        ["protocol-demo", "--runs", "0"],
        ["connect"],
        ["no-such-command"],
        ["protocol-demo", "--unitary", "random:1", "--modes", "2", "--state", "fock:1,0,0"],
    ],
)
def test_usage_errors_exit_2(capsys, argv):
    assert main(argv) == 2


def test_state_file(capsys, tmp_path):
    path = tmp_path / "s.json"
    PureFockState.single_mode([0.6, 0.8]).save(path)
    code, out, _ = _run(capsys, "verify-bound", "--pair", f"{path},fock:0", "--sigma-sq", "4", "--no-timestamp")
    assert code == 0 and _rows(out)[0]["stateA"] == str(path)


def test_connect_version_mismatch_exit_1(capsys):
    import socket

    from dispkey.network import SocketChannel
    from dispkey.optics import beamsplitter

    server = socket.create_server(("127.0.0.1", 0))
    port = server.getsockname()[1]

    def fake():
        conn, _ = server.accept()
        with conn:
            ch = SocketChannel(conn)
            ch.recv()
            ch.send("HELLO", {"version": 7, "modes": 2, "unitary_stage1": beamsplitter(0.3), "measured_mode": None, "branch_table": {}})
            try:
                ch.recv()
            except Exception:
                pass
        server.close()

    t = threading.Thread(target=fake, daemon=True)
    t.start()
    code, _, err = _run(capsys, "connect", "--address", f"127.0.0.1:{port}", "--state", "fock:1,0", "--timeout", "5")
    t.join(5)
    assert code == 1 and "VersionMismatchError" in err


def test_serve_and_connect_two_processes():
    serve = subprocess.Popen(
        [sys.executable, "-m", "dispkey", "serve", "--adaptive", "--n", "1", "--seed", "4", "--timeout", "30"],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        line = serve.stdout.readline()
        assert line.startswith("listening on ")
        address = line.split()[-1]
        client = subprocess.run(
            [sys.executable, "-m", "dispkey", "connect", "--address", address, "--state", "fock:1,0", "--seed", "4", "--no-timestamp"],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert client.returncode == 0, client.stderr
        row = _rows(client.stdout)[0]
        assert float(row["measured"]) >= 1 - 1e-6
        assert row["events"].split("|")[3] == "measure"
        assert serve.wait(timeout=30) == 0
        assert "session ok" in serve.stdout.read()
    finally:
        serve.kill()
