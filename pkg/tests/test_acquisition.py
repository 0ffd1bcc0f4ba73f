import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from raptarkit.acquisition import (
    AnalyzerClient, ConnectionLost, ProtocolError, SimClock, ValidationExhausted, acquire_point, run_scan,
)
from raptarkit.analyzer import PatternModel, expected_reading, true_power
from raptarkit.metrics import coverage
from raptarkit.scanlog import IoError, read_log
from raptarkit.se3 import SphericalCoord, generate_grid, grid_from_points


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_boresight_zero_noise_exact(analyzer):
    srv = analyzer()
    with AnalyzerClient(*srv.address) as conn:
        s = acquire_point(conn, SphericalCoord(0, 0, 0.15), dwell=20.0, sweeps_per_dwell=10, max_retries=3)
    assert s.power == -30.0 and s.attempts == 1


def test_dwell_advances_simulated_clock(analyzer):
    srv = analyzer()
    clock = SimClock()
    with AnalyzerClient(*srv.address) as conn:
        acquire_point(conn, SphericalCoord(0, 0, 0.15), dwell=18.0, sweeps_per_dwell=3, clock=clock)
    assert clock.now() == pytest.approx(18.0)


def test_fault_injection_retry(analyzer):
    calls = []

    def rigged(c):
        calls.append(c)
        return -150.0 if len(calls) == 1 else true_power(PatternModel(), c)

    srv = analyzer(power_fn=rigged)
    with AnalyzerClient(*srv.address) as conn:
        s = acquire_point(conn, SphericalCoord(0, 0, 0.15), dwell=0.0, sweeps_per_dwell=1, max_retries=3)
    assert s.attempts == 2 and s.power == -30.0


def test_validation_exhausted(analyzer):
    srv = analyzer(power_fn=lambda c: 45.0)
    with AnalyzerClient(*srv.address) as conn:
        with pytest.raises(ValidationExhausted):
            acquire_point(conn, SphericalCoord(0, 0, 0.15), dwell=0.0, sweeps_per_dwell=1, max_retries=2)


def one_shot_server(handler):
    lst = socket.socket()
    lst.bind(("127.0.0.1", 0))
    lst.listen(1)

    def run():
        conn, _ = lst.accept()
        try:
            handler(conn)
        finally:
            conn.close()
            lst.close()

    threading.Thread(target=run, daemon=True).start()
    return lst.getsockname()


def test_connection_lost_mid_fetch():
    def handler(conn):
        buf = b""
        while b"FETCh" not in buf:
            chunk = conn.recv(4096)
            if not chunk:
                return
            buf += chunk
        # die without answering

    addr = one_shot_server(handler)
    with AnalyzerClient(*addr) as conn:
        with pytest.raises(ConnectionLost):
            acquire_point(conn, SphericalCoord(0, 0, 0.15), dwell=0.0, sweeps_per_dwell=1)


def test_malformed_trace():
    def handler(conn):
        buf = b""
        while b"FETCh" not in buf:
            buf += conn.recv(4096)
        conn.sendall(b"1,2,three\n")
        time.sleep(0.2)

    addr = one_shot_server(handler)
    with AnalyzerClient(*addr) as conn:
        with pytest.raises(ProtocolError):
            acquire_point(conn, SphericalCoord(0, 0, 0.15), dwell=0.0, sweeps_per_dwell=1)


def test_connect_refused():
    with pytest.raises(ConnectionLost):
        AnalyzerClient("127.0.0.1", free_port(), timeout=1.0)


def test_small_scan_traceable(arm, scene, analyzer, tmp_path):
    grid = generate_grid(90, 0, 60, 30, [0.08])
    srv = analyzer()
    log_path = tmp_path / "scan.csv"
    with AnalyzerClient(*srv.address) as conn:
        log, summary = run_scan(scene, arm, grid, conn, log_path, dwell=20.0, seed=0)
    assert summary.coverage == 100.0 and summary.acquired == len(grid) == 12
    on_disk = read_log(log_path)
    assert [s.index for s in on_disk.samples] == list(range(12))
    keys = [c.key for c in grid]
    for s in on_disk.samples:
        assert s.key == keys[s.index]
        assert s.power == expected_reading(PatternModel(), grid[s.index])
    assert coverage(on_disk, grid) == 100.0
    # cycle-time accounting
    assert summary.dwell_time == pytest.approx(20.0 * 12)
    assert summary.per_point_time == pytest.approx(
        (summary.dwell_time + summary.planning_time + summary.execution_time) / 12)


def test_refuses_to_clobber_without_resume(arm, scene, analyzer, tmp_path):
    grid = grid_from_points([SphericalCoord(0, 0, 0.08)])
    srv = analyzer()
    p = tmp_path / "scan.csv"
    with AnalyzerClient(*srv.address) as conn:
        run_scan(scene, arm, grid, conn, p, dwell=0.0)
        with pytest.raises(IoError):
            run_scan(scene, arm, grid, conn, p, dwell=0.0)


def test_empty_grid(arm, scene, analyzer, tmp_path):
    from raptarkit.se3 import ScanGrid

    srv = analyzer()
    with AnalyzerClient(*srv.address) as conn:
        log, summary = run_scan(scene, arm, ScanGrid((), 20, 20, ()), conn, tmp_path / "x.csv", dwell=0.0)
    assert summary.total == 0 and summary.coverage == 100.0 and "zero" in summary.note
    assert log.samples == []


def test_unplannable_point_skipped_and_retried(arm, scene, analyzer, tmp_path):
    from raptarkit.scene import add_box
    from raptarkit.se3 import RigidTransform, final_pose, BracketOffset

    grid = grid_from_points([SphericalCoord(180, 30, 0.08), SphericalCoord(0, 30, 0.08), SphericalCoord(180, 30, 0.15)])
    # block the probe position of the second point only
    tip = final_pose(scene.scan_anchor(), grid[1], BracketOffset()).translation
    blocked = add_box(scene, "post", RigidTransform(np.eye(3), tip), (0.03, 0.03, 0.03))
    srv = analyzer()
    p = tmp_path / "scan.csv"
    with AnalyzerClient(*srv.address) as conn:
        _, summary = run_scan(blocked, arm, grid, conn, p, dwell=0.0, seed=0)
    assert summary.acquired == 2 and summary.retried == [1]
    assert [i for i, _ in summary.failures] == [1]
    assert summary.coverage == pytest.approx(200 / 3)
    notes = read_log(p).notes
    assert any(n.startswith("skip index=1") for n in notes) and any("retry" in n for n in notes)


def start_server_process(port, seed=0):
    proc = subprocess.Popen(
        [sys.executable, "-m", "raptarkit.cli", "serve-analyzer", "--port", str(port), "--seed", str(seed), "--quiet"],
        stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True,
    )
    assert "listening" in proc.stdout.readline()
    return proc


def test_kill_server_then_resume(arm, scene, tmp_path):
    grid = generate_grid(20, 0, 60, 20, [0.08])
    log_path = tmp_path / "scan.csv"
    port = free_port()
    proc = start_server_process(port)

    def killer():
        while True:
            try:
                if len(read_log(log_path).samples) >= 30:
                    proc.kill()
                    return
            except Exception:
                pass
            time.sleep(0.005)

    t = threading.Thread(target=killer, daemon=True)
    t.start()
    try:
        with AnalyzerClient("127.0.0.1", port) as conn:
            _, first = run_scan(scene, arm, grid, conn, log_path, dwell=20.0, seed=0, sweeps_per_dwell=1)
    finally:
        proc.kill()
        proc.wait()
    assert "ConnectionLost" in first.error
    assert 30 <= first.acquired < 72

    proc = start_server_process(port)
    try:
        with AnalyzerClient("127.0.0.1", port) as conn:
            _, second = run_scan(scene, arm, grid, conn, log_path, dwell=20.0, seed=0, sweeps_per_dwell=1,
                                 resume=True)
    finally:
        proc.terminate()
        proc.wait()
    log = read_log(log_path)
    idx = [s.index for s in log.samples]
    assert sorted(idx) == list(range(72)) and len(idx) == 72
    assert second.coverage == 100.0
