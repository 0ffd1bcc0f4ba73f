"""Helpers for crash-safety tests: a writer process that appends until killed."""

import os
import signal
import subprocess
import sys
import time

import numpy as np

WRITER = r"""
import sys
from raptarkit.scanlog import ScanSample, append_atomic, read_log
path = sys.argv[1]
start = len(read_log(path).samples)
i = start
while True:
    append_atomic(path, ScanSample("2024-01-01T00:00:00.000+00:00", i, float(i % 360), 10.0, 0.08, -30.25, 1),
                  {"writer": "killloop"})
    i += 1
"""


def kill_loop(path, kills: int, seed: int = 0, min_rows: int = 0):
    """Start a writer, SIGKILL it after a random delay, repeat; returns the row count after each kill."""
    from raptarkit.scanlog import read_log

    rng = np.random.default_rng(seed)
    counts = []
    env = dict(os.environ)
    for _ in range(kills):
        proc = subprocess.Popen([sys.executable, "-c", WRITER, str(path)], env=env)
        time.sleep(float(rng.uniform(0.05, 0.25)))
        proc.send_signal(signal.SIGKILL)
        proc.wait()
        counts.append(len(read_log(path).samples))  # raises on any corrupt row
    return counts
