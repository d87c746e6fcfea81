import threading
import time

import pytest

from ste_deflick.worker_pool import (
    THREADS_ENV,
    WorkerPool,
    resolve_threads,
    serial_pool,
)


def test_resolve_explicit_count(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "6")
    assert resolve_threads(3) == 3


def test_resolve_from_environment(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "6")
    assert resolve_threads(0) == 6
    monkeypatch.delenv(THREADS_ENV)
    assert resolve_threads(0) >= 1


def test_resolve_rejects_bad_values(monkeypatch):
    with pytest.raises(ValueError):
        resolve_threads(-1)
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ValueError):
        resolve_threads(0)


def test_map_keeps_input_order():
    def slow_square(x: int) -> int:
        time.sleep(0.002 * (8 - x))  # later items finish first
        return x * x

    with WorkerPool(4) as pool:
        assert pool.map(slow_square, list(range(8))) == [x * x for x in range(8)]


def test_serial_pool_runs_inline():
    pool = serial_pool()
    assert pool.threads == 1
    names = pool.map(lambda _: threading.current_thread().name, [1, 2, 3])
    assert set(names) == {threading.current_thread().name}


def test_close_twice():
    pool = WorkerPool(2)
    pool.close()
    pool.close()
    assert pool.map(abs, [-1, -2]) == [1, 2]
