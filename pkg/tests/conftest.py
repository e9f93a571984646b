import time

import pytest

from pivotsmt.experiment import ExperimentConfig, run_experiment


def small_config(output_dir, **kw):
    base = dict(
        output_dir=str(output_dir),
        pivots=["L1", "L2"],
        synth={"num_languages": 5, "cognate_rate": 0.8},
        train_size=150,
        tune_size=8,
        test_size=12,
        methods=["triangulate", "pipeline"],
        direct=True,
        pop_limit=20,
        k=3,
        tune_iterations=1,
        resamples=50,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """One small experiment shared by the driver and CLI tests."""
    out = tmp_path_factory.mktemp("small_run")
    cfg = small_config(out)
    return cfg, run_experiment(cfg)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE = {}


class criterion:
    """Context manager that times one acceptance criterion and records its outcome.

    The criterion fails if the body raises or runs past ``limit`` seconds.
    """

    def __init__(self, number: int, limit: float | None = None):
        self.number, self.limit, self.detail = number, limit, ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        ok = exc_type is None and (self.limit is None or elapsed < self.limit)
        limit = f" (limit {self.limit:g}s)" if self.limit is not None else ""
        note = f"{self.detail}; " if self.detail else ""
        if exc_type is not None:
            note += f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}; "
        ACCEPTANCE[self.number] = f"criterion {self.number:2d}: {'PASS' if ok else 'FAIL'}  {note}{elapsed:.3f}s{limit}"
        if exc_type is None and not ok:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f}s, limit {self.limit:g}s")
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
