import numpy as np
import pytest
from hypothesis import settings

from fcdn.data import extract_epoch
from fcdn.synth import SIGNATURE_SETS, SynthConfig, generate_subject

settings.register_profile("fcdn", max_examples=40, deadline=None)
settings.load_profile("fcdn")


def small_synth(tpc=6, seed=0, fs=125.0, signatures="default", **kw):
    return SynthConfig(signatures=SIGNATURE_SETS[signatures](), fs=fs, epoch_start_s=-1.0, epoch_end_s=2.0,
                       trials_per_class=tpc, seed=seed, **kw)


@pytest.fixture(scope="session")
def tiny_raw():
    """Desk-montage subject, 6 trials per class, -1..2 s at 125 Hz."""
    return generate_subject(small_synth(), 0)


@pytest.fixture(scope="session")
def tiny_ds(tiny_raw):
    """The same subject cropped to the 0..2 s imagery window."""
    return extract_epoch(tiny_raw, 0.0, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store a one-line verdict for the acceptance summary."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
