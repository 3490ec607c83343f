import numpy as np
import pytest
from hypothesis import settings

from cian import kernels
from cian.data import GeneratorConfig, build_pairs, generate_dataset, split_records

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def small_dataset():
    cfg = GeneratorConfig(n_categories=4, merchants_per_category=30, t_dim=12, d_dim=10, n_informative=2)
    records, gt = generate_dataset(cfg)
    tr, va, te = split_records(records)
    return {
        "config": cfg,
        "records": records,
        "ground_truth": gt,
        "train": build_pairs(tr, 1, 0),
        "val": build_pairs(va, 1, 1),
        "test": build_pairs(te, 1, 2),
    }


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one verdict per acceptance criterion; printed in the terminal summary."""

    def report(number, title, ok, detail):
        _ACCEPTANCE[number] = (title, ok, detail)
        print(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"{n}. {'PASS' if ok else 'FAIL'}  {title}: {detail}")
