import pytest

from sessprop.ingest import PreprocessConfig, preprocess
from sessprop.propensity import fit_gamma, item_propensity
from sessprop.recommenders import GRU4Rec, Gru4RecConfig, SKNN, SknnConfig
from sessprop.synthetic import generate_events

_criteria: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "criterion", None)
    if marker is not None:
        _criteria.setdefault(marker, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok = all(o == "passed" for o in _criteria[n])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture(scope="session")
def small_dataset():
    events = generate_events(n_sessions=200, n_items=50, exponent=1.0, seed=1)
    return preprocess(events, PreprocessConfig(test_fraction=0.2))


@pytest.fixture(scope="session")
def small_table(small_dataset):
    return item_propensity(small_dataset.item_counts, fit_gamma(small_dataset.item_counts))


@pytest.fixture(scope="session")
def small_sknn(small_dataset):
    return SKNN(SknnConfig(k=20, sample_size=100)).fit(small_dataset.train_sessions, small_dataset.n_items)


@pytest.fixture(scope="session")
def small_gru(small_dataset):
    cfg = Gru4RecConfig(hidden_size=16, epochs=3, batch_size=16, seed=0)
    return GRU4Rec(cfg).fit(small_dataset.train_sessions, small_dataset.n_items)
