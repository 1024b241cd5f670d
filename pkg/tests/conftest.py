import numpy as np
import pytest

from cxv.tensor import precision


@pytest.fixture
def f64():
    with precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    from cxv.synthetic import write_cifar10_dir

    return write_cifar10_dir(tmp_path_factory.mktemp("syn"), n_train=120, n_test=40, seed=3)


def tiny_config_text(data_dir, **extra) -> str:
    base = {
        "model.name": "cnv-1/2",
        "model.dim": "16",
        "model.landmarks": "8",
        "model.dropout": "0.1",
        "data.dir": str(data_dir),
        "data.batch_size": "40",
        "out.wall_clock": "false",
    }
    base.update({k.replace("__", "."): str(v) for k, v in extra.items()})
    return "".join(f"{k}={v}\n" for k, v in base.items())


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
