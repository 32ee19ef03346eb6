import io
from pathlib import Path

import pytest

from cane.castore import BlockStore
from cane.cli import main
from cane.manifest import VersionStamp
from cane.merklefs import MerkleFS


class CliResult:
    def __init__(self, code, out, err):
        self.code = code
        self.out = out
        self.err = err

    @property
    def text(self):
        return self.out.decode()

    def kv(self):
        return dict(line.split("=", 1) for line in self.text.splitlines() if "=" in line)


class Cli:
    """Runs the ``cane`` entry point in-process against one workspace."""

    def __init__(self, ws: Path):
        self.ws = ws

    def __call__(self, *argv, check=True, porcelain=False):
        out, err = io.BytesIO(), io.BytesIO()
        args = ["--ws", str(self.ws)] + (["--porcelain"] if porcelain else []) + [str(a) for a in argv]
        code = main(args, out, err)
        res = CliResult(code, out.getvalue(), err.getvalue())
        if check and code != 0:
            raise AssertionError(f"cane {argv} exited {code}: {res.err.decode()}")
        return res

    def root(self, *argv):
        return self(*argv).kv()["root"]


@pytest.fixture
def cli(tmp_path):
    c = Cli(tmp_path / "ws")
    c("init", "--clock", "fixed")
    return c


@pytest.fixture
def fs():
    return MerkleFS(BlockStore())


class Clock:
    """Strictly increasing stamps for tests."""

    def __init__(self, start=1_121_350_997_000_000):
        self.t = start

    def __call__(self):
        self.t += 1_000_000
        return VersionStamp.from_micros(self.t)


@pytest.fixture
def clock():
    return Clock()


def stamp(i: int) -> str:
    return str(VersionStamp.from_micros(1_121_350_997_000_000 + i * 1_000_000))


# acceptance reporting ---------------------------------------------------------

_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, [title, True])
    entry[1] = entry[1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
