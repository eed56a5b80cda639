import pytest

from deyolo_toy.cli import main


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 40/12/12 synthetic dataset written through the CLI."""
    root = tmp_path_factory.mktemp("data") / "synth"
    assert main(["synth", "--out", str(root), "--n-train", "40", "--n-val", "12",
                 "--n-test", "12"]) == 0
    return root


_VERDICTS: list[str] = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then
    assert it."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def record(criterion: str, ok: bool, detail: str) -> None:
        line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
        _VERDICTS.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
