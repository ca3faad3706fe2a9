_LINES = []


class _Recorder:
    def __call__(self, number, name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {name} | {detail}"
        _LINES.append((number, line))
        print(line)
        return passed


import pytest  # noqa: E402


@pytest.fixture
def acceptance():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)
