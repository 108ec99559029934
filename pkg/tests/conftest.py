import pytest

from lurnorm.instance import load_gallery

# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def gallery():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_gallery(name)
        return cache[name]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
