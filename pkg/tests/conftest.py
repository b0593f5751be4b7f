# Shared pytest plumbing: the acceptance module records one line per
# criterion here and the terminal summary prints them after the run.

_ACCEPTANCE_LINES = {}


def record_criterion(key, description, passed, detail=""):
    line = "[%s] criterion %s: %s" % ("PASS" if passed else "FAIL", key, description)
    if detail:
        line += " (%s)" % detail
    _ACCEPTANCE_LINES[str(key)] = line
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE_LINES, key=lambda k: (len(k), k)):
        terminalreporter.write_line(_ACCEPTANCE_LINES[key])
