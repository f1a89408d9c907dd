import pytest

from ulpls_sim.decks import DeckParams, generate_ulpls
from ulpls_sim.netlist import load_circuit

RC_DECK = """rc step
V1 in 0 PULSE(0 0.8 0 1p 1p 1 2)
R1 in out 1k
C1 out 0 1n
.end
"""


@pytest.fixture(scope="session")
def warm_jit():
    """Run every compiled kernel once so timing checks exclude compilation."""
    load_circuit(RC_DECK)
    from ulpls_sim.engine import transient
    transient(load_circuit(RC_DECK), 1e-8, 1e-7)
    transient(load_circuit(generate_ulpls(DeckParams(vin_amplitude=0.1))), 1e-9, 1e-7)
    return True


@pytest.fixture(scope="session")
def ulpls_circuit():
    return load_circuit(generate_ulpls(DeckParams(vin_amplitude=0.1)))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance.py::test_criterion_" not in getattr(rep, "nodeid", ""):
                continue
            if rep.when != "call":
                continue
            for line in rep.capstdout.splitlines():
                if line.startswith("criterion "):
                    lines.append(line)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
