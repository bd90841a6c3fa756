import numpy as np
import pytest

from feudaldm.ontology import build_domain, preset_domain


@pytest.fixture(scope="session")
def cr():
    return preset_domain("cr")


@pytest.fixture(scope="session")
def sfr():
    return preset_domain("sfr")


@pytest.fixture(scope="session")
def toy():
    return preset_domain("toy")


@pytest.fixture(scope="session")
def lap():
    return preset_domain("lap")


def tiny_domain(slot_values=(("food", ("chinese", "indian")), ("area", ("north", "south", "east"))),
                n_entities=6, seed=0):
    """Small hand-built domain; every value combination is reachable."""
    rng = np.random.default_rng(seed)
    entities = []
    for e in range(n_entities):
        ent = {name: values[e % len(values)] if e < len(values) else values[int(rng.integers(len(values)))]
               for name, values in slot_values}
        ent["phone"] = f"p{e}"
        entities.append(ent)
    names = [n for n, _ in slot_values]
    return build_domain("tiny", [(n, list(v)) for n, v in slot_values], names + ["phone"], entities)


@pytest.fixture
def tiny():
    return tiny_domain()


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the line is printed now and again in the terminal summary."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
