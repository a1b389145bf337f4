import random

import pytest
import torch

from ong.syntax import ROOT

torch.set_num_threads(1)

# "All warranties honored by XYZ (what I thought was a reputable company) are disappointing"
FIG1_TOKENS = ["All", "warranties", "honored", "by", "XYZ", "what", "I", "thought",
               "was", "a", "reputable", "company", "are", "disappointing"]
FIG1_HEADS = [1, 13, 1, 4, 2, 7, 7, 13, 11, 11, 11, 7, 13, ROOT]


@pytest.fixture
def fig1():
    return FIG1_TOKENS, FIG1_HEADS


def random_heads(n, rng: random.Random):
    """Random labelled tree: shuffle node order, attach each to an earlier node."""
    order = list(range(n))
    rng.shuffle(order)
    heads = [ROOT] * n
    for k in range(1, n):
        heads[order[k]] = order[rng.randrange(k)]
    return heads


_CRITERIA: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _CRITERIA.append((status, props["criterion"], props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _CRITERIA:
        terminalreporter.write_line(f"{status}  {name}" + (f": {detail}" if detail else ""))
