from collections import defaultdict

import pytest

from fragsim.config import ScenarioConfig
from fragsim.protocol import Fragment, Strategy

ALL_LABELS = ["aloha", "buffered_aloha", "frag2", "frag3", "frag2_retx1", "frag3_retx1", "frag5_retx1", "frag3_retx2"]


def scenario(label="buffered_aloha", **kw):
    kw.setdefault("packets_per_node", 20)
    return ScenarioConfig(strategy=Strategy.parse(label), **kw)


def by_node(records, kind):
    out = defaultdict(list)
    for rec in records:
        if rec.kind == kind:
            out[rec.subject].append(rec)
    return out


def lose(packet, seq, times=1):
    """Forced-loss predicate dropping the first ``times`` attempts of one fragment."""
    left = [times]

    def predicate(tx):
        f = tx.frame
        if isinstance(f, Fragment) and f.packet_id == packet and f.seq_index == seq and left[0] > 0:
            left[0] -= 1
            return True
        return False
    return predicate


@pytest.fixture
def make_scenario():
    return scenario


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
