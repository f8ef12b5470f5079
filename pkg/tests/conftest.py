from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from slick.chain import RingRegistry
from slick.packet import AddressSpace
from slick.runtime import InstanceSettings, InstrumentedTestClock, instantiate

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "slick" / "configs"


def make_settings(**kw) -> InstanceSettings:
    """Isolated settings: private address space and ring registry, manual clock."""
    kw.setdefault("space", AddressSpace())
    kw.setdefault("rings", RingRegistry())
    kw.setdefault("clock", InstrumentedTestClock())
    kw.setdefault("untrusted_capacity", 512)
    kw.setdefault("trusted_capacity", 256)
    kw.setdefault("enclave_size", 4 * 1024 * 1024)
    return InstanceSettings(**kw)


def build(text: str, **kw):
    return instantiate(text, make_settings(**kw))


def replay(text: str, frames, dev: str = "d0", **kw):
    """Instantiate ``text``, feed ``frames`` into device ``dev`` and drain."""
    inst = build(text, **kw)
    inst.device(dev).inject(frames)
    inst.run()
    return inst


def assert_conserved(inst) -> None:
    assert inst.rx == inst.tx + inst.drops, (inst.rx, inst.tx, inst.drops)
    assert inst.pool_balance() == {"untrusted": 0, "trusted": 0}


@pytest.fixture
def configs() -> Path:
    return CONFIGS


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, title = results[n]
        terminalreporter.write_line(f"criterion {n:>2} {status}  {title}")
