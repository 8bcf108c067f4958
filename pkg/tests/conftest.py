from pathlib import Path

import numpy as np
import pytest

from fibrve.geometry import Domain, Microstructure

FIXTURES = Path(__file__).parent / "fixtures"


def random_disks(n, lx=10.0, ly=10.0, r=0.2, seed=0, periodic=True, min_sep=None):
    """Non-overlapping random disks by rejection sampling (test helper)."""
    rng = np.random.default_rng(seed)
    d = Domain(lx, ly, periodic)
    sep = 2 * r if min_sep is None else min_sep
    pts = []
    for _ in range(200_000):
        if len(pts) == n:
            break
        p = rng.uniform(0, 1, 2) * [lx, ly]
        ok = True
        for q in pts:
            delta = p - q
            if periodic:
                delta -= np.round(delta / [lx, ly]) * [lx, ly]
            if np.hypot(*delta) < sep:
                ok = False
                break
        if ok:
            pts.append(p)
    if len(pts) < n:
        raise RuntimeError(f"could only place {len(pts)} of {n} disks")
    return Microstructure(d, np.array(pts), np.full(n, r))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# acceptance report ---------------------------------------------------------------------

ACCEPTANCE: dict[int, list] = {}


def record(criterion: int, title: str, passed: bool, detail: str) -> bool:
    """Remember one checked part of an acceptance criterion and echo it."""
    ACCEPTANCE.setdefault(criterion, [title, []])[1].append((bool(passed), detail))
    print(f"criterion {criterion} [{'PASS' if passed else 'FAIL'}] {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, parts = ACCEPTANCE[num]
        ok = all(p for p, _ in parts)
        tr.write_line(f"{num:2d}. {'PASS' if ok else 'FAIL'}  {title}")
        for p, detail in parts:
            tr.write_line(f"      {'ok  ' if p else 'FAIL'} {detail}")
