from __future__ import annotations

import numpy as np
import pytest

from roadcell.road_data import RoadSeries, build_corridor


def flat_series(flow, speed=60.0, n_slots=288, detector_id="D0", start=0) -> RoadSeries:
    idx = np.arange(start, start + n_slots, dtype=np.int64)
    return RoadSeries(detector_id, idx, np.full(n_slots, flow, dtype=np.int64),
                      np.full(n_slots, float(speed)))


def corridor_of(*ranges):
    return build_corridor({"detector_id": f"D{k}", "range_miles": r}
                          for k, r in enumerate(ranges))


@pytest.fixture
def tiny_csv(tmp_path):
    def write(lines, name="d.csv"):
        p = tmp_path / name
        p.write_text("\n".join(lines) + "\n")
        return p
    return write


# Acceptance results, printed as one line per criterion at the end of the run.
ACCEPTANCE: dict[int, tuple[str, bool | None, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {n} [{status}] {name}: {detail}")
