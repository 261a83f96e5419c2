import numpy as np
import pytest

from sporadic_bps.panel import PanelDataset


def make_panel(y, loc, scale=1.0, dof=30.0, idx=None, first_year=2000):
    """Small in-memory panel; cells with NaN location are inactive unless ``idx`` is given."""
    loc = np.asarray(loc, dtype=float)
    idx = np.isfinite(loc) if idx is None else np.asarray(idx, dtype=bool)
    T, J = loc.shape
    scale = np.where(idx, np.broadcast_to(scale, (T, J)), np.nan)
    dof = np.where(idx, np.broadcast_to(dof, (T, J)), np.nan)
    labels = tuple(f"{first_year + t // 4}Q{t % 4 + 1}" for t in range(T))
    return PanelDataset(
        y=np.asarray(y, dtype=float), loc=np.where(idx, loc, np.nan), scale=scale, dof=dof, idx=idx,
        period_labels=labels, target_labels=labels, expert_ids=tuple(str(j + 1) for j in range(J)),
    )


@pytest.fixture
def panel_factory():
    return make_panel


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
