from __future__ import annotations

import os
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pytest

from chfnet.data.lut import LUT_COLUMNS, LutGrid, load_lut

ROOT = Path(__file__).resolve().parents[1]
SAMPLE_LUT = ROOT / "data" / "sample_lut.csv"


@pytest.fixture
def sample_lut_path() -> Path:
    return SAMPLE_LUT


@pytest.fixture
def sample_grid() -> LutGrid:
    return load_lut(SAMPLE_LUT)


@pytest.fixture
def lut2006_path() -> Path:
    raw = os.environ.get("CHF_LUT2006_PATH")
    if not raw or not Path(raw).exists():
        pytest.skip("CHF_LUT2006_PATH does not point at a transcribed 2006 look-up table")
    return Path(raw)


@pytest.fixture
def random_grid() -> Callable[..., LutGrid]:
    def make(rng: np.random.Generator, shape=(4, 4, 4)) -> LutGrid:
        axes = [np.sort(rng.choice(np.arange(1, 200), size=n, replace=False)).astype(float) * scale
                for n, scale in zip(shape, (0.1, 40.0, 0.01))]
        return LutGrid(axes[0], axes[1], axes[2] - 0.5, rng.uniform(0, 5000, size=shape))

    return make


def write_grid_csv(path: Path, rows, header: Optional[str] = None) -> Path:
    lines = [header or ",".join(LUT_COLUMNS)] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def corner_rows(values=(100, 200, 300, 400, 500, 600, 700, 800)):
    """Rows of a 2x2x2 grid spanning the required coverage."""
    rows = []
    it = iter(values)
    for p in (0.1, 21.0):
        for g in (0.0, 8000.0):
            for x in (-0.5, 1.0):
                rows.append((p, g, x, next(it)))
    return rows
