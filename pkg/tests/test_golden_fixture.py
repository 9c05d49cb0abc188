"""The checked-in golden containers stay parseable and pinned.

The converter's emitted bytes are compared against these same files from the
TypeScript side; this pins the byte layout from the reader's side.
"""

from pathlib import Path

import numpy as np
import pytest

from salm.data import read_ueds

FIXTURES = Path(__file__).resolve().parent.parent / "converter" / "fixtures"


@pytest.mark.skipif(not FIXTURES.exists(), reason="converter fixtures not present")
def test_golden_basic_layout():
    data = read_ueds(FIXTURES / "golden_basic_train.ueds")
    assert len(data) == 6
    assert data.image_shape == (1, 8, 8)
    assert data.n_classes == 3
    np.testing.assert_array_equal(data.labels, [0, 1, 2, 0, 1, 2])
    assert (FIXTURES / "golden_basic_train.ueds").stat().st_size == 17 + 6 * 64 + 6


@pytest.mark.skipif(not FIXTURES.exists(), reason="converter fixtures not present")
def test_golden_merge_layout():
    data = read_ueds(FIXTURES / "golden_merge_train.ueds")
    assert len(data) == 2 + 18
    assert data.n_classes == 10
    # protected class first (re-indexed to 0), then the nine support classes
    np.testing.assert_array_equal(np.bincount(data.labels, minlength=10), [2] * 10)
    assert set(data.labels[:2]) == {0}


@pytest.mark.skipif(not FIXTURES.exists(), reason="converter fixtures not present")
def test_golden_rgb_channel_order():
    data = read_ueds(FIXTURES / "golden_rgb_train.ueds")
    assert data.image_shape == (3, 4, 4)
    assert data.n_classes == 2
