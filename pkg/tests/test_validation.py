import numpy as np
import pytest

from lobdiffusion.book import BookValidationError
from lobdiffusion.validation import check_book_series, check_grid, check_windows


def test_check_book_series(small_book, walk):
    assert check_book_series(small_book) == small_book
    assert check_book_series(walk, n_levels=3).n_levels == 3
    with pytest.raises(ValueError):
        check_book_series(small_book, min_len=5)
    with pytest.raises(ValueError):
        check_book_series(small_book, n_levels=3)
    bad = [small_book[0], small_book[1]]
    bad[1] = type(bad[1])(bad[1].timestamp, bad[1].asks, ((10**7, 1),) + bad[1].bids[1:])
    with pytest.raises(BookValidationError):
        check_book_series(bad)


def test_check_windows(walk):
    assert len(check_windows(walk[:8], 8)) == 1
    assert len(check_windows([walk[:8], walk[8:16]], 8)) == 2
    with pytest.raises(ValueError):
        check_windows([walk[:8], walk[:7]], 8)


def test_check_grid():
    assert check_grid(np.zeros((2, 4, 4, 2)), 4, 2).shape == (2, 4, 4, 2)
    assert check_grid(np.zeros((4, 4, 5)), 4, 5, batched=False).shape == (4, 4, 5)
    with pytest.raises(ValueError):
        check_grid(np.zeros((4, 4, 2)), 4, 2)
    g = np.zeros((1, 4, 4, 2))
    g[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        check_grid(g, 4, 2)
