import pytest
import torch

from lobdiffusion.book import BookSeries
from lobdiffusion.synthetic import gen_stream

torch.set_num_threads(1)


@pytest.fixture
def walk():
    return gen_stream("walk", 2000, n=10, seed=3)


@pytest.fixture
def small_book():
    """Three hand-written two-level states."""
    ask_px = [[1000200, 1000300], [1000200, 1000400], [1000100, 1000200]]
    ask_sz = [[18, 4], [10, 7], [3, 9]]
    bid_px = [[999900, 999800], [999900, 999800], [1000000, 999900]]
    bid_sz = [[5, 12], [6, 12], [2, 1]]
    return BookSeries(ask_px, ask_sz, bid_px, bid_sz, [34200.0, 34200.5, 34201.0])



def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
