import os

# The kernels hand out up to 4 worker threads; make sure the numba pool
# can schedule them even on small CI boxes.  Must run before anything
# imports numba (the package does the same, but test collection order
# should not matter).
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(4, os.cpu_count() or 1)))

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
