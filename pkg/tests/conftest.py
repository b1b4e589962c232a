import numpy as np
import pytest
from threadpoolctl import threadpool_limits


@pytest.fixture(autouse=True, scope="session")
def single_thread():
    with threadpool_limits(1):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def naive_complex_conv(x, w, b=None):
    """Nested-loop complex multiply-accumulate, zero padded, same size."""
    cin, h, wd = x.shape
    cout, _, fh, fw = w.shape
    ph, pw = (fh - 1) // 2, (fw - 1) // 2
    out = np.zeros((cout, h, wd), dtype=complex)
    for co in range(cout):
        for r in range(h):
            for c in range(wd):
                acc = 0j
                for ci in range(cin):
                    for i in range(fh):
                        for j in range(fw):
                            rr, cc = r + i - ph, c + j - pw
                            if 0 <= rr < h and 0 <= cc < wd:
                                acc += complex(w[co, ci, i, j]) * complex(x[ci, rr, cc])
                out[co, r, c] = acc + (0 if b is None else b[co])
    return out
