import os
import subprocess
import sys

import numpy as np
import pytest

from linrestrict import _kernels, active_backend, available_backends, set_backend, use_backend

pytestmark = pytest.mark.skipif(
    "numba" not in available_backends(), reason="numba backend unavailable"
)


def _random_case(rng, n, d):
    post = rng.normal(0.0, 1.0, (n, d))
    # sprinkle exact zeros and constant components to hit the guards
    post[rng.random((n, d)) < 0.05] = 0.0
    post[:, 0] = 1.5
    alphas = np.sort(rng.uniform(0.0, 1.0, n))
    alphas[0], alphas[-1] = 0.0, 1.0
    return post, alphas


class TestBackendParity:
    @pytest.mark.parametrize("seed", range(5))
    def test_relu_crossings_bitwise_equal(self, seed):
        rng = np.random.default_rng(seed)
        post, alphas = _random_case(rng, int(rng.integers(2, 60)), int(rng.integers(1, 40)))
        with use_backend("numba"):
            s1, a1 = _kernels.relu_crossings(post, alphas)
        with use_backend("numpy"):
            s2, a2 = _kernels.relu_crossings(post, alphas)
        assert np.array_equal(s1, s2)
        assert np.array_equal(a1, a2)

    @pytest.mark.parametrize("seed", range(5))
    def test_window_crossings_bitwise_equal(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(2, 30))
        qwin = rng.normal(0.0, 1.0, (n - 1, 5, 7))
        rwin = rng.normal(0.0, 1.0, (n - 1, 5, 7))
        # force ties and flat windows
        qwin[0, 0, :2] = qwin[0, 0, 0]
        rwin[0, 1] = qwin[0, 1]
        alphas = np.sort(rng.uniform(0.0, 1.0, n))
        alphas[0], alphas[-1] = 0.0, 1.0
        for fn in ("maxpool_crossings", "relu_maxpool_crossings"):
            with use_backend("numba"):
                s1, a1 = getattr(_kernels, fn)(qwin, rwin, alphas)
            with use_backend("numpy"):
                s2, a2 = getattr(_kernels, fn)(qwin, rwin, alphas)
            assert np.array_equal(s1, s2), fn
            assert np.array_equal(a1, a2), fn

    def test_outputs_sorted_and_merged(self):
        rng = np.random.default_rng(9)
        post, alphas = _random_case(rng, 40, 25)
        seg, alpha = _kernels.relu_crossings(post, alphas)
        assert np.all(np.diff(seg) >= 0)
        same = seg[1:] == seg[:-1]
        assert np.all(np.diff(alpha)[same] > _kernels.MERGE_TOL)
        assert np.all(alpha - alphas[seg] > _kernels.MERGE_TOL)
        assert np.all(alphas[seg + 1] - alpha > _kernels.MERGE_TOL)


class TestBackendSelection:
    def test_default_is_numba(self):
        assert active_backend() == "numba"

    def test_set_backend_roundtrip(self):
        set_backend("numpy")
        assert active_backend() == "numpy"
        set_backend("numba")
        assert active_backend() == "numba"

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            set_backend("gpu")

    def test_env_flag_disables_numba(self):
        env = dict(os.environ, LINRESTRICT_NUMBA="0")
        out = subprocess.run(
            [sys.executable, "-c",
             "from linrestrict import active_backend, available_backends;"
             "print(active_backend(), available_backends())"],
            capture_output=True, text=True, env=env, check=True,
        )
        assert out.stdout.split()[0] == "numpy"
        assert "numba" not in out.stdout

    def test_warmup_runs(self):
        _kernels.warmup()
