import numpy as np
import pytest

from promptwave import autodiff as ad
from promptwave.audio import Waveform


def fd_gradient(f, param: ad.Tensor, h: float, entries=None):
    """Central finite differences of scalar f() w.r.t. selected param entries.

    Returns (analytic, numeric) arrays over the checked entries. f must
    rebuild the graph on every call.
    """
    for t in (param,):
        t.zero_grad()
    loss = f()
    ad.backward(loss)
    g = param.grad.copy()
    idxs = list(np.ndindex(param.data.shape)) if entries is None else entries
    analytic = np.array([g[i] for i in idxs], dtype=np.float64)
    numeric = np.zeros(len(idxs))
    for j, i in enumerate(idxs):
        orig = param.data[i]
        param.data[i] = orig + h
        lp = float(f().data)
        param.data[i] = orig - h
        lm = float(f().data)
        param.data[i] = orig
        numeric[j] = (lp - lm) / (2 * h)
    return analytic, numeric


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(f, params, h=1e-5, tol=1e-5):
    """Assert every parameter's gradient matches finite differences."""
    for p in params:
        analytic, numeric = fd_gradient(f, p, h)
        err = rel_err(analytic, numeric)
        assert err < tol, f"gradient mismatch for {p.name or 'param'}: rel err {err:.3g}"


def make_tone(i: int, sr=8000, t=2 ** 14, dtype=np.float32) -> Waveform:
    """Deterministic synthetic tone family: bin-centered fundamental plus
    one harmonic, distinct per index."""
    tt = np.arange(t) / sr
    f0 = (sr / 256) * (4 + 3 * i)
    x = 0.6 * np.sin(2 * np.pi * f0 * tt) + 0.2 * np.sin(2 * np.pi * 2 * f0 * tt)
    return Waveform(x[None, :].astype(dtype), sr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tones8():
    return [make_tone(i) for i in range(8)]


@pytest.fixture
def tone_dir(tmp_path, tones8):
    from promptwave.audio import write_wav
    paths = []
    for i, w in enumerate(tones8):
        p = tmp_path / f"tone{i}.wav"
        write_wav(p, w)
        paths.append(p)
    return tmp_path, paths
