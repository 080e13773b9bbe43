import numpy as np
import pytest
import torch

from swiptnet.channels import SystemConfig


def fd_grad(f, tensors, rel_step=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. every (re, im) entry.

    Returns one tensor per input, shaped like it: complex inputs get
    ``dRe + 1j*dIm``, real inputs a real gradient.
    """
    out = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat = t.view(-1)
            gflat = g.view(-1)
            comps = (1.0, 1j) if t.is_complex() else (1.0,)
            for k in range(flat.numel()):
                orig = flat[k].clone()
                for c in comps:
                    h = rel_step * max(1.0, abs(complex(orig)))
                    flat[k] = orig + c * h
                    fp = float(f())
                    flat[k] = orig - c * h
                    fm = float(f())
                    flat[k] = orig
                    gflat[k] += c * (fp - fm) / (2 * h)
            out.append(g)
    return out


def rel_err(a, b):
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    return float((a - b).abs().max() / max(float(b.abs().max()), 1e-30))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ref_cfg():
    return SystemConfig()


@pytest.fixture
def small_cfg():
    return SystemConfig(n_tx=4, n_ue=3)


def crandn(rng, *shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


# acceptance verdicts, printed once at the end of the session
CRITERIA = {}


def record_criterion(number, passed, detail):
    CRITERIA[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
