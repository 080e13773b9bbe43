import numpy as np
import pytest
import torch

from swiptnet import numerics as nx
from swiptnet.model import Widths, build_model
from swiptnet.objective import loss_ps
from swiptnet.channels import SystemConfig, generate_channels

from conftest import crandn, fd_grad, rel_err


def test_matmul_identity(rng):
    B = torch.as_tensor(crandn(rng, 2, 2))
    assert torch.equal(nx.matmul(torch.eye(2, dtype=nx.CDTYPE), B), B)


def test_matmul_conjugate_pair():
    out = nx.matmul(torch.tensor([[1 + 1j]]), torch.tensor([[1 - 1j]]))
    assert out.item() == 2


def test_matmul_matches_triple_loop(rng):
    A, B = crandn(rng, 3, 3), crandn(rng, 3, 3)
    ref = np.zeros((3, 3), dtype=complex)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                ref[i, j] += A[i, k] * B[k, j]
    got = nx.matmul(torch.as_tensor(A), torch.as_tensor(B)).numpy()
    assert np.abs(got - ref).max() < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(nx.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(torch.zeros(2, 3, dtype=nx.CDTYPE), torch.zeros(2, 3, dtype=nx.CDTYPE))


def test_log_rejects_nonpositive():
    with pytest.raises(ValueError):
        nx.log(torch.tensor([1.0, 0.0], dtype=torch.float64))


def test_complex_activations_split_re_im():
    z = torch.tensor([-2 + 3j, 1 - 0.5j], dtype=nx.CDTYPE)
    assert torch.equal(nx.relu(z), torch.tensor([0 + 3j, 1 + 0j], dtype=nx.CDTYPE))
    lk = nx.leaky_relu(z)
    assert lk[0].real == pytest.approx(-0.4) and lk[1].imag == pytest.approx(-0.1)
    s = nx.selu(z)
    assert s[0].imag == pytest.approx(float(torch.selu(torch.tensor(3.0))))


def test_backward_re_squared():
    w = torch.tensor(3 + 4j, dtype=nx.CDTYPE, requires_grad=True)
    (g,) = nx.backward(w.real**2, [w])
    assert g.real.item() == 6.0 and g.imag.item() == 0.0


def test_backward_unused_parameter_is_zero():
    w = torch.tensor([1 + 1j], dtype=nx.CDTYPE, requires_grad=True)
    u = torch.ones(2, 2, dtype=nx.CDTYPE, requires_grad=True)
    gw, gu = nx.backward(nx.abs2(w).sum(), [w, u])
    assert torch.count_nonzero(gu) == 0 and gu.shape == u.shape


def test_backward_twice_is_error():
    w = torch.tensor([1 + 2j], dtype=nx.CDTYPE, requires_grad=True)
    loss = nx.abs2(w * w).sum()
    nx.backward(loss, [w])
    with pytest.raises(nx.GradientError):
        nx.backward(loss, [w])


def test_backward_non_scalar_is_error():
    w = torch.ones(3, dtype=nx.CDTYPE, requires_grad=True)
    with pytest.raises(nx.GradientError):
        nx.backward(nx.abs2(w), [w])


def test_backward_linearity(rng):
    w = torch.as_tensor(crandn(rng, 4, 3)).requires_grad_(True)
    h = torch.as_tensor(crandn(rng, 3))

    def f():
        return nx.log(1 + nx.abs2(nx.matmul(w, h)).sum())

    (g1,) = nx.backward(f(), [w])
    (g2,) = nx.backward(-2.5 * f(), [w])
    assert torch.allclose(g2, -2.5 * g1, rtol=1e-14, atol=0)


PRIMITIVES = {
    "matmul": lambda a, b: nx.abs2(nx.matmul(a, b)).sum(),
    "herm_matmul": lambda a, b: nx.real(nx.matmul(nx.herm(a), b).sum()),
    "add_mul": lambda a, b: nx.abs2(nx.mul(nx.add(a, b), b)).sum(),
    "concat_norm": lambda a, b: nx.norm(nx.concat([a, b], dim=0)),
    "log_exp": lambda a, b: nx.log(1 + nx.exp(nx.real(a)).sum()) + nx.real(b).sum(),
    "softmax": lambda a, b: (nx.softmax(nx.real(a).reshape(-1)) * nx.real(b).reshape(-1)).sum(),
    "relu": lambda a, b: nx.abs2(nx.relu(a + 0.05)).sum() + nx.real(b).sum(),
    "leaky_relu": lambda a, b: nx.abs2(nx.leaky_relu(a + 0.05) * b).sum(),
    "selu": lambda a, b: nx.abs2(nx.selu(nx.matmul(a, b))).sum(),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name, rng):
    a = torch.as_tensor(crandn(rng, 3, 3)).requires_grad_(True)
    b = torch.as_tensor(crandn(rng, 3, 3)).requires_grad_(True)
    f = lambda: PRIMITIVES[name](a, b)
    grads = nx.backward(f(), [a, b])
    for g, fd in zip(grads, fd_grad(f, [a, b])):
        assert rel_err(g, fd) < 1e-5


def test_full_model_gradient_matches_finite_differences():
    cfg = SystemConfig(n_tx=4, n_ue=3)
    model = build_model("swiptnet", 4, 3, widths=Widths(heads=2, gal=(4, 4, 4, 4), connection=(4, 4),
                                                         decoder=(4, 4)), input_scale=100.0, seed=3)
    model.train()
    H = torch.as_tensor(generate_channels(cfg, 2, seed=5))
    params = list(model.parameters())
    f = lambda: loss_ps(model(H, cfg)[0], H, cfg).mean()
    grads = nx.backward(f(), params)
    for p, g, fd in zip(params, grads, fd_grad(f, params)):
        assert rel_err(g, fd) < 1e-5, p.shape


def test_adam_zero_gradient_is_fixed_point():
    p = torch.tensor([1.0 + 2j, -3j], dtype=nx.CDTYPE)
    before = p.clone()
    st = nx.AdamState.zeros_like([p])
    nx.adam_step([p], [torch.zeros_like(p)], st, lr=0.1)
    assert torch.equal(p, before) and st.step == 1


def test_adam_first_step_is_signed_lr():
    p = torch.tensor([0.5], dtype=torch.float64)
    st = nx.AdamState.zeros_like([p])
    nx.adam_step([p], [torch.tensor([-2.0], dtype=torch.float64)], st, lr=1e-3)
    step = 0.5 - p.item()
    assert step == pytest.approx(-1e-3 * 2.0 / (2.0 + 1e-8), rel=1e-12)


def test_adam_matches_scalar_recurrence():
    g, lr, b1, b2, eps = 0.3, 0.01, 0.9, 0.999, 1e-8
    x, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    p = torch.tensor([1.0], dtype=torch.float64)
    st = nx.AdamState.zeros_like([p])
    for _ in range(2):
        nx.adam_step([p], [torch.tensor([g], dtype=torch.float64)], st, lr)
    assert abs(p.item() - x) < 1e-12 and st.step == 2


def test_adam_complex_is_coordinatewise():
    p = torch.tensor([1 + 1j], dtype=nx.CDTYPE)
    st = nx.AdamState.zeros_like([p])
    nx.adam_step([p], [torch.tensor([2 - 0j], dtype=nx.CDTYPE)], st, lr=0.1)
    assert p.imag.item() == 1.0 and p.real.item() == pytest.approx(0.9)


def test_adam_rejects_nan():
    p = torch.zeros(2, dtype=torch.float64)
    st = nx.AdamState.zeros_like([p])
    with pytest.raises(nx.GradientError):
        nx.adam_step([p], [torch.tensor([0.0, float("nan")], dtype=torch.float64)], st, lr=0.1)
    assert st.step == 0


def test_adam_second_moment_nonnegative(rng):
    p = torch.as_tensor(crandn(rng, 5))
    st = nx.AdamState.zeros_like([p])
    for _ in range(3):
        nx.adam_step([p], [torch.as_tensor(crandn(rng, 5))], st, lr=0.01)
    assert bool((st.v[0] >= 0).all())


def test_xavier_deterministic():
    a = nx.xavier_init((5, 7), 7, 5, 42)
    b = nx.xavier_init((5, 7), 7, 5, 42)
    assert torch.equal(a, b)


def test_xavier_support():
    t = nx.xavier_init((64, 32), 32, 64, 0)
    bound = np.sqrt(6 / 96)
    assert float(t.real.abs().max()) <= bound and float(t.imag.abs().max()) <= bound


def test_xavier_variance():
    fi, fo = 512, 512
    t = nx.xavier_init((512, 512), fi, fo, 7)
    expected = 2 * (1 / 3) * 6 / (fi + fo)
    assert abs(float(nx.abs2(t).mean()) - expected) / expected < 0.10
