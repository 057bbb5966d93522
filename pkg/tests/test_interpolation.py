import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import finite_difference_grads, rel_err
from mtid import interpolation as itp


def make_interp(m=4, obs=8, layers=1, seed=0, **kw):
    torch.manual_seed(seed)
    return itp.LatentInterpolator(
        obs_dim=obs, num_features=m, refiner_layers=layers, refiner_heads=2, **kw
    ).eval()


# --- encoder -------------------------------------------------------------------


def test_encode_shared_weights():
    m = make_interp()
    v = torch.randn(3, 8)
    assert torch.equal(m.encode(v), m.encode(v.clone()))
    out = m(v, v)
    assert torch.allclose(out.raw, out.raw[:, :1].expand_as(out.raw))


def test_encode_output_width():
    m = make_interp(obs=8, latent_dim=6)
    assert m.encode(torch.randn(5, 8)).shape == (5, 6)


def test_encode_width_mismatch():
    m = make_interp(obs=8)
    with pytest.raises(ValueError):
        m.encode(torch.randn(2, 9))


def test_encoder_is_two_convs_with_relu():
    m = make_interp()
    assert isinstance(m.conv1, torch.nn.Conv1d)
    assert isinstance(m.conv2, torch.nn.Conv1d)
    # negative pre-activations are rectified away between the convolutions
    v = torch.randn(4, 8)
    h = m.conv1(v.unsqueeze(1))
    assert (torch.relu(h) >= 0).all()


def test_encoder_gradient_finite_difference():
    m = make_interp(obs=8).double()
    v = torch.randn(1, 8, dtype=torch.float64)

    def f():
        return (m.encode(v) ** 2).sum()

    params = [m.conv1.weight, m.conv1.bias, m.conv2.weight, m.conv2.bias]
    fd = finite_difference_grads(f, params)
    m.zero_grad()
    f().backward()
    for p, g in zip(params, fd):
        assert rel_err(p.grad, g) <= 1e-3


# --- interpolation -------------------------------------------------------------


def test_phi_half_at_zero_parameters():
    m = make_interp()
    with torch.no_grad():
        m.W.zero_()
        m.k.zero_()
    l_s, l_g = torch.randn(2, 8), torch.randn(2, 8)
    raw = m.interpolate(l_s, l_g)
    assert torch.allclose(raw, ((l_s + l_g) / 2).unsqueeze(1).expand_as(raw), atol=1e-6)


def test_phi_saturates_to_goal():
    m = make_interp()
    with torch.no_grad():
        m.W.zero_()
        m.k.fill_(30.0)  # sigmoid(30) ~ 1
    l_s, l_g = torch.randn(1, 8), torch.randn(1, 8)
    raw = m.interpolate(l_s, l_g)
    assert torch.allclose(raw, l_g.unsqueeze(1).expand_as(raw), atol=1e-5)


def test_interpolation_hand_value():
    m = make_interp(m=2, obs=2)
    with torch.no_grad():
        m.W.zero_()
        m.k.fill_(float(np.log(0.25 / 0.75)))  # sigmoid^-1(0.25)
    l_s = torch.tensor([[0.0, 2.0]])
    l_g = torch.tensor([[4.0, 6.0]])
    raw = m.interpolate(l_s, l_g)
    assert torch.allclose(raw, torch.tensor([[[1.0, 3.0], [1.0, 3.0]]]), atol=1e-6)


def test_phi_strictly_inside_unit_interval():
    # trained-scale parameters; float32 sigmoid saturates only beyond |x| ~ 17
    m = make_interp()
    with torch.no_grad():
        m.W.normal_(std=1.0)
        m.k.normal_(std=1.0)
    phi = m.phi()
    assert (phi > 0).all() and (phi < 1).all()


@given(seed=st.integers(0, 500))
@settings(max_examples=20)
def test_raw_interpolations_convex(seed):
    torch.manual_seed(seed)
    m = make_interp(seed=seed)
    with torch.no_grad():
        m.W.normal_(std=3.0)
        m.k.normal_(std=3.0)
        m.tau.normal_(std=3.0)
    l_s, l_g = torch.randn(2, 8), torch.randn(2, 8)
    raw = m.interpolate(l_s, l_g)
    lo = torch.minimum(l_s, l_g).unsqueeze(1)
    hi = torch.maximum(l_s, l_g).unsqueeze(1)
    assert (raw >= lo - 1e-6).all() and (raw <= hi + 1e-6).all()


# --- strategies and tau initializers --------------------------------------------


def test_strategy_copy_goal():
    m = make_interp(strategy="copy_gs")
    l_s, l_g = torch.randn(2, 8), torch.randn(2, 8)
    raw = m.interpolate(l_s, l_g)
    assert torch.equal(raw, l_g.unsqueeze(1).expand(2, 4, 8))


def test_strategy_copy_endpoints():
    m = make_interp(m=4, strategy="copy_lt")
    l_s, l_g = torch.randn(1, 8), torch.randn(1, 8)
    raw = m.interpolate(l_s, l_g)
    assert torch.equal(raw[0, 0], l_s[0]) and torch.equal(raw[0, 1], l_s[0])
    assert torch.equal(raw[0, 2], l_g[0]) and torch.equal(raw[0, 3], l_g[0])


def test_strategy_fixed_linear():
    m = make_interp(m=3, strategy="fixed_linear")
    l_s = torch.zeros(1, 8)
    l_g = torch.full((1, 8), 4.0)
    raw = m.interpolate(l_s, l_g)
    assert torch.allclose(raw[0, :, 0], torch.tensor([1.0, 2.0, 3.0]))


def test_unknown_strategy_rejected():
    with pytest.raises(ValueError):
        make_interp(strategy="spline")


@pytest.mark.parametrize(
    "kind,expected",
    [
        ("constant", [1.0, 1.0, 1.0, 1.0, 1.0]),
        ("linear-up", [0.0, 0.25, 0.5, 0.75, 1.0]),
        ("linear-down", [1.0, 0.75, 0.5, 0.25, 0.0]),
        ("square", [0.0, 0.0625, 0.25, 0.5625, 1.0]),
        ("up-down", [0.0, 0.5, 1.0, 0.5, 0.0]),
    ],
)
def test_tau_init_curves(kind, expected):
    assert np.allclose(itp.tau_init_values(kind, 5).numpy(), expected)


def test_tau_init_unknown():
    with pytest.raises(ValueError):
        itp.tau_init_values("cosine", 5)


def test_tau_parameter_wired_from_init():
    m = make_interp(m=5, tau_init="linear-up")
    assert np.allclose(m.tau.detach()[:, 0].numpy(), [0, 0.25, 0.5, 0.75, 1.0])
    assert m.tau.shape == (5, 8)  # broadcast across the latent width


# --- refiner ---------------------------------------------------------------------


@pytest.mark.parametrize("m_count", [2, 14])
def test_refine_shape_contract(m_count):
    m = make_interp(m=m_count)
    out = m(torch.randn(3, 8), torch.randn(3, 8))
    assert out.raw.shape == (3, m_count, 8)
    assert out.refined.shape == (3, m_count, 8)
    assert out.num_features == m_count


def test_refine_deterministic():
    m = make_interp()
    v_s, v_g = torch.randn(2, 8), torch.randn(2, 8)
    assert torch.equal(m(v_s, v_g).refined, m(v_s, v_g).refined)


def test_tau_gradient_finite_difference():
    # probe with a random linear functional: the plain sum is blind to tau at
    # init (the refiner ends in LayerNorm, whose row sums are input-free)
    m = make_interp(m=2, obs=8).double()
    v_s = torch.randn(1, 8, dtype=torch.float64)
    v_g = torch.randn(1, 8, dtype=torch.float64)
    probe = torch.randn(1, 2, 8, dtype=torch.float64)

    def f():
        return (m(v_s, v_g).refined * probe).sum()

    fd = finite_difference_grads(f, [m.tau])[0]
    m.zero_grad()
    f().backward()
    assert rel_err(m.tau.grad, fd) <= 1e-3


# --- block-count arithmetic -------------------------------------------------------


def test_interpolation_count_default_architecture():
    assert itp.interpolation_count(3, 2, 2) == 14


def test_interpolation_count_minimal():
    assert itp.interpolation_count(1, 1, 0) == 2


def test_interpolation_count_guard():
    with pytest.raises(ValueError):
        itp.interpolation_count(1, 0, 0)


# --- toggles and second interpolation ---------------------------------------------


def test_encoder_toggle_passes_input_through():
    m = make_interp(use_encoder=False)
    v = torch.randn(2, 8)
    assert torch.equal(m.encode(v), v)
    with pytest.raises(ValueError):
        make_interp(use_encoder=False, latent_dim=4)


def test_refiner_toggle_returns_raw():
    m = make_interp(use_refiner=False)
    out = m(torch.randn(2, 8), torch.randn(2, 8))
    assert torch.equal(out.raw, out.refined)


def test_second_interpolation_reinterpolates_refined_endpoints():
    m = make_interp(m=6, second_interpolation=2)
    v_s, v_g = torch.randn(1, 8), torch.randn(1, 8)
    with torch.no_grad():
        m.second_interpolation = 0
        first = m(v_s, v_g)
        m.second_interpolation = 2
        second = m(v_s, v_g)
        expected_raw = m.interpolate(first.refined[:, 1], first.refined[:, 4])
        expected_refined = m.refiner(expected_raw)
    assert torch.allclose(second.raw, expected_raw, atol=1e-6)
    assert torch.allclose(second.refined, expected_refined, atol=1e-6)


def test_second_interpolation_bounds():
    with pytest.raises(ValueError):
        make_interp(m=6, second_interpolation=4)
    with pytest.raises(ValueError):
        make_interp(m=6, second_interpolation=-1)
