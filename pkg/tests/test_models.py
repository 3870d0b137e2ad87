import numpy as np
import pytest

from gfscma.models import (
    CONVENTIONAL, PAUDN, PROPOSED, AudnSpec, UaenSpec, audn_shapes, build_bundle, decide, input_dim,
    parameter_count, parameter_count_for, shape_count, uaen_shapes,
)
from gfscma.neural import functional as F
from gfscma.neural.gradcheck import gradcheck


@pytest.fixture(scope="module")
def full42():
    return build_bundle(PROPOSED, 42, 7, cells=1)


def test_input_dims():
    assert input_dim(PROPOSED, 42, 7, 4, 16) == 42 + 14
    assert input_dim(PAUDN, 42, 7, 4, 16) == 14
    assert input_dim(CONVENTIONAL, 42, 7, 4, 16) == 14 + 16 * 8 == 142
    with pytest.raises(ValueError, match="unknown model kind"):
        input_dim("nope", 42, 7, 4, 16)


def test_uaen_output_shape_and_range(full42):
    rng = np.random.default_rng(0)
    alpha = full42.uaen_forward(rng.standard_normal((3, 16, 8)), training=True)
    assert alpha.shape == (3, 42)
    assert np.all((alpha.data > 0) & (alpha.data < 1))


def test_uaen_rejects_wrong_input(full42):
    with pytest.raises(ValueError, match=r"\(B, 16, 8\)"):
        full42.uaen_forward(np.zeros((2, 16, 6)))


def test_detector_shapes_all_kinds():
    rng = np.random.default_rng(1)
    x_p, x_d = rng.standard_normal((4, 14)), rng.standard_normal((4, 16, 8))
    for kind in (PROPOSED, PAUDN, CONVENTIONAL):
        b = build_bundle(kind, 42, 7, cells=2)
        eta = b.predict(x_p, x_d)
        assert eta.shape == (4, 42)
        assert np.all((eta > 0) & (eta < 1))
    conv = build_bundle(CONVENTIONAL, 42, 7, cells=1)
    assert conv.params["audn.embed.weight"].data.shape == (420, 142)


def test_detector_input_width_checked():
    b = build_bundle(PAUDN, 42, 7, cells=1)
    with pytest.raises(ValueError, match="14 features"):
        b.forward(np.zeros((2, 12)))
    p = build_bundle(PROPOSED, 42, 7, cells=1)
    with pytest.raises(ValueError, match="needs data symbols"):
        p.forward(np.zeros((2, 14)))
    with pytest.raises(ValueError, match="alpha of length"):
        p.audn_forward(np.zeros((2, 41)), np.zeros((2, 14)))


def test_paudn_ignores_data_symbols():
    rng = np.random.default_rng(2)
    b = build_bundle(PAUDN, 42, 7, cells=2)
    x_p = rng.standard_normal((5, 14))
    a = b.predict(x_p, rng.standard_normal((5, 16, 8)))
    c = b.predict(x_p, None)
    assert a.tobytes() == c.tobytes()


def test_proposed_depends_on_data_symbols():
    rng = np.random.default_rng(3)
    b = build_bundle(PROPOSED, 42, 7, cells=1)
    x_p = rng.standard_normal((5, 14))
    assert not np.allclose(b.predict(x_p, rng.standard_normal((5, 16, 8))),
                           b.predict(x_p, rng.standard_normal((5, 16, 8))))


def test_predict_chunking_matches_single_pass():
    rng = np.random.default_rng(4)
    b = build_bundle(PROPOSED, 42, 7, cells=1)
    x_p, x_d = rng.standard_normal((7, 14)), rng.standard_normal((7, 16, 8))
    np.testing.assert_allclose(b.predict(x_p, x_d, batch=3), b.predict(x_p, x_d, batch=100), rtol=1e-6)
    assert b.predict(x_p[:0], x_d[:0]).shape == (0, 42)


def test_decide_strict_threshold():
    eta = np.array([0.5, 0.5000001, 0.49, 0.9, 0.0])
    np.testing.assert_array_equal(decide(eta), [0, 1, 0, 1, 0])
    np.testing.assert_array_equal(decide(eta, 0.95), [0, 0, 0, 0, 0])
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            decide(eta, bad)


def test_seeded_init_is_reproducible():
    a = build_bundle(PROPOSED, 42, 7, cells=1, seed=5)
    b = build_bundle(PROPOSED, 42, 7, cells=1, seed=5)
    c = build_bundle(PROPOSED, 42, 7, cells=1, seed=6)
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
    assert not np.array_equal(a.params["audn.embed.weight"].data, c.params["audn.embed.weight"].data)
    assert np.all(a.params["uaen.bn1.gamma"].data == 1) and np.all(a.params["audn.cell0.b_f"].data == 0)


def test_spec_validation():
    with pytest.raises(ValueError, match="n_kernel_1 > n_kernel_2"):
        UaenSpec(10, 10, 16, 4, 42)
    with pytest.raises(ValueError, match="at least one LSTM cell"):
        AudnSpec(420, 0, 56, 42)
    with pytest.raises(ValueError, match="10\\*N_R"):
        AudnSpec(100, 1, 56, 42)
    with pytest.raises(ValueError, match="unknown model kind"):
        build_bundle("x", 42, 7)


def test_astype_float64_copy(full42):
    d = full42.astype(np.float64)
    assert d.dtype == np.float64 and full42.dtype == np.float32
    assert d.buffers["uaen.bn1"]["running_var"].dtype == np.float64


# ---------------------------------------------------------------- gradients


def _micro(kind, cells=2, seed=0):
    return build_bundle(kind, N_R=4, N_ZC=3, K=4, N_d=3, cells=cells, seed=seed, dtype=np.float64)


def _batch(seed=0, B=6):
    rng = np.random.default_rng(seed)
    lab = np.zeros((B, 4))
    lab[np.arange(B), rng.integers(0, 4, B)] = 1
    return rng.standard_normal((B, 6)), rng.standard_normal((B, 3, 8)), lab


@pytest.mark.parametrize("kind,cells", [(PAUDN, 2), (CONVENTIONAL, 2), (PROPOSED, 1), (PROPOSED, 10)])
def test_network_gradcheck(kind, cells):
    # Gradients of the early cells in a 10-cell chain are ~1e-7, so a 1e-5 step
    # is dominated by round-off in the loss difference; 1e-4 balances the
    # round-off and truncation terms for every parameter.
    b = _micro(kind, cells)
    x_p, x_d, lab = _batch()
    rep = gradcheck(lambda: F.bce_loss(b.forward(x_p, x_d, training=True), lab), list(b.params.values()),
                    1e-4, step=1e-4, max_entries=8)
    assert rep.passed, rep.summary()


def test_audn_gradient_reaches_uaen_input():
    b = _micro(PROPOSED)
    x_p, x_d, lab = _batch(1)
    F.bce_loss(b.forward(x_p, x_d, training=True), lab).backward()
    for p in b.component_params("uaen"):
        assert p.grad is not None and np.any(p.grad != 0), p.name


# ---------------------------------------------------------------- sizes


def test_first_conv_layer_size():
    shapes = uaen_shapes(UaenSpec.default(42))
    assert np.prod(shapes["uaen.conv1.kernels"]) + shapes["uaen.conv1.bias"][0] == 420 * 8 + 420 == 3780


def test_parameter_count_closed_form():
    N_R, N_ZC, K, N_d, S = 42, 7, 4, 16, 10
    n1, n2, H = 10 * N_R, 2 * N_R, 10 * N_R
    uaen = (n1 * 2 * K + n1 + 2 * n1) + (n2 * n1 + n2 + 2 * n2) + (N_R * N_d * n2 + N_R + 2 * N_R) \
        + (N_R * N_R + N_R)
    audn = H * (N_R + 2 * N_ZC) + H + S * 4 * (2 * H * H + H) + N_R * H + N_R
    got = parameter_count_for(N_R, N_ZC, K, N_d, S)
    assert (got["uaen"], got["audn"]) == (uaen, audn)
    assert got["uaen"] < got["audn"]
    assert got["ratio"] == pytest.approx(uaen / audn)


def test_parameter_count_matches_allocation():
    b = build_bundle(PROPOSED, 42, 7, cells=2)
    assert parameter_count(b) == parameter_count_for(42, 7, cells=2)
    assert shape_count(audn_shapes(b.audn)) == parameter_count(b)["audn"]
    assert parameter_count(build_bundle(PAUDN, 42, 7, cells=1))["uaen"] == 0
