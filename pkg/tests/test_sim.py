import math

import numpy as np
import pytest

from gfscma.codebook import encode_block, load_shipped
from gfscma.ctu import random_association, root_separated_association
from gfscma.sim import (
    ActivityModel, Scenario, SimConfig, TransmissionBatch, complex_normal, draw_activity, draw_channels,
    generate_batch, generate_frames, read_shard, realify, snr_to_sigma, synthesize_data_rx,
    synthesize_preamble_rx, unrealify, write_shard,
)
from gfscma.streams import Stream
from gfscma.zc import reference_preamble_set


@pytest.fixture(scope="module")
def sc():
    pset = reference_preamble_set(7)
    return Scenario.build(load_shipped("pb"), pset, random_association(pset, 6, 0))


def oracle(delta, h, bits, sc):
    """Term-by-term superposition using encode_block per user and block."""
    y_p = np.zeros(sc.pset.n_zc, complex)
    y_d = np.zeros((bits.shape[1], sc.cbs.K), complex)
    for e in sc.cmap.entries:
        n = e.ctu_index
        if delta[n]:
            y_p = y_p + h[n] * sc.pset.preambles[e.preamble_index]
            cb = sc.cbs.codebooks[e.cb_index]
            for i in range(bits.shape[1]):
                y_d[i] = y_d[i] + h[n] * encode_block(bits[n, i], cb)
    return y_p, y_d


# ---------------------------------------------------------------- config / helpers


@pytest.mark.parametrize("snr,var", [(0, 1.0), (20, 0.01), (10, 0.1)])
def test_snr_to_sigma(snr, var):
    assert snr_to_sigma(snr) ** 2 == pytest.approx(var, rel=1e-12)


def test_snr_to_sigma_rejects_nonfinite():
    with pytest.raises(ValueError):
        snr_to_sigma(float("inf"))


def test_realify():
    np.testing.assert_array_equal(realify(np.array([1 + 2j])), [1, 2])
    v = np.array([1 + 2j, 3 - 4j, 0.5j, -1])
    assert realify(v).shape == (8,)
    np.testing.assert_array_equal(unrealify(realify(v)), v)
    np.testing.assert_array_equal(realify(v), [1, 3, 0, -1, 2, -4, 0.5, 0])


def test_sim_config_validation(sc):
    cfg = sc.config(20.0, ActivityModel.fixed(6))
    assert cfg.N_R == 42 and cfg.L == 7
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        cfg.with_(N_d=0)
    with pytest.raises(ValueError):
        cfg.with_(N_R=43)
    with pytest.raises(ValueError):
        cfg.with_(snr_db=float("nan"))


# ---------------------------------------------------------------- activity


def test_fixed_count_activity(sc):
    cfg = sc.config(20.0, ActivityModel.fixed(6))
    d = draw_activity(cfg, np.random.default_rng(0), size=500)
    assert np.all(d.sum(axis=1) == 6)
    assert set(np.unique(d)) == {0, 1}
    assert draw_activity(cfg, np.random.default_rng(0)).shape == (42,)


def test_uniform_count_activity(sc):
    cfg = sc.config(20.0, ActivityModel.uniform(1, 6))
    d = draw_activity(cfg, np.random.default_rng(1), size=60_000)
    counts = np.bincount(d.sum(axis=1), minlength=7)
    assert counts[0] == 0
    np.testing.assert_allclose(counts[1:] / 60_000, 1 / 6, atol=0.01)
    # every CTU equally likely
    np.testing.assert_allclose(d.mean(axis=0), 3.5 / 42, atol=0.004)


def test_bernoulli_zero(sc):
    cfg = sc.config(20.0, ActivityModel.bernoulli(0.0))
    assert draw_activity(cfg, np.random.default_rng(0), size=10).sum() == 0


def test_bernoulli_mean_binomial_bound(sc):
    cfg = sc.config(20.0, ActivityModel.bernoulli(0.1))
    n = 100_000
    d = draw_activity(cfg, np.random.default_rng(2), size=n)
    mean = d.sum(axis=1).mean()
    sd = math.sqrt(42 * 0.1 * 0.9 / n)
    assert abs(mean - 4.2) < 3 * sd


def test_too_many_active(sc):
    with pytest.raises(ValueError, match="exceeds"):
        draw_activity(sc.config(20.0, ActivityModel.fixed(43)), np.random.default_rng(0))


# ---------------------------------------------------------------- superposition


def test_zero_activity_noise_free(sc):
    d = np.zeros(42, np.uint8)
    h = draw_channels(np.random.default_rng(0), 42)
    np.testing.assert_array_equal(synthesize_preamble_rx(d, h, sc.cmap, sc.pset, 0.0), np.zeros(7))
    bits = np.ones((42, 16, 2), np.uint8)
    np.testing.assert_array_equal(synthesize_data_rx(d, h, sc.cmap, sc.cbs, bits, 0.0), np.zeros((16, 4)))


def test_single_user(sc):
    rng = np.random.default_rng(4)
    n = 17
    d = np.zeros(42, np.uint8)
    d[n] = 1
    h = draw_channels(rng, 42)
    y = synthesize_preamble_rx(d, h, sc.cmap, sc.pset, 0.0)
    p = sc.pset.preambles[sc.cmap.entries[n].preamble_index]
    np.testing.assert_array_equal(y, h[n] * p)
    bits = np.zeros((42, 16, 2), np.uint8)
    bits[n, :, 0] = 1  # "10" -> codeword 2 everywhere
    yd = synthesize_data_rx(d, h, sc.cmap, sc.cbs, bits, 0.0)
    cw = sc.cbs.codebooks[n % 6].codewords[2]
    for i in range(16):
        np.testing.assert_array_equal(yd[i], h[n] * cw)


def test_two_users_same_codebook_collision(sc):
    rng = np.random.default_rng(5)
    a, b = 3, 9  # both use codebook 3
    d = np.zeros(42, np.uint8)
    d[[a, b]] = 1
    h = draw_channels(rng, 42)
    bits = rng.integers(0, 2, (42, 16, 2), dtype=np.uint8)
    yp = synthesize_preamble_rx(d, h, sc.cmap, sc.pset, 0.0)
    yd = synthesize_data_rx(d, h, sc.cmap, sc.cbs, bits, 0.0)
    op, od = oracle(d, h, bits, sc)
    np.testing.assert_allclose(yp, op, atol=1e-14)
    np.testing.assert_allclose(yd, od, atol=1e-14)


def test_linearity(sc):
    rng = np.random.default_rng(6)
    da = np.zeros(42, np.uint8)
    db = np.zeros(42, np.uint8)
    da[[0, 5, 11]] = 1
    db[[2, 30]] = 1
    h = draw_channels(rng, 42)
    bits = rng.integers(0, 2, (42, 16, 2), dtype=np.uint8)
    for f in (lambda d: synthesize_preamble_rx(d, h, sc.cmap, sc.pset, 0.0),
              lambda d: synthesize_data_rx(d, h, sc.cmap, sc.cbs, bits, 0.0)):
        np.testing.assert_allclose(f(da + db), f(da) + f(db), atol=1e-14)


def test_dimension_errors(sc):
    h = np.ones(42, complex)
    with pytest.raises(ValueError, match="dimension mismatch"):
        synthesize_preamble_rx(np.ones(41), h[:41], sc.cmap, sc.pset, 0.0)
    with pytest.raises(ValueError, match="dimension mismatch"):
        synthesize_preamble_rx(np.ones(42), h[:40], sc.cmap, sc.pset, 0.0)
    with pytest.raises(ValueError, match="bits"):
        synthesize_data_rx(np.ones(42), h, sc.cmap, sc.cbs, np.zeros((42, 2)), 0.0)
    with pytest.raises(ValueError, match="expected 2 bits"):
        synthesize_data_rx(np.ones(42), h, sc.cmap, sc.cbs, np.zeros((42, 16, 3), np.uint8), 0.0)


# ---------------------------------------------------------------- batches


def test_generate_batch_shapes_and_determinism(sc):
    cfg = sc.config(20.0, ActivityModel.uniform(1, 6), 3)
    a = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 1000, 3)
    b = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 1000, 3)
    assert len(a) == 1000
    assert a.y_p.shape == (1000, 7) and a.y_d.shape == (1000, 16, 4)
    assert a.x_p.shape == (1000, 14) and a.x_d.shape == (1000, 16, 8)
    assert a.x_p.dtype == np.float32
    np.testing.assert_array_equal(a.labels, a.delta)
    for f in ("delta", "h", "bits", "y_p", "y_d"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()


def test_workers_do_not_change_output(sc):
    cfg = sc.config(12.0, ActivityModel.fixed(4))
    a = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 1100, Stream(9), workers=1)
    b = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 1100, Stream(9), workers=4)
    assert a.y_d.tobytes() == b.y_d.tobytes() and a.delta.tobytes() == b.delta.tobytes()


def test_noise_free_batch_reconstruction(sc):
    cfg = sc.config(20.0, ActivityModel.uniform(1, 6))
    batch = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 60, 11, noiseless=True)
    for i in range(60):
        fr = batch.frame(i)
        op, od = oracle(fr.truth, fr.h, batch.bits[i], sc)
        np.testing.assert_allclose(fr.y_p, op, rtol=0, atol=1e-12)
        np.testing.assert_allclose(fr.y_d, od, rtol=0, atol=1e-12)


def test_noise_free_rs_batch(sc):
    pset = sc.pset
    rs = Scenario.build(load_shipped("pi"), pset, root_separated_association(pset, 6))
    cfg = rs.config(20.0, ActivityModel.fixed(6))
    batch = generate_batch(cfg, rs.cmap, rs.pset, rs.cbs, 20, 2, noiseless=True)
    for i in range(20):
        op, od = oracle(batch.delta[i], batch.h[i], batch.bits[i], rs)
        np.testing.assert_allclose(batch.y_p[i], op, atol=1e-12)
        np.testing.assert_allclose(batch.y_d[i], od, atol=1e-12)


def test_noise_is_the_only_difference(sc):
    cfg = sc.config(10.0, ActivityModel.fixed(3))
    clean = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 2000, 5, noiseless=True)
    noisy = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 2000, 5)
    np.testing.assert_array_equal(clean.h, noisy.h)
    n = np.concatenate([(noisy.y_p - clean.y_p).ravel(), (noisy.y_d - clean.y_d).ravel()])
    assert np.mean(np.abs(n) ** 2) == pytest.approx(0.1, rel=0.02)
    assert abs(np.mean(n.real * n.imag)) < 0.002  # circular


def test_noise_and_channel_statistics():
    g = np.random.default_rng(123)
    n = complex_normal(g, 1_000_000, 0.01)
    assert np.mean(np.abs(n) ** 2) == pytest.approx(0.01, rel=0.01)
    assert np.var(n.real) == pytest.approx(0.005, rel=0.01)
    h = draw_channels(g, 1_000_000)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, rel=0.01)
    assert abs(np.mean(h)) < 0.005


def test_generate_frames_uses_given_activity(sc):
    cfg = sc.config(20.0, ActivityModel.uniform(1, 6))
    d = np.zeros((300, 42), np.uint8)
    d[:, 4] = 1
    b = generate_frames(cfg, sc.cmap, sc.pset, sc.cbs, d, 0)
    np.testing.assert_array_equal(b.delta, d)


def test_concat(sc):
    cfg = sc.config(20.0, ActivityModel.fixed(2))
    a = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 10, 0)
    b = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 5, 1)
    c = TransmissionBatch.concat([a, b])
    assert len(c) == 15
    np.testing.assert_array_equal(c.y_p[10:], b.y_p)


def test_config_mismatch(sc):
    cfg = sc.config(20.0, ActivityModel.fixed(2)).with_(N_ZC=13)
    with pytest.raises(ValueError, match="do not match"):
        generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 4, 0)


def test_scenario_normalizes_power(sc):
    assert sc.cbs.total_power == pytest.approx(6.0, rel=1e-12)
    np.testing.assert_allclose(sc.cbs.power_profile, 1.0, rtol=1e-12)


def test_shard_roundtrip(tmp_path, sc):
    cfg = sc.config(15.0, ActivityModel.uniform(1, 6), 4)
    batch = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, 37, 4)
    p = tmp_path / "s.gfsb"
    write_shard(p, cfg, batch)
    raw = p.read_bytes()
    assert raw[:5] == b"GFSB1"
    cfg2, arrs = read_shard(p)
    assert cfg2 == cfg
    np.testing.assert_array_equal(arrs["delta"], batch.delta)
    np.testing.assert_allclose(arrs["y_d"], batch.y_d.astype(np.complex64), rtol=1e-6)
    np.testing.assert_allclose(arrs["h"], batch.h, rtol=1e-6, atol=1e-7)
    p.write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        read_shard(p)
