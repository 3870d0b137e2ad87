"""Self-check suites: ZC correlation properties, gradient checks, simulator oracles.

Each suite returns a list of :class:`Check` rows; ``run_suites`` renders them as
a pass/fail table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codebook import load_shipped
from .ctu import random_association
from .models import PROPOSED, build_bundle
from .neural import functional as F
from .neural.engine import Parameter
from .neural.gradcheck import gradcheck
from .sim import (ActivityModel, Scenario, complex_normal, draw_channels, generate_batch,
                  synthesize_data_rx, synthesize_preamble_rx)
from .streams import Stream
from .zc import ZcParams, build_preamble_set, reference_preamble_set

SUITES = ("zc", "grad", "sim")
LAYER_TOL = 1e-6
NETWORK_TOL = 1e-4


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"{state}  {self.suite:<5} {self.name:<42} {self.value:.3e}  (tol {self.tolerance:g})"


# ---------------------------------------------------------------- ZC


def zc_suite(lengths=(7, 13), tol: float = 1e-9) -> list[Check]:
    """Exhaustive over every root ``1..N-1`` and every cyclic shift."""
    out = []
    for n in lengths:
        pset = build_preamble_set(ZcParams(n, tuple(range(1, n))), n)
        X = np.stack(pset.preambles)
        G = np.abs(X.conj() @ X.T)
        roots = np.array([r for r, _ in pset.meta])
        same = roots[:, None] == roots[None, :]
        off = ~np.eye(len(X), dtype=bool)
        e_same = float(np.max(G[same & off]))
        e_cross = float(np.max(np.abs(G[~same] - 1 / math.sqrt(n))))
        e_norm = float(np.max(np.abs(np.diag(G) - 1)))
        out += [Check("zc", f"N_ZC={n} same-root distinct-shift corr", e_same, tol, e_same < tol),
                Check("zc", f"N_ZC={n} cross-root corr - 1/sqrt(N)", e_cross, tol, e_cross < tol),
                Check("zc", f"N_ZC={n} unit energy", e_norm, tol, e_norm < tol)]
    return out


# ---------------------------------------------------------------- gradients


def _probe_loss(y, R):
    return F.bce_loss(F.sigmoid(F.mul(y, R)), (R > 0).astype(np.float64))


def _layer_cases(rng):
    def P(*shape, name):
        return Parameter(rng.standard_normal(shape), name=name)

    def R(shape):
        return rng.standard_normal(shape)

    x = P(5, 6, name="x")
    W = P(4, 6, name="W")
    b = P(4, name="b")
    r = R((5, 4))
    yield "dense", (lambda: _probe_loss(F.dense(x, W, b), r)), [x, W, b]

    xc = P(3, 4, 8, name="x")
    K = P(5, 8, name="kernels")
    kb = P(5, name="bias")
    rc = R((3, 4, 5))
    yield "conv1d_full", (lambda: _probe_loss(F.conv1d_full(xc, K, kb), rc)), [xc, K, kb]

    xb = P(6, 3, 4, name="x")
    g = Parameter(1 + 0.3 * rng.standard_normal(4), name="gamma")
    be = P(4, name="beta")
    st = {"running_mean": np.zeros(4), "running_var": np.ones(4)}
    rb = R((6, 3, 4))
    yield "batchnorm(train)", (lambda: _probe_loss(F.batchnorm(xb, g, be, dict(st), True), rb)), [xb, g, be]
    yield "batchnorm(eval)", (lambda: _probe_loss(F.batchnorm(xb, g, be, st, False), rb)), [xb, g, be]

    xa = Parameter(rng.standard_normal((4, 7)) + 0.3, name="x")
    ra = R((4, 7))
    yield "relu", (lambda: _probe_loss(F.relu(xa), ra)), [xa]
    yield "tanh", (lambda: _probe_loss(F.tanh(xa), ra)), [xa]

    H, D = 5, 3
    cell = {f"{k}_{gate}": P(*((H, D) if k == "W" else (H, H) if k == "U" else (H,)), name=f"{k}_{gate}")
            for k in "WUb" for gate in F.GATES}
    z = P(4, D, name="z")
    o0 = P(4, H, name="o_prev")
    c0 = P(4, H, name="c_prev")
    rl = R((4, H))

    def lstm():
        o, c = F.lstm_cell(z, o0, c0, cell)
        return _probe_loss(F.add(o, F.scale(c, 0.5)), rl)

    yield "lstm_cell", lstm, [z, o0, c0, *cell.values()]

    q = Parameter(rng.uniform(0.05, 0.95, (6, 3)), name="q")
    t = (rng.random((6, 3)) < 0.5).astype(np.float64)
    yield "bce_loss", (lambda: F.bce_loss(q, t)), [q]


def grad_suite(seed: int = 0, network_entries: int = 12) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn, params in _layer_cases(rng):
        rep = gradcheck(fn, params, LAYER_TOL)
        out.append(Check("grad", name, rep.max_rel_error, LAYER_TOL, rep.passed))

    # composed UAEN -> AUDN on micro inputs
    b = build_bundle(PROPOSED, N_R=4, N_ZC=3, K=4, N_d=3, cells=2, seed=seed, dtype=np.float64)
    x_p = rng.standard_normal((6, 6))
    x_d = rng.standard_normal((6, 3, 8))
    lab = np.zeros((6, 4))
    lab[np.arange(6), rng.integers(0, 4, 6)] = 1
    rep = gradcheck(lambda: F.bce_loss(b.forward(x_p, x_d, training=True), lab), list(b.params.values()),
                    NETWORK_TOL, max_entries=network_entries, seed=seed)
    out.append(Check("grad", "UAEN->AUDN network", rep.max_rel_error, NETWORK_TOL, rep.passed))
    return out


# ---------------------------------------------------------------- simulator


def direct_sum_oracle(delta, h, bits, preambles, cb_idx, codewords):
    """Loop-based superposition for a single frame (no vectorization)."""
    N_R = len(delta)
    N_d = bits.shape[1]
    K = codewords.shape[-1]
    y_p = np.zeros(preambles.shape[1], complex)
    y_d = np.zeros((N_d, K), complex)
    for n in range(N_R):
        if not delta[n]:
            continue
        y_p += h[n] * preambles[n]
        for i in range(N_d):
            m = 0
            for bit in bits[n, i]:
                m = 2 * m + int(bit)
            y_d[i] += h[n] * codewords[cb_idx[n], m]
    return y_p, y_d


def sim_suite(seed: int = 0, frames: int = 200, draws: int = 1_000_000, tol: float = 0.01) -> list[Check]:
    pset = reference_preamble_set(7)
    sc = Scenario.build(load_shipped("pb"), pset, random_association(pset, 6, seed))
    cfg = sc.config(20.0, ActivityModel.uniform(1, 6), seed)
    batch = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, frames, Stream(seed).child("verify"), noiseless=True)
    P = sc.cmap.preamble_matrix(sc.pset)
    cw = sc.cbs.as_array()
    err = 0.0
    for f in range(frames):
        yp, yd = direct_sum_oracle(batch.delta[f], batch.h[f], batch.bits[f], P, sc.cmap.cb_order, cw)
        err = max(err, float(np.max(np.abs(yp - batch.y_p[f]))), float(np.max(np.abs(yd - batch.y_d[f]))))
    out = [Check("sim", "noise-free superposition vs direct sum", err, 0.0, err == 0.0)]

    g = Stream(seed).child("verify", "stats").generator()
    sigma = cfg.sigma
    n = complex_normal(g, draws, sigma**2)
    e_noise = abs(float(np.mean(np.abs(n) ** 2)) / sigma**2 - 1)
    h = draw_channels(g, draws)
    e_h = abs(float(np.mean(np.abs(h) ** 2)) - 1)
    out += [Check("sim", "noise variance (relative error)", e_noise, tol, e_noise < tol),
            Check("sim", "Rayleigh channel power (relative error)", e_h, tol, e_h < tol)]

    # received noise really has variance sigma^2: all-inactive frames
    z = np.zeros((2000, sc.cmap.N_R), np.uint8)
    hz = np.zeros(z.shape, complex)
    yp = synthesize_preamble_rx(z, hz, sc.cmap, sc.pset, sigma, g)
    bits = np.zeros((2000, sc.cmap.N_R, sc.N_d, 2), np.uint8)
    yd = synthesize_data_rx(z, hz, sc.cmap, sc.cbs, bits, sigma, g)
    got = np.concatenate([yp.ravel(), yd.ravel()])
    e_rx = abs(float(np.mean(np.abs(got) ** 2)) / sigma**2 - 1)
    out.append(Check("sim", "received noise power (relative error)", e_rx, 0.02, e_rx < 0.02))
    return out


def run_suites(names=SUITES) -> list[Check]:
    funcs = {"zc": zc_suite, "grad": grad_suite, "sim": sim_suite}
    rows = []
    for n in names:
        if n not in funcs:
            raise ValueError(f"unknown suite {n!r}; expected one of {SUITES}")
        rows += funcs[n]()
    return rows


def table(rows) -> str:
    return "\n".join(r.line() for r in rows)

