"""Virtual-transceiver simulation of superposed preamble and SCMA data signals.

Conventions (one place for all SNR accounting):

* preambles have unit energy,
* codebooks are scaled so the average codebook power is 1 (total ``P = J``),
* channels are i.i.d. CN(0, 1), flat over preamble and data,
* noise is CN(0, sigma^2) per complex entry with ``sigma^2 = 10**(-snr_db/10)``.

Batches are produced in fixed-size chunks, each drawing from its own keyed
stream, so the output does not depend on how many workers generate it.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .codebook import CodebookSet, bits_to_index, normalize_total_power
from .ctu import CtuMap
from .streams import Stream, as_generator
from .zc import PreambleSet

CHUNK = 250
SHARD_MAGIC = b"GFSB1"


@dataclass(frozen=True)
class ActivityModel:
    """``fixed_count``: N_a ~ U{n_min..n_max}, then a uniform N_a-subset is active.
    ``bernoulli``: every CTU active independently with probability ``p``."""

    mode: str = "fixed_count"
    n_min: int = 1
    n_max: int = 6
    p: float = 0.0

    def __post_init__(self):
        if self.mode not in ("fixed_count", "bernoulli"):
            raise ValueError(f"unknown activity mode {self.mode!r}")
        if self.mode == "fixed_count" and not 0 <= self.n_min <= self.n_max:
            raise ValueError(f"invalid active-user range [{self.n_min}, {self.n_max}]")
        if self.mode == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise ValueError(f"activity probability {self.p} outside [0, 1]")

    @classmethod
    def fixed(cls, n_a: int) -> "ActivityModel":
        return cls("fixed_count", n_a, n_a)

    @classmethod
    def uniform(cls, n_min: int, n_max: int) -> "ActivityModel":
        return cls("fixed_count", n_min, n_max)

    @classmethod
    def bernoulli(cls, p: float) -> "ActivityModel":
        return cls("bernoulli", p=p)


@dataclass(frozen=True)
class SimConfig:
    N_R: int
    J: int = 6
    K: int = 4
    N: int = 2
    M: int = 4
    N_d: int = 16
    N_ZC: int = 7
    snr_db: float = 20.0
    activity: ActivityModel = field(default_factory=ActivityModel)
    seed: int = 0

    def __post_init__(self):
        if self.J <= 0 or self.N_R % self.J:
            raise ValueError(f"N_R={self.N_R} must be a positive multiple of J={self.J}")
        if self.N_d < 1:
            raise ValueError("N_d must be at least 1")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.activity.mode == "fixed_count" and self.activity.n_max > self.N_R:
            raise ValueError(f"N_a up to {self.activity.n_max} exceeds N_R={self.N_R}")

    @property
    def L(self) -> int:
        return self.N_R // self.J

    @property
    def sigma(self) -> float:
        return snr_to_sigma(self.snr_db)

    def with_(self, **kw) -> "SimConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["activity"] = ActivityModel(**d["activity"])
        return cls(**d)


def snr_to_sigma(snr_db: float) -> float:
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    return math.sqrt(10.0 ** (-snr_db / 10.0))


def realify(v: np.ndarray) -> np.ndarray:
    """``[Re(v); Im(v)]`` along the last axis."""
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=-1)


def unrealify(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    half = x.shape[-1] // 2
    return x[..., :half] + 1j * x[..., half:]


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    s = math.sqrt(var / 2.0)
    return s * rng.standard_normal(shape) + 1j * s * rng.standard_normal(shape)


# ---------------------------------------------------------------- draws


def draw_activity(cfg: SimConfig, rng, size: int | None = None) -> np.ndarray:
    """Activity vector(s) of 0/1 entries; shape ``(N_R,)`` or ``(size, N_R)``."""
    rng = as_generator(rng)
    B = 1 if size is None else size
    act = cfg.activity
    if act.mode == "bernoulli":
        delta = (rng.random((B, cfg.N_R)) < act.p).astype(np.uint8)
    else:
        if act.n_max > cfg.N_R:
            raise ValueError(f"N_a={act.n_max} exceeds N_R={cfg.N_R}")
        n_a = rng.integers(act.n_min, act.n_max + 1, size=B)
        ranks = np.argsort(np.argsort(rng.random((B, cfg.N_R)), axis=1), axis=1)
        delta = (ranks < n_a[:, None]).astype(np.uint8)
    return delta[0] if size is None else delta


def draw_channels(rng, shape) -> np.ndarray:
    return complex_normal(as_generator(rng), shape, 1.0)


# ---------------------------------------------------------------- superposition


def synthesize_preamble_rx(delta, h, cmap: CtuMap, pset: PreambleSet, sigma: float, rng=None):
    """``y_p = sum_n delta_n h_n p^(n) + noise``; works on one frame or a batch."""
    delta = np.asarray(delta)
    h = np.asarray(h)
    P = cmap.preamble_matrix(pset)
    if delta.shape[-1] != cmap.N_R or h.shape != delta.shape:
        raise ValueError(
            f"dimension mismatch: delta {delta.shape}, h {h.shape}, N_R={cmap.N_R}"
        )
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    # elementwise products summed over users: a single active user is reproduced exactly
    y = np.sum((delta * h)[..., :, None] * P, axis=-2)
    if sigma > 0:
        y = y + complex_normal(as_generator(rng), y.shape, sigma**2)
    return y


def codeword_indices(bits: np.ndarray, M: int) -> np.ndarray:
    bits = np.asarray(bits)
    k = int(round(math.log2(M)))
    if bits.shape[-1] != k:
        raise ValueError(f"expected {k} bits per block, got {bits.shape[-1]}")
    return bits_to_index(bits)


def synthesize_data_rx(delta, h, cmap: CtuMap, cbs: CodebookSet, bits, sigma: float, rng=None):
    """``y_i = sum_n delta_n h_n w_i^{nu(n)} + noise_i`` for every block ``i``.

    ``bits`` has shape ``(..., N_R, N_d, log2 M)``; rows of inactive CTUs are ignored.
    Returns ``(..., N_d, K)``.
    """
    delta = np.asarray(delta)
    h = np.asarray(h)
    bits = np.asarray(bits)
    if delta.shape[-1] != cmap.N_R or h.shape != delta.shape:
        raise ValueError(
            f"dimension mismatch: delta {delta.shape}, h {h.shape}, N_R={cmap.N_R}"
        )
    if bits.ndim < 3 or bits.shape[:-2] != delta.shape:
        raise ValueError(f"bits shape {bits.shape} does not match delta {delta.shape}")
    if cmap.J != cbs.J:
        raise ValueError(f"map uses J={cmap.J}, codebook set has J={cbs.J}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    idx = codeword_indices(bits, cbs.M)  # (..., N_R, N_d)
    cw = cbs.as_array()[cmap.cb_order[:, None], idx]  # (..., N_R, N_d, K)
    y = np.sum((delta * h)[..., :, None, None] * cw, axis=-3)
    if sigma > 0:
        y = y + complex_normal(as_generator(rng), y.shape, sigma**2)
    return y


# ---------------------------------------------------------------- batches


@dataclass(frozen=True)
class ReceivedFrame:
    y_p: np.ndarray
    y_d: np.ndarray
    truth: np.ndarray
    h: np.ndarray


@dataclass
class TransmissionBatch:
    delta: np.ndarray  # (B, N_R) uint8
    h: np.ndarray  # (B, N_R) complex
    bits: np.ndarray  # (B, N_R, N_d, log2 M) uint8
    y_p: np.ndarray  # (B, N_ZC) complex
    y_d: np.ndarray  # (B, N_d, K) complex

    def __len__(self) -> int:
        return self.delta.shape[0]

    @cached_property
    def x_p(self) -> np.ndarray:
        return realify(self.y_p).astype(np.float32)

    @cached_property
    def x_d(self) -> np.ndarray:
        return realify(self.y_d).astype(np.float32)

    @property
    def labels(self) -> np.ndarray:
        return self.delta.astype(np.float32)

    def frame(self, i: int) -> ReceivedFrame:
        return ReceivedFrame(self.y_p[i], self.y_d[i], self.delta[i], self.h[i])

    @classmethod
    def concat(cls, parts) -> "TransmissionBatch":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("delta", "h", "bits", "y_p", "y_d")))


@dataclass(frozen=True)
class Scenario:
    """Codebooks, preambles and their association, ready for simulation."""

    cbs: CodebookSet
    pset: PreambleSet
    cmap: CtuMap
    N_d: int = 16

    @classmethod
    def build(cls, cbs: CodebookSet, pset: PreambleSet, cmap: CtuMap, N_d: int = 16,
              normalize: bool = True) -> "Scenario":
        if normalize:
            cbs = normalize_total_power(cbs, float(cbs.J))
        if cmap.J != cbs.J:
            raise ValueError(f"map uses J={cmap.J}, codebook set has J={cbs.J}")
        if cmap.N_R != len(pset):
            raise ValueError(f"map has {cmap.N_R} CTUs, preamble set has {len(pset)}")
        return cls(cbs, pset, cmap, N_d)

    def config(self, snr_db: float, activity: ActivityModel, seed: int = 0) -> SimConfig:
        return SimConfig(
            N_R=self.cmap.N_R, J=self.cbs.J, K=self.cbs.K, N=self.cbs.N, M=self.cbs.M,
            N_d=self.N_d, N_ZC=self.pset.n_zc, snr_db=snr_db, activity=activity, seed=seed,
        )


def _check(cfg: SimConfig, cmap: CtuMap, pset: PreambleSet, cbs: CodebookSet) -> None:
    got = (cmap.N_R, cbs.J, cbs.K, cbs.N, cbs.M, pset.n_zc, len(pset))
    want = (cfg.N_R, cfg.J, cfg.K, cfg.N, cfg.M, cfg.N_ZC, cfg.N_R)
    if got != want:
        raise ValueError(f"inputs (N_R, J, K, N, M, N_ZC, |set|)={got} do not match config {want}")


def _frames(cfg, cmap, pset, cbs, delta, rng, noiseless):
    B = delta.shape[0]
    h = draw_channels(rng, (B, cfg.N_R))
    bits = rng.integers(0, 2, size=(B, cfg.N_R, cfg.N_d, cbs.bits_per_block), dtype=np.uint8)
    sigma = 0.0 if noiseless else cfg.sigma
    n_p = complex_normal(rng, (B, cfg.N_ZC), sigma**2)
    n_d = complex_normal(rng, (B, cfg.N_d, cfg.K), sigma**2)
    y_p = synthesize_preamble_rx(delta, h, cmap, pset, 0.0)
    y_d = synthesize_data_rx(delta, h, cmap, cbs, bits, 0.0)
    if not noiseless:
        y_p = y_p + n_p
        y_d = y_d + n_d
    return TransmissionBatch(delta, h, bits, y_p, y_d)


def _chunks(n: int):
    return [(c, min(CHUNK, n - c * CHUNK)) for c in range((n + CHUNK - 1) // CHUNK)]


def _run(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda j: fn(*j), jobs))


def generate_batch(cfg: SimConfig, cmap: CtuMap, pset: PreambleSet, cbs: CodebookSet,
                   batch_size: int, rng: Stream | int, *, workers: int = 1,
                   noiseless: bool = False) -> TransmissionBatch:
    """``batch_size`` independent frames with activity drawn from ``cfg.activity``."""
    _check(cfg, cmap, pset, cbs)
    stream = rng if isinstance(rng, Stream) else Stream(int(rng))

    def one(c, n):
        g = stream.child("chunk", c).generator()
        delta = draw_activity(cfg, g, size=n)
        return _frames(cfg, cmap, pset, cbs, delta, g, noiseless)

    return TransmissionBatch.concat(_run(one, _chunks(batch_size), workers))


def generate_frames(cfg: SimConfig, cmap: CtuMap, pset: PreambleSet, cbs: CodebookSet,
                    delta: np.ndarray, rng: Stream | int, *, workers: int = 1,
                    noiseless: bool = False) -> TransmissionBatch:
    """Frames for given activity vectors (fresh channels, bits and noise)."""
    _check(cfg, cmap, pset, cbs)
    delta = np.asarray(delta, dtype=np.uint8)
    stream = rng if isinstance(rng, Stream) else Stream(int(rng))

    def one(c, n):
        g = stream.child("frames", c).generator()
        return _frames(cfg, cmap, pset, cbs, delta[c * CHUNK: c * CHUNK + n], g, noiseless)

    return TransmissionBatch.concat(_run(one, _chunks(delta.shape[0]), workers))


# ---------------------------------------------------------------- shards


def write_shard(path: str | Path, cfg: SimConfig, batch: TransmissionBatch) -> None:
    """Little-endian binary shard: magic, JSON config, frame count, then frames."""
    head = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    B = len(batch)
    bitmap = np.packbits(batch.delta.astype(bool), axis=1, bitorder="little")
    body = np.concatenate(
        [
            realify(batch.h).astype("<f4").view(np.uint8).reshape(B, -1),
            realify(batch.y_p).astype("<f4").view(np.uint8).reshape(B, -1),
            realify(batch.y_d).astype("<f4").view(np.uint8).reshape(B, -1),
        ],
        axis=1,
    )
    frames = np.concatenate([bitmap, body], axis=1)
    with open(path, "wb") as f:
        f.write(SHARD_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(struct.pack("<I", B))
        f.write(frames.tobytes())


def read_shard(path: str | Path) -> tuple[SimConfig, dict]:
    """Returns the config and a dict of ``delta``, ``h``, ``y_p``, ``y_d`` arrays."""
    raw = Path(path).read_bytes()
    if raw[:5] != SHARD_MAGIC:
        raise ValueError("not a GFSB1 shard")
    (hl,) = struct.unpack_from("<I", raw, 5)
    cfg = SimConfig.from_dict(json.loads(raw[9:9 + hl].decode("utf-8")))
    (B,) = struct.unpack_from("<I", raw, 9 + hl)
    nb = (cfg.N_R + 7) // 8
    nf = 2 * cfg.N_R + 2 * cfg.N_ZC + cfg.N_d * 2 * cfg.K
    rec = nb + 4 * nf
    data = np.frombuffer(raw, dtype=np.uint8, offset=13 + hl)
    if data.size != B * rec:
        raise ValueError(f"shard body has {data.size} bytes, expected {B * rec}")
    data = data.reshape(B, rec)
    delta = np.unpackbits(data[:, :nb], axis=1, count=cfg.N_R, bitorder="little")
    f = data[:, nb:].copy().view("<f4").astype(np.float64)
    a, b = 2 * cfg.N_R, 2 * cfg.N_R + 2 * cfg.N_ZC
    y_d = unrealify(f[:, b:].reshape(B, cfg.N_d, 2 * cfg.K))
    return cfg, {"delta": delta, "h": unrealify(f[:, :a]), "y_p": unrealify(f[:, a:b]), "y_d": y_d}
