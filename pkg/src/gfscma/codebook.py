"""SCMA codebooks: containers, file I/O, power transforms and distance metrics.

A codebook set holds ``J`` M-ary codebooks over ``K`` resources. Every codeword
of codebook ``j`` is nonzero on exactly the ``N`` resources of that codebook's
mask. Codebook files are plain text::

    scma-cb v1 J K N M total_power
    cb 0 mask 1 3
    <re_0> <im_0> <re_1> <im_1> ... <re_{K-1}> <im_{K-1}>     (M lines)
    cb 1 mask 0 2
    ...

Lines starting with ``#`` and blank lines are ignored, so provenance notes can
live in the file header.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

POWER_RTOL = 1e-9
MAGIC = "scma-cb"
VERSION = "v1"


class CodebookError(ValueError):
    """Raised for malformed codebook files or violated codebook invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Codebook:
    index: int
    codewords: np.ndarray  # (M, K) complex
    resource_mask: tuple[int, ...]

    @property
    def M(self) -> int:
        return self.codewords.shape[0]

    @property
    def K(self) -> int:
        return self.codewords.shape[1]

    def validate(self, N: int | None = None) -> None:
        M, K = self.codewords.shape
        if M < 1 or M & (M - 1):
            raise CodebookError(f"codebook {self.index}: M={M} is not a power of two")
        mask = self.resource_mask
        if len(set(mask)) != len(mask) or any(not 0 <= r < K for r in mask):
            raise CodebookError(f"codebook {self.index}: invalid resource mask {mask}")
        if N is not None and len(mask) != N:
            raise CodebookError(
                f"codebook {self.index}: mask has {len(mask)} resources, expected N={N}"
            )
        on = np.zeros(K, dtype=bool)
        on[list(mask)] = True
        for m, cw in enumerate(self.codewords):
            nz = cw != 0
            if nz.sum() != len(mask):
                raise CodebookError(
                    f"codebook {self.index} codeword {m}: {int(nz.sum())} nonzero entries, "
                    f"expected {len(mask)} (sparsity)"
                )
            if not np.array_equal(nz, on):
                raise CodebookError(
                    f"codebook {self.index} codeword {m}: nonzero positions "
                    f"{np.flatnonzero(nz).tolist()} do not match mask {list(mask)}"
                )


@dataclass(frozen=True)
class CodebookSet:
    codebooks: tuple[Codebook, ...]
    K: int
    N: int
    M: int
    power_profile: np.ndarray  # (J,) P_j
    total_power: float

    @property
    def J(self) -> int:
        return len(self.codebooks)

    @property
    def bits_per_block(self) -> int:
        return int(round(math.log2(self.M)))

    def as_array(self) -> np.ndarray:
        """All codewords stacked as a (J, M, K) complex array."""
        return np.stack([cb.codewords for cb in self.codebooks])

    def validate(self) -> None:
        if self.J == 0:
            raise CodebookError("empty codebook set")
        for j, cb in enumerate(self.codebooks):
            if cb.index != j:
                raise CodebookError(f"codebook at position {j} carries index {cb.index}")
            if cb.codewords.shape != (self.M, self.K):
                raise CodebookError(
                    f"codebook {j}: shape {cb.codewords.shape}, expected ({self.M}, {self.K})"
                )
            cb.validate(self.N)
        recomputed = np.array([average_power(cb) for cb in self.codebooks])
        if not np.allclose(recomputed, self.power_profile, rtol=POWER_RTOL, atol=0.0):
            raise CodebookError("stored power profile does not match codeword entries")
        if not math.isclose(recomputed.sum(), self.total_power, rel_tol=POWER_RTOL):
            raise CodebookError(
                f"stored total power {self.total_power!r} != recomputed {recomputed.sum()!r}"
            )


def average_power(cb: Codebook) -> float:
    """Average codeword energy ``(1/M) sum_m ||c_m||^2`` of one codebook."""
    cw = cb.codewords
    return float(np.sum(np.abs(cw) ** 2) / cw.shape[0])


def make_codebook_set(codewords: np.ndarray, masks: Sequence[Sequence[int]]) -> CodebookSet:
    """Build and validate a set from a (J, M, K) complex array and per-codebook masks."""
    codewords = np.asarray(codewords, dtype=np.complex128)
    if codewords.ndim != 3:
        raise CodebookError(f"expected (J, M, K) codewords, got shape {codewords.shape}")
    J, M, K = codewords.shape
    if len(masks) != J:
        raise CodebookError(f"{len(masks)} masks for {J} codebooks")
    cbs = tuple(
        Codebook(j, _frozen(codewords[j]), tuple(int(r) for r in masks[j])) for j in range(J)
    )
    N = len(cbs[0].resource_mask) if cbs else 0
    profile = np.array([average_power(cb) for cb in cbs])
    profile.setflags(write=False)
    cs = CodebookSet(cbs, K, N, M, profile, float(profile.sum()))
    cs.validate()
    return cs


def _with_scales(cs: CodebookSet, scales: np.ndarray) -> CodebookSet:
    arr = cs.as_array() * np.asarray(scales, dtype=float)[:, None, None]
    return make_codebook_set(arr, [cb.resource_mask for cb in cs.codebooks])


def normalize_total_power(cs: CodebookSet, P_target: float) -> CodebookSet:
    """Scale every entry by one real factor so the total power becomes ``P_target``."""
    if not P_target > 0:
        raise CodebookError(f"target power must be positive, got {P_target}")
    if not cs.total_power > 0:
        raise CodebookError("cannot normalize a zero-power codebook set")
    scale = math.sqrt(P_target / cs.total_power)
    return _with_scales(cs, np.full(cs.J, scale))


def make_power_imbalanced(cs: CodebookSet, profile: Sequence[float]) -> CodebookSet:
    """Rescale codebooks so that ``P_j`` is proportional to ``profile[j]``.

    The total power of the input set is preserved.
    """
    profile = np.asarray(profile, dtype=float)
    if profile.shape != (cs.J,):
        raise CodebookError(f"profile needs {cs.J} entries, got {profile.shape}")
    if np.any(~(profile > 0)):
        raise CodebookError("power profile entries must all be positive")
    if np.any(cs.power_profile <= 0):
        raise CodebookError("cannot rescale a codebook with zero power")
    target = cs.total_power * profile / profile.sum()
    return _with_scales(cs, np.sqrt(target / cs.power_profile))


def geometric_profile(J: int, ratio: float) -> np.ndarray:
    """Power profile ``ratio**j`` normalized to sum to ``J`` (unit mean)."""
    p = ratio ** np.arange(J, dtype=float)
    return p * J / p.sum()


def encode_block(bits: Sequence[int], cb: Codebook) -> np.ndarray:
    """Map ``log2(M)`` bits (big-endian) to a codeword of ``cb``."""
    bits = [int(b) for b in bits]
    k = int(round(math.log2(cb.M)))
    if len(bits) != k:
        raise CodebookError(f"expected {k} bits for M={cb.M}, got {len(bits)}")
    if any(b not in (0, 1) for b in bits):
        raise CodebookError(f"bits must be 0/1, got {bits}")
    idx = 0
    for b in bits:
        idx = (idx << 1) | b
    return cb.codewords[idx]


def bits_to_index(bits: np.ndarray) -> np.ndarray:
    """Vectorized big-endian bit-group to integer conversion over the last axis."""
    bits = np.asarray(bits)
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return (bits.astype(np.int64) * weights).sum(axis=-1)


def min_cross_distance(a: Codebook, b: Codebook) -> float:
    """Smallest Euclidean distance between a codeword of ``a`` and one of ``b``.

    For ``a is b`` (or equal indices and entries) only distinct codeword pairs count.
    """
    if a.K != b.K:
        raise CodebookError(f"dimension mismatch: K={a.K} vs K={b.K}")
    d = np.linalg.norm(a.codewords[:, None, :] - b.codewords[None, :, :], axis=-1)
    same = a is b or (a.index == b.index and np.array_equal(a.codewords, b.codewords))
    if same:
        if a.M < 2:
            return math.inf
        d = d[~np.eye(a.M, dtype=bool)]
    return float(d.min())


# ---------------------------------------------------------------- file I/O


def _fmt(x: float) -> str:
    return "0" if x == 0 else repr(float(x))


def dumps_codebook_set(cs: CodebookSet, comments: Sequence[str] = ()) -> str:
    lines = [f"# {c}" if c else "#" for c in comments]
    lines.append(f"{MAGIC} {VERSION} {cs.J} {cs.K} {cs.N} {cs.M} {cs.total_power!r}")
    for cb in cs.codebooks:
        lines.append(f"cb {cb.index} mask " + " ".join(str(r) for r in cb.resource_mask))
        for cw in cb.codewords:
            lines.append(" ".join(f"{_fmt(z.real)} {_fmt(z.imag)}" for z in cw))
    return "\n".join(lines) + "\n"


def save_codebook_set(cs: CodebookSet, path: str | Path, comments: Sequence[str] = ()) -> None:
    Path(path).write_text(dumps_codebook_set(cs, comments), encoding="utf-8")


def loads_codebook_set(text: str) -> CodebookSet:
    lines = [
        (no, ln.strip())
        for no, ln in enumerate(text.splitlines(), 1)
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not lines:
        raise CodebookError("parse failure: empty codebook file")
    no, head = lines[0]
    tok = head.split()
    if len(tok) != 7 or tok[0] != MAGIC:
        raise CodebookError(f"parse failure at line {no}: expected '{MAGIC} v1 J K N M P' header")
    if tok[1] != VERSION:
        raise CodebookError(f"unsupported codebook file version {tok[1]!r}")
    try:
        J, K, N, M = (int(t) for t in tok[2:6])
        P = float(tok[6])
    except ValueError as exc:
        raise CodebookError(f"parse failure at line {no}: {exc}") from None
    body = lines[1:]
    if len(body) != J * (M + 1):
        raise CodebookError(
            f"parse failure: expected {J * (M + 1)} body lines for J={J}, M={M}, got {len(body)}"
        )
    arr = np.zeros((J, M, K), dtype=np.complex128)
    masks = []
    for j in range(J):
        no, ln = body[j * (M + 1)]
        tok = ln.split()
        if len(tok) < 3 or tok[0] != "cb" or tok[2] != "mask":
            raise CodebookError(f"parse failure at line {no}: expected 'cb <j> mask ...'")
        try:
            idx = int(tok[1])
            mask = [int(t) for t in tok[3:]]
        except ValueError as exc:
            raise CodebookError(f"parse failure at line {no}: {exc}") from None
        if idx != j:
            raise CodebookError(f"line {no}: codebook index {idx} out of order (expected {j})")
        if len(mask) != N:
            raise CodebookError(f"codebook {j}: mask has {len(mask)} entries, expected N={N}")
        masks.append(mask)
        for m in range(M):
            no, ln = body[j * (M + 1) + 1 + m]
            try:
                vals = [float(t) for t in ln.split()]
            except ValueError as exc:
                raise CodebookError(f"parse failure at line {no}: {exc}") from None
            if len(vals) != 2 * K:
                raise CodebookError(
                    f"codebook {j} codeword {m} (line {no}): {len(vals)} values, expected 2K={2 * K}"
                )
            arr[j, m] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    cs = make_codebook_set(arr, masks)
    if cs.N != N:
        raise CodebookError(f"header N={N} but masks have {cs.N} entries")
    if not math.isclose(cs.total_power, P, rel_tol=POWER_RTOL):
        raise CodebookError(f"header total power {P!r} != recomputed {cs.total_power!r}")
    return cs


def load_codebook_set(path: str | Path) -> CodebookSet:
    path = Path(path)
    return loads_codebook_set(path.read_text(encoding="utf-8"))


SHIPPED = {"pb": "pb_cb.txt", "pi": "pi_cb.txt"}


def shipped_path(name: str) -> Path:
    """Path of a codebook file bundled with the package (``'pb'`` or ``'pi'``)."""
    return Path(str(resources.files("gfscma") / "data" / SHIPPED[name]))


def load_shipped(name: str) -> CodebookSet:
    return load_codebook_set(shipped_path(name))
