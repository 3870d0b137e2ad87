"""Zadoff-Chu preambles.

Root sequences follow ``z_u(k) = exp(-i*pi*u*k*(k+1)/N_ZC)`` for
``k = 1..N_ZC``. Arrays are 0-based, so element ``idx`` holds ``k = idx + 1``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class ZcParams:
    n_zc: int
    roots: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "roots", tuple(int(u) for u in self.roots))
        if not is_prime(self.n_zc):
            raise ValueError(f"N_ZC={self.n_zc} is not prime")
        if len(set(self.roots)) != len(self.roots):
            raise ValueError(f"roots must be distinct, got {self.roots}")
        for u in self.roots:
            if not 1 <= u <= self.n_zc - 1:
                raise ValueError(f"root u={u} outside [1, {self.n_zc - 1}]")


@dataclass(frozen=True)
class PreambleSet:
    """Unit-energy preambles, one row each, with their ``(root, shift)`` labels."""

    preambles: np.ndarray  # (N_R, N_ZC) complex
    meta: tuple[tuple[int, int], ...]
    n_zc: int = field(default=0)

    def __post_init__(self):
        p = np.array(self.preambles, dtype=np.complex128, copy=True)
        p.setflags(write=False)
        object.__setattr__(self, "preambles", p)
        object.__setattr__(self, "n_zc", p.shape[1])
        if len(self.meta) != p.shape[0]:
            raise ValueError("one (root, shift) label per preamble required")

    def __len__(self) -> int:
        return self.preambles.shape[0]

    @property
    def roots(self) -> tuple[int, ...]:
        return tuple(dict.fromkeys(u for u, _ in self.meta))

    def index_of(self, root: int, shift: int) -> int:
        return self.meta.index((root, shift))


def zc_root_sequence(u: int, n_zc: int) -> np.ndarray:
    """Unnormalized root sequence (every entry has modulus 1)."""
    if not is_prime(n_zc):
        raise ValueError(f"N_ZC={n_zc} is not prime")
    if not 1 <= u <= n_zc - 1:
        raise ValueError(f"root u={u} outside [1, {n_zc - 1}]")
    k = np.arange(1, n_zc + 1, dtype=np.int64)
    # reduce the phase modulo 2*N_ZC before scaling to keep it exact for large k
    phase = (u * k * (k + 1)) % (2 * n_zc)
    return np.exp(-1j * np.pi * phase / n_zc)


def cyclic_shift(seq: np.ndarray, s: int) -> np.ndarray:
    """``out[k] = seq[(k + s) mod N]`` for ``0 <= s < N``."""
    seq = np.asarray(seq)
    n = seq.shape[-1]
    if not 0 <= s < n:
        raise ValueError(f"cyclic shift {s} outside [0, {n})")
    return np.roll(seq, -s, axis=-1)


def build_preamble_set(params: ZcParams, shifts_per_root: int) -> PreambleSet:
    """All ``shifts_per_root`` cyclic shifts of each root, root-major, unit energy."""
    if not 1 <= shifts_per_root <= params.n_zc:
        raise ValueError(
            f"shifts_per_root={shifts_per_root} must lie in [1, N_ZC={params.n_zc}]"
        )
    rows, meta = [], []
    for u in params.roots:
        root = zc_root_sequence(u, params.n_zc) / np.sqrt(params.n_zc)
        for s in range(shifts_per_root):
            rows.append(cyclic_shift(root, s))
            meta.append((u, s))
    return PreambleSet(np.array(rows), tuple(meta))


def cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """``|<a, b>|`` with conjugation on ``a``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(abs(np.vdot(a, b)))


def correlation_matrix(pset: PreambleSet) -> np.ndarray:
    g = np.abs(pset.preambles.conj() @ pset.preambles.T)
    g = 0.5 * (g + g.T)  # exact symmetry
    np.fill_diagonal(g, 1.0)
    return g


def correlation_csv(mat: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.asarray(mat):
        w.writerow([f"{x:.9g}" for x in row])
    return buf.getvalue()


def export_correlation_csv(pset: PreambleSet, path: str | Path) -> None:
    Path(path).write_text(correlation_csv(correlation_matrix(pset)), encoding="utf-8")


def reference_preamble_set(n_zc: int = 7, roots: Sequence[int] = (1, 2, 3, 4, 5, 6)) -> PreambleSet:
    """The six-root, full-shift set used throughout the evaluation (6*N_ZC preambles)."""
    return build_preamble_set(ZcParams(n_zc, tuple(roots)), n_zc)
