"""Contention transmission units: preamble <-> codebook association maps.

CTU ``n`` always uses codebook ``n mod J``; the schemes differ only in which
preamble each CTU gets.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .streams import Stream, as_generator
from .zc import PreambleSet, cross_correlation

RANDOM = "random"
ROOT_SEPARATED = "root_separated"
CSV_HEADER = ["ctu_index", "preamble_index", "root", "shift", "cb_index"]


def round_robin_cb(n: int, J: int) -> int:
    return n % J


@dataclass(frozen=True)
class CtuEntry:
    ctu_index: int
    preamble_index: int
    cb_index: int


@dataclass(frozen=True)
class CtuMap:
    entries: tuple[CtuEntry, ...]
    J: int
    scheme: str

    def __post_init__(self):
        n_r = len(self.entries)
        if self.J <= 0 or n_r % self.J:
            raise ValueError(f"N_R={n_r} is not a multiple of J={self.J}")
        if sorted(e.preamble_index for e in self.entries) != list(range(n_r)):
            raise ValueError("preamble indices must be a permutation of range(N_R)")
        for n, e in enumerate(self.entries):
            if e.ctu_index != n:
                raise ValueError(f"entry {n} has ctu_index {e.ctu_index}")
            if e.cb_index != round_robin_cb(n, self.J):
                raise ValueError(f"CTU {n}: cb_index {e.cb_index} != {n} mod {self.J}")

    @property
    def N_R(self) -> int:
        return len(self.entries)

    @property
    def L(self) -> int:
        return self.N_R // self.J

    @property
    def preamble_order(self) -> np.ndarray:
        return np.array([e.preamble_index for e in self.entries], dtype=np.int64)

    @property
    def cb_order(self) -> np.ndarray:
        return np.array([e.cb_index for e in self.entries], dtype=np.int64)

    def preamble_matrix(self, pset: PreambleSet) -> np.ndarray:
        """Preambles re-indexed by CTU: row ``n`` is the preamble of CTU ``n``."""
        if len(pset) != self.N_R:
            raise ValueError(f"map has {self.N_R} CTUs, preamble set has {len(pset)}")
        return pset.preambles[self.preamble_order]


def _from_order(order, J: int, scheme: str) -> CtuMap:
    return CtuMap(
        tuple(CtuEntry(n, int(p), round_robin_cb(n, J)) for n, p in enumerate(order)), J, scheme
    )


def random_association(pset: PreambleSet, J: int, seed: int | Stream) -> CtuMap:
    """Seeded uniform permutation of preambles over the CTUs."""
    n_r = len(pset)
    if J <= 0 or n_r % J:
        raise ValueError(f"N_R={n_r} is not divisible by J={J}")
    stream = seed if isinstance(seed, Stream) else Stream(int(seed)).child("assoc", RANDOM)
    order = as_generator(stream).permutation(n_r)
    return _from_order(order, J, RANDOM)


def root_separated_association(pset: PreambleSet, J: int) -> CtuMap:
    """Codebook ``j`` gets every cyclic shift of the ``j``-th root (in set order)."""
    roots = pset.roots
    if len(roots) != J:
        raise ValueError(f"root-separated association needs {J} roots, set has {len(roots)}")
    n_r = len(pset)
    if n_r % J:
        raise ValueError(f"N_R={n_r} is not divisible by J={J}")
    L = n_r // J
    for u in roots:
        if sum(1 for r, _ in pset.meta if r == u) != L:
            raise ValueError(f"root {u} does not contribute exactly L={L} preambles")
    order = [pset.index_of(roots[n % J], n // J) for n in range(n_r)]
    return _from_order(order, J, ROOT_SEPARATED)


def same_cb_correlation_stats(cmap: CtuMap, pset: PreambleSet) -> tuple[float, float]:
    """(max, mean) correlation over unordered preamble pairs sharing a codebook."""
    if len(pset) != cmap.N_R:
        raise ValueError(f"map has {cmap.N_R} CTUs, preamble set has {len(pset)}")
    vals = []
    for j in range(cmap.J):
        pre = [e.preamble_index for e in cmap.entries if e.cb_index == j]
        for a, b in itertools.combinations(pre, 2):
            vals.append(cross_correlation(pset.preambles[a], pset.preambles[b]))
    if not vals:
        return 0.0, 0.0
    return float(max(vals)), float(np.mean(vals))


# ---------------------------------------------------------------- CSV


def ctu_csv(cmap: CtuMap, pset: PreambleSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for e in cmap.entries:
        u, s = pset.meta[e.preamble_index]
        w.writerow([e.ctu_index, e.preamble_index, u, s, e.cb_index])
    return buf.getvalue()


def save_ctu_map(cmap: CtuMap, pset: PreambleSet, path: str | Path) -> None:
    Path(path).write_text(ctu_csv(cmap, pset), encoding="utf-8")


def loads_ctu_map(text: str, pset: PreambleSet | None = None, J: int | None = None) -> CtuMap:
    """Parse a CTU CSV. ``(root, shift)`` columns are checked against ``pset`` when given."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"CTU CSV must start with header {','.join(CSV_HEADER)}")
    body = [r for r in rows[1:] if r]
    try:
        recs = [tuple(int(x) for x in r) for r in body]
    except ValueError as exc:
        raise ValueError(f"malformed CTU CSV: {exc}") from None
    if any(len(r) != 5 for r in recs):
        raise ValueError("every CTU row needs 5 columns")
    if J is None:
        J = max(r[4] for r in recs) + 1 if recs else 0
    if pset is not None:
        if len(pset) != len(recs):
            raise ValueError(f"CSV has {len(recs)} CTUs, preamble set has {len(pset)}")
        for r in recs:
            if pset.meta[r[1]] != (r[2], r[3]):
                raise ValueError(
                    f"CTU {r[0]}: preamble {r[1]} is (root, shift)={pset.meta[r[1]]}, "
                    f"CSV says {(r[2], r[3])}"
                )
    roots = {r[2] for r in recs}
    by_cb = {}
    for r in recs:
        by_cb.setdefault(r[4], set()).add(r[2])
    scheme = (
        ROOT_SEPARATED
        if len(roots) == J and all(len(v) == 1 for v in by_cb.values())
        else RANDOM
    )
    return CtuMap(tuple(CtuEntry(r[0], r[1], r[4]) for r in recs), J, scheme)


def load_ctu_map(path: str | Path, pset: PreambleSet | None = None, J: int | None = None) -> CtuMap:
    return loads_ctu_map(Path(path).read_text(encoding="utf-8"), pset, J)
