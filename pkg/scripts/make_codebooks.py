"""Regenerate the shipped codebook files in src/gfscma/data/.

The power-balanced set is the widely circulated 4x6, M=4 SCMA reference
codebook (entries at 4 decimals), with each codebook rescaled so that every
codebook has average power exactly 1 (total 6); the 4-decimal rounding leaves
the raw table balanced only to about 1e-5. The power-imbalanced set is derived from it
with a geometric power profile of ratio 1.25 (about 0.97 dB per level). The
levels are assigned to codebooks in the order that maximizes the smallest
distance between codewords of any two codebooks (exhaustive over all J!
assignments), so the PI set has a larger minimum distance than the PB set.
"""

import itertools
from pathlib import Path

import numpy as np

from gfscma.codebook import (
    geometric_profile,
    make_codebook_set,
    make_power_imbalanced,
    min_cross_distance,
    normalize_total_power,
    save_codebook_set,
)

A = [0.7851, -0.2243, 0.2243, -0.7851]
B = [-0.1815 - 0.1318j, -0.6351 - 0.4615j, 0.6351 + 0.4615j, 0.1815 + 0.1318j]
C = [-0.6351 + 0.4615j, 0.1815 - 0.1318j, -0.1815 + 0.1318j, 0.6351 - 0.4615j]
D = [0.1392 - 0.1759j, 0.4873 - 0.6156j, -0.4873 + 0.6156j, -0.1392 + 0.1759j]
E = [-0.0055 - 0.2242j, -0.0193 - 0.7848j, 0.0193 + 0.7848j, 0.0055 + 0.2242j]

# (mask, rows placed on the mask resources)
LAYOUT = [
    ((1, 3), (B, A)),
    ((0, 2), (A, B)),
    ((0, 1), (C, D)),
    ((2, 3), (A, E)),
    ((0, 3), (E, C)),
    ((1, 2), (A, D)),
]
PI_RATIO = 1.25


def global_min_distance(cs) -> float:
    return min(
        min_cross_distance(cs.codebooks[a], cs.codebooks[b])
        for a, b in itertools.combinations_with_replacement(range(cs.J), 2)
    )


def best_assignment(pb, levels):
    return max(
        itertools.permutations(range(pb.J)),
        key=lambda p: global_min_distance(make_power_imbalanced(pb, levels[list(p)])),
    )


def main() -> None:
    J, M, K = len(LAYOUT), 4, 4
    arr = np.zeros((J, M, K), dtype=complex)
    for j, (mask, rows) in enumerate(LAYOUT):
        for r, row in zip(mask, rows):
            arr[j, :, r] = row
    raw = make_codebook_set(arr, [m for m, _ in LAYOUT])
    pb = normalize_total_power(make_power_imbalanced(raw, np.ones(J)), float(J))
    out = Path(__file__).resolve().parents[1] / "src" / "gfscma" / "data"
    save_codebook_set(
        pb,
        out / "pb_cb.txt",
        [
            "Power-balanced SCMA codebook set (PB-CB): J=6, K=4, N=2, M=4.",
            "Source: the 4x6 M=4 SCMA reference codebook in common circulation (4 decimals),",
            "each codebook rescaled to average power 1 (total power 6).",
            "Regenerate with scripts/make_codebooks.py.",
        ],
    )
    levels = geometric_profile(J, PI_RATIO)
    order = best_assignment(pb, levels)
    profile = levels[list(order)]
    pi = make_power_imbalanced(pb, profile)
    save_codebook_set(
        pi,
        out / "pi_cb.txt",
        [
            "Power-imbalanced SCMA codebook set (PI-CB): J=6, K=4, N=2, M=4.",
            "Derived from pb_cb.txt by make_power_imbalanced with a geometric profile",
            f"levels {PI_RATIO}**k (k=0..5), assigned to codebooks as k = {list(order)}",
            "(the assignment maximizing the minimum inter-codebook codeword distance).",
            "Total power preserved. profile " + " ".join(repr(float(p)) for p in profile),
            "Regenerate with scripts/make_codebooks.py.",
        ],
    )


if __name__ == "__main__":
    main()
