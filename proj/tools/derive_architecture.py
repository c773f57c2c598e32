#!/usr/bin/env python3
"""Recover the Axial-MLP geometry from published parameter counts.

Per block, six axial FC layers over axes a_1..a_6 with f channels cost
f^2 * sum(a^2) + f * sum(a) weights and biases, plus a scalar norm weight and
bias. Embedding (c -> f) costs 2cf with c = 1 and the head (f -> 1) costs f + 1:

    P(f) = L*sum(a^2) * f^2 + (L*sum(a) + 3) * f + (2L + 1)

Fitting a quadratic through the three published points pins down L, sum(a)
and sum(a^2). This script does that with exact rational arithmetic and has no
dependency on the C++ code.
"""

import argparse
import itertools
import json
import sys
from fractions import Fraction

POINTS = [(4, 53017), (8, 209317), (16, 831805)]
CROP = (102, 94, 76)
PATCH = 8


def solve3(rows, rhs):
    """Gauss-Jordan elimination over Fractions."""
    m = [[Fraction(v) for v in row] + [Fraction(r)] for row, r in zip(rows, rhs)]
    n = len(m)
    for col in range(n):
        pivot = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[pivot] = m[pivot], m[col]
        m[col] = [v / m[col][col] for v in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                factor = m[r][col]
                m[r] = [a - factor * b for a, b in zip(m[r], m[col])]
    return [m[r][n] for r in range(n)]


def derive():
    a, b, c = solve3([[f * f, f, 1] for f, _ in POINTS], [p for _, p in POINTS])
    out = {"A": str(a), "B": str(b), "C": str(c), "integral": all(x.denominator == 1 for x in (a, b, c))}
    if not out["integral"]:
        return out
    a, b, c = int(a), int(b), int(c)
    if (c - 1) % 2:
        return out
    depth = (c - 1) // 2
    sum_a = Fraction(b - 3, depth)
    sum_a2 = Fraction(a, depth)
    out.update({"L": depth, "sum_a": str(sum_a), "sum_a2": str(sum_a2)})

    grid = [n // PATCH for n in CROP]
    axes = grid + [PATCH] * 3
    out["axes"] = axes
    out["axes_sum"] = sum(axes)
    out["axes_sum_sq"] = sum(v * v for v in axes)
    out["axes_consistent"] = sum(axes) == sum_a and sum(v * v for v in axes) == sum_a2

    # Every multiset of three grid lengths that completes the three patch axes.
    candidates = []
    for g in itertools.combinations_with_replacement(range(1, 40), 3):
        full = list(g) + [PATCH] * 3
        if sum(full) == sum_a and sum(v * v for v in full) == sum_a2:
            candidates.append(sorted(g, reverse=True))
    out["grid_candidates"] = candidates

    counts = {}
    for f, _ in POINTS:
        counts[str(f)] = depth * (f * f * out["axes_sum_sq"] + f * out["axes_sum"] + 2) + 2 * f + f + 1
    out["counts"] = counts
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", help="write the derivation as JSON")
    parser.add_argument("--check", action="store_true", help="exit nonzero unless the expected geometry is recovered")
    args = parser.parse_args()

    result = derive()
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)

    if args.check:
        ok = (
            result.get("integral")
            and (result["A"], result["B"], result["C"]) == ("3228", "339", "13")
            and result.get("L") == 6
            and result.get("sum_a") == "56"
            and result.get("sum_a2") == "538"
            and result.get("axes") == [12, 11, 9, 8, 8, 8]
            and result.get("axes_consistent")
            and all(result["counts"][str(f)] == p for f, p in POINTS)
        )
        print("derivation " + ("ok" if ok else "MISMATCH"))
        return 0 if ok else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
