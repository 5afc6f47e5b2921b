"""Reference mutual-information values for 2x2 contingency tables.

Computes MI in nats with mpmath at 60 significant digits, straight from the
definition sum_{xy} p(x,y) ln(p(x,y) / (p(x) p(y))). Tables are drawn from a
fixed seed so the frozen file is reproducible:

    python3 mi_oracle.py > ../data/mi_oracle.tsv
"""
import random

import mpmath

mpmath.mp.dps = 60


def mi(n11, n10, n01, n00):
    t = mpmath.mpf(n11 + n10 + n01 + n00)
    cells = {(1, 1): n11, (1, 0): n10, (0, 1): n01, (0, 0): n00}
    row = {1: n11 + n10, 0: n01 + n00}
    col = {1: n11 + n01, 0: n10 + n00}
    total = mpmath.mpf(0)
    for (x, y), n in cells.items():
        if n == 0:
            continue
        p = mpmath.mpf(n) / t
        total += p * mpmath.log(mpmath.mpf(n) * t / (mpmath.mpf(row[x]) * col[y]))
    return total


def tables(rng):
    out = []
    for _ in range(150):
        out.append([rng.randint(0, 20) for _ in range(4)])
    for _ in range(150):
        out.append([rng.randint(0, 5000) for _ in range(4)])
    for _ in range(100):
        # Presence rare, label imbalanced: the shape seen on real vocabularies.
        out.append([rng.randint(0, 50), rng.randint(0, 400),
                    rng.randint(0, 30000), rng.randint(0, 300000)])
    for _ in range(100):
        # Near-independent tables: tiny MI, worst case for cancellation.
        r1 = rng.randint(1, 20000)
        r0 = rng.randint(1, 200000)
        q = rng.random()
        n11 = round(r1 * q) + rng.randint(-2, 2)
        n01 = round(r0 * q) + rng.randint(-2, 2)
        n11 = min(max(n11, 0), r1)
        n01 = min(max(n01, 0), r0)
        out.append([n11, r1 - n11, n01, r0 - n01])
    return [t for t in out if sum(t) > 0]


def main():
    rng = random.Random(20240611)
    print("n11\tn10\tn01\tn00\tmi")
    for n11, n10, n01, n00 in tables(rng):
        print(f"{n11}\t{n10}\t{n01}\t{n00}\t{mpmath.nstr(mi(n11, n10, n01, n00), 40)}")


if __name__ == "__main__":
    main()
