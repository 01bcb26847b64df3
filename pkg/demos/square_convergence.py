"""Energy convergence on the unit square for f = 1.

Runs q = L = 1..4 with a reference at L = 6 and prints the rows and the
fitted rate of err ~ C exp(-b N^(1/4)).  Takes about a minute.
"""

import argparse

from hpfrac.solve import StudyConfig, convergence_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--polygon", default="square", choices=["square", "lshape"])
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--levels", type=int, default=4)
    args = p.parse_args()
    cfg = StudyConfig(polygon=args.polygon, s=args.s, levels=list(range(1, args.levels + 1)))
    rep = convergence_study(cfg, log=lambda r: print(f"  solved L={r.L} q={r.q} N={r.N} in {r.wallclock_s:.1f} s"))
    print(f"{'L':>3} {'q':>3} {'N':>6} {'energy':>20} {'err_estimate':>14}")
    for r in rep.rows:
        print(f"{r.L:>3} {r.q:>3} {r.N:>6} {r.energy:>20.15f} {r.err_estimate:>14.6e}")
    print(f"reference L={rep.reference.L}: energy {rep.reference.energy:.15f}")
    print(f"fit: b = {rep.fit_b:.4f}, C = {rep.fit_C:.4f}, R^2 = {rep.fit_r2:.4f}")


if __name__ == "__main__":
    main()
