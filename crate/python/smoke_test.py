"""Smoke test for the inozemtsev_py extension.

Build and install first:
    pip install --no-build-isolation -e crates/py
"""

import math
import sys

import inozemtsev_py as inz


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        if not ok:
            failures.append(name)

    e = inz.epsilon(1.0, 1.3)
    check("epsilon real and positive", e.real > 0 and abs(e.imag) < 1e-12)
    # large kappa approaches J(1 - cos p)
    check("epsilon xxx limit", close(inz.epsilon(10.0, 1.3).real, 1 - math.cos(1.3), 1e-6))

    p = complex(0.7, 0.3)
    check("phi odd", abs(inz.phi(1.26, p) + inz.phi(1.26, -p)) < 1e-12)
    theta = inz.phi(1.26, p)
    q = inz.invert_phi(1.26, theta)
    check("inversion round trip", abs(inz.phi(1.26, q) - theta) < 1e-10)

    check("classify infeasible", inz.classify("1-/1+1-/1+")["status"] == "Infeasible")
    v = inz.classify("2-/2+")
    check("classify feasible", v["status"] == "Feasible" and len(v["witness"]) == 4)

    t = 5.0
    f = inz.free_energy(t, n_points=256)
    ed = inz.exact_free_energy("xxx", t, 12)
    check("xxx tba vs exact", f["stable"] and close(f["f"], ed, 0.02))
    fk = inz.free_energy(t, kappa=1.0, n_points=256)
    # f falls towards the XXX value as kappa grows
    fk8 = inz.free_energy(t, kappa=8.0, n_points=256)
    check("elliptic approaches xxx from above", fk["f"] > fk8["f"] and close(fk8["f"], f["f"], 1e-6))

    try:
        inz.exact_free_energy("elliptic", 1.0, 8)
        check("missing kappa raises", False)
    except ValueError:
        check("missing kappa raises", True)
    try:
        inz.classify("1-/1+x")
        check("bad literal raises", False)
    except ValueError:
        check("bad literal raises", True)

    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
