"""Flow properties of the lattice propagator.

On a single noise path the propagator from ``s`` to ``u`` equals the
composition through any intermediate time, because the scheme is linear in
its initial data.  Increments over disjoint time intervals are independent,
while the same interval read twice is perfectly correlated.

Run with ``python demos/propagator_flow.py``.
"""

from shelab.functionals import BumpTest
from shelab.lattice import Equation, LatticeGrid, propagator_compose_residual, propagator_triple
from shelab.verification import independence_test


def main():
    eq = Equation("mshe")
    grid = LatticeGrid.for_run(0.25, dx=0.05, half_width=3.0)
    for replica in range(3):
        res = propagator_compose_residual(*propagator_triple(grid, eq, 0.0, 0.0, 0.125, 0.25, replica, 0), grid)
        print(f"replica {replica}: composition residual {res:.2e}")
    psi = BumpTest(0.0, 1.5)
    grid = LatticeGrid.for_run(0.5, dx=0.05)
    for first, second in [((0.0, 0.25), (0.25, 0.5)), ((0.0, 0.25), (0.0, 0.25))]:
        v = independence_test(eq, grid, first, second, psi, psi, 400, 5)
        print(f"intervals {first} and {second}: correlation {v.details['correlation']:+.3f} -> {v.verdict}")


if __name__ == "__main__":
    main()
