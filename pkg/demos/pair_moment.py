"""Second moment of the white-noise heat equation from a point source.

Three independent routes to ``E (U_t, 1)^2``:

* the closed form ``2 exp(c^2 t / 2) N(c sqrt t)``, cross-checked by the
  Levy-identity quadrature,
* Brownian pairs weighted by the exponential of their local time,
* the exact second-moment recursion of the lattice scheme (no sampling).

The local time is measured in the occupation convention (half the Tanaka
local time of the difference), which is what the noise produces.  The
Tanaka convention gives the moment of the equation with noise strength 2.

Run with ``python demos/pair_moment.py``.
"""

import math

from shelab.functionals import Constant
from shelab.lattice import Equation, LatticeGrid, lattice_second_moment
from shelab.particles import bm_local_time_moment, levy_pair_moment, pair_moment_closed_form


def main():
    t = 0.5
    for sigma in (1.0, math.sqrt(2.0)):
        gamma = sigma**2
        exact = pair_moment_closed_form(t, gamma)
        levy = levy_pair_moment(t, gamma)
        mc = bm_local_time_moment(2, [0.0, 0.0], t, gamma, Constant(1.0), dt_p=1e-3, replicas=20_000, seed=1)
        grid = LatticeGrid.for_run(t, dx=0.1)
        lat = lattice_second_moment(Equation("mshe", sigma=sigma), grid, t, Constant(1.0))
        print(f"sigma^2 = {gamma:.1f}: closed form {exact:.5f}, quadrature {levy:.5f}, "
              f"Brownian pairs {mc.mean:.4f} +- {mc.stderr:.4f}, lattice dx=0.1 {lat:.5f}")
    print(f"Tanaka convention at sigma = 1, t = 1: {pair_moment_closed_form(1.0, 1.0, 'tanaka'):.6f}")


if __name__ == "__main__":
    main()
