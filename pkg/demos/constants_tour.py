"""Mollifier constants and how they move with the mollifier's L2 norm.

The advective noise strength is always above one, and it agrees with the
asymptotic slope of the pair potential profile.  Squeezing the bump (raising
its L2 norm towards one) drives both up sharply.

Run with ``python demos/constants_tour.py``.
"""

from shelab.mollifier import Mollifier, gamma_ext_squared, psi_profile, sigma_p_squared, theta


def main():
    print(f"{'||phi||^2':>10} {'theta':>8} {'sigma_1^2':>10} {'sigma_2^2':>10} {'gamma_ext^2':>12} {'slope':>12}")
    for l2 in (0.3, 0.5, 0.675, 0.8, 0.9, 0.95):
        phi = Mollifier.with_l2_norm_sq(l2)
        g = gamma_ext_squared(phi)
        slope = psi_profile(phi).right_slope
        print(f"{l2:10.3f} {theta(phi):8.4f} {sigma_p_squared(phi, 1):10.4f} {sigma_p_squared(phi, 2):10.3f} "
              f"{g:12.6f} {slope:12.6f}")


if __name__ == "__main__":
    main()
