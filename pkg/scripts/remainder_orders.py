"""Exact remainder of the plug-in kernel mean along a shrinking perturbation.

Prints rem(eps) and successive ratios rem(eps)/rem(eps/2), which approach 16
under the null (fourth order) and 4 under an alternative (second order).
"""

from mmd_eqd.oracle import ex3_perturbation_pair, exact_remainder_bounds


def main() -> None:
    for null in (True, False):
        print("null" if null else "alternative")
        prev = None
        for eps in (0.08, 0.04, 0.02, 0.01, 0.005):
            rem, k0, k1 = exact_remainder_bounds(*ex3_perturbation_pair(null, eps))
            ratio = "" if prev is None else f"  ratio {prev / rem:8.4f}"
            print(f"  eps={eps:<6} rem={rem: .3e}  bound={(k0 if null else k1):.3e}{ratio}")
            prev = rem


if __name__ == "__main__":
    main()
