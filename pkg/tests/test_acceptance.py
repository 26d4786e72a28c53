"""Acceptance suite: every criterion at its stated tolerance, one line each.

The eps sweep (criteria 4 and 6) is computed once per session and shared.
Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines.
"""

import pytest

from poroplate.verify import AcceptanceSuite


@pytest.fixture(scope="module")
def suite():
    return AcceptanceSuite()


def _run(suite, name, **kwargs):
    result = getattr(suite, f"check_{name}")(**kwargs)
    print(result.line())
    assert result.passed, result.details
    return result


def test_ac1_corrector_correctness(suite):
    # homogeneous isotropic cell: b ~ 0, a = plane stress (1%), c = a/3
    _run(suite, "ac1")


def test_ac2_homogenized_admissibility(suite):
    # symmetric PD block, Reuss <= a_hom <= Voigt on the membrane block
    _run(suite, "ac2")


def test_ac3_two_path_micro_equivalence(suite):
    # monolithic vs Schur-ODE trajectories agree to 1e-7 at every step
    _run(suite, "ac3")


def test_ac4_a_priori_scaling(suite):
    # fitted slopes of ||e(U)|| and ||p|| vs eps inside [1.3, 1.7]
    _run(suite, "ac4")


def test_ac5_corrector_elimination_oracle(suite):
    # direct two-scale solve vs homogenized path, 1e-6 relative
    _run(suite, "ac5")


def test_ac6_kirchhoff_love_convergence(suite):
    # all four unfolded residuals decrease monotonically along the eps list
    _run(suite, "ac6")


def test_ac7_unfolding_identities(suite):
    # gradient identity and measure-factor isometry at 1e-12, 10 random fields
    _run(suite, "ac7")


def test_ac8_zero_data_and_energy_decay(suite):
    # zero loads give zero trajectories; energy non-increasing after cutoff
    _run(suite, "ac8")


def test_ac9_norm_equivalence_spectrum(suite):
    # c_min > 0 on n in {2,3,4}, stable within a factor of two
    _run(suite, "ac9")


def test_ac10_decomposition_diagnostics(suite):
    # manufactured elementary/KL fields reproduced exactly
    _run(suite, "ac10")
