import math

import numpy as np
import pytest

from choquard.bubble_core import ChoquardParams, KernelFunction, PolygonAnsatz, group_images, make_polygon_ansatz
from choquard.exceptions import ContractError, RefinementError, SingularSystemError
from choquard.reduced_grid import GridSpec
from choquard.reduction_solver import (
    LinearSystem,
    apply_L,
    apply_N,
    fixed_point,
    linear_system,
    load_checkpoint,
    random_symmetric_rhs,
    solve_plin,
)
from choquard.specials import alpha_constant
from choquard.weighted_norms import norm_weights, star_norm, starstar_norm


def system(k=2, lam=100.0, beta=-0.01, grid=None):
    a = make_polygon_ansatz(k, lam, ChoquardParams(beta=beta))
    return a, linear_system(a, grid=grid)


def rhs_pair(a, sys_, seed):
    rng = np.random.default_rng(seed)
    return sys_.sample_rhs(random_symmetric_rhs(a, rng)), sys_.sample_rhs(random_symmetric_rhs(a, rng))


def test_zero_rhs():
    a, s = system()
    sol = solve_plin(0, 0, a, system=s)
    assert sol.c == 0.0
    assert not np.any(sol.phi1.values) and not np.any(sol.phi2.values)
    L1, L2 = apply_L(0, 0, a, system=s)
    assert not np.any(L1.values) and not np.any(L2.values)


def test_rhs_in_multiplier_column():
    a, s = system()
    sol = solve_plin(0, s.Y, a, system=s)
    assert sol.c == pytest.approx(-1.0, abs=1e-10)
    assert np.max(np.abs(sol.phi2.values)) <= 1e-10 * np.max(np.abs(s.Y))


def test_solution_is_linear_orthogonal_and_inverts_L():
    a, s = system()
    h1, h2 = rhs_pair(a, s, 0)
    k1, k2 = rhs_pair(a, s, 1)
    sa, sb = solve_plin(h1, h2, a, system=s), solve_plin(k1, k2, a, system=s)
    ss = solve_plin(h1 + 2 * k1, h2 + 2 * k2, a, system=s)
    scale = np.max(np.abs(ss.phi2.values))
    np.testing.assert_allclose(ss.phi1.values, sa.phi1.values + 2 * sb.phi1.values, atol=1e-9 * scale)
    np.testing.assert_allclose(ss.phi2.values, sa.phi2.values + 2 * sb.phi2.values, atol=1e-9 * scale)
    assert ss.c == pytest.approx(sa.c + 2 * sb.c, rel=1e-9)
    assert sa.residual <= 1e-10
    # the constraint row relative to the magnitude of its terms
    assert abs(sa.orthogonality) <= 1e-12 * np.sum(np.abs(s.W8 * s.Y * sa.phi2.values))
    L1, L2 = apply_L(sa.phi1, sa.phi2, a, system=s)
    np.testing.assert_allclose(L1.values, h1, atol=1e-8 * np.max(np.abs(h1)))
    np.testing.assert_allclose(L2.values, h2 + sa.c * s.Y, atol=1e-8 * np.max(np.abs(h2)))


def test_solution_is_group_symmetric():
    a, s = system(2, 100.0)
    sol = solve_plin(*rhs_pair(a, s, 3), a, system=s)
    x = np.random.default_rng(0).normal(scale=0.7, size=(300, 4))
    for f in (sol.phi1, sol.phi2):
        base = f(x)
        for y in group_images(x, 2):
            np.testing.assert_allclose(f(y), base, rtol=0, atol=1e-10 * np.max(np.abs(base)))


def test_kernel_Z0_component():
    # unit-scale bubble at the origin; points inside 1/Lambda are Kelvin images of the far tail
    p = ChoquardParams()
    a = PolygonAnsatz(1, 1.0, 0.0, np.zeros((1, 4)), alpha_constant(2.0), p)
    z0 = KernelFunction(0, 1.0, np.zeros(4))
    L1, _ = apply_L(z0, 0, a)
    x = norm_weights(a).sample_set
    x = x[np.linalg.norm(x, axis=1) >= 1.0 / p.trunc_radius]
    wt = (1.0 + np.linalg.norm(x, axis=1)) ** -(3.0 + p.tau)
    scale = np.max(np.abs(z0.neg_laplacian(x)) / wt)
    assert np.max(np.abs(L1(x)) / wt) <= 1e-2 * scale


def test_L2_of_kernel_sum_decays_like_inverse_lambda():
    norms = []
    for lam in (1e2, 1e3):
        a, s = system(2, lam)
        _, L2 = apply_L(0, a.Z, a, system=s)
        norms.append(starstar_norm(L2, norm_weights(a)))
    assert all(n > 0 for n in norms)
    slope = math.log(norms[1] / norms[0]) / math.log(10.0)
    assert slope <= -1 + 0.15, f"slope {slope:.3f}, norms {norms}"


def test_resolution_guard():
    a = make_polygon_ansatz(2, 100.0)
    with pytest.raises(RefinementError):
        apply_L(0, a.Z, a, grid=GridSpec(4.0, 4.0, 1.5, 0.4, axisym_refinements=0))


def test_singular_diagnostic():
    err = LinearSystem._singular(np.diag([1.0, 2.0, 0.0]))
    assert isinstance(err, SingularSystemError)
    assert err.singular_values[-1] == 0.0
    np.testing.assert_allclose(np.abs(err.vectors[-1]), [0, 0, 1])


def test_grid_mismatch():
    a = make_polygon_ansatz(2, 100.0)
    b = make_polygon_ansatz(3, 100.0)
    with pytest.raises(ContractError):
        LinearSystem(a, grid=linear_system(b).grid)


def test_N_vanishes_at_zero():
    a, s = system()
    N1, N2 = apply_N(0, 0, a, system=s)
    assert not np.any(N1.values) and not np.any(N2.values)


def test_N_matches_direct_remainder():
    a, s = system()
    p = s.p
    z0 = 1e-3 * sum(kz(s.x) for kz in a.kernels(0))
    N = apply_N(z0, z0, a, system=s, beta=0.0)

    def g(w, R0, base):
        # the potential of |base|^p is the system's; the difference goes through the grid operator
        return (R0 + s.riesz(np.abs(w) ** p - np.abs(base) ** p)) * np.abs(w) ** (p - 2) * w

    for which, n in ((1, N[0]), (2, N[1])):
        u, Ru = s.base(which)
        ref = g(u + z0, Ru, u) - g(u, Ru, u) - s.g_prime(which, z0)
        assert np.max(np.abs(n.values - ref)) <= 1e-8 * np.max(np.abs(n.values))


def test_N_is_quadratic():
    a, s = system()
    w = norm_weights(a)
    z0 = sum(kz(s.x) for kz in a.kernels(0))
    vals = [starstar_norm(apply_N(t * z0, t * z0, a, system=s, beta=0.0)[1], w) for t in (1e-1, 1e-2)]
    assert abs(math.log10(vals[0] / vals[1]) - 2) <= 0.1


def test_fixed_point_exact_bubble():
    a = make_polygon_ansatz(1, 10.0)
    st = fixed_point(a, beta=0.0)
    assert st.converged and st.iterate == 1 and st.total_norm == 0.0


def test_fixed_point_k2(tmp_path, quiet):
    lam = 1e3
    runs = {}
    for b in (-0.02, -0.01, -0.005):
        a = make_polygon_ansatz(2, lam, ChoquardParams(beta=b))
        runs[b] = fixed_point(a, checkpoint_dir=tmp_path / str(b) if b == -0.01 else None)
    st = runs[-0.01]
    assert st.converged and not st.flagged
    assert st.max_ratio < 0.5
    consts = {b: r.total_norm * lam / abs(b) for b, r in runs.items()}
    C = max(consts[-0.02], consts[-0.005])
    assert st.total_norm <= C * 0.01 / lam * 1.15
    files = sorted((tmp_path / "-0.01").glob("iterate_*.chqs"))
    assert len(files) == st.iterate
    f1, f2, scal = load_checkpoint(files[-1])
    np.testing.assert_array_equal(f2.values, st.phi2.values)
    assert scal[0] == st.iterate and scal[1] == st.c


def test_fixed_point_uniqueness_and_refinement(quiet):
    a = make_polygon_ansatz(2, 1e3, ChoquardParams(beta=-0.01))
    s0 = fixed_point(a, initial="zero")
    s1 = fixed_point(a, initial="preimage")
    w = norm_weights(a)
    d = star_norm(s0.phi2.like(s0.phi2.values - s1.phi2.values), w)
    assert d <= 1e-8 * s0.total_norm
    fine = fixed_point(a, initial="preimage", grid="fine")
    assert abs(fine.total_norm / s0.total_norm - 1) < 0.1


def test_fixed_point_rejects_positive_beta():
    a = make_polygon_ansatz(2, 100.0)
    with pytest.raises(ContractError):
        fixed_point(a, beta=0.5)
