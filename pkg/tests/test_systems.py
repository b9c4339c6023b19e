import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjreach import systems as S

PI = np.pi


@pytest.fixture(scope="module")
def air():
    return S.air3d()


def random_states(spec, rng, n):
    x = rng.uniform(spec.domain_lo, spec.domain_hi, size=(n, spec.state_dim))
    return x


ALL = ["air3d", "two_vehicle_6d", "three_vehicle_9d", "narrow_passage"]


# ------------------------------------------------------------------- flow


def test_air3d_flow_at_rest_is_zero(air):
    np.testing.assert_allclose(S.flow(air, [0, 0, 0], [0.0], [0.0]), [0, 0, 0], atol=1e-15)


def test_air3d_flow_quarter_turn(air):
    f = S.flow(air, [0, 0, PI / 2], [0.0], [1.0])
    np.testing.assert_allclose(f, [-0.75, 0.75, 1.0], atol=1e-15)


def test_6d_flow_head_on():
    spec = S.two_vehicle_6d()
    f = S.flow(spec, [0, 0, 0, 0, 0, PI], [0.0], [0.0])
    np.testing.assert_allclose(f, [0.75, 0, 0, -0.75, 0, 0], atol=1e-15)


def test_flow_rejects_out_of_bounds_inputs(air):
    with pytest.raises(S.InputBoundsError):
        S.flow(air, [0, 0, 0], [3.5], [0.0])
    with pytest.raises(S.InputBoundsError):
        S.flow(air, [0, 0, 0], [0.0], [-3.01])


def test_flow_rejects_dimension_mismatch(air):
    with pytest.raises(S.ContractError):
        S.flow(air, [0, 0], [0.0], [0.0])
    with pytest.raises(S.ContractError):
        S.flow(air, [0, 0, 0], [0.0, 1.0], [0.0])


def test_flow_wraps_periodic_dims(air):
    a = S.flow(air, [0.1, 0.2, 0.5], [1.0], [-1.0])
    b = S.flow(air, [0.1, 0.2, 0.5 + 4 * PI], [1.0], [-1.0])
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_narrow_passage_flow_shape():
    spec = S.narrow_passage()
    x = np.zeros(10)
    x[3] = 2.0
    f = S.flow(spec, x, [1.0, 0.5, -1.0, 0.0])
    assert f.shape == (10,)
    assert f[0] == pytest.approx(2.0)
    assert f[3] == 1.0 and f[4] == 0.5 and f[8] == -1.0


# ------------------------------------------------------- target / obstacle


def test_air3d_target_examples(air):
    assert S.target_l(air, [0.3, 0.4, 1.0]) == pytest.approx(0.25)
    for th in (-PI, 0.0, 2.0):
        assert S.target_l(air, [0, 0, th]) == pytest.approx(-0.25)


def test_9d_target_min_pairwise():
    spec = S.three_vehicle_9d()
    # pairwise distances 0.5 (e1-e2), 0.6 (e1-p), 0.2 (e2-p)
    cx = (0.36 - 0.04 + 0.25) / 1.0
    c = np.array([cx, np.sqrt(0.36 - cx * cx)])
    x = np.array([0, 0, 0, 0.5, 0, 0, c[0], c[1], 0])
    assert S.target_l(spec, x) == pytest.approx(0.2 - 0.25)


def test_obstacle_absent_for_brt_systems(air):
    assert S.obstacle_g(air, [0, 0, 0]) is None


def _np_state(q1, q2):
    x = np.zeros(10)
    x[[0, 1]] = q1
    x[[5, 6]] = q2
    return x


def test_narrow_passage_obstacle_examples():
    spec = S.narrow_passage()
    # coincident cars, mid-road away from the stranded vehicle
    assert S.obstacle_g(spec, _np_state((-5.0, 0.0), (-5.0, 0.0))) > 0
    # lane centers, far apart, far from the stranded car
    assert S.obstacle_g(spec, _np_state((-6.0, -1.4), (6.0, 1.4))) < 0
    # footprint touching the upper curb, everything else clear
    p = spec.params
    touching = p.curb_hi - p.footprint_radius
    assert S.obstacle_g(spec, _np_state((-6.0, -1.4), (6.0, touching))) == pytest.approx(0.0, abs=1e-12)


def test_narrow_passage_targets_inside_domain():
    spec = S.narrow_passage()
    p = spec.params
    inside = _np_state((6.5, -1.0), (-6.5, 1.0))
    assert S.target_l(spec, inside) < 0
    assert S.target_l(spec, _np_state((0.0, -1.0), (-6.5, 1.0))) > 0
    with pytest.raises(S.ContractError):
        S.NarrowPassageParams(target_1=((5.0, 9.0), (-2.8, 0.0)))
    assert p.horizon > 0


@pytest.mark.parametrize("name,const", [
    ("air3d", 1.0), ("single_integrator_control", 1.0),
    # a pair distance moves with both vehicles, so joint-space targets are sqrt(2)-Lipschitz
    ("two_vehicle_6d", np.sqrt(2)), ("three_vehicle_9d", np.sqrt(2)),
])
def test_distance_targets_are_lipschitz(name, const):
    spec = S.make_system(name)
    rng = np.random.default_rng(5)
    x = random_states(spec, rng, 2000)
    y = x + rng.normal(scale=0.2, size=x.shape)
    gap = np.abs(S.target_l(spec, x) - S.target_l(spec, y))
    assert np.all(gap <= const * np.linalg.norm(x - y, axis=1) + 1e-9)


def test_joint_target_exceeds_unit_lipschitz():
    spec = S.two_vehicle_6d()
    x = np.array([-0.5, 0, 0, 0.5, 0, 0])
    y = np.array([-0.4, 0, 0, 0.4, 0, 0])
    gap = abs(S.target_l(spec, x) - S.target_l(spec, y))
    assert gap == pytest.approx(np.sqrt(2) * np.linalg.norm(x - y))


# ----------------------------------------------------------- Hamiltonians


def test_air3d_hamiltonian_heading_gradient_cancels(air):
    rng = np.random.default_rng(0)
    x = random_states(air, rng, 50)
    p = np.tile([0.0, 0.0, 1.0], (50, 1))
    np.testing.assert_allclose(S.hamiltonian_analytic(air, x, p), 0.0, atol=1e-14)
    np.testing.assert_allclose(S.hamiltonian_bruteforce(air, x, p), 0.0, atol=1e-14)


def test_air3d_hamiltonian_at_origin(air):
    assert S.hamiltonian_analytic(air, [0, 0, 0], [1, 0, 0]) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("name", ALL + ["single_integrator_control", "single_integrator_disturbance"])
def test_zero_gradient_gives_zero_hamiltonian(name):
    spec = S.make_system(name)
    x = random_states(spec, np.random.default_rng(1), 10)
    p = np.zeros_like(x)
    assert np.all(S.hamiltonian_analytic(spec, x, p) == 0.0)
    assert np.all(S.hamiltonian_bruteforce(spec, x, p) == 0.0)


def test_bruteforce_single_control_is_abs_coefficient():
    spec = S.single_integrator("control")
    for c in (-2.0, -0.3, 0.0, 1.7):
        assert S.hamiltonian_bruteforce(spec, [0.1], [c]) == pytest.approx(abs(c))


@pytest.mark.parametrize("name", ALL)
def test_analytic_equals_bruteforce(name):
    spec = S.make_system(name)
    rng = np.random.default_rng(11)
    x = random_states(spec, rng, 1000)
    p = rng.normal(size=x.shape) * rng.uniform(0.01, 10.0, size=(1000, 1))
    ha = S.hamiltonian_analytic(spec, x, p)
    hb = S.hamiltonian_bruteforce(spec, x, p)
    assert np.all(np.abs(ha - hb) <= 1e-12 * (1.0 + np.abs(hb)))


@pytest.mark.parametrize("name", ALL)
def test_optimal_inputs_reproduce_bruteforce_exactly(name):
    spec = S.make_system(name)
    rng = np.random.default_rng(12)
    x = random_states(spec, rng, 1000)
    p = rng.normal(size=x.shape)
    u, d = S.optimal_inputs(spec, x, p)
    f = S.flow(spec, x, u if spec.control_dim else None, d if spec.disturbance_dim else None)
    assert np.array_equal(S.inner(p, f), S.hamiltonian_bruteforce(spec, x, p))


def test_printed_air3d_form_disagrees_with_enumeration(air):
    rng = np.random.default_rng(2)
    x = random_states(air, rng, 1000)
    p = rng.normal(size=x.shape)
    printed = S.air3d_hamiltonian_printed(air.params, x, p)
    brute = S.hamiltonian_bruteforce(air, x, p)
    assert np.max(np.abs(printed - brute)) > 1.0
    np.testing.assert_allclose(S.air3d_hamiltonian(air.params, x, p), brute, rtol=1e-12, atol=1e-12)


def test_evader_positive_coefficient_turns_max(air):
    # evader coefficient is p1*x2 - p2*x1 - p3
    u, d = S.optimal_inputs(air, [0.5, 0.2, 0.0], [1.0, 0.0, 0.0])
    assert u[0] == 3.0
    u, _ = S.optimal_inputs(air, [0.5, -0.2, 0.0], [1.0, 0.0, 0.0])
    assert u[0] == -3.0


def test_zero_gradient_ties_go_to_lower_bounds(air):
    u, d = S.optimal_inputs(air, [0.1, 0.2, 0.3], [0, 0, 0])
    assert u[0] == -3.0 and d[0] == -3.0
    np_spec = S.narrow_passage()
    u, d = S.optimal_inputs(np_spec, np.zeros(10), np.zeros(10))
    assert list(u) == [b[0] for b in np_spec.control_bounds]
    assert d.shape == (0,)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-1, 1), c=st.floats(-50, 50))
def test_reach_is_negated_avoid_without_disturbance(x, c):
    avoid = S.single_integrator("control")
    import dataclasses

    reach = dataclasses.replace(avoid, orientation=S.Orientation.REACH)
    h_reach = S.hamiltonian_bruteforce(reach, [x], [c])
    h_avoid = S.hamiltonian_bruteforce(avoid, [x], [-c])
    assert h_reach == pytest.approx(-h_avoid, abs=1e-15)
    assert S.hamiltonian_analytic(reach, [x], [c]) == pytest.approx(-h_avoid, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(th=st.floats(-50, 50, allow_nan=False))
def test_wrap_angle_range(th):
    w = float(S.wrap_angle(th))
    assert -PI <= w < PI
    assert np.isclose(np.sin(w), np.sin(th), atol=1e-9) and np.isclose(np.cos(w), np.cos(th), atol=1e-9)


# ------------------------------------------------------- parameter checks


def test_parameter_invariants_enforced():
    with pytest.raises(S.ContractError):
        S.Air3DParams(beta=0.0)
    air = S.air3d()
    import dataclasses

    with pytest.raises(S.ContractError):
        dataclasses.replace(air, domain=[(-1, 1), (-1, 1), (-3, 3)])
    with pytest.raises(S.ContractError):
        dataclasses.replace(air, horizon=0.0)


def test_default_air3d_parameters(air):
    p = air.params
    assert (p.v_e, p.v_p, p.omega_bar, p.beta, p.horizon) == (0.75, 0.75, 3.0, 0.25, 1.0)


def test_9d_shared_control_has_one_control_dim():
    assert S.three_vehicle_9d().control_dim == 2
    assert S.three_vehicle_9d(shared_evader_control=True).control_dim == 1


def test_make_system_unknown():
    with pytest.raises(S.ContractError):
        S.make_system("nope")
