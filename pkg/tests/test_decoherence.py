import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reduction_lab.decoherence import (
    ChannelSet,
    InvariantViolation,
    SigmaState,
    beta_for_energy,
    channel_probabilities,
    drift,
    gibbs,
    integrate_master,
    master_rhs,
    purity_report,
    rho_hidden_formal,
    sigma_at,
    solve_beta,
    split,
    subtract_collective,
)
from reduction_lab.hilbert import (
    PAULI_X,
    PAULI_Z,
    DensityMatrix,
    Eigenframe,
    Operator,
    SpaceTag,
    promote_k,
    tensor,
    trace_distance,
    trace_env,
)
from reduction_lab.models import (
    PointerBathParams,
    build_pointer_bath,
    reduced_series,
    seeded_hidden_density,
)


def rand_herm(rng, d):
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (z + z.conj().T) / 2


def rand_pure(rng, d):
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def k_basis(dk):
    """Matrix units |i><j|, a spanning set for operators on K."""
    out = []
    for i in range(dk):
        for j in range(dk):
            m = np.zeros((dk, dk))
            m[i, j] = 1.0
            out.append(m)
    return out


E01 = Operator.on_e(np.diag([0.0, 1.0]))


# --- gibbs / beta -----------------------------------------------------------------

def test_gibbs_two_level():
    g, logz = gibbs(E01, 0.0)
    np.testing.assert_allclose(g.mat, np.eye(2) / 2, atol=1e-15)
    assert logz == pytest.approx(np.log(2))
    g, _ = gibbs(E01, np.log(2))
    np.testing.assert_allclose(g.mat, np.diag([2 / 3, 1 / 3]), atol=1e-14)


def test_gibbs_three_level():
    g, logz = gibbs(Operator.on_e(np.diag([0.0, 1.0, 2.0])), 1.0)
    z = 1 + np.exp(-1) + np.exp(-2)
    np.testing.assert_allclose(np.diag(g.mat).real, [1 / z, np.exp(-1) / z, np.exp(-2) / z], atol=1e-15)
    assert logz == pytest.approx(np.log(z), abs=1e-14)


def test_gibbs_non_diagonal_environment():
    rng = np.random.default_rng(0)
    E = Operator.on_e(rand_herm(rng, 4))
    w, v = np.linalg.eigh(E.mat)
    oracle = (v * np.exp(-0.7 * w)) @ v.conj().T
    oracle /= np.trace(oracle)
    g, _ = gibbs(E, 0.7)
    np.testing.assert_allclose(g.mat, oracle, atol=1e-13)


def test_gibbs_overflow_advice():
    with pytest.raises(ValueError, match="rescale"):
        gibbs(Operator.on_e(np.diag([0.0, 1e6])), 1e4)


def test_gibbs_large_but_finite_span():
    g, _ = gibbs(Operator.on_e(np.diag([0.0, 500.0])), 2.0)
    assert abs(g.tr() - 1) <= 1e-12
    assert g.mat[0, 0].real == pytest.approx(1.0)


@pytest.mark.parametrize("target, beta", [(0.5, 0.0), (1 / 3, np.log(2)), (0.25, np.log(3))])
def test_beta_for_energy_two_level(target, beta):
    assert beta_for_energy(E01, target) == pytest.approx(beta, abs=1e-12)


def test_beta_negative_temperature():
    # population inversion needs beta < 0
    assert beta_for_energy(E01, 0.75) == pytest.approx(-np.log(3), abs=1e-9)


def test_beta_rejections():
    with pytest.raises(ValueError):
        beta_for_energy(E01, 1.0)
    with pytest.raises(ValueError):
        beta_for_energy(E01, -0.1)
    with pytest.raises(ValueError, match="degenerate"):
        beta_for_energy(Operator.on_e(np.eye(3)), 1.0)


def test_solve_beta_from_joint_state():
    rhoK = Operator.on_k(np.eye(2) / 2)
    g, _ = gibbs(E01, 0.9)
    rho = DensityMatrix.from_operator(tensor(rhoK, g))
    assert solve_beta(E01, rho) == pytest.approx(0.9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), beta=st.floats(-3, 3))
def test_beta_roundtrip(seed, beta):
    rng = np.random.default_rng(seed)
    E = Operator.on_e(np.diag(np.sort(rng.uniform(0, 2, 4)) + np.arange(4)))
    g, _ = gibbs(E, beta)
    target = float(np.real(np.trace(E.mat @ g.mat)))
    b = beta_for_energy(E, target)
    g2, _ = gibbs(E, b)
    assert abs(np.real(np.trace(E.mat @ g2.mat)) - target) <= 1e-10


# --- collective subtraction ----------------------------------------------------------

def test_subtract_factorized_coupling():
    rng = np.random.default_rng(1)
    X = Operator.on_k(np.diag([0.0, 1.0, 2.0]))
    B = Operator.on_e(rand_herm(rng, 3))
    rhoE, _ = gibbs(Operator.on_e(np.diag([0.0, 0.5, 1.0])), 0.4)
    b = np.trace(rhoE.mat @ B.mat)
    out = subtract_collective(tensor(X, B), rhoE)
    expected = np.kron(X.mat, B.mat - b * np.eye(3))
    np.testing.assert_allclose(out.mat, expected, atol=1e-14)


def test_subtract_is_idempotent():
    rng = np.random.default_rng(2)
    rhoE, _ = gibbs(E01, 0.3)
    once = subtract_collective(Operator.on_joint(rand_herm(rng, 4), 2, 2), rhoE)
    twice = subtract_collective(once, rhoE)
    assert np.max(np.abs(once.mat - twice.mat)) <= 1e-12


def test_subtract_index_summation():
    rng = np.random.default_rng(3)
    C = rand_herm(rng, 4)
    rhoE, _ = gibbs(E01, 0.6)
    r = rhoE.mat
    # w_{ij} = sum_{a,b} r_{ab} C[(i,b),(j,a)]
    w = np.zeros((2, 2), dtype=complex)
    for i in range(2):
        for j in range(2):
            for a in range(2):
                for b in range(2):
                    w[i, j] += r[a, b] * C[2 * i + b, 2 * j + a]
    oracle = C - np.kron(w, np.eye(2))
    out = subtract_collective(Operator.on_joint(C, 2, 2), rhoE)
    np.testing.assert_allclose(out.mat, oracle, atol=1e-14)
    assert out.is_hermitian()
    resid = trace_env(Operator.on_joint(np.kron(np.eye(2), r) @ out.mat, 2, 2))
    assert np.max(np.abs(resid.mat)) <= 1e-12


# --- split --------------------------------------------------------------------------

def test_split_of_decohered_state_is_exact():
    rng = np.random.default_rng(4)
    E = Operator.on_e(np.diag([0.0, 0.3, 1.1]))
    g, _ = gibbs(E, 1.3)
    z = rand_herm(rng, 2) + 3 * np.eye(2)
    rhoK = Operator.on_k(z / np.trace(z))
    s = split(DensityMatrix.from_operator(tensor(rhoK, g)), E)
    assert np.max(np.abs(s.rho_hidden.mat)) <= 1e-12
    assert s.beta == pytest.approx(1.3, abs=1e-12)


def test_split_entangled_pure_state_against_oracle():
    psi = np.array([np.sqrt(0.7), 0, 0, np.sqrt(0.3)])
    rho = DensityMatrix.pure(psi, SpaceTag.joint(2, 2))
    s = split(rho, E01)
    # independent bisection at a tenfold tighter tolerance on the closed form
    # <E>_beta = 1 / (1 + e^beta) with target 0.3
    lo, hi = -10.0, 10.0
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        if 1 / (1 + np.exp(mid)) > 0.3:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    weights = np.exp(-beta * np.array([0.0, 1.0]))
    oracle = rho.mat - np.kron(np.diag([0.7, 0.3]), np.diag(weights / weights.sum()))
    np.testing.assert_allclose(s.rho_hidden.mat, oracle, atol=1e-11)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dims=st.sampled_from([(2, 2), (2, 4), (3, 3)]))
def test_split_hides_nothing_from_collective_observables(seed, dims):
    dk, de = dims
    rng = np.random.default_rng(seed)
    E = Operator.on_e(np.diag(np.arange(de, dtype=float)))
    rho = DensityMatrix.pure(rand_pure(rng, dk * de), SpaceTag.joint(dk, de))
    s = split(rho, E)
    h = s.rho_hidden.mat
    assert abs(np.trace(h)) <= 1e-10
    for A in k_basis(dk):
        assert abs(np.trace(np.kron(A, np.eye(de)) @ h)) <= 1e-10
    g, _ = gibbs(E, s.beta)
    np.testing.assert_allclose(s.rho_prime.mat, np.kron(trace_env(rho).mat, g.mat), atol=1e-12)


# --- purity --------------------------------------------------------------------------

def test_purity_of_matching_product_state():
    g, _ = gibbs(E01, 0.0)
    # a pure product state whose environment factor has the Gibbs energy
    psi_e = np.array([1.0, 1.0]) / np.sqrt(2)
    rho = DensityMatrix.pure(np.kron([1.0, 0.0], psi_e), SpaceTag.joint(2, 2))
    s = split(rho, E01)
    rep = purity_report(s, rho)
    assert rep.tr_rho2 == pytest.approx(1.0)
    # the hidden part is the environment coherence only
    assert rep.cross_term == pytest.approx(0.0, abs=1e-12)
    rho_dec = DensityMatrix.from_operator(tensor(Operator.on_k(np.diag([1.0, 0.0])), g))
    rep = purity_report(split(rho_dec, E01), rho_dec)
    assert rep.tr_rhohidden2 == pytest.approx(0.0, abs=1e-24)
    assert rep.cross_term == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_purity_residual_is_twice_cross_term(seed):
    rng = np.random.default_rng(seed)
    rho = DensityMatrix.pure(rand_pure(rng, 6), SpaceTag.joint(2, 3))
    rep = purity_report(split(rho, Operator.on_e(np.diag([0.0, 0.4, 1.0]))), rho)
    assert abs(rep.identity_residual - 2 * abs(rep.cross_term)) <= 1e-12
    assert abs(rep.tr_rhohidden2 - (1 - rep.tr_rhoprime2) + 2 * rep.cross_term) <= 1e-12


def test_cross_term_small_after_decoherence():
    sc = build_pointer_bath(PointerBathParams())
    frame = Eigenframe(sc.hamiltonian())
    worst = 0.0
    for t in np.linspace(40.0, 60.0, 11):
        rho = frame.evolve(sc.rho0, t)
        rep = purity_report(split(rho, sc.E, beta=sc.beta0), rho)
        worst = max(worst, abs(rep.cross_term))
    assert worst < 1e-3


# --- sigma ----------------------------------------------------------------------------

def test_sigma_at_zero_time():
    rng = np.random.default_rng(5)
    h = seeded_hidden_density(SpaceTag.joint(2, 3), 3, 1.0, 9)
    s = sigma_at(h, Operator.on_k(rand_herm(rng, 2)), Operator.on_e(rand_herm(rng, 3)), 0.0)
    np.testing.assert_allclose(s.sigma.mat, h.mat, atol=1e-14)


def test_sigma_at_diagonal_generator_by_hand():
    # K ⊗ I + I ⊗ E has diagonal (1, 2, -1, 0) for K = σz, E = diag(0, 1)
    h0 = np.array([1.0, 2.0, -1.0, 0.0])
    rng = np.random.default_rng(6)
    s0 = rand_herm(rng, 4)
    s0 -= np.trace(s0) / 4 * np.eye(4)
    t = 0.37
    oracle = s0 * np.exp(-1j * (h0[:, None] - h0[None, :]) * t)
    s = sigma_at(Operator.on_joint(s0, 2, 2), Operator.on_k(PAULI_Z), E01, t)
    np.testing.assert_allclose(s.sigma.mat, oracle, atol=1e-14)
    assert s.origin_time == t


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(-20, 20))
def test_sigma_preserves_spectrum(seed, t):
    rng = np.random.default_rng(seed)
    h = seeded_hidden_density(SpaceTag.joint(3, 2), 4, 0.8, seed)
    s = sigma_at(h, Operator.on_k(rand_herm(rng, 3)), Operator.on_e(rand_herm(rng, 2)), t)
    assert abs(s.sigma.tr()) <= 1e-10
    np.testing.assert_allclose(np.linalg.eigvalsh(s.sigma.mat), np.linalg.eigvalsh(h.mat), atol=1e-10)


# --- memory integral ---------------------------------------------------------------------

def _pointer(lam, **kw):
    return build_pointer_bath(PointerBathParams(lam=lam, **kw))


def test_formal_hidden_without_source():
    sc = _pointer(0.0)
    ts = np.linspace(0, 1, 11)
    hist = [sc.rho0] * len(ts)
    zero = Operator.zeros(sc.space)
    out = rho_hidden_formal(ts, hist, sc.C, sc.K, sc.E, 1.0, zero)
    assert np.max(np.abs(out.mat)) == 0.0
    s0 = seeded_hidden_density(sc.space, 4, 1.0, 3)
    out = rho_hidden_formal(ts, hist, sc.C, sc.K, sc.E, 0.6, s0)
    ref = sigma_at(s0, sc.K, sc.E, 0.6).sigma
    np.testing.assert_allclose(out.mat, ref.mat, atol=1e-14)


def test_formal_hidden_grid_checks():
    sc = _pointer(0.1)
    zero = Operator.zeros(sc.space)
    ts = np.linspace(0, 1, 11)
    hist = [sc.rho0] * len(ts)
    with pytest.raises(ValueError, match="does not contain"):
        rho_hidden_formal(ts, hist, sc.C, sc.K, sc.E, 1.5, zero)
    with pytest.raises(ValueError, match="does not contain"):
        rho_hidden_formal(ts, hist, sc.C, sc.K, sc.E, 0.55, zero)
    with pytest.raises(ValueError, match="uniform"):
        rho_hidden_formal(ts ** 2, hist, sc.C, sc.K, sc.E, 1.0, zero)
    with pytest.raises(ValueError, match="start"):
        rho_hidden_formal(ts + 0.1, hist, sc.C, sc.K, sc.E, 1.1, zero)


def test_formal_hidden_is_traceless_hermitian():
    sc = _pointer(0.2)
    frame = Eigenframe(sc.hamiltonian())
    g, _ = gibbs(sc.E, sc.beta0)
    ts = np.linspace(0, 3, 61)
    hist = [tensor(trace_env(frame.evolve(sc.rho0, s)), g) for s in ts]
    out = rho_hidden_formal(ts, hist, sc.C, sc.K, sc.E, 3.0, seeded_hidden_density(sc.space, 3, 0.5, 1))
    assert abs(out.tr()) <= 1e-10
    assert out.hermiticity_error() <= 1e-10


def _formal_error(lam, t=5.0, n=1001):
    sc = _pointer(lam)
    frame = Eigenframe(sc.hamiltonian())
    g, _ = gibbs(sc.E, sc.beta0)
    ts = np.linspace(0, t, n)
    hist = [tensor(trace_env(frame.evolve(sc.rho0, s)), g) for s in ts]
    out = rho_hidden_formal(ts, hist, sc.C, sc.K, sc.E, t, Operator.zeros(sc.space))
    exact = frame.evolve(sc.rho0, t) - hist[-1]
    return np.max(np.abs(out.mat - exact.mat))


def test_formal_hidden_error_is_second_order():
    # with the exact rho' history, the neglected term is -i∫U[C, rho''] ds = O(λ²)
    ratio = _formal_error(0.1) / _formal_error(0.01)
    assert 50 < ratio < 200


# --- master equation --------------------------------------------------------------------

def test_master_rhs_stationary_and_closed():
    sc = _pointer(0.2, k_energies=(0.0, 0.5))
    rhoK = Operator.on_k(np.diag([0.3, 0.7]))
    zero = Operator.zeros(sc.space)
    assert np.max(np.abs(master_rhs(rhoK, sc.K, sc.C, zero).mat)) == 0.0
    rhoK = Operator.on_k(np.array([[0.5, 0.5], [0.5, 0.5]]))
    out = master_rhs(rhoK, sc.K, Operator.zeros(sc.space), zero)
    np.testing.assert_allclose(out.mat, -1j * (sc.K.mat @ rhoK.mat - rhoK.mat @ sc.K.mat))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_master_rhs_traceless_hermitian(seed):
    rng = np.random.default_rng(seed)
    sc = _pointer(0.3, seed=seed % 1000)
    h = seeded_hidden_density(sc.space, 5, 1.0, seed)
    rk = DensityMatrix.pure(rand_pure(rng, 2), SpaceTag.collective(2))
    out = master_rhs(rk, Operator.on_k(rand_herm(rng, 2)), sc.C, h)
    assert abs(out.tr()) <= 1e-12
    assert out.hermiticity_error() <= 1e-12


# one decoherence time of the λ = 0.1 pointer-bath model (seed 0)
T_DEC = 22.4


def master_error(lam, t_end=T_DEC, dt=0.05):
    sc = _pointer(lam)
    n = int(round(t_end / dt))
    ts = np.linspace(0, t_end, n + 1)
    run = integrate_master(sc.K, sc.E, sc.C, trace_env(sc.rho0), sc.beta0, ts)
    exact = reduced_series(sc, [t_end])[0]
    return trace_distance(run.rhoK[-1], exact)


def test_master_matches_exact_at_small_coupling():
    assert master_error(0.05) <= 0.03


def test_integrate_master_agrees_with_formal_quadrature():
    sc = _pointer(0.2)
    ts = np.linspace(0, 4, 81)
    s0 = seeded_hidden_density(sc.space, 3, 0.05, 2)
    run = integrate_master(sc.K, sc.E, sc.C, trace_env(sc.rho0), sc.beta0, ts, sigma0=s0)
    g, _ = gibbs(sc.E, sc.beta0)
    hist = [tensor(rk, g) for rk in run.rhoK]
    for i in (1, 40, 80):
        ref = rho_hidden_formal(ts[: i + 1], hist[: i + 1], sc.C, sc.K, sc.E, ts[i], s0)
        np.testing.assert_allclose(run.rho_hidden[i].mat, ref.mat, atol=1e-12)


def test_integrate_master_preserves_trace():
    sc = _pointer(0.2)
    run = integrate_master(sc.K, sc.E, sc.C, trace_env(sc.rho0), sc.beta0, np.linspace(0, 10, 201))
    for rk in run.rhoK:
        assert abs(rk.tr() - 1) <= 1e-12
        assert rk.hermiticity_error() <= 1e-12


# --- channels --------------------------------------------------------------------------

def test_channel_set_validation():
    P0 = Operator.on_k(np.diag([1.0, 0.0, 0.0]))
    P1 = Operator.on_k(np.diag([0.0, 1.0, 1.0]))
    ChannelSet((P0, P1))
    with pytest.raises(ValueError):
        ChannelSet((P0, Operator.on_k(np.diag([0.0, 1.0, 0.0]))))
    with pytest.raises(ValueError):
        ChannelSet((P0, Operator.on_k(np.diag([1.0, 1.0, 1.0]))))
    with pytest.raises(ValueError):
        ChannelSet((P0, Operator.on_k(np.diag([0.0, 0.5, 1.0]))))


def test_channel_probabilities_cases():
    ch = ChannelSet.from_blocks(np.eye(3), [[0], [1, 2]])
    np.testing.assert_allclose(channel_probabilities(Operator.on_k(np.diag([1.0, 0, 0])), ch), [1, 0])
    np.testing.assert_allclose(channel_probabilities(Operator.on_k(np.eye(3) / 3), ch), [1 / 3, 2 / 3])
    rho = DensityMatrix.pure([1, 1, 0], SpaceTag.collective(3))
    np.testing.assert_allclose(channel_probabilities(rho, ch), [0.5, 0.5], atol=1e-15)


def test_channel_probabilities_rejects_bad_trace():
    ch = ChannelSet.from_blocks(np.eye(2), [[0], [1]])
    with pytest.raises(InvariantViolation):
        channel_probabilities(Operator.on_k(np.diag([0.6, 0.6])), ch)


# --- drift ------------------------------------------------------------------------------

def test_drift_vanishes_for_zero_sigma():
    sc = _pointer(0.2)
    assert np.all(drift(sc.channels, sc.C, Operator.zeros(sc.space)) == 0.0)


def test_drift_vanishes_when_coupling_commutes():
    sc = _pointer(0.3, n_sites=3, n_env=4)
    rng = np.random.default_rng(7)
    # X-diagonal sigma: block diagonal in the site index, arbitrary in E
    s = np.zeros((12, 12), dtype=complex)
    for i in range(3):
        s[4 * i: 4 * i + 4, 4 * i: 4 * i + 4] = rand_herm(rng, 4)
    s -= np.trace(s) / 12 * np.eye(12)
    v = drift(sc.channels, sc.C, SigmaState(Operator(sc.space, s)))
    assert np.max(np.abs(v)) <= 1e-10


def test_drift_hand_example():
    # C = σx ⊗ σz, σ = σz ⊗ I/2 - traceless; channels |0>, |1>
    C = Operator.on_joint(np.kron(PAULI_X, PAULI_Z), 2, 2)
    s = Operator.on_joint(np.kron(np.array([[0, 1j], [-1j, 0]]), np.diag([1.0, 0.0])), 2, 2)
    ch = ChannelSet.from_blocks(np.eye(2), [[0], [1]])
    comm = C.mat @ s.mat - s.mat @ C.mat
    expected = [np.real(-1j * np.trace(np.kron(P.mat, np.eye(2)) @ comm)) for P in ch.projectors]
    v = drift(ch, C, s)
    np.testing.assert_allclose(v, expected, atol=1e-15)
    assert abs(v[0]) > 0.1


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_drift_components_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    dk, de = 3, 2
    C = Operator.on_joint(rand_herm(rng, dk * de), dk, de)
    s = seeded_hidden_density(C.space, 4, 1.0, seed)
    ch = ChannelSet.from_blocks(np.linalg.qr(rand_herm(rng, dk))[0], [[0], [1, 2]])
    v = drift(ch, C, s)
    assert abs(v.sum()) <= 1e-10
    # promoting Π to Π ⊗ I is what makes the trace well-defined
    assert promote_k(ch.projectors[0], de).space == C.space
