import numpy as np
from hypothesis import given, settings, strategies as st

from multitime_ft.channels import (
    adjoint,
    amplitude_damping_channel,
    apply,
    choi_to_kraus,
    choi_to_super,
    compose,
    depolarizing_channel,
    dilation_channel,
    identity_channel,
    is_cptp,
    kraus_to_choi,
    kraus_to_super,
    petz_recovery,
    super_apply,
    super_to_choi,
    tensor_channels,
    unitary_channel,
)
from multitime_ft.linalg import hs_inner, maximally_entangled
from multitime_ft.scenarios import haar_unitary, make_rng, random_channel, random_density_matrix

from conftest import assert_close
import oracles

seeds = st.integers(0, 2**31 - 1)
dims = st.integers(2, 4)


def test_identity_superoperator_and_choi():
    assert_close(kraus_to_super(identity_channel(3)), np.eye(9), 1e-15)
    phi = kraus_to_choi(identity_channel(2))
    assert_close(phi, maximally_entangled(2), 1e-15)
    assert phi[0, 0] == phi[0, 3] == phi[3, 0] == phi[3, 3] == 0.5


def test_completely_depolarizing_choi_is_product():
    ch = depolarizing_channel(2, 1.0)
    assert_close(kraus_to_choi(ch), np.eye(4) / 4, 1e-14)


def test_amplitude_damping_ground_state_fixed():
    ch = amplitude_damping_channel(0.3)
    ground = np.diag([1.0, 0.0]).astype(complex)
    assert_close(apply(ch, ground), ground, 1e-15)
    assert_close(apply(ch, np.diag([0, 1.0])), np.diag([0.3, 0.7]), 1e-15)


@settings(max_examples=30, deadline=None)
@given(seeds, dims)
def test_representations_agree(seed, d):
    rng = make_rng(seed)
    ch = random_channel(d, rng)
    rho = random_density_matrix(d, rng)
    sup = kraus_to_super(ch)
    choi = kraus_to_choi(ch)
    assert_close(choi, oracles.choi(list(ch.ops), d), 1e-12)
    assert_close(super_to_choi(sup, d, d), choi, 1e-12)
    assert_close(choi_to_super(choi, d, d), sup, 1e-12)
    assert_close(super_apply(sup, rho), apply(ch, rho), 1e-12)
    back = choi_to_kraus(choi, d, d)
    assert_close(apply(back, rho), apply(ch, rho), 1e-10)


@settings(max_examples=30, deadline=None)
@given(seeds, dims)
def test_random_channel_is_cptp(seed, d):
    rep = is_cptp(random_channel(d, make_rng(seed)))
    assert rep.ok
    assert rep.tp_margin < 1e-12


def test_transpose_choi_is_not_positive():
    # transpose is positive but not completely positive
    sup = np.zeros((4, 4))
    for i in range(2):
        for j in range(2):
            sup[j * 2 + i, i * 2 + j] = 1
    assert np.linalg.eigvalsh(super_to_choi(sup, 2, 2))[0] < -0.4


def test_adjoint_is_hs_dual(rng):
    ch = random_channel(3, rng)
    x = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    y = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    assert abs(hs_inner(y, apply(ch, x)) - hs_inner(apply(adjoint(ch), y), x)) < 1e-12


def test_compose_applies_rightmost_first(rng):
    a = random_channel(2, rng)
    b = random_channel(2, rng)
    rho = random_density_matrix(2, rng)
    assert_close(apply(compose(b, a), rho), apply(b, apply(a, rho)), 1e-13)


def test_tensor_channels_on_product(rng):
    a = random_channel(2, rng)
    b = random_channel(3, rng)
    r1 = random_density_matrix(2, rng)
    r2 = random_density_matrix(3, rng)
    out = apply(tensor_channels(a, b), np.kron(r1, r2))
    assert_close(out, np.kron(apply(a, r1), apply(b, r2)), 1e-13)


def test_dilation_with_identity_unitary_is_identity(rng):
    ch = dilation_channel(np.eye(6), random_density_matrix(3, rng), 2, 3)
    rho = random_density_matrix(2, rng)
    assert_close(apply(ch, rho), rho, 1e-14)


def test_petz_of_identity_is_identity(rng):
    gamma = random_density_matrix(3, rng)
    petz = petz_recovery(identity_channel(3), gamma)
    assert_close(kraus_to_super(petz), np.eye(9), 1e-10)


@settings(max_examples=30, deadline=None)
@given(seeds, dims)
def test_petz_matches_oracle_and_recovers_reference(seed, d):
    rng = make_rng(seed)
    ch = random_channel(d, rng)
    gamma = random_density_matrix(d, rng)
    x = random_density_matrix(d, rng)
    petz = petz_recovery(ch, gamma)
    assert_close(apply(petz, x), oracles.petz_apply(list(ch.ops), gamma, x), 1e-9)
    assert_close(apply(petz, apply(ch, gamma)), gamma, 1e-10)
    assert is_cptp(petz).ok


def test_petz_of_unitary_is_inverse(rng):
    u = haar_unitary(3, rng)
    gamma = random_density_matrix(3, rng)
    petz = petz_recovery(unitary_channel(u), gamma)
    assert_close(kraus_to_super(petz), kraus_to_super(unitary_channel(u.conj().T)), 1e-10)
