import numpy as np
import pytest

from builders import F0, random_explicit_scene, random_iris_scene, showcase_scene
from ppwcd.constants import ETA0, MU0, wavenumber
from ppwcd.greens import GeometryError, assemble_interactions
from ppwcd.polarizability import rr_correct_electric, rr_correct_magnetic
from ppwcd.power import (accepted_power, feed_coupling, feed_feed, input_impedance, power_balance,
                         self_impedance, source_voltages)
from ppwcd.scene import Element, ExplicitPolarizability, Feed, Plate, Scene
from ppwcd.solver import DipoleState, assemble_K, feed_excitation, solve_scene
from ppwcd.specfun import hankel2

PLATE = Plate(-0.1, 0.1, -0.1, 0.1)


def isolated(h=5.21e-3, f=F0, feeds=((0.0, 0.0),)):
    return Scene(f, PLATE, h, [], [Feed(x, y) for x, y in feeds])


def impedance(sc):
    inter = assemble_interactions(sc)
    return input_impedance(sc, inter, assemble_K(sc, inter), feed_excitation(sc))


def test_zero_state():
    sc = random_iris_scene(np.random.default_rng(0), n=3, nf=1)
    pb = power_balance(sc, assemble_interactions(sc), DipoleState.from_x(np.zeros(9)))
    assert (pb.p_sup, pb.p_rad, pb.slack) == (0.0, 0.0, 0.0)


def test_single_lossless_dipole_saturates():
    k = float(wavenumber(F0))
    h = 5.21e-3
    A = rr_correct_magnetic(np.diag([3e-8, 1e-8]), k, h)
    ae = rr_correct_electric(-2e-8, k, h)
    sc = Scene(F0, PLATE, h, [Element(0.0, 0.0, ExplicitPolarizability(A, ae))], [Feed(0.01, 0.03)])
    state, op, exc, inter = solve_scene(sc, [0.7 - 0.2j])
    pb = power_balance(sc, inter, state, op)
    assert -1e-9 <= pb.slack / pb.p_sup <= 1e-6


def test_lossless_scene_balance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        sc = random_explicit_scene(rng, n=8, nf=3)
        i = rng.normal(size=3) + 1j * rng.normal(size=3)
        state, op, exc, inter = solve_scene(sc, i)
        pb = power_balance(sc, inter, state, op)
        assert pb.p_sup > 0
        assert -1e-9 <= pb.slack / pb.p_sup <= 1e-6


def test_lossy_scene_has_positive_slack():
    rng = np.random.default_rng(2)
    for _ in range(20):
        sc = random_explicit_scene(rng, n=10, nf=2, lossy_fraction=0.1)
        state, op, exc, inter = solve_scene(sc, rng.normal(size=2) + 1j * rng.normal(size=2))
        assert power_balance(sc, inter, state, op).slack > 0


def test_state_size_mismatch():
    sc = random_iris_scene(np.random.default_rng(3), n=3, nf=1)
    with pytest.raises(ValueError):
        power_balance(sc, assemble_interactions(sc), DipoleState.from_x(np.zeros(6)))


def test_isolated_feed_resistance():
    sc = isolated()
    Z = impedance(sc)
    ref = 0.25 * ETA0 * sc.k * sc.h
    assert Z.Z[0, 0].real == pytest.approx(ref, rel=1e-14)
    assert Z.Z[0, 0].real == pytest.approx(102.8, rel=1e-3)
    assert Z.Z[0, 0] == self_impedance(sc.k, sc.h, sc.wire_radius)
    assert accepted_power(Z, [1.0]) == pytest.approx(51.4, rel=1e-3)
    assert accepted_power(Z, [0.0]) == 0.0
    assert source_voltages(Z, [1.0], 50.0)[0].real == pytest.approx(152.8, rel=1e-3)


def test_source_voltages_columns():
    Z = impedance(isolated(feeds=((0, 0), (0.02, 0.01), (-0.03, 0.0))))
    for k in range(3):
        e = np.eye(3)[k]
        assert np.allclose(source_voltages(Z, e, 25.0), Z.Z[:, k] + 25.0 * e, rtol=1e-15, atol=0)
    assert np.array_equal(source_voltages(Z, [1, 2, 3]), Z.Z @ [1, 2, 3])


def test_far_feeds_envelope():
    sc = isolated(feeds=((0.0, 0.0), (0.09, 0.0)))
    Z = impedance(sc)
    kr = sc.k * 0.09
    env = sc.h * sc.k * ETA0 / 4 * np.sqrt(2 / (np.pi * kr))
    assert abs(Z.Z[0, 1]) == pytest.approx(env, rel=0.01)
    assert Z.Z[0, 1] == pytest.approx(sc.h * sc.k * ETA0 / 4 * hankel2(0, kr), rel=1e-14)


def test_coincident_feeds():
    with pytest.raises(GeometryError):
        feed_feed(isolated(feeds=((0.01, 0.0), (0.01, 0.0))))


def test_accepted_power_is_quadratic():
    sc = random_iris_scene(np.random.default_rng(4), n=6, nf=3)
    Z = impedance(sc)
    i = np.array([1.0, -0.5j, 0.2 + 0.1j])
    assert accepted_power(Z, (2 - 1j) * i) == pytest.approx(5 * accepted_power(Z, i), rel=1e-13)


def test_impedance_reciprocal_and_R_positive():
    rng = np.random.default_rng(5)
    for _ in range(50):
        sc = random_explicit_scene(rng, n=int(rng.integers(1, 10)), nf=int(rng.integers(1, 5)),
                                   lossy_fraction=float(rng.choice([0.0, 0.3])))
        Z = impedance(sc)
        assert np.abs(Z.Z - Z.Z.T).max() <= 1e-10 * np.abs(Z.Z).max()
        assert np.array_equal(Z.R, Z.R.conj().T)
        assert np.linalg.eigvalsh(Z.R)[0] > 0


def test_radiated_power_never_exceeds_accepted():
    rng = np.random.default_rng(6)
    for _ in range(30):
        sc = random_explicit_scene(rng, n=8, nf=3, lossy_fraction=float(rng.choice([0.0, 0.25])))
        i = rng.normal(size=3) + 1j * rng.normal(size=3)
        state, op, exc, inter = solve_scene(sc, i)
        Z = input_impedance(sc, inter, op, exc)
        p_tot = accepted_power(Z, i)
        p_rad = power_balance(sc, inter, state, op).p_rad
        assert p_rad <= p_tot * (1 + 1e-6)


def test_feed_coupling_is_waveguide_only_and_reciprocal():
    # E_z at a feed per unit moment equals -(1/h) x (excitation of that moment per unit current), by reciprocity
    sc = random_iris_scene(np.random.default_rng(7), n=5, nf=2)
    Gf = feed_coupling(sc)
    Hbar = feed_excitation(sc).stacked
    n = len(sc.elements)
    S = np.concatenate([np.full(2 * n, MU0), np.ones(n)])
    ratio = (S[:, None] * Hbar).T / Gf
    assert np.allclose(ratio, ratio.flat[0], rtol=1e-10)


def test_bounce_back_smaller_than_direct_term_for_showcase():
    sc = showcase_scene()
    inter = assemble_interactions(sc)
    op = assemble_K(sc, inter)
    exc = feed_excitation(sc)
    direct = self_impedance(sc.k, sc.h, sc.wire_radius) * np.eye(2) - sc.h * feed_feed(sc)
    bounce = sc.h * feed_coupling(sc)[:, op.active] @ op.solve(exc.stacked[op.active])
    assert np.linalg.norm(bounce) < np.linalg.norm(direct)


def test_element_coupling_changes_feed_resistance_with_frequency():
    sc = showcase_scene()
    fs = np.linspace(9e9, 11e9, 9)
    full = np.array([impedance(sc.with_frequency(f)).Z[0] @ [1, 1] for f in fs])
    bare = np.array([impedance(sc.with_elements([]).with_frequency(f)).Z[0] @ [1, 1] for f in fs])
    assert np.abs(full.real - bare.real).max() > 1e-3 * np.abs(bare.real).max()
