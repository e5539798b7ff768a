import time

import numpy as np
import pytest

from conftest import noisy_fit
from pcsindy.der_models import analytical_block, assemble_xi
from pcsindy.pmu import DerInfo, SnapshotMatrices, matrices_from_trajectory, roster_from_names
from pcsindy.sindy import (
    IdentifiedModel,
    LibrarySpec,
    StlsqConfig,
    ThresholdError,
    build_intuitive_library,
    compare_coefficients,
    stlsq,
    stlsq_column,
)

REFERENCE_RATIO = np.array([1, .99, .97, 1, .95, .96, 1, .97, .92, 1, .94])


def plain_matrices(theta, y):
    n = y.shape[1]
    return SnapshotMatrices(y, theta, tuple(f"y{j}" for j in range(n)),
                            tuple(f"c{i}" for i in range(theta.shape[1])))


@pytest.fixture(scope="module")
def exact(id_traj):
    roster = [DerInfo(d.name, d.kind, d.bus_id) for d in id_traj.ders]
    lib = LibrarySpec.analytical(roster)
    xi = assemble_xi([analytical_block(d) for d in id_traj.ders])
    return matrices_from_trajectory(id_traj, lib), lib, xi


# stlsq

def test_lambda_zero_matches_pseudoinverse(rng):
    cfg = StlsqConfig(threshold=0.0)
    for _ in range(100):
        m = int(rng.integers(12, 51))
        p = int(rng.integers(1, 11))
        theta = rng.standard_normal((m, p)) * rng.uniform(0.1, 10, p)
        y = rng.standard_normal((m, 2))
        got = stlsq(plain_matrices(theta, y), cfg).xi_hat
        ref = np.linalg.pinv(theta) @ y
        assert np.max(np.abs(got - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_exact_recovery_of_analytical_xi(exact):
    m, lib, xi = exact
    t0 = time.perf_counter()
    model = stlsq(m, StlsqConfig(), lib)
    assert time.perf_counter() - t0 < 5.0
    assert np.linalg.norm(model.xi_hat - xi) / np.linalg.norm(xi) <= 1e-6
    assert np.array_equal(model.support, xi != 0)


def test_recovers_sparse_planted_model(rng):
    theta = rng.standard_normal((200, 8))
    xi = np.zeros((8, 2))
    xi[[1, 4], 0] = [2.0, -0.7]
    xi[6, 1] = 3.0
    model = stlsq(plain_matrices(theta, theta @ xi), StlsqConfig(threshold=0.1))
    assert np.array_equal(model.support, xi != 0)
    assert np.allclose(model.xi_hat, xi, atol=1e-12)


def test_support_never_grows(rng):
    theta = rng.standard_normal((100, 6))
    y = theta[:, 0] + 0.3 * rng.standard_normal(100)
    prev = None
    for k in range(1, 6):
        xi, _ = stlsq_column(theta, y, StlsqConfig(threshold=0.2, max_iters=k))
        sup = set(np.flatnonzero(xi))
        if prev is not None:
            assert sup <= prev
        prev = sup


def test_scale_equivariance(rng):
    theta = rng.standard_normal((80, 4))
    y = theta @ np.array([1.0, 0.0, -2.0, 0.01]) + 0.01 * rng.standard_normal(80)
    cfg = StlsqConfig(threshold=0.05)
    a, _ = stlsq_column(theta, y, cfg)
    scaled = theta * np.array([1.0, 1.0, 1000.0, 1.0])
    b, _ = stlsq_column(scaled, y, cfg)
    assert np.allclose(b * [1.0, 1.0, 1000.0, 1.0], a, rtol=1e-9, atol=1e-12)


def test_block_mask_restricts_fit(exact):
    m, lib, _ = exact
    model = stlsq(m, StlsqConfig(threshold=0.0), lib)
    assert not np.any(model.xi_hat[~m.allowed])


def test_threshold_too_aggressive_names_target(rng):
    theta = rng.standard_normal((30, 3))
    y = rng.standard_normal((30, 1))
    with pytest.raises(ThresholdError, match="y0"):
        stlsq(plain_matrices(theta, y), StlsqConfig(threshold=1e6))


def test_non_finite_rejected(rng):
    theta = rng.standard_normal((10, 2))
    theta[3, 1] = np.nan
    with pytest.raises(ValueError):
        stlsq(plain_matrices(theta, np.ones((10, 1))))


def test_config_validation():
    with pytest.raises(ValueError):
        StlsqConfig(threshold=-1)
    with pytest.raises(ValueError):
        StlsqConfig(max_iters=0)


def test_identification_under_one_second(exact):
    m, lib, _ = exact
    rows = np.arange(0, m.theta.shape[0], 10)
    sub = SnapshotMatrices(m.x_dot[rows], m.theta[rows], m.target_labels, m.column_labels, m.allowed)
    assert sub.theta.shape == (1201, 19)
    t0 = time.perf_counter()
    stlsq(sub, StlsqConfig(), lib)
    assert time.perf_counter() - t0 < 1.0


def test_model_round_trip(tmp_path, exact):
    m, lib, _ = exact
    model = stlsq(m, StlsqConfig(), lib)
    path = tmp_path / "model.json"
    model.save(path)
    back = IdentifiedModel.load(path)
    assert np.array_equal(back.xi_hat, model.xi_hat)
    assert back.library == lib
    assert back.target_labels == model.target_labels
    assert np.array_equal(back.iterations, model.iterations)


# libraries

def test_intuitive_degree_one_single_gfm():
    roster = roster_from_names(["gfm1"])
    labels = LibrarySpec.intuitive(roster, degree=1, sinusoids=False).column_labels()
    assert labels == ["1", "gfm1.theta", "gfm1.omega", "omega0", "gfm1.p", "gfm1.ps"]


@pytest.mark.parametrize("names", [["gfm1"], ["gfm1", "gfl2"], ["gfm1", "gfl2", "gfl3", "gfl4"]])
def test_intuitive_degree_two_count(names):
    roster = roster_from_names(names)
    lib = LibrarySpec.intuitive(roster, degree=2, sinusoids=False)
    # theta, omega per DER, p and ps per GFM, vq per GFL, plus omega0
    k = 1 + sum(4 if n.startswith("gfm") else 3 for n in names)
    assert len(lib.column_labels()) == 1 + k + k * (k + 1) // 2


def test_intuitive_sinusoids_of_states():
    roster = roster_from_names(["gfm1", "gfl2"])
    labels = LibrarySpec.intuitive(roster, degree=1).column_labels()
    for s in ("gfm1.theta", "gfm1.omega", "gfl2.theta", "gfl2.omega"):
        assert f"sin({s})" in labels and f"cos({s})" in labels


def test_analytical_candidates_subset_of_intuitive():
    roster = roster_from_names(["gfm1", "gfl2"])
    intuitive = set(LibrarySpec.intuitive(roster, degree=1).column_labels())
    assert {"gfm1.omega", "omega0", "gfm1.p", "gfm1.ps", "gfl2.omega", "gfl2.vq"} <= intuitive
    assert "gfl2.vq_int" not in intuitive
    assert "gfl2.vq_int" in LibrarySpec.intuitive(roster, degree=1, include_vq_int=True).column_labels()


def test_library_too_rich_for_window():
    roster = roster_from_names(["gfm1", "gfl2"])
    sig = {v: np.ones(5) for v in ("gfm1.theta", "gfm1.omega", "omega0", "gfm1.p", "gfm1.ps",
                                   "gfl2.theta", "gfl2.omega", "gfl2.vq")}
    with pytest.raises(ValueError, match="too rich"):
        build_intuitive_library(sig, roster, degree=2)


def test_intuitive_values(rng):
    roster = roster_from_names(["gfm1"])
    sig = {v: rng.standard_normal(4) for v in ("gfm1.theta", "gfm1.omega", "omega0", "gfm1.p", "gfm1.ps")}
    theta, labels = build_intuitive_library(sig, roster, degree=2, check_rows=False)
    assert np.allclose(theta[:, labels.index("gfm1.theta*gfm1.p")], sig["gfm1.theta"] * sig["gfm1.p"])
    assert np.allclose(theta[:, labels.index("cos(gfm1.omega)")], np.cos(sig["gfm1.omega"]))


def test_degree_zero_rejected():
    with pytest.raises(ValueError):
        LibrarySpec.intuitive(roster_from_names(["gfm1"]), degree=0)


# recovery metrics

def test_compare_identity(exact):
    _, _, xi = exact
    rep = compare_coefficients(xi, xi)
    assert np.allclose(rep.rho, 1, rtol=0, atol=1e-12) and np.allclose(rep.ratio, 1)
    assert np.all(rep.precision == 1) and np.all(rep.recall == 1)


def test_compare_scaled(exact):
    _, _, xi = exact
    rep = compare_coefficients(xi, 0.95 * xi)
    assert np.allclose(rep.rho, 1) and np.allclose(rep.ratio, 0.95)


def test_compare_support_metrics():
    xi = np.array([[1.0], [0.0], [2.0]])
    hat = np.array([[1.0], [0.5], [0.0]])
    rep = compare_coefficients(xi, hat)
    assert rep.precision[0] == 0.5 and rep.recall[0] == 0.5
    assert -1 <= rep.rho[0] <= 1


def test_compare_layout_mismatch():
    with pytest.raises(ValueError):
        compare_coefficients(np.zeros((3, 2)), np.zeros((2, 3)))


def test_reference_ratios_on_noisy_identification_run():
    model, traj = noisy_fit(0)
    xi = assemble_xi([analytical_block(d) for d in traj.ders])
    rep = compare_coefficients(xi, model.xi_hat, model.target_labels)
    print("\n" + rep.to_text())
    assert np.all(rep.rho >= 0.99)
    assert np.all(np.abs(rep.ratio - REFERENCE_RATIO) <= 0.05)
