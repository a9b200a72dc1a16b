from __future__ import annotations

import math

import numpy as np
import pytest

from wormhole_heat.mms import (
    ConvergenceReport,
    ErrorTracker,
    HistoryError,
    MeshErrors,
    boundary_compatibility,
    error_norms,
    example1_case,
    example2_case,
    get_case,
    manufactured_residuals,
    run_convergence_study,
    run_mms,
)


def test_example1_initial_values():
    case = example1_case()
    grid = case.grid(10)

    state = case.initial_state(grid)

    np.testing.assert_allclose(state.concentration.values, 1.0)
    np.testing.assert_allclose(state.porosity.values, 0.25)
    np.testing.assert_allclose(state.temperature.values, 10.0)
    np.testing.assert_allclose(state.pressure.values, 1.0)
    assert case.phi0 == 0.25


def test_example1_closed_forms_at_sample_points():
    case = example1_case()

    assert case.concentration.value(1.0, np.array(0.5), np.array(0.5)) == pytest.approx(1.0)
    assert case.pressure.value(1.0, np.array(0.5), np.array(0.5)) == pytest.approx(1.0 + 0.25**4)
    assert case.porosity.value(1.0, np.array(0.5), np.array(0.5)) == pytest.approx(0.25 + 0.25**3)
    assert case.temperature.value(2.0, np.array(0.0), np.array(0.0)) == pytest.approx(11.0)


def test_example2_uses_exponential_time_factor():
    case = example2_case()
    zero = np.array(0.0)

    assert case.dim == 3
    assert case.temperature.value(1.0, zero, zero, zero) == pytest.approx(0.5 * math.expm1(1.0) + 10.0)
    assert case.phi0 == 0.5


@pytest.mark.parametrize("name", ["example1", "example2"])
def test_manufactured_sources_satisfy_the_equations(name):
    case = get_case(name)

    residuals = manufactured_residuals(case)

    assert set(residuals) == {"pressure", "concentration", "porosity", "temperature"}
    assert max(residuals.values()) <= 1e-6


@pytest.mark.parametrize("name", ["example1", "example2"])
def test_manufactured_fields_satisfy_no_flux_boundaries(name):
    assert boundary_compatibility(get_case(name)) <= 1e-12


def test_unknown_case_is_rejected():
    with pytest.raises(ValueError):
        get_case("example9")


def test_error_norms_need_samples():
    case = example1_case()
    tracker = ErrorTracker(case, case.grid(4))

    with pytest.raises(HistoryError):
        tracker.norms()
    with pytest.raises(HistoryError):
        error_norms([], case)


def test_error_norms_vanish_for_exact_fields():
    case = example1_case()
    grid = case.grid(6)
    state = case.initial_state(grid)

    norms = error_norms([state], case)

    assert norms["phi"] == pytest.approx(0.0, abs=1e-15)
    assert norms["c_f"] == pytest.approx(0.0, abs=1e-15)
    assert norms["u"] == pytest.approx(0.0, abs=1e-15)


def _row(n, phi):
    errors = {"phi": phi, "p": phi, "u": phi, "c_f": phi, "T": phi}
    return MeshErrors(n, 1.0 / n, n * n, errors, {"c_f": phi, "T": phi})


def test_rates_are_log2_ratios_of_halved_meshes():
    report = ConvergenceReport("example1", [_row(10, 4e-4), _row(20, 1e-4), _row(30, 5e-5)])

    rates = report.rates()

    assert rates["phi"][0] == pytest.approx(2.0)
    assert rates["phi"][1] is None
    assert report.meshes == [10, 20, 30]


def test_single_mesh_has_no_rates():
    report = ConvergenceReport("example1", [_row(10, 4e-4)])

    assert report.rates() == {key: [] for key in ("phi", "p", "u", "c_f", "T")}
    assert "1/10" in report.to_text()


def test_convergence_csv_leaves_first_rates_blank():
    report = ConvergenceReport("example1", [_row(10, 4e-4), _row(20, 1e-4)])

    lines = report.to_csv().splitlines()

    assert lines[0].startswith("h,E_phi,rate_phi,E_p,rate_p")
    assert lines[0].endswith("H1_c_f,H1_T")
    assert lines[1].split(",")[:3] == ["1/10", "4.00E-04", ""]
    assert lines[2].split(",")[:3] == ["1/20", "1.00E-04", "2.00"]


@pytest.mark.parametrize("meshes", [[], [1, 2], [20, 10]])
def test_convergence_study_validates_meshes(meshes):
    with pytest.raises(ValueError):
        run_convergence_study("example1", meshes)


def test_coarse_run_reports_all_quantities():
    result = run_mms(example1_case(), 4)

    assert result.steps == 16
    assert set(result.errors) == {"phi", "p", "u", "c_f", "T"}
    assert all(np.isfinite(v) and v >= 0 for v in result.errors.values())


REFERENCE_EXAMPLE1 = {
    10: {"phi": 2.49e-4, "p": 2.92e-4, "u": 8.53e-5, "c_f": 3.78e-4, "T": 1.89e-1},
    20: {"phi": 6.22e-5, "p": 7.26e-5, "u": 2.12e-5, "c_f": 9.42e-5, "T": 4.76e-2},
    40: {"phi": 1.55e-5, "p": 1.81e-5, "u": 5.30e-6, "c_f": 2.35e-5, "T": 1.19e-2},
}

REFERENCE_EXAMPLE2 = {
    10: {"phi": 8.82e-4, "p": 4.76e-5, "u": 1.61e-3, "c_f": 3.59e-4, "T": 6.97e-2},
    20: {"phi": 2.20e-4, "p": 1.17e-5, "u": 4.56e-4, "c_f": 8.98e-5, "T": 1.74e-2},
}


@pytest.mark.slow
def test_example1_converges_at_second_order():
    report = run_convergence_study("example1", [10, 20, 40])

    for row in report.rows:
        for key, expected in REFERENCE_EXAMPLE1[row.n].items():
            assert 0.5 <= row.errors[key] / expected <= 2.0, (row.n, key, row.errors[key])
    for key, rates in report.rates().items():
        assert all(rate == pytest.approx(2.0, abs=0.15) for rate in rates), key


@pytest.mark.slow
def test_example2_converges_at_second_order():
    report = run_convergence_study("example2", [10, 20])

    for row in report.rows:
        for key, expected in REFERENCE_EXAMPLE2[row.n].items():
            assert 0.5 <= row.errors[key] / expected <= 2.0, (row.n, key, row.errors[key])
    rates = report.rates()
    assert rates["phi"][0] == pytest.approx(2.0, abs=0.15)
    assert rates["u"][0] == pytest.approx(1.82, abs=0.25)
