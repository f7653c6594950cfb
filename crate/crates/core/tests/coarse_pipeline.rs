//! Solve, pressure and direct-space reconstruction chained on a coarse grid.

use std::sync::Arc;

use halfplane::direct::{decay_certificate, default_x_nodes};
use halfplane::force::{force_spectrum, ForceSpec};
use halfplane::pressure::pressure_solve;
use halfplane::solver::{derivative_fd_mismatch, identity_residuals, identity_tolerance, Solver, SolverOptions};
use halfplane::SpectralGrid;

#[test]
fn coarse_solve_is_consistent_end_to_end() {
    let g = Arc::new(SpectralGrid::new(1e-6, 32.0, 192, 32.0, 128).unwrap());
    let spec = ForceSpec::default();
    let solver = Solver::new(&g);
    let state = solver.solve(&force_spectrum(&spec, &g).unwrap(), &SolverOptions::default()).unwrap();
    assert!(state.iterations() < 20);

    let (ra, rb) = identity_residuals(&state);
    let (ta, tb) = identity_tolerance(&g, &spec).unwrap();
    assert!(ra < 10.0 * ta && rb < 10.0 * tb, "{ra} {rb} vs {ta} {tb}");

    let d = state.derivative.as_ref().unwrap();
    assert!(derivative_fd_mismatch(&state.omega, &d.d, 0.1, 5.0) < 1e-2);

    let p = pressure_solve(&solver, &state).unwrap();
    assert!(p.diagnostics.companion_mismatch < 1e-6, "{:?}", p.diagnostics);

    let cert = decay_certificate(&state, &default_x_nodes(&g)).unwrap();
    for m in [cert.m_u, cert.m_v, cert.m_omega, cert.m_x_omega] {
        assert!(m.is_finite() && m > 0.0);
    }
    assert!(cert.x_omega_consistency < 1e-3, "{} {:?}", cert.x_omega_consistency, cert.divergence);
    let (fine, coarse) = cert.divergence;
    assert!(fine < 0.5 * coarse, "{fine} {coarse}");
}
