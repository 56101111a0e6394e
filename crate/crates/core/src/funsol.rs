//! Fundamental-solution tools: numeric matrix kernels for the
//! diffusion-plus-coupling part of the pricing systems, Gaussian lower
//! bounds, and a low-order quadrature validator for the parametrix series
//! behind the bounds.
//!
//! Under an irreducible chain every entry of the kernel is strictly
//! positive and dominated from below by
//!
//! ```text
//! e_ij(y, tau; z, s) >= delta0 * (exp(c (tau - s) B*))_ij
//!                        * exp(-eps0 (y - z)^2 / (tau - s)) / sqrt(tau - s)
//! ```
//!
//! with `c = delta0 * sqrt(pi / eps0)` and `B*` the entrywise infimum of
//! the off-diagonal coupling (here: the generator itself, constant in
//! space and time).

use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, sqrt};

use crate::grid::{SolutionField, SpaceGrid, TimeGrid};
use crate::markov::expm;
use crate::model::RegimeModel;
use crate::stepper::{march, OperatorCoeffs, StepperParams};
use crate::{Error, Result};

/// Fixed grid of Gaussian decay rates tried during calibration.
pub const EPS0_GRID: [f64; 3] = [0.25, 0.5, 1.0];

/// Kernel undershoots below this magnitude count as scheme noise, matching
/// the nonnegativity guarantee of the continuous kernel.
pub const SCHEME_FLOOR: f64 = 1e-8;

/// Operator of the kernel system: per-regime diffusion plus generator
/// coupling (net of dividends), no first-order term.
fn kernel_operator(model: &RegimeModel, grid: &SpaceGrid) -> OperatorCoeffs {
    let n = model.n();
    let m = grid.m();
    let mut op = OperatorCoeffs::zeros(n, m);
    let dy2 = grid.dy() * grid.dy();
    for i in 0..n {
        for k in 0..m {
            let a = model.diffusion_coefficient(i, grid.node(k));
            op.sub[i * m + k] = a / dy2;
            op.diag[i * m + k] = -2.0 * a / dy2;
            op.sup[i * m + k] = a / dy2;
        }
    }
    let b = model.generator();
    for i in 0..n {
        for j in 0..n {
            op.coupling[i * n + j] = b.entry(i, j);
        }
        op.coupling[i * n + i] -= model.dividend(i);
    }
    op
}

/// Column `source_state` of the kernel: evolve a discrete point mass at the
/// origin through the system.
pub fn numeric_fundamental_column(
    model: &RegimeModel,
    source_state: usize,
    grid: &SpaceGrid,
    tg: &TimeGrid,
) -> Result<SolutionField> {
    let n = model.n();
    if source_state >= n {
        return Err(Error::InvalidParameter("source state out of range"));
    }
    let m = grid.m();
    let mut init = vec![0.0; n * m];
    init[source_state * m + grid.zero_index()] = 1.0 / grid.dy();
    let op = kernel_operator(model, grid);
    march(&init, &op, tg, &StepperParams::default(), None)
}

/// Gaussian lower-bound constants: diagonal-part constants `delta0`,
/// `eps0` and the coupling infimum matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundParams {
    pub delta0: f64,
    pub eps0: f64,
    pub b_star: Vec<f64>,
    pub n: usize,
}

impl LowerBoundParams {
    pub fn new(delta0: f64, eps0: f64, b_star: Vec<f64>, n: usize) -> Result<Self> {
        if !(delta0 > 0.0) || !(eps0 > 0.0) {
            return Err(Error::InvalidParameter("delta0 and eps0 must be positive"));
        }
        if b_star.len() != n * n {
            return Err(Error::ShapeMismatch);
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && b_star[i * n + j] < 0.0 {
                    return Err(Error::InvalidParameter("b_star off-diagonals must be >= 0"));
                }
            }
        }
        Ok(Self { delta0, eps0, b_star, n })
    }

    /// Constants bound to a model: the coupling infimum of a constant
    /// generator is the generator itself.
    pub fn from_model(model: &RegimeModel, delta0: f64, eps0: f64) -> Result<Self> {
        Self::new(delta0, eps0, model.generator().as_slice().to_vec(), model.n())
    }
}

/// Evaluate the lower-bound matrix at spatial points `y`, `z` and time gap
/// `dt > 0`.
pub fn lower_bound_matrix(p: &LowerBoundParams, y: f64, z: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("time gap must be positive"));
    }
    let c = p.delta0 * sqrt(core::f64::consts::PI / p.eps0);
    let scaled: Vec<f64> = p.b_star.iter().map(|v| v * c * dt).collect();
    let coupling = expm(&scaled, p.n)?;
    let gauss = p.delta0 * exp(-p.eps0 * (y - z) * (y - z) / dt) / sqrt(dt);
    Ok(coupling.into_iter().map(|v| v * gauss).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityReport {
    /// Smallest of `numeric kernel - bound` over the window at the given
    /// constants.
    pub min_gap: f64,
    /// Largest feasible `delta0` over the calibration grid of `eps0`.
    pub delta0_star: f64,
    /// The `eps0` at which `delta0_star` was attained.
    pub eps0_star: f64,
    pub violated: bool,
}

fn min_gap_given(
    columns: &[SolutionField],
    params: &LowerBoundParams,
    grid: &SpaceGrid,
    tg: &TimeGrid,
    window: (f64, f64),
    taus: &[f64],
) -> Result<f64> {
    let n = params.n;
    let range = grid.window_indices(window.0, window.1)?;
    let mut min_gap = f64::INFINITY;
    for &tau in taus {
        let l = tg.index_of(tau).ok_or(Error::InvalidParameter("tau off the time grid"))?;
        if l == 0 {
            return Err(Error::InvalidParameter("tau must be positive"));
        }
        let c = params.delta0 * sqrt(core::f64::consts::PI / params.eps0);
        let scaled: Vec<f64> = params.b_star.iter().map(|v| v * c * tau).collect();
        let coupling = expm(&scaled, n)?;
        for k in range.clone() {
            let y = grid.node(k);
            let gauss = params.delta0 * exp(-params.eps0 * y * y / tau) / sqrt(tau);
            for (j, col) in columns.iter().enumerate() {
                for i in 0..n {
                    let gap = col.at(i, k, l) - coupling[i * n + j] * gauss;
                    if gap < min_gap {
                        min_gap = gap;
                    }
                }
            }
        }
    }
    Ok(min_gap)
}

/// Check the Gaussian lower bound against the numeric kernel on a window,
/// and calibrate the largest feasible `delta0` over [`EPS0_GRID`].
///
/// The report states the gap at the constants supplied in `params`;
/// `violated` means the gap dips below the scheme-noise floor, which for
/// conservatively small `delta0` indicates a solver bug.
pub fn verify_positivity_bound(
    model: &RegimeModel,
    params: &LowerBoundParams,
    window: (f64, f64),
    taus: &[f64],
    grid: &SpaceGrid,
    tg: &TimeGrid,
) -> Result<PositivityReport> {
    if taus.is_empty() {
        return Err(Error::InvalidParameter("need at least one tau"));
    }
    let n = model.n();
    let columns: Vec<SolutionField> = (0..n)
        .map(|j| numeric_fundamental_column(model, j, grid, tg))
        .collect::<Result<_>>()?;

    let min_gap = min_gap_given(&columns, params, grid, tg, window, taus)?;

    let mut delta0_star = 0.0f64;
    let mut eps0_star = EPS0_GRID[0];
    for &eps0 in &EPS0_GRID {
        let feasible = |delta0: f64| -> Result<bool> {
            let p = LowerBoundParams {
                delta0,
                eps0,
                b_star: params.b_star.clone(),
                n: params.n,
            };
            Ok(min_gap_given(&columns, &p, grid, tg, window, taus)? >= -SCHEME_FLOOR)
        };
        let mut lo = 1e-12;
        if !feasible(lo)? {
            continue;
        }
        let mut hi = lo;
        while feasible(hi * 2.0)? && hi < 1e3 {
            hi *= 2.0;
        }
        hi *= 2.0;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo > delta0_star {
            delta0_star = lo;
            eps0_star = eps0;
        }
    }
    Ok(PositivityReport {
        min_gap,
        delta0_star,
        eps0_star,
        violated: min_gap < -SCHEME_FLOOR,
    })
}

/// `p_t(z) = exp(-eps0 z^2 / t) / sqrt(t)`, the Gaussian factor of the
/// diagonal lower bound.
pub fn gauss_factor(eps0: f64, z: f64, t: f64) -> f64 {
    exp(-eps0 * z * z / t) / sqrt(t)
}

/// Closed form of the `p`-th parametrix series term with exact-Gaussian
/// diagonal input: `delta0^p (pi/eps0)^{(p-1)/2} tau^{p-1}/(p-1)! B^p`
/// times the Gaussian factor.
pub fn series_term_closed(
    delta0: f64,
    eps0: f64,
    b: &[f64],
    n: usize,
    p: usize,
    y: f64,
    tau: f64,
) -> Vec<f64> {
    debug_assert!(p >= 1);
    let mut bp = b.to_vec();
    for _ in 1..p {
        bp = crate::linalg::matmul(&bp, b, n);
    }
    let mut fact = 1.0;
    for k in 1..p {
        fact *= k as f64;
    }
    let scale = libm::pow(delta0, p as f64)
        * libm::pow(core::f64::consts::PI / eps0, (p as f64 - 1.0) / 2.0)
        * libm::pow(tau, p as f64 - 1.0)
        / fact
        * gauss_factor(eps0, y, tau);
    bp.into_iter().map(|v| v * scale).collect()
}

/// The same term by direct space-time quadrature of the iterated kernel
/// composition (midpoint in time, trapezoid in space). Coarse-grid
/// validator only; the PDE solver is the production constructor.
pub fn series_term_quadrature(
    delta0: f64,
    eps0: f64,
    b: &[f64],
    n: usize,
    p: usize,
    y: f64,
    tau: f64,
    z_half: f64,
    z_steps: usize,
    t_steps: usize,
) -> Vec<f64> {
    debug_assert!(p >= 1);
    if p == 1 {
        let g = delta0 * gauss_factor(eps0, y, tau);
        return b.iter().map(|v| v * g).collect();
    }
    let dz = 2.0 * z_half / z_steps as f64;
    let dt = tau / t_steps as f64;
    let mut acc = vec![0.0; n * n];
    for ti in 0..t_steps {
        let t = (ti as f64 + 0.5) * dt;
        for zi in 0..=z_steps {
            let z = -z_half + zi as f64 * dz;
            let w = if zi == 0 || zi == z_steps { 0.5 } else { 1.0 } * dz * dt;
            // Phi_1(y, tau; z, t) = B * delta0 * p_{tau - t}(y - z)
            let g1 = delta0 * gauss_factor(eps0, y - z, tau - t);
            let inner = series_term_quadrature(
                delta0, eps0, b, n, p - 1, z, t, z_half, z_steps, t_steps,
            );
            // acc += w * (g1 B) * inner
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k2 in 0..n {
                        s += b[i * n + k2] * inner[k2 * n + j];
                    }
                    acc[i * n + j] += w * g1 * s;
                }
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::heat_kernel;
    use crate::markov::GeneratorMatrix;
    use crate::model::VolCurve;

    fn pure_heat_model() -> RegimeModel {
        // sigma = 1 so the diffusion coefficient is 1/2
        RegimeModel::scalar(1.0, 0.0, 0.0).unwrap()
    }

    fn two_regime_unit_vol() -> RegimeModel {
        let g = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        RegimeModel::new(
            g,
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![VolCurve::flat(1.0), VolCurve::flat(1.2)],
            0.5,
            1.5,
        )
        .unwrap()
    }

    // wide domain: the kernel tails must decay below the scheme floor
    // before they reach the extrapolated boundary nodes
    fn grids() -> (SpaceGrid, TimeGrid) {
        (SpaceGrid::new(-9.0, 9.0, 901).unwrap(), TimeGrid::new(1.0, 400).unwrap())
    }

    #[test]
    fn pure_heat_column_matches_heat_kernel() {
        let model = pure_heat_model();
        let (sg, tg) = grids();
        let col = numeric_fundamental_column(&model, 0, &sg, &tg).unwrap();
        let mut worst = 0.0f64;
        for k in 0..sg.m() {
            let want = heat_kernel(sg.node(k), 1.0, 0.5);
            worst = worst.max((col.at(0, k, tg.steps()) - want).abs());
        }
        assert!(worst < 2e-3, "sup error {worst}");
    }

    #[test]
    fn decoupled_source_stays_in_its_regime() {
        let g = GeneratorMatrix::new(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let model = RegimeModel::new(
            g,
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![VolCurve::flat(1.0), VolCurve::flat(1.0)],
            0.5,
            1.5,
        )
        .unwrap();
        let (sg, tg) = grids();
        let col = numeric_fundamental_column(&model, 0, &sg, &tg).unwrap();
        for l in 0..=tg.steps() {
            for k in 0..sg.m() {
                assert!(col.at(1, k, l).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn irreducible_columns_turn_strictly_positive() {
        let model = two_regime_unit_vol();
        let (sg, tg) = grids();
        for j in 0..2 {
            let col = numeric_fundamental_column(&model, j, &sg, &tg).unwrap();
            let l = tg.index_of(0.5).unwrap();
            for k in sg.window_indices(-1.0, 1.0).unwrap() {
                for i in 0..2 {
                    assert!(col.at(i, k, l) > 0.0, "entry ({i},{j}) at node {k}");
                }
            }
        }
    }

    #[test]
    fn kernel_entries_never_undershoot_scheme_floor() {
        let model = two_regime_unit_vol();
        let (sg, tg) = grids();
        for j in 0..2 {
            let col = numeric_fundamental_column(&model, j, &sg, &tg).unwrap();
            for l in 0..=tg.steps() {
                for i in 0..2 {
                    for k in 0..sg.m() {
                        assert!(col.at(i, k, l) >= -SCHEME_FLOOR);
                    }
                }
            }
        }
    }

    #[test]
    fn lower_bound_matrix_limits() {
        // zero coupling, coincident points, unit constants: identity matrix
        let p = LowerBoundParams::new(1.0, 1.0, vec![0.0, 0.0, 0.0, 0.0], 2).unwrap();
        let m = lower_bound_matrix(&p, 0.3, 0.3, 1.0).unwrap();
        assert_eq!(m, vec![1.0, 0.0, 0.0, 1.0]);

        // symmetric generator at unit constants: exp(sqrt(pi) B*)
        let p = LowerBoundParams::new(1.0, 1.0, vec![-1.0, 1.0, 1.0, -1.0], 2).unwrap();
        let m = lower_bound_matrix(&p, 0.0, 0.0, 1.0).unwrap();
        let s = sqrt(core::f64::consts::PI);
        let diag = 0.5 * (1.0 + exp(-2.0 * s));
        let off = 0.5 * (1.0 - exp(-2.0 * s));
        for (got, want) in m.iter().zip([diag, off, off, diag]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn heat_kernel_dominates_calibrated_bound_analytically() {
        // 1/sqrt(2 pi) ~ 0.3989: delta0 = 0.39 at eps0 = 0.5 fits under the kernel
        let taus = [0.1, 0.25, 0.5, 0.75, 1.0];
        let mut min_gap = f64::INFINITY;
        for &tau in &taus {
            let mut y = -2.0;
            while y <= 2.0 {
                let bound = 0.39 * gauss_factor(0.5, y, tau);
                min_gap = min_gap.min(heat_kernel(y, tau, 0.5) - bound);
                y += 0.01;
            }
        }
        assert!(min_gap >= 0.0, "min gap {min_gap}");
        // delta0 = 10 overshoots the kernel peak
        let bound = 10.0 * gauss_factor(0.5, 0.0, 1.0);
        assert!(heat_kernel(0.0, 1.0, 0.5) - bound < 0.0);
    }

    #[test]
    fn pure_heat_bound_verifies_and_calibrates() {
        let model = pure_heat_model();
        let (sg, tg) = grids();
        let params = LowerBoundParams::from_model(&model, 0.39, 0.5).unwrap();
        let taus: Vec<f64> = (1..=10).map(|k| k as f64 * 0.1).collect();
        let report =
            verify_positivity_bound(&model, &params, (-2.0, 2.0), &taus, &sg, &tg).unwrap();
        assert!(!report.violated, "min gap {}", report.min_gap);
        // the feasibility boundary sits at the kernel peak ratio 1/sqrt(2 pi)
        assert!(
            (report.delta0_star - 0.3989).abs() < 5e-3,
            "delta0_star {}",
            report.delta0_star
        );
        // an oversized delta0 is flagged
        let big = LowerBoundParams::from_model(&model, 10.0, 0.5).unwrap();
        let report =
            verify_positivity_bound(&model, &big, (-2.0, 2.0), &taus, &sg, &tg).unwrap();
        assert!(report.violated);
    }

    #[test]
    fn two_regime_bound_calibrates_positive_delta0() {
        let model = two_regime_unit_vol();
        let (sg, tg) = grids();
        let params = LowerBoundParams::from_model(&model, 0.05, 0.5).unwrap();
        let taus: Vec<f64> = (1..=10).map(|k| k as f64 * 0.1).collect();
        let report =
            verify_positivity_bound(&model, &params, (-2.0, 2.0), &taus, &sg, &tg).unwrap();
        assert!(!report.violated, "min gap {}", report.min_gap);
        assert!(report.delta0_star > 0.0);
    }

    #[test]
    fn gaussian_factor_semigroup_identity() {
        // p_{t1} * p_{t2} = sqrt(pi / eps0) p_{t1 + t2}
        let eps0 = 1.0;
        let (t1, t2) = (0.3, 0.5);
        let dz = 0.005;
        let half = 10.0;
        let steps = (2.0 * half / dz) as usize;
        let mut x = -1.0;
        while x <= 1.0 {
            let mut conv = 0.0;
            for i in 0..=steps {
                let z = -half + i as f64 * dz;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                conv += w * gauss_factor(eps0, x - z, t1) * gauss_factor(eps0, z, t2) * dz;
            }
            let want = sqrt(core::f64::consts::PI / eps0) * gauss_factor(eps0, x, t1 + t2);
            assert!((conv - want).abs() < 1e-6, "x = {x}: {conv} vs {want}");
            x += 0.25;
        }
    }

    #[test]
    fn series_terms_match_closed_form_and_accumulate_monotonically() {
        let delta0 = 0.4;
        let eps0 = 0.5;
        // nonnegative coupling with zero diagonal
        let b = vec![0.0, 1.0, 0.5, 0.0];
        let (y, tau) = (0.3, 0.8);
        let mut partial = vec![0.0; 4];
        for p in 1..=3 {
            let quad =
                series_term_quadrature(delta0, eps0, &b, 2, p, y, tau, 8.0, 81, 16);
            let closed = series_term_closed(delta0, eps0, &b, 2, p, y, tau);
            for (q, c) in quad.iter().zip(&closed) {
                if *c > 1e-12 {
                    assert!((q / c - 1.0).abs() < 0.05, "term {p}: {q} vs {c}");
                } else {
                    assert!(q.abs() < 1e-10);
                }
            }
            let before = partial.clone();
            for (acc, q) in partial.iter_mut().zip(&quad) {
                *acc += q;
            }
            for (after, before) in partial.iter().zip(&before) {
                assert!(after >= before, "series term decreased an entry");
            }
        }
    }
}
