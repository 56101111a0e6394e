//! State-price density extraction: the second strike derivative of the
//! call surface is the regime-indexed density of the terminal state.

use alloc::vec;
use alloc::vec::Vec;

use crate::backward::{price_at_spot, solve_backward, Payoff, PayoffSpec, PriceSurface};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::model::{ObservationSpec, RegimeModel};
use crate::{Error, Result};

/// Density surface on the interior strikes of the originating price
/// surface (boundary strikes dropped: one-sided second derivatives are
/// truncation-polluted and not exported).
#[derive(Debug, Clone)]
pub struct DensitySurface {
    pub n: usize,
    pub strikes: Vec<f64>,
    values: Vec<f64>,
}

impl DensitySurface {
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.n + j) * self.strikes.len() + k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StrikeSpacing {
    Uniform,
    LogUniform,
    Irregular,
}

fn classify_spacing(strikes: &[f64]) -> StrikeSpacing {
    let d0 = strikes[1] - strikes[0];
    if strikes.windows(2).all(|w| ((w[1] - w[0]) - d0).abs() <= 1e-9 * d0.abs().max(1.0)) {
        return StrikeSpacing::Uniform;
    }
    let l0 = libm::log(strikes[1] / strikes[0]);
    if strikes
        .windows(2)
        .all(|w| (libm::log(w[1] / w[0]) - l0).abs() <= 1e-9 * l0.abs().max(1e-12))
    {
        return StrikeSpacing::LogUniform;
    }
    StrikeSpacing::Irregular
}

/// Second strike derivative on the interior strikes.
///
/// Uniform grids use the central stencil; log-uniform grids differentiate
/// in log-strike and map back through `d^2/dK^2 = (d^2/dy^2 - d/dy) / K^2`;
/// anything else falls back to the three-point non-uniform stencil.
pub fn extract_density(surface: &PriceSurface) -> Result<DensitySurface> {
    let nk = surface.strikes.len();
    if nk < 5 {
        return Err(Error::TooFewStrikes { got: nk });
    }
    let n = surface.n;
    let inner = nk - 2;
    let spacing = classify_spacing(&surface.strikes);
    let mut values = vec![0.0; n * n * inner];
    for i in 0..n {
        for j in 0..n {
            for k in 1..nk - 1 {
                let d2 = match spacing {
                    StrikeSpacing::Uniform => {
                        let h = surface.strikes[1] - surface.strikes[0];
                        (surface.price(i, j, k - 1) - 2.0 * surface.price(i, j, k)
                            + surface.price(i, j, k + 1))
                            / (h * h)
                    }
                    StrikeSpacing::LogUniform => {
                        let dy = libm::log(surface.strikes[1] / surface.strikes[0]);
                        let c0 = surface.price(i, j, k - 1);
                        let c1 = surface.price(i, j, k);
                        let c2 = surface.price(i, j, k + 1);
                        let d2y = (c0 - 2.0 * c1 + c2) / (dy * dy);
                        let d1y = (c2 - c0) / (2.0 * dy);
                        let kk = surface.strikes[k];
                        (d2y - d1y) / (kk * kk)
                    }
                    StrikeSpacing::Irregular => {
                        let h0 = surface.strikes[k] - surface.strikes[k - 1];
                        let h1 = surface.strikes[k + 1] - surface.strikes[k];
                        let c0 = surface.price(i, j, k - 1);
                        let c1 = surface.price(i, j, k);
                        let c2 = surface.price(i, j, k + 1);
                        2.0 * (c0 / (h0 * (h0 + h1)) - c1 / (h0 * h1)
                            + c2 / (h1 * (h0 + h1)))
                    }
                };
                values[(i * n + j) * inner + (k - 1)] = d2;
            }
        }
    }
    Ok(DensitySurface { n, strikes: surface.strikes[1..nk - 1].to_vec(), values })
}

/// Strikes at `exp` of the grid nodes covering `[lo, hi]`: log-uniform and
/// aligned so every strike kink lands exactly on a node of the pricing grid.
pub fn log_uniform_strikes(grid: &SpaceGrid, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter("need 0 < lo < hi"));
    }
    let range = grid.window_indices(libm::log(lo), libm::log(hi))?;
    Ok(range.map(|k| libm::exp(grid.node(k))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassRow {
    pub payoff_regime: usize,
    /// Integrated density over the strike window.
    pub mass: f64,
    /// Price of the matching regime-digital bond from the backward solver.
    pub bond_price: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct MassReport {
    pub rows: Vec<MassRow>,
}

/// Compare the integrated density in the observed column against the
/// regime-digital bond prices. Needs a strike window wide enough to hold
/// essentially all of the mass.
pub fn density_mass_check(
    density: &DensitySurface,
    model: &RegimeModel,
    obs: &ObservationSpec,
    grid: &SpaceGrid,
    tg: &TimeGrid,
) -> Result<MassReport> {
    let n = model.n();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        // trapezoid over the (possibly non-uniform) strike grid
        let mut mass = 0.0;
        for k in 1..density.strikes.len() {
            let dk = density.strikes[k] - density.strikes[k - 1];
            mass += 0.5 * dk * (density.value(i, obs.j_star, k) + density.value(i, obs.j_star, k - 1));
        }
        let mut pi = vec![0.0; n];
        pi[i] = 1.0;
        let payoff = PayoffSpec { payoff: Payoff::Bond, pi, maturity: obs.tau_star };
        let field = solve_backward(model, &payoff, grid, tg)?;
        let bond_price = price_at_spot(&field, grid, obs.j_star);
        rows.push(MassRow { payoff_regime: i, mass, bond_price, gap: (mass - bond_price).abs() });
    }
    Ok(MassReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::lognormal_density;
    use crate::backward::price_surface;
    use crate::markov::GeneratorMatrix;
    use crate::model::VolCurve;
    use libm::exp;

    fn wide_strikes(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
    }

    fn grids() -> (SpaceGrid, TimeGrid) {
        (SpaceGrid::default_domain(), TimeGrid::new(1.0, 400).unwrap())
    }

    #[test]
    fn too_few_strikes_rejected() {
        let model = RegimeModel::scalar(0.2, 0.0, 0.0).unwrap();
        let (sg, tg) = grids();
        let surface = price_surface(&model, &[0.9, 1.0, 1.1], 1.0, &sg, &tg).unwrap();
        assert!(matches!(extract_density(&surface), Err(Error::TooFewStrikes { got: 3 })));
    }

    #[test]
    fn scalar_density_matches_lognormal() {
        let model = RegimeModel::scalar(0.2, 0.0, 0.0).unwrap();
        let (sg, tg) = grids();
        let strikes = log_uniform_strikes(&sg, 0.4, 2.2).unwrap();
        let surface = price_surface(&model, &strikes, 1.0, &sg, &tg).unwrap();
        let density = extract_density(&surface).unwrap();
        let mut worst = 0.0f64;
        for (k, &strike) in density.strikes.iter().enumerate() {
            if !(0.6..=1.6).contains(&strike) {
                continue;
            }
            let want = lognormal_density(strike, 1.0, 0.0, 0.0, 0.2, 1.0);
            worst = worst.max((density.value(0, 0, k) - want).abs());
        }
        assert!(worst < 5e-3, "sup error {worst}");
    }

    #[test]
    fn deep_itm_region_has_no_density() {
        // for tiny strikes the call is affine in K and the density vanishes
        let model = RegimeModel::scalar(0.2, 0.0, 0.0).unwrap();
        let (sg, tg) = grids();
        let strikes = wide_strikes(0.05, 0.30, 11);
        let surface = price_surface(&model, &strikes, 1.0, &sg, &tg).unwrap();
        let density = extract_density(&surface).unwrap();
        for k in 0..density.strikes.len() {
            assert!(density.value(0, 0, k).abs() < 1e-6);
        }
    }

    #[test]
    fn decoupled_cross_density_vanishes() {
        let g = GeneratorMatrix::new(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let model = RegimeModel::new(
            g,
            vec![0.02, 0.05],
            vec![0.0, 0.0],
            vec![VolCurve::flat(0.2), VolCurve::flat(0.3)],
            0.1,
            0.4,
        )
        .unwrap();
        let (sg, tg) = grids();
        let strikes = wide_strikes(0.5, 2.0, 61);
        let surface = price_surface(&model, &strikes, 1.0, &sg, &tg).unwrap();
        let density = extract_density(&surface).unwrap();
        for k in 0..density.strikes.len() {
            assert!(density.value(0, 1, k).abs() < 1e-8);
            assert!(density.value(1, 0, k).abs() < 1e-8);
        }
    }

    #[test]
    fn scalar_mass_equals_discount_factor() {
        let model = RegimeModel::scalar(0.2, 0.05, 0.0).unwrap();
        let (sg, tg) = grids();
        let obs = ObservationSpec::new(0, 1, 1.0).unwrap();
        let strikes = wide_strikes(0.2, 3.0, 201);
        let surface = price_surface(&model, &strikes, 1.0, &sg, &tg).unwrap();
        let density = extract_density(&surface).unwrap();
        let report = density_mass_check(&density, &model, &obs, &sg, &tg).unwrap();
        let want = exp(-0.05f64);
        assert!((report.rows[0].mass - want).abs() < 2e-3, "{:?}", report.rows[0]);
    }

    #[test]
    fn decoupled_cross_mass_vanishes_and_total_mass_is_one() {
        let g0 = GeneratorMatrix::new(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let decoupled = RegimeModel::new(
            g0,
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![VolCurve::flat(0.2), VolCurve::flat(0.3)],
            0.1,
            0.4,
        )
        .unwrap();
        let (sg, tg) = grids();
        let obs = ObservationSpec::new(0, 2, 1.0).unwrap();
        let strikes = wide_strikes(0.2, 3.5, 221);
        let surface = price_surface(&decoupled, &strikes, 1.0, &sg, &tg).unwrap();
        let density = extract_density(&surface).unwrap();
        let report = density_mass_check(&density, &decoupled, &obs, &sg, &tg).unwrap();
        assert!(report.rows[1].mass.abs() < 1e-6, "{:?}", report.rows[1]);

        let g = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let coupled = RegimeModel::new(
            g,
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![VolCurve::flat(0.2), VolCurve::flat(0.3)],
            0.1,
            0.4,
        )
        .unwrap();
        let surface = price_surface(&coupled, &strikes, 1.0, &sg, &tg).unwrap();
        let density = extract_density(&surface).unwrap();
        let report = density_mass_check(&density, &coupled, &obs, &sg, &tg).unwrap();
        let total: f64 = report.rows.iter().map(|r| r.mass).sum();
        assert!((total - 1.0).abs() < 2e-3, "total mass {total}");
    }

    #[test]
    fn density_reprices_calls() {
        let g = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let model = RegimeModel::new(
            g,
            vec![0.03, 0.01],
            vec![0.0, 0.0],
            vec![VolCurve::flat(0.2), VolCurve::flat(0.35)],
            0.1,
            0.4,
        )
        .unwrap();
        let (sg, tg) = grids();
        let strikes = wide_strikes(0.2, 3.2, 151);
        let surface = price_surface(&model, &strikes, 1.0, &sg, &tg).unwrap();
        let density = extract_density(&surface).unwrap();
        let mut worst = 0.0f64;
        for (ks, &strike) in surface.strikes.iter().enumerate() {
            if !(0.7..=1.4).contains(&strike) {
                continue;
            }
            for i in 0..2 {
                for j in 0..2 {
                    let mut repriced = 0.0;
                    for k in 1..density.strikes.len() {
                        let dk = density.strikes[k] - density.strikes[k - 1];
                        let f0 = (density.strikes[k - 1] - strike).max(0.0)
                            * density.value(i, j, k - 1);
                        let f1 = (density.strikes[k] - strike).max(0.0)
                            * density.value(i, j, k);
                        repriced += 0.5 * dk * (f0 + f1);
                    }
                    worst = worst.max((repriced - surface.price(i, j, ks)).abs());
                }
            }
        }
        assert!(worst < 5e-3, "reprice error {worst}");
    }

    #[test]
    fn irreducible_density_is_nonnegative() {
        let g = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let model = RegimeModel::new(
            g,
            vec![0.05, 0.02],
            vec![0.0, 0.0],
            vec![VolCurve::flat(0.15), VolCurve::flat(0.35)],
            0.1,
            0.4,
        )
        .unwrap();
        let (sg, tg) = grids();
        let strikes = wide_strikes(0.5, 2.0, 76);
        let surface = price_surface(&model, &strikes, 1.0, &sg, &tg).unwrap();
        let density = extract_density(&surface).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..density.strikes.len() {
                    assert!(density.value(i, j, k) >= -1e-6);
                }
            }
        }
    }
}
