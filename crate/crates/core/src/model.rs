//! Model definition: per-regime volatility curves, rates and dividends on
//! top of a validated generator.

use alloc::vec::Vec;
use libm::{exp, sqrt};

use crate::grid::SpaceGrid;
use crate::markov::GeneratorMatrix;
use crate::{Error, Result};

/// Piecewise-linear volatility curve in log-moneyness `y = ln(S/S*)`,
/// extrapolated flat beyond the end knots.
#[derive(Debug, Clone, PartialEq)]
pub struct VolCurve {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl VolCurve {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty volatility curve"));
        }
        let mut knots = Vec::with_capacity(points.len());
        let mut values = Vec::with_capacity(points.len());
        for &(y, sigma) in points {
            if !y.is_finite() || !sigma.is_finite() {
                return Err(Error::InvalidParameter("non-finite curve point"));
            }
            if let Some(&last) = knots.last() {
                if y <= last {
                    return Err(Error::InvalidParameter("curve knots must be strictly increasing"));
                }
            }
            knots.push(y);
            values.push(sigma);
        }
        Ok(Self { knots, values })
    }

    /// Constant volatility.
    pub fn flat(sigma: f64) -> Self {
        Self { knots: alloc::vec![0.0], values: alloc::vec![sigma] }
    }

    /// Evaluate at `y`: linear between knots, flat outside.
    pub fn value(&self, y: f64) -> f64 {
        let k = &self.knots;
        let v = &self.values;
        if y <= k[0] {
            return v[0];
        }
        if y >= *k.last().unwrap() {
            return *v.last().unwrap();
        }
        // partition point: first knot > y
        let hi = k.partition_point(|&x| x <= y);
        let lo = hi - 1;
        let t = (y - k[lo]) / (k[hi] - k[lo]);
        v[lo] + t * (v[hi] - v[lo])
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Gaussian smoothing pass: resample on the grid, convolve with a
    /// discrete Gaussian of standard deviation `width_cells * dy`, and return
    /// the smoothed curve with knots at the grid nodes.
    pub fn smoothed(&self, grid: &SpaceGrid, width_cells: f64) -> Self {
        let m = grid.m();
        let dy = grid.dy();
        let sigma = width_cells * dy;
        let half = (4.0 * width_cells) as usize + 1;
        let mut weights = Vec::with_capacity(2 * half + 1);
        let mut wsum = 0.0;
        for o in -(half as isize)..=(half as isize) {
            let z = o as f64 * dy / sigma;
            let w = exp(-0.5 * z * z);
            weights.push(w);
            wsum += w;
        }
        let mut knots = Vec::with_capacity(m);
        let mut values = Vec::with_capacity(m);
        for k in 0..m {
            let y = grid.node(k);
            let mut acc = 0.0;
            for (idx, o) in (-(half as isize)..=(half as isize)).enumerate() {
                acc += weights[idx] * self.value(y + o as f64 * dy);
            }
            knots.push(y);
            values.push(acc / wsum);
        }
        Self { knots, values }
    }
}

/// Complete regime-switching local volatility model.
#[derive(Debug, Clone)]
pub struct RegimeModel {
    n: usize,
    generator: GeneratorMatrix,
    rates: Vec<f64>,
    dividends: Vec<f64>,
    vols: Vec<VolCurve>,
    sigma_min: f64,
    sigma_max: f64,
}

impl RegimeModel {
    pub fn new(
        generator: GeneratorMatrix,
        rates: Vec<f64>,
        dividends: Vec<f64>,
        vols: Vec<VolCurve>,
        sigma_min: f64,
        sigma_max: f64,
    ) -> Result<Self> {
        let n = generator.n();
        if rates.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: rates.len() });
        }
        if dividends.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: dividends.len() });
        }
        if vols.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: vols.len() });
        }
        if !(sigma_min > 0.0) || !(sigma_max >= sigma_min) || !sigma_max.is_finite() {
            return Err(Error::InvalidParameter("need 0 < sigma_min <= sigma_max < inf"));
        }
        for (j, curve) in vols.iter().enumerate() {
            let lo = curve.min_value();
            let hi = curve.max_value();
            if lo < sigma_min || hi > sigma_max || lo <= 0.0 {
                let value = if lo < sigma_min || lo <= 0.0 { lo } else { hi };
                return Err(Error::VolOutOfBounds { regime: j, value });
            }
        }
        Ok(Self { n, generator, rates, dividends, vols, sigma_min, sigma_max })
    }

    /// Single-regime model, handy for scalar sanity checks.
    pub fn scalar(sigma: f64, rate: f64, dividend: f64) -> Result<Self> {
        let g = GeneratorMatrix::new(&[alloc::vec![0.0]])?;
        Self::new(
            g,
            alloc::vec![rate],
            alloc::vec![dividend],
            alloc::vec![VolCurve::flat(sigma)],
            (sigma * 0.5).min(1e-4),
            sigma * 2.0 + 1.0,
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.generator
    }

    pub fn rate(&self, j: usize) -> f64 {
        self.rates[j]
    }

    pub fn dividend(&self, j: usize) -> f64 {
        self.dividends[j]
    }

    pub fn vol_curve(&self, j: usize) -> &VolCurve {
        &self.vols[j]
    }

    pub fn sigma(&self, j: usize, y: f64) -> f64 {
        self.vols[j].value(y)
    }

    pub fn sigma_bounds(&self) -> (f64, f64) {
        (self.sigma_min, self.sigma_max)
    }

    /// Diffusion coefficient `a_j(y) = sigma_j(y)^2 / 2`.
    pub fn diffusion_coefficient(&self, j: usize, y: f64) -> f64 {
        let s = self.sigma(j, y);
        0.5 * s * s
    }

    /// Same model with replacement volatility curves; bounds are re-derived
    /// from the new curves so bumped models remain valid.
    pub fn with_vols(&self, vols: Vec<VolCurve>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &vols {
            lo = lo.min(c.min_value());
            hi = hi.max(c.max_value());
        }
        if !(lo > 0.0) {
            return Err(Error::VolOutOfBounds { regime: 0, value: lo });
        }
        Self::new(
            self.generator.clone(),
            self.rates.clone(),
            self.dividends.clone(),
            vols,
            lo,
            hi,
        )
    }

    /// Volatility implied by a diffusion level: `sigma = sqrt(2 a)`.
    pub fn sigma_from_diffusion(a: f64) -> f64 {
        sqrt(2.0 * a.max(0.0))
    }
}

/// Where and when the market is observed: regime `j_star` (zero-based),
/// spot normalized to 1, time to maturity `tau_star`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationSpec {
    pub j_star: usize,
    pub tau_star: f64,
}

impl ObservationSpec {
    pub fn new(j_star: usize, n: usize, tau_star: f64) -> Result<Self> {
        if j_star >= n {
            return Err(Error::InvalidParameter("observed regime out of range"));
        }
        if !(tau_star > 0.0) || !tau_star.is_finite() {
            return Err(Error::InvalidParameter("tau_star must be positive"));
        }
        Ok(Self { j_star, tau_star })
    }
}
