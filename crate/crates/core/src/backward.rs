//! Backward pricing system for regime-indexed European calls.
//!
//! After the log transform `x = ln S` and time reversal `tau = T - t` the
//! value row-vector satisfies a uniformly parabolic system coupled through
//! the generator in the zeroth-order term; component `j` sees
//!
//! ```text
//! d v_j / d tau = a_j v_j'' + (r_j - q_j - a_j) v_j' + sum_i b[i][j] v_i - r_j v_j
//! ```
//!
//! marched from the payoff at `tau = 0` to the maturity.

use alloc::vec;
use alloc::vec::Vec;
use libm::exp;

use crate::grid::{SolutionField, SpaceGrid, TimeGrid};
use crate::model::RegimeModel;
use crate::stepper::{march, OperatorCoeffs, StepperParams};
use crate::{Error, Result};

/// Terminal payoff kind, as a function of the asset price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    /// `max(S - K, 0)`.
    Call { strike: f64 },
    /// Pays 1 regardless of the asset (regime-digital bonds via the weights).
    Bond,
}

/// Payoff `F(S, X) = payoff(S) * pi(X)` with per-regime weights `pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffSpec {
    pub payoff: Payoff,
    pub pi: Vec<f64>,
    pub maturity: f64,
}

impl PayoffSpec {
    /// Call paying only in terminal regime `i` (zero-based).
    pub fn regime_call(strike: f64, i: usize, n: usize, maturity: f64) -> Self {
        let mut pi = vec![0.0; n];
        pi[i] = 1.0;
        Self { payoff: Payoff::Call { strike }, pi, maturity }
    }

    fn intrinsic(&self, s: f64) -> f64 {
        match self.payoff {
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Bond => 1.0,
        }
    }

    /// Nodal initial data in log space. The node whose cell straddles the
    /// strike kink takes the exact cell average of the payoff instead of the
    /// point value, so the discretization error is smooth in the strike
    /// rather than oscillating with the kink's offset inside a cell.
    fn nodal_value(&self, y: f64, half_cell: f64) -> f64 {
        if let Payoff::Call { strike } = self.payoff {
            if strike > 0.0 {
                let b = libm::log(strike);
                if b > y - half_cell && b < y + half_cell {
                    let upper = libm::exp(y + half_cell) - strike * (1.0 + y + half_cell - b);
                    return upper / (2.0 * half_cell);
                }
            }
        }
        self.intrinsic(exp(y))
    }
}

pub(crate) fn backward_operator(
    model: &RegimeModel,
    grid: &SpaceGrid,
) -> OperatorCoeffs {
    let n = model.n();
    let m = grid.m();
    let mut op = OperatorCoeffs::zeros(n, m);
    let dy = grid.dy();
    let dy2 = dy * dy;
    for j in 0..n {
        let rq = model.rate(j) - model.dividend(j);
        for k in 0..m {
            let a = model.diffusion_coefficient(j, grid.node(k));
            let c = rq - a;
            op.sub[j * m + k] = a / dy2 - c / (2.0 * dy);
            op.diag[j * m + k] = -2.0 * a / dy2;
            op.sup[j * m + k] = a / dy2 + c / (2.0 * dy);
        }
    }
    // component j couples through column j of the generator, minus the rate
    let b = model.generator();
    for j in 0..n {
        for i in 0..n {
            op.coupling[j * n + i] = b.entry(i, j);
        }
        op.coupling[j * n + j] -= model.rate(j);
    }
    op
}

/// Solve the backward system: `field.at(j, k, l)` is the value in regime `j`
/// at `x = node(k)`, time-to-maturity `l * dtau`.
pub fn solve_backward(
    model: &RegimeModel,
    payoff: &PayoffSpec,
    grid: &SpaceGrid,
    tg: &TimeGrid,
) -> Result<SolutionField> {
    let n = model.n();
    if payoff.pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: payoff.pi.len() });
    }
    if !(payoff.maturity > 0.0) {
        return Err(Error::InvalidParameter("maturity must be positive"));
    }
    let m = grid.m();
    let half_cell = 0.5 * grid.dy();
    let mut init = vec![0.0; n * m];
    for j in 0..n {
        for k in 0..m {
            init[j * m + k] = payoff.pi[j] * payoff.nodal_value(grid.node(k), half_cell);
        }
    }
    let op = backward_operator(model, grid);
    march(&init, &op, tg, &StepperParams::default(), None)
}

/// Value at the normalized spot (`x = 0`) in regime `j` at the final step.
pub fn price_at_spot(field: &SolutionField, grid: &SpaceGrid, j: usize) -> f64 {
    field.at(j, grid.zero_index(), field.steps())
}

/// Matrix of generalized call prices over a strike grid:
/// `price(i, j, k)` is the value in regime `j` of the call paying
/// `max(S - K_k, 0)` only in terminal regime `i`.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    pub n: usize,
    pub strikes: Vec<f64>,
    prices: Vec<f64>,
}

impl PriceSurface {
    pub fn price(&self, i: usize, j: usize, k: usize) -> f64 {
        self.prices[(i * self.n + j) * self.strikes.len() + k]
    }

    /// Observed column: prices seen in regime `j_star`, one slice per
    /// payoff regime `i`.
    pub fn observed_column(&self, j_star: usize) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.strikes.len()).map(|k| self.price(i, j_star, k)).collect())
            .collect()
    }
}

/// Price the full matrix by one backward solve per (strike, payoff regime).
pub fn price_surface(
    model: &RegimeModel,
    strikes: &[f64],
    maturity: f64,
    grid: &SpaceGrid,
    tg: &TimeGrid,
) -> Result<PriceSurface> {
    let n = model.n();
    let s_lo = exp(grid.y_min());
    let s_hi = exp(grid.y_max());
    for &k in strikes {
        if !(k >= s_lo && k <= s_hi) {
            return Err(Error::InvalidParameter("strike outside grid range"));
        }
    }
    let mut prices = vec![0.0; n * n * strikes.len()];
    for i in 0..n {
        for (ks, &strike) in strikes.iter().enumerate() {
            let payoff = PayoffSpec::regime_call(strike, i, n, maturity);
            let field = solve_backward(model, &payoff, grid, tg)?;
            for j in 0..n {
                prices[(i * n + j) * strikes.len() + ks] = price_at_spot(&field, grid, j);
            }
        }
    }
    Ok(PriceSurface { n, strikes: strikes.to_vec(), prices })
}
