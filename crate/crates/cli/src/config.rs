//! Model configuration file handling.

use serde::Deserialize;

use rsvol_core::grid::SpaceGrid;
use rsvol_core::markov::GeneratorMatrix;
use rsvol_core::model::{RegimeModel, VolCurve};

use crate::CliError;

#[derive(Debug, Deserialize)]
pub struct ModelConfig {
    pub regimes: usize,
    pub generator: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    pub dividends: Vec<f64>,
    /// One curve per regime, each a list of `[y, sigma]` pairs.
    pub vol_curves: Vec<Vec<[f64; 2]>>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Optional Gaussian pre-smoothing of the curves, in grid cells.
    #[serde(default)]
    pub smoothing_cells: Option<f64>,
}

pub fn load_model(path: &str, grid: &SpaceGrid) -> Result<RegimeModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read model file '{path}': {e}")))?;
    let cfg: ModelConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("model file '{path}': {e}")))?;
    build_model(&cfg, grid)
}

pub fn build_model(cfg: &ModelConfig, grid: &SpaceGrid) -> Result<RegimeModel, CliError> {
    if cfg.vol_curves.len() != cfg.regimes {
        return Err(CliError::Config(format!(
            "expected {} volatility curves, got {}",
            cfg.regimes,
            cfg.vol_curves.len()
        )));
    }
    if cfg.generator.len() != cfg.regimes {
        return Err(CliError::Config(format!(
            "expected a {0}x{0} generator, got {1} rows",
            cfg.regimes,
            cfg.generator.len()
        )));
    }
    let generator = GeneratorMatrix::new(&cfg.generator)?;
    let mut curves = Vec::with_capacity(cfg.regimes);
    for points in &cfg.vol_curves {
        let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
        let mut curve = VolCurve::new(&pts)?;
        if let Some(cells) = cfg.smoothing_cells {
            if cells > 0.0 {
                curve = curve.smoothed(grid, cells);
            }
        }
        curves.push(curve);
    }
    Ok(RegimeModel::new(
        generator,
        cfg.rates.clone(),
        cfg.dividends.clone(),
        curves,
        cfg.sigma_min,
        cfg.sigma_max,
    )?)
}
