//! CSV and JSON artifact writers. Floats are serialized with 17
//! significant digits so artifacts round-trip and diff exactly.

use std::fmt::Write as _;
use std::io::Write as _;

use rsvol_core::backward::PriceSurface;
use rsvol_core::density::DensitySurface;
use rsvol_core::funsol::PositivityReport;
use rsvol_core::grid::{SolutionField, SpaceGrid, TimeGrid};
use rsvol_core::inverse::{NormGrowthReport, Perturbation, StabilityReport};

use crate::CliError;

pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn json_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

pub fn write_file(path: &str, content: &str) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("cannot create '{path}': {e}")))?;
    f.write_all(content.as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write '{path}': {e}")))?;
    Ok(())
}

/// Emit either to the path or to stdout when no path is given.
pub fn emit(path: Option<&str>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

pub fn field_csv(field: &SolutionField, grid: &SpaceGrid, tg: &TimeGrid) -> String {
    let n = field.components();
    let mut out = String::from("y,tau");
    for i in 1..=n {
        let _ = write!(out, ",component_{i}");
    }
    out.push('\n');
    for l in 0..=field.steps() {
        let tau = tg.time(l);
        for k in 0..grid.m() {
            let _ = write!(out, "{},{}", fmt17(grid.node(k)), fmt17(tau));
            for i in 0..n {
                let _ = write!(out, ",{}", fmt17(field.at(i, k, l)));
            }
            out.push('\n');
        }
    }
    out
}

pub fn surface_csv(surface: &PriceSurface) -> String {
    let mut out = String::from("K,i,j,price\n");
    for (ks, &strike) in surface.strikes.iter().enumerate() {
        for i in 0..surface.n {
            for j in 0..surface.n {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt17(strike),
                    i + 1,
                    j + 1,
                    fmt17(surface.price(i, j, ks))
                );
            }
        }
    }
    out
}

pub fn density_csv(density: &DensitySurface) -> String {
    let mut out = String::from("K,i,j,density\n");
    for (ks, &strike) in density.strikes.iter().enumerate() {
        for i in 0..density.n {
            for j in 0..density.n {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt17(strike),
                    i + 1,
                    j + 1,
                    fmt17(density.value(i, j, ks))
                );
            }
        }
    }
    out
}

pub fn perturbation_csv(g: &Perturbation, grid: &SpaceGrid) -> String {
    let n = g.components();
    let mut out = String::from("y");
    for i in 1..=n {
        let _ = write!(out, ",g_{i}");
    }
    out.push('\n');
    for k in 0..grid.m() {
        let _ = write!(out, "{}", fmt17(grid.node(k)));
        for i in 0..n {
            let _ = write!(out, ",{}", fmt17(g.value(i, k)));
        }
        out.push('\n');
    }
    out
}

pub fn positivity_json(report: &PositivityReport) -> String {
    format!(
        "{{\"min_gap\": {}, \"delta0_star\": {}, \"violated\": {}}}\n",
        json_f(report.min_gap),
        json_f(report.delta0_star),
        report.violated
    )
}

pub fn stability_json(report: &StabilityReport) -> String {
    let mut out = String::from("[\n");
    for (idx, row) in report.rows.iter().enumerate() {
        let ratio = match row.ratio {
            Some(r) => json_f(r),
            None => "null".into(),
        };
        let _ = write!(
            out,
            "  {{\"amplitude\": {}, \"lhs\": {}, \"rhs\": {}, \"ratio\": {}, \"unstable\": {}",
            json_f(row.amplitude),
            json_f(row.lhs),
            json_f(row.rhs),
            ratio,
            row.unstable
        );
        if let (Some(h1), Some(tail)) = (row.extra_h1, row.extra_tail) {
            let _ = write!(out, ", \"extra_h1\": {}, \"extra_tail\": {}", json_f(h1), json_f(tail));
        }
        out.push_str(if idx + 1 < report.rows.len() { "},\n" } else { "}\n" });
    }
    out.push_str("]\n");
    out
}

pub fn norm_growth_json(report: &NormGrowthReport) -> String {
    let mut out = String::from("{\n  \"rows\": [\n");
    for (idx, row) in report.rows.iter().enumerate() {
        let _ = write!(
            out,
            "    {{\"tau\": {}, \"l2_ratio\": {}, \"l2_sqrt_tau_ratio\": {}, \"h1_ratio\": {}}}",
            json_f(row.tau),
            json_f(row.l2_ratio),
            json_f(row.l2_sqrt_tau_ratio),
            json_f(row.h1_ratio)
        );
        out.push_str(if idx + 1 < report.rows.len() { ",\n" } else { "\n" });
    }
    let _ = write!(
        out,
        "  ],\n  \"c_l2\": {},\n  \"c_h1\": {}\n}}\n",
        json_f(report.c_l2),
        json_f(report.c_h1)
    );
    out
}

pub fn mc_json(price: f64, std_error: f64, paths: usize, steps: usize, seed: u64) -> String {
    format!(
        "{{\"price\": {}, \"std_error\": {}, \"paths\": {paths}, \"steps\": {steps}, \"seed\": {seed}}}\n",
        json_f(price),
        json_f(std_error)
    )
}
