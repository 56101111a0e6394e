//! Subcommand implementations.

use rsvol_core::backward::{price_surface, Payoff, PayoffSpec};
use rsvol_core::density::{extract_density, log_uniform_strikes};
use rsvol_core::dupire::{solve_aux_density, solve_dupire, ForwardProblem};
use rsvol_core::funsol::{verify_positivity_bound, LowerBoundParams};
use rsvol_core::grid::{DomainWindows, SpaceGrid, TimeGrid};
use rsvol_core::inverse::{
    clip_source_density, expected_noise_misfit, hat_basis, reconstruct_with_matrix,
    sensitivity_column, stability_scan, AlphaRule, BumpSpec, DataMapWeights, HatFunction,
    Perturbation, ReconstructionConfig, ScanConfig, SensitivityMatrix, SupportMode,
};
use rsvol_core::mc::{mc_price, simulate_paths, McConfig};
use rsvol_core::model::{ObservationSpec, RegimeModel};

use crate::args::{parse_interval, parse_value_list, Flags};
use crate::config::load_model;
use crate::output;
use crate::CliError;

fn space_grid(flags: &Flags) -> Result<SpaceGrid, CliError> {
    let y_min = flags.f64_or("y-min", -4.0)?;
    let y_max = flags.f64_or("y-max", 4.0)?;
    let m = flags.usize_or("space-nodes", 401)?;
    Ok(SpaceGrid::new(y_min, y_max, m)?)
}

fn time_grid(flags: &Flags, horizon: f64) -> Result<TimeGrid, CliError> {
    let p = flags.usize_or("time-steps", 400)?;
    Ok(TimeGrid::new(horizon, p)?)
}

fn thread_count(flags: &Flags) -> Result<usize, CliError> {
    let default = std::env::var("RSVOL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(1);
    let t = flags.usize_or("threads", default)?;
    Ok(t.max(1))
}

pub fn price(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model")?, &sg)?;
    let strikes = parse_value_list("strikes", flags.required("strikes")?)?;
    let maturity = flags.f64_required("maturity")?;
    let _state = flags.state_index("state", model.n(), 0)?;
    let out = flags.required("out")?.to_string();
    let tg = time_grid(flags, maturity)?;
    flags.finish()?;
    let surface = price_surface(&model, &strikes, maturity, &sg, &tg)?;
    output::write_file(&out, &output::surface_csv(&surface))
}

pub fn dupire(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model")?, &sg)?;
    let j_star = flags.state_index("state", model.n(), 0)?;
    let tau_max = flags.f64_required("tau-max")?;
    let out = flags.required("out")?.to_string();
    let tg = time_grid(flags, tau_max)?;
    flags.finish()?;
    let obs = ObservationSpec::new(j_star, model.n(), tau_max)?;
    let field = solve_dupire(&ForwardProblem { model: &model, obs, space: &sg, time: &tg })?;
    output::write_file(&out, &output::field_csv(&field, &sg, &tg))
}

pub fn density_aux(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model")?, &sg)?;
    let j_star = flags.state_index("state", model.n(), 0)?;
    let tau_max = flags.f64_required("tau-max")?;
    let out = flags.required("out")?.to_string();
    let tg = time_grid(flags, tau_max)?;
    flags.finish()?;
    let obs = ObservationSpec::new(j_star, model.n(), tau_max)?;
    let field = solve_aux_density(&model, &obs, &sg, &tg)?;
    output::write_file(&out, &output::field_csv(&field, &sg, &tg))
}

pub fn density(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model")?, &sg)?;
    let maturity = flags.f64_required("maturity")?;
    let _state = flags.state_index("state", model.n(), 0)?;
    let out = flags.required("out")?.to_string();
    let window = match flags.optional("strikes") {
        Some(s) => parse_interval("strikes", s)?,
        None => (0.5, 2.0),
    };
    let tg = time_grid(flags, maturity)?;
    flags.finish()?;
    // strike grid aligned with the solver nodes: log-uniform, kinks on nodes
    let strikes = log_uniform_strikes(&sg, window.0, window.1)?;
    let surface = price_surface(&model, &strikes, maturity, &sg, &tg)?;
    let density = extract_density(&surface)?;
    output::write_file(&out, &output::density_csv(&density))
}

pub fn funsol_check(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model")?, &sg)?;
    let taus = parse_value_list("tau", flags.required("tau")?)?;
    let window = parse_interval("window", flags.optional("window").unwrap_or("-2:2"))?;
    let delta0 = flags.f64_or("delta0", 0.05)?;
    let eps0 = flags.f64_or("eps0", 0.5)?;
    let out = flags.optional("out").map(str::to_string);
    let horizon = taus.iter().cloned().fold(0.0f64, f64::max);
    let tg = time_grid(flags, horizon)?;
    flags.finish()?;
    // snap requested times onto the solver grid
    let taus: Vec<f64> = taus
        .iter()
        .map(|t| (t / tg.dtau()).round().max(1.0) * tg.dtau())
        .collect();
    let params = LowerBoundParams::from_model(&model, delta0, eps0)?;
    let report = verify_positivity_bound(&model, &params, window, &taus, &sg, &tg)?;
    output::emit(out.as_deref(), &output::positivity_json(&report))
}

pub fn mc(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model")?, &sg)?;
    let strike = flags.f64_required("strike")?;
    let maturity = flags.f64_required("maturity")?;
    let start = flags.state_index("state", model.n(), 0)?;
    let n_paths = flags.usize_or("paths", 100_000)?;
    let n_steps = flags.usize_or("steps", 250)?;
    let seed = flags.u64_or("seed", 1)?;
    let antithetic = flags.bool_flag("antithetic");
    // payoff weights: a specific terminal regime, or a classical call
    let pi = match flags.optional("payoff-regime") {
        Some(s) => {
            let one_based: usize = s.parse().map_err(|_| {
                CliError::Usage(format!("--payoff-regime: expected an integer, got '{s}'"))
            })?;
            if one_based < 1 || one_based > model.n() {
                return Err(CliError::Usage(format!(
                    "--payoff-regime: regime {one_based} outside 1..={}",
                    model.n()
                )));
            }
            let mut pi = vec![0.0; model.n()];
            pi[one_based - 1] = 1.0;
            pi
        }
        None => vec![1.0; model.n()],
    };
    let out = flags.optional("out").map(str::to_string);
    flags.finish()?;
    let obs = ObservationSpec::new(start, model.n(), maturity)?;
    let cfg = McConfig { n_paths, n_steps, seed, antithetic };
    let sample = simulate_paths(&model, &obs, &cfg)?;
    let payoff = PayoffSpec { payoff: Payoff::Call { strike }, pi, maturity };
    let est = mc_price(&sample, &payoff, antithetic)?;
    output::emit(out.as_deref(), &output::mc_json(est.price, est.std_error, n_paths, n_steps, seed))
}

fn windows_from_flags(flags: &Flags) -> Result<DomainWindows, CliError> {
    let defaults = DomainWindows::default_desk();
    let omega1 = match flags.optional("omega1") {
        Some(s) => parse_interval("omega1", s)?,
        None => defaults.omega1,
    };
    let omega = match flags.optional("omega") {
        Some(s) => parse_interval("omega", s)?,
        None => defaults.omega,
    };
    let omega_small = match flags.optional("omega-small") {
        Some(s) => {
            let parts: Vec<&str> = s.split(',').collect();
            if parts.len() != 2 {
                return Err(CliError::Usage(
                    "--omega-small: expected two intervals 'a:b,c:d'".into(),
                ));
            }
            [parse_interval("omega-small", parts[0])?, parse_interval("omega-small", parts[1])?]
        }
        None => defaults.omega_small,
    };
    Ok(DomainWindows::new(omega1, omega, omega_small)?)
}

/// Columns of a small numeric CSV: a coordinate column then one column per
/// regime component.
fn read_data_csv(path: &str, n: usize) -> Result<Vec<(f64, Vec<f64>)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read data file '{path}': {e}")))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 && line.chars().any(|c| c.is_alphabetic()) {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 1 {
            return Err(CliError::Config(format!(
                "data file '{path}' line {}: expected {} columns, got {}",
                lineno + 1,
                n + 1,
                fields.len()
            )));
        }
        let coord: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("data file '{path}': bad number")))?;
        let values: Result<Vec<f64>, _> =
            fields[1..].iter().map(|f| f.trim().parse::<f64>()).collect();
        let values = values
            .map_err(|_| CliError::Config(format!("data file '{path}': bad number")))?;
        rows.push((coord, values));
    }
    if rows.len() < 2 {
        return Err(CliError::Config(format!("data file '{path}': need at least two rows")));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(rows)
}

/// Linear interpolation of scattered samples onto the grid; zero outside
/// the sampled range.
fn interpolate_to_grid(rows: &[(f64, Vec<f64>)], comp: usize, grid: &SpaceGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.m()];
    for k in 0..grid.m() {
        let y = grid.node(k);
        if y < rows[0].0 || y > rows[rows.len() - 1].0 {
            continue;
        }
        let hi = rows.partition_point(|r| r.0 <= y).min(rows.len() - 1);
        let lo = hi.saturating_sub(1);
        if hi == lo {
            out[k] = rows[lo].1[comp];
        } else {
            let t = (y - rows[lo].0) / (rows[hi].0 - rows[lo].0);
            out[k] = rows[lo].1[comp] + t * (rows[hi].1[comp] - rows[lo].1[comp]);
        }
    }
    out
}

fn parallel_sensitivity(
    model: &RegimeModel,
    v: &rsvol_core::grid::SolutionField,
    windows: &DomainWindows,
    sg: &SpaceGrid,
    tg: &TimeGrid,
    basis: &[HatFunction],
    weights: DataMapWeights,
    threads: usize,
) -> Result<SensitivityMatrix, CliError> {
    let v = clip_source_density(model, v);
    let mut columns: Vec<Option<Vec<f64>>> = vec![None; basis.len()];
    if threads <= 1 {
        for (idx, hat) in basis.iter().enumerate() {
            columns[idx] = Some(sensitivity_column(model, &v, windows, sg, tg, hat, weights)?);
        }
    } else {
        let results: Vec<std::sync::Mutex<Option<rsvol_core::Result<Vec<f64>>>>> =
            (0..basis.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for worker in 0..threads {
                let v = &v;
                let results = &results;
                scope.spawn(move || {
                    for idx in (worker..basis.len()).step_by(threads) {
                        let col = sensitivity_column(
                            model, v, windows, sg, tg, &basis[idx], weights,
                        );
                        *results[idx].lock().unwrap() = Some(col);
                    }
                });
            }
        });
        for (idx, slot) in results.into_iter().enumerate() {
            let col = slot.into_inner().unwrap().expect("worker filled every slot")?;
            columns[idx] = Some(col);
        }
    }
    let columns: Vec<Vec<f64>> = columns.into_iter().map(Option::unwrap).collect();
    Ok(SensitivityMatrix::from_columns(basis.to_vec(), columns)?)
}

pub fn calibrate(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model-base")?, &sg)?;
    let n = model.n();
    let data_path = flags.required("data")?.to_string();
    let data_kind = flags.optional("data-kind").unwrap_or("w").to_string();
    let j_star = flags.state_index("state", n, 0)?;
    let tau_star = flags.f64_or("tau-star", 0.5)?;
    let basis_per_regime = flags.usize_or("basis", 25)?;
    let mode = match flags.optional("mode").unwrap_or("compact") {
        "compact" => SupportMode::Compact,
        "free" => SupportMode::Free,
        other => return Err(CliError::Usage(format!("--mode: unknown mode '{other}'"))),
    };
    let whiten = flags.bool_flag("whiten");
    let weights = if whiten {
        DataMapWeights::noise_whitened(sg.dy())
    } else {
        DataMapWeights::default()
    };
    let alpha_raw = flags.required("alpha")?.to_string();
    let noise_flag = flags.f64_or("noise-level", 0.0)?;
    let windows = windows_from_flags(flags)?;
    let out = flags.required("out")?.to_string();
    let threads = thread_count(flags)?;
    let tg = time_grid(flags, tau_star)?;
    flags.finish()?;

    let obs = ObservationSpec::new(j_star, n, tau_star)?;
    let rows = read_data_csv(&data_path, n)?;

    // difference field on the grid: either directly observed, or observed
    // call quotes minus the base model's forward prices
    let mut diff: Vec<Vec<f64>> = Vec::with_capacity(n);
    match data_kind.as_str() {
        "w" => {
            for i in 0..n {
                diff.push(interpolate_to_grid(&rows, i, &sg));
            }
        }
        "calls" => {
            let log_rows: Vec<(f64, Vec<f64>)> = rows
                .iter()
                .filter(|(k, _)| *k > 0.0)
                .map(|(k, v)| (k.ln(), v.clone()))
                .collect();
            if log_rows.len() < 2 {
                return Err(CliError::Config("calls data needs positive strikes".into()));
            }
            let base =
                solve_dupire(&ForwardProblem { model: &model, obs, space: &sg, time: &tg })?;
            for i in 0..n {
                let observed = interpolate_to_grid(&log_rows, i, &sg);
                let mut d = vec![0.0; sg.m()];
                let lo = log_rows[0].0;
                let hi = log_rows[log_rows.len() - 1].0;
                for k in 0..sg.m() {
                    let y = sg.node(k);
                    if y >= lo && y <= hi {
                        d[k] = observed[k] - base.at(i, k, tg.steps());
                    }
                }
                diff.push(d);
            }
        }
        other => {
            return Err(CliError::Usage(format!("--data-kind: unknown kind '{other}'")));
        }
    }

    let alpha = match alpha_raw.as_str() {
        "discrepancy" => {
            if !(noise_flag > 0.0) {
                return Err(CliError::Usage(
                    "--alpha discrepancy requires --noise-level > 0".into(),
                ));
            }
            AlphaRule::Discrepancy {
                noise_level: expected_noise_misfit(&sg, windows.omega, n, noise_flag, weights)?,
            }
        }
        s => AlphaRule::Fixed(crate::args::parse_f64("alpha", s)?),
    };

    let v = solve_aux_density(&model, &obs, &sg, &tg)?;
    let basis_window = match mode {
        SupportMode::Compact => windows.omega1,
        SupportMode::Free => windows.omega,
    };
    let basis = hat_basis(n, basis_window, basis_per_regime);
    let matrix =
        parallel_sensitivity(&model, &v, &windows, &sg, &tg, &basis, weights, threads)?;
    let refs: Vec<&[f64]> = diff.iter().map(|d| d.as_slice()).collect();
    let d = rsvol_core::inverse::h2_data_vector_weighted(&sg, &refs, windows.omega, weights)?;
    let cfg = ReconstructionConfig { basis_per_regime, alpha, mode, weights };
    let rec = reconstruct_with_matrix(&matrix, &d, &cfg, n, &sg, basis_window)?;
    output::write_file(&out, &output::perturbation_csv(&rec.perturbation, &sg))?;
    println!(
        "{{\"alpha\": {}, \"misfit\": {}, \"basis\": {}}}",
        output::fmt17(rec.alpha),
        output::fmt17(rec.misfit),
        basis.len()
    );
    Ok(())
}

fn parse_bumps(s: &str, n: usize) -> Result<Vec<BumpSpec>, CliError> {
    let mut bumps = Vec::new();
    for part in s.split(';') {
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() != 3 {
            return Err(CliError::Usage(
                "--bumps: expected 'regime:center:width' triples separated by ';'".into(),
            ));
        }
        let regime: usize = fields[0]
            .parse()
            .map_err(|_| CliError::Usage(format!("--bumps: bad regime '{}'", fields[0])))?;
        if regime < 1 || regime > n {
            return Err(CliError::Usage(format!("--bumps: regime {regime} outside 1..={n}")));
        }
        bumps.push(BumpSpec {
            regime: regime - 1,
            center: crate::args::parse_f64("bumps", fields[1])?,
            width: crate::args::parse_f64("bumps", fields[2])?,
        });
    }
    Ok(bumps)
}

pub fn stability_scan_cmd(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model")?, &sg)?;
    let n = model.n();
    let bumps = parse_bumps(flags.required("bumps")?, n)?;
    let amplitudes = parse_value_list("amplitudes", flags.required("amplitudes")?)?;
    let j_star = flags.state_index("state", n, 0)?;
    let tau_star = flags.f64_or("tau-star", 0.5)?;
    let strikes = flags.usize_or("strike-count", 41)?;
    let mode = match flags.optional("mode").unwrap_or("compact") {
        "compact" => SupportMode::Compact,
        "free" => SupportMode::Free,
        other => return Err(CliError::Usage(format!("--mode: unknown mode '{other}'"))),
    };
    let windows = windows_from_flags(flags)?;
    let out = flags.optional("out").map(str::to_string);
    let tg = time_grid(flags, tau_star)?;
    flags.finish()?;
    let obs = ObservationSpec::new(j_star, n, tau_star)?;
    let cfg = ScanConfig { strikes, mode };
    let report =
        stability_scan(&model, &bumps, &amplitudes, &windows, &obs, &sg, &tg, &cfg)?;
    output::emit(out.as_deref(), &output::stability_json(&report))
}

pub fn norm_check(flags: &Flags) -> Result<(), CliError> {
    let sg = space_grid(flags)?;
    let model = load_model(flags.required("model")?, &sg)?;
    let n = model.n();
    let j_star = flags.state_index("state", n, 0)?;
    // bump spec: regime:center:width:amplitude
    let bump_raw = flags.optional("bump").unwrap_or("1:0.0:0.1:0.002");
    let fields: Vec<&str> = bump_raw.split(':').collect();
    if fields.len() != 4 {
        return Err(CliError::Usage("--bump: expected regime:center:width:amplitude".into()));
    }
    let regime: usize = fields[0]
        .parse()
        .map_err(|_| CliError::Usage(format!("--bump: bad regime '{}'", fields[0])))?;
    if regime < 1 || regime > n {
        return Err(CliError::Usage(format!("--bump: regime {regime} outside 1..={n}")));
    }
    let center = crate::args::parse_f64("bump", fields[1])?;
    let width = crate::args::parse_f64("bump", fields[2])?;
    let amplitude = crate::args::parse_f64("bump", fields[3])?;
    let taus = parse_value_list("tau-grid", flags.optional("tau-grid").unwrap_or("0.1:1.0:10"))?;
    let support = match flags.optional("support") {
        Some(s) => Some(parse_interval("support", s)?),
        None => None,
    };
    let out = flags.optional("out").map(str::to_string);
    let horizon = taus.iter().cloned().fold(0.0f64, f64::max);
    let tg = time_grid(flags, horizon)?;
    flags.finish()?;
    let taus: Vec<f64> = taus
        .iter()
        .map(|t| (t / tg.dtau()).round().max(1.0) * tg.dtau())
        .collect();
    let obs = ObservationSpec::new(j_star, n, horizon)?;
    let v = solve_aux_density(&model, &obs, &sg, &tg)?;
    let mut g = Perturbation::gaussian_bump(&sg, n, regime - 1, center, width, amplitude);
    if let Some(win) = support {
        g = g.restricted_to(&sg, win);
    }
    let report = rsvol_core::inverse::norm_growth_check(&model, &g, &v, &taus, &sg, &tg)?;
    output::emit(out.as_deref(), &output::norm_growth_json(&report))
}

