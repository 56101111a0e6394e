//! Minimal `--flag value` argument parsing with typed accessors.

use std::collections::BTreeMap;

use crate::CliError;

pub struct Flags {
    command: String,
    values: BTreeMap<String, String>,
    seen: std::cell::RefCell<Vec<String>>,
}

impl Flags {
    pub fn parse(args: &[String]) -> Result<Self, CliError> {
        if args.is_empty() {
            return Err(CliError::Usage("missing subcommand".into()));
        }
        let command = args[0].clone();
        let mut values = BTreeMap::new();
        let mut i = 1;
        while i < args.len() {
            let key = &args[i];
            if !key.starts_with("--") {
                return Err(CliError::Usage(format!("unexpected argument '{key}'")));
            }
            let name = key.trim_start_matches("--").to_string();
            // bare boolean flags
            if i + 1 >= args.len() || args[i + 1].starts_with("--") {
                values.insert(name, String::from("true"));
                i += 1;
            } else {
                values.insert(name, args[i + 1].clone());
                i += 2;
            }
        }
        Ok(Self { command, values, seen: std::cell::RefCell::new(Vec::new()) })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn raw(&self, name: &str) -> Option<&str> {
        self.seen.borrow_mut().push(name.to_string());
        self.values.get(name).map(|s| s.as_str())
    }

    pub fn required(&self, name: &str) -> Result<&str, CliError> {
        self.raw(name).ok_or_else(|| CliError::Usage(format!("missing required flag --{name}")))
    }

    pub fn optional(&self, name: &str) -> Option<&str> {
        self.raw(name)
    }

    pub fn f64_required(&self, name: &str) -> Result<f64, CliError> {
        parse_f64(name, self.required(name)?)
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64, CliError> {
        match self.raw(name) {
            Some(s) => parse_f64(name, s),
            None => Ok(default),
        }
    }

    pub fn usize_or(&self, name: &str, default: usize) -> Result<usize, CliError> {
        match self.raw(name) {
            Some(s) => s
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("--{name}: expected an integer, got '{s}'"))),
            None => Ok(default),
        }
    }

    pub fn u64_or(&self, name: &str, default: u64) -> Result<u64, CliError> {
        match self.raw(name) {
            Some(s) => s
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("--{name}: expected an integer, got '{s}'"))),
            None => Ok(default),
        }
    }

    pub fn bool_flag(&self, name: &str) -> bool {
        matches!(self.raw(name), Some("true") | Some("1") | Some("yes"))
    }

    /// One-based regime index from the command line, zero-based inside.
    pub fn state_index(&self, name: &str, n: usize, default: usize) -> Result<usize, CliError> {
        let one_based = self.usize_or(name, default + 1)?;
        if one_based < 1 || one_based > n {
            return Err(CliError::Usage(format!(
                "--{name}: regime {one_based} outside 1..={n}"
            )));
        }
        Ok(one_based - 1)
    }

    /// Reject flags that were provided but never consumed.
    pub fn finish(&self) -> Result<(), CliError> {
        let seen = self.seen.borrow();
        for key in self.values.keys() {
            if !seen.iter().any(|s| s == key) {
                return Err(CliError::Usage(format!("unknown flag --{key}")));
            }
        }
        Ok(())
    }
}

pub fn parse_f64(name: &str, s: &str) -> Result<f64, CliError> {
    s.parse::<f64>()
        .map_err(|_| CliError::Usage(format!("--{name}: expected a number, got '{s}'")))
}

/// `a,b,c` list or `lo:hi:n` inclusive range.
pub fn parse_value_list(name: &str, s: &str) -> Result<Vec<f64>, CliError> {
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::Usage(format!("--{name}: range must be lo:hi:n")));
        }
        let lo = parse_f64(name, parts[0])?;
        let hi = parse_f64(name, parts[1])?;
        let n: usize = parts[2]
            .parse()
            .map_err(|_| CliError::Usage(format!("--{name}: bad count '{}'", parts[2])))?;
        if n < 2 || !(hi > lo) {
            return Err(CliError::Usage(format!("--{name}: need lo < hi and n >= 2")));
        }
        Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
    } else {
        s.split(',').map(|p| parse_f64(name, p.trim())).collect()
    }
}

/// `lo:hi` interval.
pub fn parse_interval(name: &str, s: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!("--{name}: interval must be lo:hi")));
    }
    let lo = parse_f64(name, parts[0])?;
    let hi = parse_f64(name, parts[1])?;
    if !(hi > lo) {
        return Err(CliError::Usage(format!("--{name}: need lo < hi")));
    }
    Ok((lo, hi))
}
