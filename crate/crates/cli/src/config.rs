//! Flat `key=value` run configuration with a fixed schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Key, default and one-line description.
const SCHEMA: &[(&str, &str, &str)] = &[
    ("seed", "0", "base random seed"),
    ("operator", "plw", "spectral weight: iso, plw, bpm or two_band"),
    ("alpha", "0.5", "power-law exponent (plw) or tilt strength (flow/toy tilt)"),
    ("floor", "1e-10", "power-law radius floor"),
    ("a", "0.4", "band-pass lower cutoff"),
    ("b", "0.5", "band-pass upper cutoff"),
    ("gamma_l", "0.5", "two-band low gain"),
    ("band_l", "0,0.5", "two-band low band lo,hi"),
    ("gamma_h", "0.5", "two-band high gain"),
    ("band_h", "0.5,1", "two-band high band lo,hi"),
    ("mode", "raw", "noise post-processing: raw, per_sample_std or energy_calibrated"),
    ("size", "16", "field height and width"),
    ("n", "64", "number of samples"),
    ("channels", "1", "channels per sample"),
    ("bins", "16", "radial spectrum bins"),
    ("fit_lo", "0.1", "slope fit lower radius"),
    ("fit_hi", "0.8", "slope fit upper radius"),
    ("input", "", "tensor file to analyse (rapsd)"),
    ("T", "1000", "diffusion steps"),
    ("beta_start", "1e-4", "first discrete beta"),
    ("beta_end", "0.02", "last discrete beta"),
    ("stride", "10", "DDIM step stride"),
    ("preset", "three_mode", "mixture target: three_mode or two_mode"),
    ("cov", "iso", "2D covariance: iso, tilt or singular"),
    ("particles", "4096", "flow ensemble size"),
    ("flow_steps", "500", "flow integration steps"),
    ("snapshots", "5", "stored flow snapshots"),
    ("integrator", "heun", "flow integrator: euler or heun"),
    ("prior", "marginal", "flow start: marginal or gaussian"),
    ("t_min", "1e-3", "flow end time"),
    ("beta_min", "0.1", "continuous beta at t=0"),
    ("beta_max", "20", "continuous beta at t=1"),
    ("svg", "true", "write scatter panels"),
    ("points", "100", "score-check test points"),
    ("sigmas", "0.3,0.1,0.03,0.01", "small-noise sweep levels"),
    ("fd_h", "1e-5", "finite-difference step"),
    ("train_steps", "20000", "optimizer steps"),
    ("batch", "128", "minibatch size"),
    ("lr", "1e-2", "initial learning rate"),
    ("final_lr_fraction", "0.01", "final learning rate as a fraction of lr"),
    ("optimizer", "momentum", "sgd, momentum or adam"),
    ("momentum", "0.9", "momentum coefficient"),
    ("hidden", "64", "hidden width"),
    ("embed", "16", "time embedding width"),
    ("skip", "false", "add the sigma_t x_t skip path"),
    ("test_points", "4000", "held-out pairs for the oracle comparison"),
    ("tol", "0.05", "train-toy pass threshold on relative error"),
    ("corrupt_band", "0.4,0.5", "corrupted band lo,hi"),
    ("gamma_c", "1", "corruption gain"),
    ("generate", "512", "generated samples per model"),
    ("reference", "2048", "reference samples"),
    ("pgm", "", "optional P5 image to crop clean patches from"),
];

/// Defaults that differ per subcommand.
fn command_defaults(command: &str) -> &'static [(&'static str, &'static str)] {
    match command {
        "flow" => &[("alpha", "1")],
        "train-toy" => &[("cov", "tilt"), ("alpha", "1")],
        "omit" => &[("train_steps", "4000"), ("batch", "64"), ("hidden", "256"), ("skip", "true"), ("bins", "8")],
        _ => &[],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        let mut values: BTreeMap<String, String> =
            SCHEMA.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        for (k, v) in command_defaults(command) {
            values.insert(k.to_string(), v.to_string());
        }
        Self { values }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_owned();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key `{key}` (see `sagd keys`)"))),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) =
            pair.split_once('=').ok_or_else(|| CliError::Usage(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    /// Applies every assignment in a config file; blank lines and `#`
    /// comments are ignored.
    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("`{key}` is not in the schema"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| CliError::Usage(format!("bad value for `{key}`: `{raw}` ({e})")))
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::Usage(format!("bad value for `{key}`: `{}` ({e})", self.raw(key))))
            })
            .collect()
    }

    pub fn pair(&self, key: &str) -> Result<(f64, f64), CliError> {
        match self.list(key)?.as_slice() {
            &[lo, hi] => Ok((lo, hi)),
            _ => Err(CliError::Usage(format!("`{key}` needs two comma-separated numbers, got `{}`", self.raw(key)))),
        }
    }

    /// `None` when the key is empty.
    pub fn path(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|s| !s.is_empty())
    }

    /// The resolved configuration in the file syntax it is read from.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// One line per key with its default, for `sagd keys`.
pub fn describe() -> String {
    let mut s = String::new();
    for (k, v, help) in SCHEMA {
        let _ = writeln!(s, "{k:<18} {:<20} {help}", if v.is_empty() { "(empty)" } else { v });
    }
    s
}
