//! Run configuration: flat `key = value` text, `#` comments, SI units.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::chip::{ChipParams, ChipSim};
use crate::controller::ControllerOptions;

use super::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub chip: ChipParams,
    pub kick_current: f64,
    pub split_resistance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opts = ControllerOptions::default();
        Self {
            chip: ChipParams::seeded(0),
            kick_current: opts.kick_current,
            split_resistance: opts.split_resistance,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, String> {
    v.parse::<f64>().map_err(|e| format!("{key}: '{v}': {e}"))
}

fn parse_pairs(key: &str, v: &str) -> Result<Vec<(f64, f64)>, String> {
    v.split(',')
        .map(|p| {
            let (a, b) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("{key}: expected 'x:y' pairs, got '{}'", p.trim()))?;
            Ok((parse_f64(key, a.trim())?, parse_f64(key, b.trim())?))
        })
        .collect()
}

fn fmt_pairs(p: &[(f64, f64)]) -> String {
    p.iter()
        .map(|(a, b)| format!("{a:?}:{b:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config { line: k + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let c = &mut self.chip;
        let f = || parse_f64(key, v);
        match key {
            "physics.tc" => c.film.tc = f()?,
            "physics.r_normal" => c.film.r_normal = f()?,
            "physics.r_residual" => c.film.r_residual = f()?,
            "physics.retrap_anchors" => c.film.retrap_anchors = parse_pairs(key, v)?,
            "physics.sw_scale_current" => c.film.sw_scale_current = f()?,
            "physics.sw_sigma_rel" => c.film.sw_sigma_rel = f()?,
            "physics.rt_sigma_rel" => c.film.rt_sigma_rel = f()?,
            "thermal.ambient" => c.thermal.ambient = f()?,
            "thermal.r_th" => c.thermal.r_th = f()?,
            "diode.curve" => c.diode.curve = parse_pairs(key, v)?,
            "diode.noise_sigma" => c.diode.noise_sigma = f()?,
            "diode.bias_power" => c.diode.bias_power = f()?,
            "dac.i_ref" => c.dac.i_ref = f()?,
            "dac.mismatch_sigma_rel" => c.dac.mismatch_sigma_rel = f()?,
            "cmp.trim_step" => c.comparator.trim_step = f()?,
            "cmp.offset_sigma" => c.comparator.offset_sigma = f()?,
            "chip.v_ref" => c.electrical.v_ref = f()?,
            "chip.supply" => c.electrical.supply = f()?,
            "chip.circuit_power" => c.electrical.circuit_power = f()?,
            "chip.aux_power" => c.electrical.aux_power = f()?,
            "chip.power_fractions" => {
                c.electrical.power_fractions = if v == "none" {
                    None
                } else {
                    let parts: Vec<f64> = v
                        .split(',')
                        .map(|s| parse_f64(key, s.trim()))
                        .collect::<Result<_, _>>()?;
                    let arr: [f64; 3] = parts
                        .try_into()
                        .map_err(|_| format!("{key}: expected 'none' or three fractions"))?;
                    Some(arr)
                }
            }
            "sim.seed" => {
                let s = v.parse::<u64>().map_err(|e| format!("{key}: '{v}': {e}"))?;
                c.set_seed(s);
            }
            "sim.undershoot_kappa" => c.electrical.undershoot_kappa = f()?,
            "controller.kick_current" => self.kick_current = f()?,
            "controller.split_resistance" => self.split_resistance = f()?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        ChipSim::new(self.chip.clone()).map_err(|e| CliError::Invalid(e.to_string()))?;
        if !(self.kick_current > 0.0 && self.split_resistance > 0.0) {
            return Err(CliError::Invalid(
                "controller.kick_current and controller.split_resistance must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.chip.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.chip.set_seed(seed);
    }

    pub fn controller_options(&self) -> ControllerOptions {
        ControllerOptions {
            i_ref: self.chip.dac.i_ref,
            kick_current: self.kick_current,
            split_resistance: self.split_resistance,
            ..ControllerOptions::default()
        }
    }

    /// Every key with its effective value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let c = &self.chip;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("physics.tc", format!("{:?}", c.film.tc));
        kv("physics.r_normal", format!("{:?}", c.film.r_normal));
        kv("physics.r_residual", format!("{:?}", c.film.r_residual));
        kv("physics.retrap_anchors", fmt_pairs(&c.film.retrap_anchors));
        kv(
            "physics.sw_scale_current",
            format!("{:?}", c.film.sw_scale_current),
        );
        kv("physics.sw_sigma_rel", format!("{:?}", c.film.sw_sigma_rel));
        kv("physics.rt_sigma_rel", format!("{:?}", c.film.rt_sigma_rel));
        kv("thermal.ambient", format!("{:?}", c.thermal.ambient));
        kv("thermal.r_th", format!("{:?}", c.thermal.r_th));
        kv("diode.curve", fmt_pairs(&c.diode.curve));
        kv("diode.noise_sigma", format!("{:?}", c.diode.noise_sigma));
        kv("diode.bias_power", format!("{:?}", c.diode.bias_power));
        kv("dac.i_ref", format!("{:?}", c.dac.i_ref));
        kv(
            "dac.mismatch_sigma_rel",
            format!("{:?}", c.dac.mismatch_sigma_rel),
        );
        kv("cmp.trim_step", format!("{:?}", c.comparator.trim_step));
        kv(
            "cmp.offset_sigma",
            format!("{:?}", c.comparator.offset_sigma),
        );
        kv("chip.v_ref", format!("{:?}", c.electrical.v_ref));
        kv("chip.supply", format!("{:?}", c.electrical.supply));
        kv(
            "chip.circuit_power",
            format!("{:?}", c.electrical.circuit_power),
        );
        kv("chip.aux_power", format!("{:?}", c.electrical.aux_power));
        kv(
            "chip.power_fractions",
            match c.electrical.power_fractions {
                None => "none".into(),
                Some(f) => format!("{:?}, {:?}, {:?}", f[0], f[1], f[2]),
            },
        );
        kv("sim.seed", c.seed.to_string());
        kv(
            "sim.undershoot_kappa",
            format!("{:?}", c.electrical.undershoot_kappa),
        );
        kv(
            "controller.kick_current",
            format!("{:?}", self.kick_current),
        );
        kv(
            "controller.split_resistance",
            format!("{:?}", self.split_resistance),
        );
        s
    }

    pub fn sha256(&self) -> String {
        hex_digest(self.to_text().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}
