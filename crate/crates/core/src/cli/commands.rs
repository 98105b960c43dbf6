//! One function per subcommand. Each checks its ranges before touching the
//! output directory, then writes a manifest, its CSV files and returns the
//! lines to print.

use std::fs;
use std::path::{Path, PathBuf};

use crate::analog::DacRealization;
use crate::analysis::{
    export_csv, hist_dataset, histogram, iv_dataset, linearity_dataset, resolution_curve,
    resolution_dataset, sweep_dataset, transfer_dataset, Cell, Dataset, SweepRow, TransferTable,
};
use crate::chip::ChipSim;
use crate::controller::{retrapping_point, switching_point, Controller, TripOutcome};
use crate::physics::{Diode, ScFilm};

use super::config::{hex_digest, RunConfig};
use super::CliError;

/// Inclusive `START:STOP:STEP` grid, or a single value.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: &str| CliError::Range(format!("range '{spec}': {m}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad("not a number")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [v] if v.is_finite() => Ok(vec![v]),
        [start, stop, step] => {
            if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
                return Err(bad("need step > 0 and stop >= start"));
            }
            let n = ((stop - start) / step + 1e-9).floor();
            if n > 1e6 {
                return Err(bad("more than a million points"));
            }
            Ok((0..=n as usize).map(|k| start + k as f64 * step).collect())
        }
        _ => Err(bad("expected START:STOP:STEP or a single value")),
    }
}

/// Ambient grid used for diode calibration unless overridden.
pub const DEFAULT_DIODE_GRID: &str = "0.05:1.5:0.025";
/// Local 0.400 K to 1.025 K in 1 mK steps with default self-heating.
pub const DEFAULT_SWEEP: &str = "0.015:0.64:0.001";
pub const DEFAULT_RAMP: &str = "0.35:0.45:0.001";

fn prepare_out(cfg: &RunConfig, out: &Path, invocation: &str) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let text = cfg.to_text();
    let manifest = format!(
        "invocation = {invocation}\nseed = {}\nconfig_sha256 = {}\nconfig_file = config.txt\n",
        cfg.seed(),
        hex_digest(text.as_bytes()),
    );
    for (name, body) in [("manifest.txt", manifest), ("config.txt", text)] {
        let p = out.join(name);
        fs::write(&p, body).map_err(|source| CliError::Io { path: p, source })?;
    }
    Ok(())
}

/// Write and re-read a CSV, failing unless the file holds exactly the rendering.
fn write_csv(out: &Path, name: &str, d: &Dataset) -> Result<PathBuf, CliError> {
    let p = out.join(name);
    export_csv(d, &p)?;
    let back = fs::read_to_string(&p).map_err(|source| CliError::Io {
        path: p.clone(),
        source,
    })?;
    if back != d.render() {
        return Err(CliError::Invalid(format!(
            "{} did not read back as written",
            p.display()
        )));
    }
    Ok(p)
}

fn controller(cfg: &RunConfig) -> Result<Controller<ChipSim>, CliError> {
    let chip = ChipSim::new(cfg.chip.clone())?;
    Ok(Controller::new(chip, cfg.controller_options()))
}

fn check_ambients(grid: &[f64], what: &str) -> Result<(), CliError> {
    if grid.iter().any(|a| !(*a >= 0.0)) {
        return Err(CliError::Range(format!(
            "{what}: ambient temperatures must be >= 0"
        )));
    }
    Ok(())
}

fn diode_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let g = parse_range(spec)?;
    check_ambients(&g, "diode grid")?;
    if g.len() < 2 {
        return Err(CliError::Range(
            "diode grid needs at least two points".into(),
        ));
    }
    Ok(g)
}

pub fn calibrate(cfg: &RunConfig, out: &Path, diode_spec: &str) -> Result<Vec<String>, CliError> {
    let grid = diode_grid(diode_spec)?;
    let mut ctl = controller(cfg)?;
    prepare_out(cfg, out, &format!("calibrate --diode-grid {diode_spec}"))?;

    let model = ctl.calibrate_diode(&grid)?;
    let mut d = Dataset::new(vec!["temperature_K", "voltage_V"]);
    for &(t, v) in &model.curve {
        d.push(vec![Cell::Float(t), Cell::Float(v)]);
    }
    write_csv(out, "diode_calibration.csv", &d)?;

    let cal = ctl.calibrate_comparator()?;
    let cmp = *ctl.backend().comparator();
    let mut d = Dataset::new(vec!["trim", "threshold_V", "pass"]);
    for c in &cal.checks {
        d.push(vec![
            Cell::Int(c.trim as i64),
            Cell::Float(cmp.trigger_voltage_at(c.trim)),
            Cell::Text(if c.passed() { "pass" } else { "fail" }.into()),
        ]);
    }
    write_csv(out, "calibration.csv", &d)?;
    let passing = cal.passing();
    Ok(vec![
        format!(
            "trim {} (threshold {:.4e} V), {} passing codes {}..={}",
            cal.trim,
            cmp.trigger_voltage_at(cal.trim),
            passing.len(),
            passing[0],
            passing[passing.len() - 1]
        ),
        format!("diode calibrated at {} points", model.curve.len()),
    ])
}

pub fn sweep(
    cfg: &RunConfig,
    out: &Path,
    ambient_spec: &str,
    diode_spec: &str,
) -> Result<Vec<String>, CliError> {
    let ambients = parse_range(ambient_spec)?;
    check_ambients(&ambients, "sweep")?;
    let grid = diode_grid(diode_spec)?;
    let mut ctl = controller(cfg)?;
    prepare_out(
        cfg,
        out,
        &format!("sweep --ambients {ambient_spec} --diode-grid {diode_spec}"),
    )?;

    let diode = Diode::new(ctl.calibrate_diode(&grid)?)?;
    let cal = ctl.calibrate_comparator()?;
    let campaign = ctl.build_code_temp_map(&ambients, &diode)?;

    let rows: Vec<SweepRow> = campaign
        .points
        .iter()
        .map(|p| SweepRow {
            ambient: p.ambient,
            local: p.diode_temperature,
            section: p.result.trigger_section(),
            code: p.result.trigger_code(),
            global_code: p.result.trigger_global(),
            i_rt: p.result.i_rt_estimate,
        })
        .collect();
    write_csv(out, "sweep.csv", &sweep_dataset(&rows))?;
    let mut w = Dataset::new(vec!["ambient_K", "message"]);
    for warn in &campaign.warnings {
        w.push(vec![
            Cell::Float(warn.ambient),
            Cell::Text(warn.message.replace(',', ";")),
        ]);
    }
    write_csv(out, "sweep_warnings.csv", &w)?;

    let mut lines = vec![format!(
        "trim {}, {} sweep points, {} warnings",
        cal.trim,
        rows.len(),
        campaign.warnings.len()
    )];
    let curve = resolution_curve(&campaign.map)?;
    write_csv(out, "resolution.csv", &resolution_dataset(&curve))?;
    for t in [0.6, 1.0] {
        match curve.at(t) {
            Some(r) => lines.push(format!("resolution at {t:.3} K: {:.3} mK", r * 1e3)),
            None => lines.push(format!("resolution at {t:.3} K: outside map")),
        }
    }
    Ok(lines)
}

pub fn linearity(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    cfg.chip
        .dac
        .validate()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    prepare_out(cfg, out, "linearity")?;
    let real = DacRealization::draw(&cfg.chip.dac);
    let table = TransferTable::from_dac(&cfg.chip.dac, &real);
    write_csv(out, "transfer.csv", &transfer_dataset(&table))?;
    let lin = linearity_dataset(&table)?;
    write_csv(out, "linearity.csv", &lin)?;
    let max_abs = |col: usize| {
        lin.rows
            .iter()
            .map(|r| match r[col] {
                Cell::Float(v) => v.abs(),
                _ => 0.0,
            })
            .fold(0.0, f64::max)
    };
    Ok(vec![format!(
        "max |DNL| {:.4} LSB, max |INL| {:.4} LSB",
        max_abs(2),
        max_abs(3)
    )])
}

/// Controller in test mode with the ambient set so the die sits at `t_local`.
fn test_mode_at(cfg: &RunConfig, t_local: f64) -> Result<Controller<ChipSim>, CliError> {
    let mut ctl = controller(cfg)?;
    ctl.enter_test_mode();
    let chip = ctl.backend();
    let floor = chip.local_temperature() - chip.thermal().ambient;
    if !(t_local >= floor && t_local.is_finite()) {
        return Err(CliError::Range(format!(
            "temperature {t_local} K is below the test-mode self-heating floor {floor:.4} K"
        )));
    }
    ctl.backend_mut().set_ambient(t_local - floor)?;
    Ok(ctl)
}

pub fn iv(
    cfg: &RunConfig,
    out: &Path,
    t_local: f64,
    i_max: f64,
    steps: usize,
) -> Result<Vec<String>, CliError> {
    if !(i_max > 0.0 && i_max.is_finite()) || steps == 0 {
        return Err(CliError::Range("need i_max > 0 and steps >= 1".into()));
    }
    let mut ctl = test_mode_at(cfg, t_local)?;
    prepare_out(
        cfg,
        out,
        &format!("iv --temperature {t_local} --i-max {i_max} --steps {steps}"),
    )?;
    let ambient = ctl.backend().thermal().ambient;
    let points = ctl.external_iv_sweep(ambient, i_max, steps)?;
    write_csv(out, "iv.csv", &iv_dataset(&points))?;
    let fmt = |v: Option<f64>| v.map_or("none".to_string(), |i| format!("{:.4e} A", i));
    Ok(vec![format!(
        "switching {}, retrapping {}",
        fmt(switching_point(&points)),
        fmt(retrapping_point(&points))
    )])
}

pub struct HistArgs {
    pub t_local: f64,
    pub loops: usize,
    pub i_max: Option<f64>,
    pub steps: usize,
    pub bins: usize,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

pub fn hist(cfg: &RunConfig, out: &Path, a: &HistArgs) -> Result<Vec<String>, CliError> {
    if a.loops == 0 || a.steps == 0 || a.bins == 0 {
        return Err(CliError::Range("loops, steps and bins must be >= 1".into()));
    }
    let film = ScFilm::new(cfg.chip.film.clone())?;
    if !(a.t_local < film.tc()) {
        return Err(CliError::Range(format!(
            "temperature must be below tc = {} K",
            film.tc()
        )));
    }
    let i_max = a
        .i_max
        .unwrap_or(1.2 * film.switching_current_mean(a.t_local));
    if !(i_max > 0.0 && i_max.is_finite()) {
        return Err(CliError::Range("i_max must be positive".into()));
    }
    let mut ctl = test_mode_at(cfg, a.t_local)?;
    prepare_out(
        cfg,
        out,
        &format!(
            "hist --temperature {} --loops {} --i-max {i_max} --steps {} --bins {}",
            a.t_local, a.loops, a.steps, a.bins
        ),
    )?;
    let i_step = i_max / a.steps as f64;
    let (mut sw, mut rt) = (Vec::with_capacity(a.loops), Vec::with_capacity(a.loops));
    let mut missed = 0;
    for _ in 0..a.loops {
        match ctl.transition_loop(i_step, i_max)? {
            (Some(s), Some(r)) => {
                sw.push(s);
                rt.push(r);
            }
            _ => missed += 1,
        }
    }
    if sw.is_empty() {
        return Err(CliError::Range(format!(
            "no switching event below i_max = {i_max:.4e} A"
        )));
    }
    write_csv(out, "hist_sw.csv", &hist_dataset(&histogram(&sw, a.bins)?))?;
    write_csv(out, "hist_rt.csv", &hist_dataset(&histogram(&rt, a.bins)?))?;
    let (ms, ss) = mean_sd(&sw);
    let (mr, sr) = mean_sd(&rt);
    Ok(vec![
        format!(
            "switching  mean {ms:.4e} A, sd {ss:.3e} A ({} loops)",
            sw.len()
        ),
        format!("retrapping mean {mr:.4e} A, sd {sr:.3e} A"),
        format!("{missed} loops without a complete transition pair"),
    ])
}

pub fn monitor(
    cfg: &RunConfig,
    out: &Path,
    threshold: f64,
    ramp_spec: &str,
) -> Result<Vec<String>, CliError> {
    let ramp = parse_range(ramp_spec)?;
    check_ambients(&ramp, "ramp")?;
    let film = ScFilm::new(cfg.chip.film.clone())?;
    if !(threshold > 0.0 && threshold < film.tc()) {
        return Err(CliError::Range(format!(
            "threshold must lie in (0, {}) K",
            film.tc()
        )));
    }
    let bias = film.switching_current_mean(threshold);
    let g = (bias / cfg.chip.dac.lsb()).round();
    if !(1.0..=crate::analog::GLOBAL_MAX as f64).contains(&g) {
        return Err(CliError::Range(format!(
            "bias {bias:.4e} A for {threshold} K is outside the DAC range"
        )));
    }
    let mut ctl = controller(cfg)?;
    prepare_out(
        cfg,
        out,
        &format!("monitor --threshold {threshold} --ramp {ramp_spec}"),
    )?;
    ctl.calibrate_comparator()?;

    let mut trace: Vec<(f64, f64)> = Vec::with_capacity(ramp.len());
    let report = ctl.threshold_monitor(&cfg.chip.film, threshold, ramp.len(), |k, chip| {
        chip.set_ambient(ramp[k])?;
        trace.push((ramp[k], chip.local_temperature()));
        Ok(())
    })?;
    let trip = match report.outcome {
        TripOutcome::Tripped { step } => Some(step),
        TripOutcome::NoTrip => None,
    };
    let mut d = Dataset::new(vec!["step", "ambient_K", "local_K", "flag"]);
    for (k, &(a, t)) in trace.iter().enumerate() {
        d.push(vec![
            Cell::Int(k as i64),
            Cell::Float(a),
            Cell::Float(t),
            Cell::Int((trip == Some(k)) as i64),
        ]);
    }
    write_csv(out, "monitor.csv", &d)?;
    let bias_line = format!(
        "bias global code {} ({:.4e} A)",
        report.bias.global(),
        report.bias_current
    );
    Ok(match trip {
        Some(k) => vec![
            bias_line,
            format!("trip at step {k}, local temperature {:.6} K", trace[k].1),
        ],
        None => vec![bias_line, "no trip over the ramp".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0.5").unwrap(), vec![0.5]);
        let r = parse_range("0.1:0.2:0.05").unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[2] - 0.2).abs() < 1e-15);
        assert_eq!(parse_range(DEFAULT_SWEEP).unwrap().len(), 626);
        for bad in ["0.2:0.1:0.01", "0:1:0", "a:b:c", "1:2"] {
            assert!(parse_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn range_errors_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let cfg = RunConfig::default();
        assert!(monitor(&cfg, &out, 1.2, DEFAULT_RAMP).is_err());
        assert!(monitor(&cfg, &out, 0.3, DEFAULT_RAMP).is_err());
        assert!(iv(&cfg, &out, 0.1, 1e-6, 10).is_err());
        assert!(sweep(&cfg, &out, "-0.1", DEFAULT_DIODE_GRID).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn linearity_with_zero_mismatch_is_flat() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.chip.dac.mismatch_sigma_rel = 0.0;
        linearity(&cfg, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("linearity.csv")).unwrap();
        assert_eq!(text.lines().count(), 254);
        for line in text.lines().skip(1) {
            let f: Vec<f64> = line
                .split(',')
                .skip(2)
                .map(|s| s.parse().unwrap())
                .collect();
            assert!(f.iter().all(|v| v.abs() < 1e-9), "{line}");
        }
        assert!(dir.path().join("manifest.txt").exists());
    }

    #[test]
    fn coarse_trim_step_fails_calibration() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.chip.comparator.trim_step = 10e-3;
        let e = calibrate(&cfg, dir.path(), DEFAULT_DIODE_GRID).unwrap_err();
        assert!(e.to_string().contains("calibration infeasible"));
    }

    #[test]
    fn single_ambient_sweep_writes_csv_then_fails() {
        let dir = tempfile::tempdir().unwrap();
        let e = sweep(&RunConfig::default(), dir.path(), "0.4", DEFAULT_DIODE_GRID).unwrap_err();
        assert!(e.to_string().contains("degenerate"), "{e}");
        let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn iv_loop_is_hysteretic() {
        let dir = tempfile::tempdir().unwrap();
        iv(&RunConfig::default(), dir.path(), 0.4, 2.6e-6, 400).unwrap();
        let text = fs::read_to_string(dir.path().join("iv.csv")).unwrap();
        assert_eq!(text.lines().count(), 802);
        assert!(text.contains(",up,") && text.contains(",normal"));
    }
}
