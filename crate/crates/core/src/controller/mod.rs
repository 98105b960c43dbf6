//! Operating procedures run against a chip backend through its TAP/register
//! contract: comparator trim calibration, diode calibration, the retrapping
//! sweep, code-temperature mapping, the threshold detector and the external
//! I-V loop.

mod jtag;

use thiserror::Error;

use crate::analog::{AnalogError, DacSetting, GLOBAL_MAX, TRIM_MAX};
use crate::chip::registers::{ADDR_CMP, ADDR_CTRL, ADDR_DAC, CTRL_ALL_ENABLES, CTRL_TEST_MODE};
use crate::chip::tap::Instruction;
use crate::chip::{ChipError, ChipSim};
use crate::physics::{Diode, DiodeModel, PhysicsError, ScFilm, ScFilmParams, ScState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("calibration infeasible: no trim code separates the superconducting and normal drops")]
    CalibrationInfeasible,
    #[error("film not in normal state at the start setting (global code {0})")]
    NotInNormalState(u32),
    #[error("flag still high at global code 1: no retrapping resolved, die at or above critical temperature")]
    AboveCriticalTemperature,
    #[error("diode calibration quality: {0}")]
    DiodeCalibrationQuality(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("bias current {0:.4e} A outside DAC range")]
    BiasOutOfRange(f64),
    #[error("TAP protocol error: {0}")]
    TapProtocol(String),
    #[error(transparent)]
    Backend(#[from] ChipError),
    #[error(transparent)]
    Analog(#[from] AnalogError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Everything a procedure needs from the device under test. A hardware
/// implementation maps these onto the JTAG adapter, the V_FLAG pin, the
/// Kelvin source-meter, the refrigerator heater and the diode readout.
pub trait Backend {
    fn tap_clock(&mut self, tms: bool, tdi: bool) -> bool;
    /// Let the analog chain settle and sample V_FLAG.
    fn evaluate(&mut self) -> Result<bool, ChipError>;
    fn force_external_current(&mut self, i: f64) -> Result<f64, ChipError>;
    fn set_ambient(&mut self, t: f64) -> Result<(), ChipError>;
    fn read_diode(&mut self) -> Result<f64, ChipError>;
    /// Die temperature as known to the calibration reference while the diode is biased.
    fn reference_temperature(&self) -> f64;
    fn set_supply(&mut self, on: bool);
    /// Hold the film in a state for calibration; `None` releases it.
    fn pin_film(&mut self, state: Option<ScState>) -> Result<(), ChipError>;
}

impl Backend for ChipSim {
    fn tap_clock(&mut self, tms: bool, tdi: bool) -> bool {
        ChipSim::tap_clock(self, tms, tdi)
    }

    fn evaluate(&mut self) -> Result<bool, ChipError> {
        ChipSim::evaluate(self)
    }

    fn force_external_current(&mut self, i: f64) -> Result<f64, ChipError> {
        ChipSim::force_external_current(self, i)
    }

    fn set_ambient(&mut self, t: f64) -> Result<(), ChipError> {
        ChipSim::set_ambient(self, t)
    }

    fn read_diode(&mut self) -> Result<f64, ChipError> {
        ChipSim::read_diode(self)
    }

    fn reference_temperature(&self) -> f64 {
        self.diode_read_temperature()
    }

    fn set_supply(&mut self, on: bool) {
        ChipSim::set_supply(self, on)
    }

    fn pin_film(&mut self, state: Option<ScState>) -> Result<(), ChipError> {
        ChipSim::pin_film(self, state);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOptions {
    pub i_ref: f64,
    /// Default sweep start; must bias the film normal.
    pub start: DacSetting,
    /// External current used to knock the film normal before a sweep.
    pub kick_current: f64,
    /// V/I above this reads as normal state in external measurements.
    pub split_resistance: f64,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self {
            i_ref: 50e-9,
            start: DacSetting::full_scale(),
            kick_current: 5e-6,
            split_resistance: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimCheck {
    pub trim: u8,
    pub sc_low: bool,
    pub normal_high: bool,
}

impl TrimCheck {
    pub fn passed(&self) -> bool {
        self.sc_low && self.normal_high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorCalibration {
    pub trim: u8,
    pub checks: Vec<TrimCheck>,
}

impl ComparatorCalibration {
    pub fn passing(&self) -> Vec<u8> {
        self.checks
            .iter()
            .filter(|c| c.passed())
            .map(|c| c.trim)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub trigger: DacSetting,
    pub i_rt_estimate: f64,
    /// (global code, flag), starting at the start setting.
    pub flags_trace: Vec<(u32, bool)>,
}

impl SweepResult {
    pub fn trigger_section(&self) -> u8 {
        self.trigger.section()
    }

    pub fn trigger_code(&self) -> u8 {
        self.trigger.code()
    }

    pub fn trigger_global(&self) -> u32 {
        self.trigger.global()
    }
}

/// (diode temperature, global trigger code) entries sorted by temperature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CodeTempMap {
    entries: Vec<(f64, u32)>,
}

impl CodeTempMap {
    pub fn new(mut entries: Vec<(f64, u32)>) -> Self {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        Self { entries }
    }

    pub fn entries(&self) -> &[(f64, u32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub ambient: f64,
    pub diode_temperature: f64,
    pub result: SweepResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepWarning {
    pub ambient: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepCampaign {
    pub map: CodeTempMap,
    pub points: Vec<SweepPoint>,
    pub warnings: Vec<SweepWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripOutcome {
    Tripped { step: usize },
    NoTrip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripReport {
    pub bias: DacSetting,
    pub bias_current: f64,
    pub outcome: TripOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvPoint {
    pub step: usize,
    pub direction: Direction,
    pub current: f64,
    pub voltage: f64,
    pub state: ScState,
}

/// First current on the upward branch that reads normal.
pub fn switching_point(iv: &[IvPoint]) -> Option<f64> {
    iv.iter()
        .find(|p| p.direction == Direction::Up && p.state == ScState::Normal)
        .map(|p| p.current)
}

/// First current on the downward branch that reads superconducting.
pub fn retrapping_point(iv: &[IvPoint]) -> Option<f64> {
    iv.iter()
        .find(|p| p.direction == Direction::Down && p.state == ScState::Superconducting)
        .map(|p| p.current)
}

/// Probability that one evaluation at die temperature `t` trips a detector
/// biased at `bias` through sampling of the switching current.
pub fn false_trip_probability(film: &ScFilm, bias: f64, t: f64) -> f64 {
    let mu = film.switching_current_mean(t);
    let sigma = film.params().sw_sigma_rel * mu;
    if sigma == 0.0 {
        return if bias > mu { 1.0 } else { 0.0 };
    }
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(mu, sigma).map(|n| n.cdf(bias)).unwrap_or(0.0)
}

pub struct Controller<B> {
    backend: B,
    opts: ControllerOptions,
    /// Measured DAC currents by global code, if available.
    transfer: Option<Vec<f64>>,
    loaded_ir: Option<Instruction>,
}

impl<B: Backend> Controller<B> {
    pub fn new(backend: B, opts: ControllerOptions) -> Self {
        Self {
            backend,
            opts,
            transfer: None,
            loaded_ir: None,
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    pub fn into_backend(self) -> B {
        self.backend
    }

    pub fn options(&self) -> &ControllerOptions {
        &self.opts
    }

    pub fn lsb(&self) -> f64 {
        self.opts.i_ref / 8.0
    }

    /// Use measured DAC currents (253 entries, by global code) for estimates.
    pub fn set_transfer(&mut self, currents: Vec<f64>) -> Result<(), ControllerError> {
        if currents.len() != GLOBAL_MAX as usize + 1 {
            return Err(ControllerError::Precondition(format!(
                "transfer table needs {} entries, got {}",
                GLOBAL_MAX + 1,
                currents.len()
            )));
        }
        self.transfer = Some(currents);
        Ok(())
    }

    pub fn dac_current_estimate(&self, s: DacSetting) -> f64 {
        match &self.transfer {
            Some(t) => t[s.global() as usize],
            None => s.global() as f64 * self.lsb(),
        }
    }

    pub fn set_ctrl(&mut self, ctrl: u8) {
        self.write_register(ADDR_CTRL, ctrl);
    }

    pub fn set_dac(&mut self, s: DacSetting) {
        self.write_register(ADDR_DAC, s.to_register());
    }

    pub fn set_trim(&mut self, trim: u8) {
        self.write_register(ADDR_CMP, trim);
    }

    pub fn evaluate(&mut self) -> Result<bool, ControllerError> {
        Ok(self.backend.evaluate()?)
    }

    /// Find the trim codes that read 0 with the film held superconducting at
    /// full scale and 1 with it held normal at one LSB; program the median.
    pub fn calibrate_comparator(&mut self) -> Result<ComparatorCalibration, ControllerError> {
        self.set_ctrl(CTRL_ALL_ENABLES);
        let min_code = DacSetting::new(1, 0)?;
        let mut checks = Vec::with_capacity(TRIM_MAX as usize + 1);
        for trim in 0..=TRIM_MAX {
            self.set_trim(trim);
            self.backend.pin_film(Some(ScState::Superconducting))?;
            self.set_dac(DacSetting::full_scale());
            let sc_flag = self.evaluate()?;
            self.backend.pin_film(Some(ScState::Normal))?;
            self.set_dac(min_code);
            let normal_flag = self.evaluate()?;
            checks.push(TrimCheck {
                trim,
                sc_low: !sc_flag,
                normal_high: normal_flag,
            });
        }
        self.backend.pin_film(None)?;
        self.set_dac(DacSetting::new(0, 0)?);

        let passing: Vec<u8> = checks
            .iter()
            .filter(|c| c.passed())
            .map(|c| c.trim)
            .collect();
        if passing.is_empty() {
            return Err(ControllerError::CalibrationInfeasible);
        }
        let trim = passing[(passing.len() - 1) / 2];
        self.set_trim(trim);
        Ok(ComparatorCalibration { trim, checks })
    }

    /// Knock the film normal with an external pulse and hand over to the DAC
    /// at `start`, which holds it normal through hysteresis.
    pub fn prepare_normal(&mut self, start: DacSetting) -> Result<(), ControllerError> {
        self.set_dac(start);
        self.set_ctrl(CTRL_TEST_MODE);
        self.backend
            .force_external_current(self.opts.kick_current)?;
        self.set_ctrl(CTRL_ALL_ENABLES);
        Ok(())
    }

    /// Step the DAC down one global code at a time from `start` until V_FLAG
    /// drops; the current at that code is the retrapping estimate.
    pub fn measure_retrapping(
        &mut self,
        start: DacSetting,
    ) -> Result<SweepResult, ControllerError> {
        self.set_ctrl(CTRL_ALL_ENABLES);
        self.set_dac(start);
        let stable = self.evaluate()? & self.evaluate()?;
        if !stable {
            return Err(ControllerError::NotInNormalState(start.global()));
        }
        let mut trace = vec![(start.global(), true)];
        // A drop only at zero current resolves nothing: the film may be normal.
        for g in (1..start.global()).rev() {
            let s = DacSetting::from_global(g as i64)?;
            self.set_dac(s);
            let flag = self.evaluate()?;
            trace.push((g, flag));
            if !flag {
                return Ok(SweepResult {
                    trigger: s,
                    i_rt_estimate: self.dac_current_estimate(s),
                    flags_trace: trace,
                });
            }
        }
        Err(ControllerError::AboveCriticalTemperature)
    }

    /// Record diode voltage against the reference temperature with the
    /// supply off, so only the diode bias heats the die.
    pub fn calibrate_diode(&mut self, ambients: &[f64]) -> Result<DiodeModel, ControllerError> {
        if ambients.len() < 2 {
            return Err(ControllerError::Precondition(
                "diode calibration needs at least two ambient points".into(),
            ));
        }
        let ctrl = self.read_register(ADDR_CTRL)?;
        if ctrl & (CTRL_ALL_ENABLES | CTRL_TEST_MODE) != 0 {
            return Err(ControllerError::Precondition(format!(
                "circuit blocks must be disabled for diode calibration (CTRL = 0x{ctrl:02X})"
            )));
        }
        self.backend.set_supply(false);
        let mut curve = Vec::with_capacity(ambients.len());
        let mut result = Ok(());
        for &a in ambients {
            if let Err(e) = self.backend.set_ambient(a) {
                result = Err(e);
                break;
            }
            match self.backend.read_diode() {
                Ok(v) => curve.push((self.backend.reference_temperature(), v)),
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        self.backend.set_supply(true);
        result?;

        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        if curve.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ControllerError::DiodeCalibrationQuality(
                "repeated calibration temperatures".into(),
            ));
        }
        let dv: Vec<f64> = curve.windows(2).map(|w| w[1].1 - w[0].1).collect();
        if !(dv.iter().all(|&d| d > 0.0) || dv.iter().all(|&d| d < 0.0)) {
            return Err(ControllerError::DiodeCalibrationQuality(
                "voltage not monotone in temperature; noise too large for the point spacing".into(),
            ));
        }
        Ok(DiodeModel {
            curve,
            noise_sigma: 0.0,
            ..DiodeModel::default()
        })
    }

    /// Die temperature from one diode reading through a calibrated curve.
    pub fn diode_temperature(&mut self, diode: &Diode) -> Result<f64, ControllerError> {
        let v = self.backend.read_diode()?;
        Ok(diode.invert(v)?)
    }

    /// Run one retrapping sweep per ambient and map diode temperature to
    /// trigger code. Failed points become warnings.
    pub fn build_code_temp_map(
        &mut self,
        ambients: &[f64],
        diode: &Diode,
    ) -> Result<SweepCampaign, ControllerError> {
        let start = self.opts.start;
        let mut campaign = SweepCampaign::default();
        let mut entries = Vec::with_capacity(ambients.len());
        for &ambient in ambients {
            self.backend.set_ambient(ambient)?;
            let point = self.diode_temperature(diode).and_then(|t| {
                self.prepare_normal(start)?;
                let result = self.measure_retrapping(start)?;
                Ok(SweepPoint {
                    ambient,
                    diode_temperature: t,
                    result,
                })
            });
            match point {
                Ok(p) => {
                    entries.push((p.diode_temperature, p.result.trigger_global()));
                    campaign.points.push(p);
                }
                Err(e) => campaign.warnings.push(SweepWarning {
                    ambient,
                    message: e.to_string(),
                }),
            }
        }
        campaign.map = CodeTempMap::new(entries);
        Ok(campaign)
    }

    /// Bias the film at the mean switching current for `t_threshold` and
    /// evaluate once per step; `drive` moves the environment before each step.
    pub fn threshold_monitor<F>(
        &mut self,
        film: &ScFilmParams,
        t_threshold: f64,
        max_steps: usize,
        mut drive: F,
    ) -> Result<TripReport, ControllerError>
    where
        F: FnMut(usize, &mut B) -> Result<(), ChipError>,
    {
        let film = ScFilm::new(film.clone())?;
        if !(t_threshold > 0.0 && t_threshold < film.tc()) {
            return Err(ControllerError::Precondition(format!(
                "threshold {t_threshold} K must lie in (0, tc)"
            )));
        }
        let bias_target = film.switching_current_mean(t_threshold);
        let g = (bias_target / self.lsb()).round();
        if !(1.0..=GLOBAL_MAX as f64).contains(&g) {
            return Err(ControllerError::BiasOutOfRange(bias_target));
        }
        let bias = DacSetting::from_global(g as i64)?;

        self.set_ctrl(CTRL_ALL_ENABLES);
        self.set_dac(DacSetting::new(0, 0)?);
        self.evaluate()?;
        self.set_dac(bias);
        let mut outcome = TripOutcome::NoTrip;
        for step in 0..max_steps {
            drive(step, &mut self.backend)?;
            if self.evaluate()? {
                outcome = TripOutcome::Tripped { step };
                break;
            }
        }
        Ok(TripReport {
            bias,
            bias_current: self.dac_current_estimate(bias),
            outcome,
        })
    }

    pub fn enter_test_mode(&mut self) {
        self.set_ctrl(CTRL_TEST_MODE);
    }

    /// Ramp an external current 0 -> `i_max` -> 0 through the Kelvin terminals.
    pub fn external_iv_sweep(
        &mut self,
        t_ambient: f64,
        i_max: f64,
        n_steps: usize,
    ) -> Result<Vec<IvPoint>, ControllerError> {
        let ctrl = self.read_register(ADDR_CTRL)?;
        if ctrl != CTRL_TEST_MODE {
            return Err(ChipError::NotInTestMode.into());
        }
        if !(i_max >= 0.0) || n_steps == 0 {
            return Err(ControllerError::Precondition(
                "need i_max >= 0 and at least one step".into(),
            ));
        }
        self.backend.set_ambient(t_ambient)?;
        let ramp = (0..=n_steps)
            .map(|k| (Direction::Up, k))
            .chain((0..n_steps).rev().map(|k| (Direction::Down, k)));
        let mut state = ScState::Superconducting;
        let mut out = Vec::with_capacity(2 * n_steps + 1);
        for (step, (direction, k)) in ramp.enumerate() {
            let i = i_max * k as f64 / n_steps as f64;
            let v = self.backend.force_external_current(i)?;
            if i > 0.0 {
                state = if v / i > self.opts.split_resistance {
                    ScState::Normal
                } else {
                    ScState::Superconducting
                };
            }
            out.push(IvPoint {
                step,
                direction,
                current: i,
                voltage: v,
                state,
            });
        }
        Ok(out)
    }

    /// One external loop in `i_step` increments that stops at each transition:
    /// ramp up until the film reads normal, then down until it retraps.
    /// Returns (switching, retrapping); `None` if a transition never occurred.
    pub fn transition_loop(
        &mut self,
        i_step: f64,
        i_max: f64,
    ) -> Result<(Option<f64>, Option<f64>), ControllerError> {
        if !(i_step > 0.0 && i_max >= i_step) {
            return Err(ControllerError::Precondition(
                "need 0 < i_step <= i_max".into(),
            ));
        }
        let normal = |v: f64, i: f64| v / i > self.opts.split_resistance;
        self.backend.force_external_current(0.0)?;
        let n_max = (i_max / i_step).floor() as usize;
        let mut up = None;
        for k in 1..=n_max {
            let i = k as f64 * i_step;
            let v = self.backend.force_external_current(i)?;
            if normal(v, i) {
                up = Some(k);
                break;
            }
        }
        let Some(k_sw) = up else {
            self.backend.force_external_current(0.0)?;
            return Ok((None, None));
        };
        let mut rt = None;
        for k in (1..k_sw).rev() {
            let i = k as f64 * i_step;
            let v = self.backend.force_external_current(i)?;
            if !normal(v, i) {
                rt = Some(i);
                break;
            }
        }
        self.backend.force_external_current(0.0)?;
        Ok((Some(k_sw as f64 * i_step), rt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::registers::*;
    use crate::chip::tap::IDCODE;
    use crate::chip::{ChipParams, ChipSim};

    fn controller(params: ChipParams) -> Controller<ChipSim> {
        Controller::new(ChipSim::new(params).unwrap(), ControllerOptions::default())
    }

    fn set_local(c: &mut Controller<ChipSim>, t: f64) {
        let chip = c.backend_mut();
        let offset = chip.local_temperature() - chip.thermal().ambient;
        chip.set_ambient(t - offset).unwrap();
    }

    #[test]
    fn register_round_trip_and_idcode() {
        let mut c = controller(ChipParams::seeded(1));
        c.write_register(ADDR_DAC, 0x2A);
        assert_eq!(c.read_register(ADDR_DAC).unwrap(), 0x2A);
        c.write_register(ADDR_STATUS, 0x01);
        assert_eq!(c.read_register(ADDR_STATUS).unwrap(), 0x00);
        assert_eq!(c.read_idcode(), IDCODE);
    }

    #[test]
    fn comparator_calibration_is_contiguous_and_idempotent() {
        let mut p = ChipParams::seeded(4);
        p.comparator.offset_sigma = 0.0;
        let mut c = controller(p);
        set_local(&mut c, 0.5);
        let cal = c.calibrate_comparator().unwrap();
        let passing = cal.passing();
        assert_eq!(passing, (17..=27).collect::<Vec<u8>>());
        assert_eq!(cal.trim, 22);
        assert_eq!(c.read_register(ADDR_CMP).unwrap(), 22);
        let again = c.calibrate_comparator().unwrap();
        assert_eq!(again, cal);
    }

    #[test]
    fn coarse_trim_step_is_infeasible() {
        let mut p = ChipParams::seeded(4);
        p.comparator.trim_step = 10e-3;
        let mut c = controller(p);
        assert_eq!(
            c.calibrate_comparator(),
            Err(ControllerError::CalibrationInfeasible)
        );
    }

    #[test]
    fn sweep_at_0p8_triggers_at_code_11() {
        let mut c = controller(ChipParams::seeded(2).deterministic());
        c.calibrate_comparator().unwrap();
        set_local(&mut c, 0.8);
        c.prepare_normal(DacSetting::full_scale()).unwrap();
        let r = c.measure_retrapping(DacSetting::full_scale()).unwrap();
        assert_eq!(r.trigger_global(), 11);
        assert_eq!((r.trigger_section(), r.trigger_code()), (0, 11));
        assert!((r.i_rt_estimate - 68.75e-9).abs() < 1e-15);
        let flips = r
            .flags_trace
            .windows(2)
            .filter(|w| w[0].1 != w[1].1)
            .count();
        assert_eq!(flips, 1);
        assert_eq!(r.flags_trace.first(), Some(&(252, true)));
        assert_eq!(r.flags_trace.last(), Some(&(11, false)));
    }

    #[test]
    fn sweep_errors() {
        let mut c = controller(ChipParams::seeded(2).deterministic());
        c.calibrate_comparator().unwrap();
        set_local(&mut c, 1.1);
        assert_eq!(
            c.measure_retrapping(DacSetting::full_scale()),
            Err(ControllerError::AboveCriticalTemperature)
        );
        // Film superconducting at 0.5 K: full scale cannot switch it.
        set_local(&mut c, 0.5);
        c.set_dac(DacSetting::new(0, 0).unwrap());
        c.evaluate().unwrap();
        assert_eq!(
            c.measure_retrapping(DacSetting::full_scale()),
            Err(ControllerError::NotInNormalState(252))
        );
    }

    #[test]
    fn descent_never_raises_current() {
        let mut p = ChipParams::seeded(9);
        p.dac.mismatch_sigma_rel = 0.03;
        let chip = ChipSim::new(p).unwrap();
        let cfg = *chip.dac_config();
        let real = *chip.dac_realization();
        for g in 1..=GLOBAL_MAX as i64 {
            let hi =
                crate::analog::dac_actual_current(&cfg, &real, DacSetting::from_global(g).unwrap());
            let lo = crate::analog::dac_actual_current(
                &cfg,
                &real,
                DacSetting::from_global(g - 1).unwrap(),
            );
            assert!(lo < hi, "current rises stepping {g} -> {}", g - 1);
        }
    }

    #[test]
    fn diode_calibration_rules() {
        let mut c = controller(ChipParams::seeded(3).deterministic());
        c.backend_mut().set_ambient(0.015).unwrap();
        let ambients = [0.015, 0.1, 0.5, 1.0];
        let m = c.calibrate_diode(&ambients).unwrap();
        assert!((m.curve[0].0 - 0.0150856).abs() < 1e-7);
        let d = c.backend().diode().clone();
        for (t, v) in &m.curve {
            assert_eq!(*v, d.voltage(*t).unwrap());
        }
        assert!(c.backend().supply_on());

        c.set_ctrl(CTRL_ALL_ENABLES);
        assert!(matches!(
            c.calibrate_diode(&ambients),
            Err(ControllerError::Precondition(_))
        ));
    }

    #[test]
    fn noisy_diode_with_tight_spacing_fails_quality() {
        let mut p = ChipParams::seeded(3);
        p.diode.noise_sigma = 5e-3;
        let mut c = controller(p);
        let ambients: Vec<f64> = (0..50).map(|k| 0.1 + k as f64 * 1e-3).collect();
        assert!(matches!(
            c.calibrate_diode(&ambients),
            Err(ControllerError::DiodeCalibrationQuality(_))
        ));
    }

    #[test]
    fn monitor_bias_code_and_range() {
        let mut c = controller(ChipParams::seeded(5).deterministic());
        let film = c.backend().film().params().clone();
        c.calibrate_comparator().unwrap();
        set_local(&mut c, 0.5);
        let report = c.threshold_monitor(&film, 0.8, 3, |_, _| Ok(())).unwrap();
        assert_eq!(report.bias.global(), 190);
        assert_eq!((report.bias.section(), report.bias.code()), (3, 1));
        assert_eq!(report.outcome, TripOutcome::NoTrip);
        // 0.3 K needs ~2.75 uA, beyond full scale.
        assert!(matches!(
            c.threshold_monitor(&film, 0.3, 3, |_, _| Ok(())),
            Err(ControllerError::BiasOutOfRange(_))
        ));
    }

    #[test]
    fn iv_below_retrapping_retraces() {
        let mut c = controller(ChipParams::seeded(6).deterministic());
        c.enter_test_mode();
        let iv = c.external_iv_sweep(0.1, 50e-9, 20).unwrap();
        assert_eq!(iv.len(), 41);
        assert!(iv.iter().all(|p| p.state == ScState::Superconducting));
        assert_eq!(switching_point(&iv), None);
    }

    #[test]
    fn transition_loop_brackets_both_currents() {
        let mut c = controller(ChipParams::seeded(6).deterministic());
        c.enter_test_mode();
        let r_th = c.backend().thermal().r_th;
        c.backend_mut().set_ambient(0.4 - 3e-6 * r_th).unwrap();
        let film = c.backend().film().clone();
        let step = 1e-9;
        let (sw, rt) = c.transition_loop(step, 3e-6).unwrap();
        let (sw, rt) = (sw.unwrap(), rt.unwrap());
        let mu = film.switching_current_mean(0.4);
        let i_rt = film.retrapping_current(0.4);
        assert!(sw >= mu && sw <= mu + step + 1e-15, "{sw} vs {mu}");
        assert!(rt <= i_rt && rt >= i_rt - step - 1e-15, "{rt} vs {i_rt}");
        assert_eq!(c.transition_loop(step, 1e-6).unwrap(), (None, None));
    }

    #[test]
    fn iv_requires_test_mode() {
        let mut c = controller(ChipParams::seeded(6));
        assert!(matches!(
            c.external_iv_sweep(0.1, 1e-6, 10),
            Err(ControllerError::Backend(ChipError::NotInTestMode))
        ));
    }

    #[test]
    fn undershoot_triggers_early_by_bounded_codes() {
        for kappa in [0.5, 1.0, 2.5] {
            for t in [0.65, 0.8, 0.93] {
                let base = {
                    let mut c = controller(ChipParams::seeded(8).deterministic());
                    c.calibrate_comparator().unwrap();
                    set_local(&mut c, t);
                    c.prepare_normal(DacSetting::full_scale()).unwrap();
                    c.measure_retrapping(DacSetting::full_scale())
                        .unwrap()
                        .trigger_global()
                };
                let mut p = ChipParams::seeded(8).deterministic();
                p.electrical.undershoot_kappa = kappa;
                let mut c = controller(p);
                c.calibrate_comparator().unwrap();
                set_local(&mut c, t);
                c.prepare_normal(DacSetting::full_scale()).unwrap();
                let g = c
                    .measure_retrapping(DacSetting::full_scale())
                    .unwrap()
                    .trigger_global();
                // One-LSB steps: the dip is kappa LSB deep.
                let bound = kappa.ceil() as u32;
                assert!(
                    g >= base && g <= base + bound,
                    "kappa {kappa} t {t}: {g} vs {base}"
                );
            }
        }
    }
}
