//! Full-chip simulation: film, DAC, TIA and comparator behind the register
//! file and TAP, with a power ledger driving the self-heating model.

pub mod registers;
pub mod tap;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analog::{
    dac_actual_current, tia_sense_voltage, AnalogError, ComparatorModel, DacConfig, DacRealization,
    DacSetting,
};
use crate::physics::{
    Diode, DiodeModel, PhysicsError, ScFilm, ScFilmParams, ScState, ThermalModel,
};
use crate::rng::{derive_seed, stream_rng, STREAM_COMPARATOR, STREAM_DAC, STREAM_RUNTIME};
use registers::{RegisterFile, CTRL_CMP_EN, CTRL_DAC_EN, CTRL_TEST_MODE, CTRL_TIA_EN};
use tap::TapController;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChipError {
    #[error("chip supply is off")]
    PoweredDown,
    #[error("external current forcing requires TEST_MODE")]
    NotInTestMode,
    #[error("invalid chip parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Analog(#[from] AnalogError),
}

/// Side note left by the last evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusNote {
    /// TIA or comparator disabled; V_FLAG forced low.
    BlocksDisabled,
    /// TEST_MODE set; the DAC path is disconnected from the film.
    TestMode,
    /// TIA output clamped at 0 V.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparatorParams {
    pub trim_step: f64,
    pub offset_sigma: f64,
}

impl Default for ComparatorParams {
    fn default() -> Self {
        Self {
            trim_step: 0.1e-3,
            offset_sigma: 0.3e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectricalParams {
    pub v_ref: f64,
    pub supply: f64,
    /// Sensor circuitry (DAC + TIA + comparator) when enabled.
    pub circuit_power: f64,
    /// Digital and auxiliary static power, present whenever the supply is on.
    pub aux_power: f64,
    /// Per-block split (DAC, TIA, CMP) of `circuit_power`. `None` gates the
    /// whole lump on all three enables.
    pub power_fractions: Option<[f64; 3]>,
    /// Transient undershoot depth as a fraction of a downward current step.
    pub undershoot_kappa: f64,
}

impl Default for ElectricalParams {
    fn default() -> Self {
        Self {
            v_ref: 0.4,
            supply: 0.8,
            circuit_power: 1.5e-6,
            aux_power: 3e-6,
            power_fractions: None,
            undershoot_kappa: 0.0,
        }
    }
}

pub const DEFAULT_POWER_FRACTIONS: [f64; 3] = [0.4, 0.4, 0.2];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChipParams {
    pub film: ScFilmParams,
    pub thermal: ThermalModel,
    pub diode: DiodeModel,
    pub dac: DacConfig,
    pub comparator: ComparatorParams,
    pub electrical: ElectricalParams,
    /// Root seed for the comparator offset and runtime noise streams.
    pub seed: u64,
}

impl ChipParams {
    /// Defaults with every stream (including the DAC mismatch draw) derived from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut p = Self::default();
        p.set_seed(seed);
        p
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.dac.seed = derive_seed(seed, STREAM_DAC);
    }

    /// Zero every random contribution: mismatch, offsets, transition and diode noise.
    pub fn deterministic(mut self) -> Self {
        self.dac.mismatch_sigma_rel = 0.0;
        self.comparator.offset_sigma = 0.0;
        self.film.sw_sigma_rel = 0.0;
        self.film.rt_sigma_rel = 0.0;
        self.diode.noise_sigma = 0.0;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ChipSim {
    film: ScFilm,
    state: ScState,
    pinned: Option<ScState>,
    dac_cfg: DacConfig,
    dac_real: DacRealization,
    comparator: ComparatorModel,
    diode: Diode,
    thermal: ThermalModel,
    elec: ElectricalParams,
    regs: RegisterFile,
    tap: TapController,
    supply_on: bool,
    diode_biased: bool,
    last_current: f64,
    last_v_sns: f64,
    note: Option<StatusNote>,
    rng: ChaCha8Rng,
}

impl ChipSim {
    pub fn new(params: ChipParams) -> Result<Self, ChipError> {
        params.dac.validate()?;
        params.thermal.validate()?;
        let e = &params.electrical;
        let nonneg = [e.circuit_power, e.aux_power, e.undershoot_kappa];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(ChipError::InvalidParams(
                "powers and kappa must be >= 0".into(),
            ));
        }
        if !(e.v_ref > 0.0 && e.supply > e.v_ref) {
            return Err(ChipError::InvalidParams("need 0 < v_ref < supply".into()));
        }
        if let Some(f) = e.power_fractions {
            if f.iter().any(|v| !(*v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(ChipError::InvalidParams(
                    "power fractions must be >= 0 and sum to 1".into(),
                ));
            }
        }
        let cp = params.comparator;
        if !(cp.trim_step > 0.0 && cp.offset_sigma >= 0.0) {
            return Err(ChipError::InvalidParams(
                "trim_step must be > 0 and offset_sigma >= 0".into(),
            ));
        }

        let film = ScFilm::new(params.film)?;
        let diode = Diode::new(params.diode)?;
        let dac_real = DacRealization::draw(&params.dac);
        let mut cmp_rng = stream_rng(params.seed, STREAM_COMPARATOR);
        let comparator = ComparatorModel::realize(cp.trim_step, cp.offset_sigma, &mut cmp_rng);

        Ok(Self {
            film,
            state: ScState::Superconducting,
            pinned: None,
            dac_cfg: params.dac,
            dac_real,
            comparator,
            diode,
            thermal: params.thermal,
            elec: params.electrical,
            regs: RegisterFile::default(),
            tap: TapController::default(),
            supply_on: true,
            diode_biased: false,
            last_current: 0.0,
            last_v_sns: params.electrical.v_ref,
            note: None,
            rng: stream_rng(params.seed, STREAM_RUNTIME),
        })
    }

    pub fn tap_clock(&mut self, tms: bool, tdi: bool) -> bool {
        if !self.supply_on {
            return false;
        }
        let tdo = self.tap.clock(&mut self.regs, tms, tdi);
        self.sync_trim();
        tdo
    }

    fn sync_trim(&mut self) {
        self.comparator
            .set_trim(self.regs.trim() as u32)
            .expect("CMP register is masked to 5 bits");
    }

    pub fn tap(&self) -> &TapController {
        &self.tap
    }

    pub fn registers(&self) -> &RegisterFile {
        &self.regs
    }

    pub fn film(&self) -> &ScFilm {
        &self.film
    }

    pub fn sc_state(&self) -> ScState {
        self.state
    }

    pub fn dac_config(&self) -> &DacConfig {
        &self.dac_cfg
    }

    pub fn dac_realization(&self) -> &DacRealization {
        &self.dac_real
    }

    pub fn comparator(&self) -> &ComparatorModel {
        &self.comparator
    }

    pub fn diode(&self) -> &Diode {
        &self.diode
    }

    pub fn thermal(&self) -> &ThermalModel {
        &self.thermal
    }

    pub fn electrical(&self) -> &ElectricalParams {
        &self.elec
    }

    pub fn note(&self) -> Option<StatusNote> {
        self.note
    }

    pub fn last_v_sns(&self) -> f64 {
        self.last_v_sns
    }

    pub fn dac_setting(&self) -> DacSetting {
        DacSetting::from_register(self.regs.dac())
    }

    pub fn set_ambient(&mut self, ambient: f64) -> Result<(), ChipError> {
        let tm = ThermalModel {
            ambient,
            ..self.thermal
        };
        tm.validate()?;
        self.thermal = tm;
        Ok(())
    }

    pub fn set_supply(&mut self, on: bool) {
        self.supply_on = on;
    }

    pub fn supply_on(&self) -> bool {
        self.supply_on
    }

    pub fn set_diode_bias(&mut self, on: bool) {
        self.diode_biased = on;
    }

    /// Hold the film in `state` regardless of bias (simulation-only hook).
    pub fn pin_film(&mut self, state: Option<ScState>) {
        self.pinned = state;
        if let Some(s) = state {
            self.state = s;
        }
    }

    /// Power drawn by the sensor circuitry under the current CTRL value.
    pub fn circuit_power(&self) -> f64 {
        if !self.supply_on {
            return 0.0;
        }
        let ctrl = self.regs.ctrl();
        let on = [
            ctrl & CTRL_DAC_EN != 0,
            ctrl & CTRL_TIA_EN != 0,
            ctrl & CTRL_CMP_EN != 0,
        ];
        match self.elec.power_fractions {
            None if on.iter().all(|b| *b) => self.elec.circuit_power,
            None => 0.0,
            Some(f) => on
                .iter()
                .zip(f)
                .filter(|(b, _)| **b)
                .map(|(_, frac)| frac * self.elec.circuit_power)
                .sum(),
        }
    }

    fn static_power(&self) -> f64 {
        let aux = if self.supply_on {
            self.elec.aux_power
        } else {
            0.0
        };
        let diode = if self.diode_biased {
            self.diode.model().bias_power
        } else {
            0.0
        };
        aux + diode
    }

    pub fn power_total(&self) -> f64 {
        self.static_power() + self.circuit_power()
    }

    pub fn local_temperature(&self) -> f64 {
        self.thermal.local_temperature(self.power_total())
    }

    /// Die temperature while the diode is biased for a reading.
    pub fn diode_read_temperature(&self) -> f64 {
        let extra = if self.diode_biased {
            0.0
        } else {
            self.diode.model().bias_power
        };
        self.thermal.local_temperature(self.power_total() + extra)
    }

    /// Present DAC output current (zero unless DAC and TIA are enabled).
    pub fn dac_current(&self) -> f64 {
        let ctrl = self.regs.ctrl();
        if ctrl & CTRL_DAC_EN == 0 || ctrl & CTRL_TIA_EN == 0 {
            return 0.0;
        }
        dac_actual_current(&self.dac_cfg, &self.dac_real, self.dac_setting())
    }

    fn step_film(&mut self, i: f64, t: f64) -> Result<(), ChipError> {
        if let Some(s) = self.pinned {
            self.state = s;
        } else {
            self.state = self.film.step_state(self.state, i, t, &mut self.rng)?;
        }
        Ok(())
    }

    /// Settle the analog chain for the present register state and latch V_FLAG.
    pub fn evaluate(&mut self) -> Result<bool, ChipError> {
        if !self.supply_on {
            return Err(ChipError::PoweredDown);
        }
        self.note = None;
        let ctrl = self.regs.ctrl();
        if ctrl & CTRL_TEST_MODE != 0 {
            self.note = Some(StatusNote::TestMode);
            self.regs.latch_flag(false);
            return Ok(false);
        }

        let t = self.local_temperature();
        let i = self.dac_current();
        let kappa = self.elec.undershoot_kappa;
        if kappa > 0.0 && i < self.last_current {
            let dip = (i - kappa * (self.last_current - i)).max(0.0);
            self.step_film(dip, t)?;
        }
        self.step_film(i, t)?;
        self.last_current = i;

        let flag = if ctrl & CTRL_TIA_EN == 0 || ctrl & CTRL_CMP_EN == 0 {
            self.note = Some(StatusNote::BlocksDisabled);
            self.last_v_sns = self.elec.v_ref;
            false
        } else {
            let out = tia_sense_voltage(self.elec.v_ref, i, self.film.resistance(self.state));
            if out.saturated {
                self.note = Some(StatusNote::Saturated);
            }
            self.last_v_sns = out.v_sns;
            self.comparator.flag(self.elec.v_ref, out.v_sns)
        };
        self.regs.latch_flag(flag);
        Ok(flag)
    }

    /// Drive `i` through the Kelvin terminals and return the two-terminal voltage.
    pub fn force_external_current(&mut self, i: f64) -> Result<f64, ChipError> {
        if !self.supply_on {
            return Err(ChipError::PoweredDown);
        }
        if self.regs.ctrl() & CTRL_TEST_MODE == 0 {
            return Err(ChipError::NotInTestMode);
        }
        let t = self.thermal.local_temperature(self.static_power());
        self.step_film(i, t)?;
        self.last_current = 0.0;
        Ok(i * self.film.resistance(self.state))
    }

    pub fn read_diode(&mut self) -> Result<f64, ChipError> {
        let t = self.diode_read_temperature();
        Ok(self.diode.read(t, &mut self.rng)?)
    }
}
