//! Behavioral models of the segmented current DAC, the TIA sensing node and
//! the trimmed comparator.
//!
//! DAC layout: 3 MSBs drive 7 thermometer-coded unit cells of 8 LSB each, 3
//! LSBs drive binary cells of weight 1, 2 and 4, and a 2-bit offset adds up to
//! three 63-LSB units. Global code `g = 63 * section + code` spans 0..=252.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub const CODE_MAX: u8 = 63;
pub const SECTION_MAX: u8 = 3;
pub const SECTION_STEP: u32 = 63;
pub const GLOBAL_MAX: u32 = SECTION_STEP * SECTION_MAX as u32 + CODE_MAX as u32;
pub const TRIM_MAX: u8 = 31;

const MSB_UNIT_WEIGHT: f64 = 8.0;
const LSB_WEIGHTS: [f64; 3] = [1.0, 2.0, 4.0];

/// Relative per-unit mismatch at room temperature.
pub const ROOM_MISMATCH_SIGMA: f64 = 0.004;
/// Relative per-unit mismatch at deep-cryogenic temperature.
pub const CRYO_MISMATCH_SIGMA: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalogError {
    #[error("DAC code {0} out of range 0..=63")]
    CodeOutOfRange(u32),
    #[error("DAC section {0} out of range 0..=3")]
    SectionOutOfRange(u32),
    #[error("global DAC code {0} out of range 0..=252")]
    GlobalOutOfRange(i64),
    #[error("trim code {0} out of range 0..=31")]
    TrimOutOfRange(u32),
    #[error("invalid DAC config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacConfig {
    pub i_ref: f64,
    pub mismatch_sigma_rel: f64,
    pub seed: u64,
}

impl Default for DacConfig {
    fn default() -> Self {
        Self {
            i_ref: 50e-9,
            mismatch_sigma_rel: CRYO_MISMATCH_SIGMA,
            seed: 0,
        }
    }
}

impl DacConfig {
    pub fn validate(&self) -> Result<(), AnalogError> {
        if !(self.i_ref > 0.0 && self.i_ref.is_finite()) {
            return Err(AnalogError::InvalidConfig("i_ref must be positive"));
        }
        if !(self.mismatch_sigma_rel >= 0.0 && self.mismatch_sigma_rel.is_finite()) {
            return Err(AnalogError::InvalidConfig(
                "mismatch_sigma_rel must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn lsb(&self) -> f64 {
        self.i_ref / 8.0
    }
}

/// Static mismatch draw: relative error of every unit cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacRealization {
    pub msb_unit_errors: [f64; 7],
    pub lsb_unit_errors: [f64; 3],
    pub offset_unit_errors: [f64; 3],
}

impl DacRealization {
    pub fn ideal() -> Self {
        Self {
            msb_unit_errors: [0.0; 7],
            lsb_unit_errors: [0.0; 3],
            offset_unit_errors: [0.0; 3],
        }
    }

    /// Gaussian relative errors; a cell of weight `w` LSB gets sigma / sqrt(w).
    pub fn draw(cfg: &DacConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::draw_with(cfg.mismatch_sigma_rel, &mut rng)
    }

    pub fn draw_with<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Self {
        let mut unit = |w: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            z * sigma / w.sqrt()
        };
        let msb_unit_errors = std::array::from_fn(|_| unit(MSB_UNIT_WEIGHT));
        let lsb_unit_errors = std::array::from_fn(|b| unit(LSB_WEIGHTS[b]));
        let offset_unit_errors = std::array::from_fn(|_| unit(SECTION_STEP as f64));
        Self {
            msb_unit_errors,
            lsb_unit_errors,
            offset_unit_errors,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DacSetting {
    code: u8,
    section: u8,
}

impl DacSetting {
    pub fn new(code: u32, section: u32) -> Result<Self, AnalogError> {
        if code > CODE_MAX as u32 {
            return Err(AnalogError::CodeOutOfRange(code));
        }
        if section > SECTION_MAX as u32 {
            return Err(AnalogError::SectionOutOfRange(section));
        }
        Ok(Self {
            code: code as u8,
            section: section as u8,
        })
    }

    /// Canonical setting for a global code: overlap codes resolve to the
    /// bottom of the upper section, except full scale which is (63, 3).
    pub fn from_global(g: i64) -> Result<Self, AnalogError> {
        if !(0..=GLOBAL_MAX as i64).contains(&g) {
            return Err(AnalogError::GlobalOutOfRange(g));
        }
        let g = g as u32;
        let section = (g / SECTION_STEP).min(SECTION_MAX as u32);
        Self::new(g - SECTION_STEP * section, section)
    }

    pub fn full_scale() -> Self {
        Self {
            code: CODE_MAX,
            section: SECTION_MAX,
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }

    pub fn section(&self) -> u8 {
        self.section
    }

    pub fn global(&self) -> u32 {
        SECTION_STEP * self.section as u32 + self.code as u32
    }

    /// Packed DAC register value: bits[5:0] code, bits[7:6] section.
    pub fn to_register(&self) -> u8 {
        (self.section << 6) | self.code
    }

    pub fn from_register(v: u8) -> Self {
        Self {
            code: v & 0x3F,
            section: v >> 6,
        }
    }
}

/// Thermometer MSB count and binary LSB bits (bit 0 first).
pub fn decode_segments(code: u32) -> Result<(u8, [bool; 3]), AnalogError> {
    if code > CODE_MAX as u32 {
        return Err(AnalogError::CodeOutOfRange(code));
    }
    let lsb = code % 8;
    Ok(((code / 8) as u8, [lsb & 1 != 0, lsb & 2 != 0, lsb & 4 != 0]))
}

pub fn dac_ideal_current(cfg: &DacConfig, s: DacSetting) -> f64 {
    s.global() as f64 * cfg.lsb()
}

pub fn dac_actual_current(cfg: &DacConfig, real: &DacRealization, s: DacSetting) -> f64 {
    let (msb_on, bits) = decode_segments(s.code as u32).expect("setting is range-checked");
    let mut units = 0.0;
    for e in &real.msb_unit_errors[..msb_on as usize] {
        units += MSB_UNIT_WEIGHT * (1.0 + e);
    }
    for ((on, w), e) in bits.iter().zip(LSB_WEIGHTS).zip(real.lsb_unit_errors) {
        if *on {
            units += w * (1.0 + e);
        }
    }
    for e in &real.offset_unit_errors[..s.section as usize] {
        units += SECTION_STEP as f64 * (1.0 + e);
    }
    units * cfg.lsb()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiaOutput {
    pub v_sns: f64,
    pub saturated: bool,
}

/// Ideal virtual-ground TIA: the film drop hangs below `v_ref`, clamped at 0 V.
pub fn tia_sense_voltage(v_ref: f64, i: f64, r: f64) -> TiaOutput {
    let drop = i * r;
    if drop > v_ref {
        TiaOutput {
            v_sns: 0.0,
            saturated: true,
        }
    } else {
        TiaOutput {
            v_sns: v_ref - drop,
            saturated: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparatorModel {
    pub trim_step: f64,
    /// Realized random input offset, fixed per instance.
    pub offset: f64,
    trim: u8,
}

impl ComparatorModel {
    pub fn new(trim_step: f64, offset: f64, trim: u32) -> Result<Self, AnalogError> {
        if trim > TRIM_MAX as u32 {
            return Err(AnalogError::TrimOutOfRange(trim));
        }
        Ok(Self {
            trim_step,
            offset,
            trim: trim as u8,
        })
    }

    pub fn realize<R: Rng + ?Sized>(trim_step: f64, offset_sigma: f64, rng: &mut R) -> Self {
        let z: f64 = StandardNormal.sample(rng);
        Self {
            trim_step,
            offset: z * offset_sigma,
            trim: 0,
        }
    }

    pub fn trim(&self) -> u8 {
        self.trim
    }

    pub fn set_trim(&mut self, trim: u32) -> Result<(), AnalogError> {
        if trim > TRIM_MAX as u32 {
            return Err(AnalogError::TrimOutOfRange(trim));
        }
        self.trim = trim as u8;
        Ok(())
    }

    pub fn trigger_voltage(&self) -> f64 {
        self.trigger_voltage_at(self.trim)
    }

    pub fn trigger_voltage_at(&self, trim: u8) -> f64 {
        self.offset + (trim as f64 - 15.5) * self.trim_step
    }

    /// Logic 1 iff the drop below `v_ref` exceeds the trigger voltage.
    pub fn flag(&self, v_ref: f64, v_sns: f64) -> bool {
        (v_ref - v_sns) > self.trigger_voltage()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LSB: f64 = 6.25e-9;

    fn cfg(sigma: f64, seed: u64) -> DacConfig {
        DacConfig {
            i_ref: 50e-9,
            mismatch_sigma_rel: sigma,
            seed,
        }
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_segments(0).unwrap(), (0, [false, false, false]));
        assert_eq!(decode_segments(63).unwrap(), (7, [true, true, true]));
        assert_eq!(decode_segments(21).unwrap(), (2, [true, false, true]));
        assert_eq!(decode_segments(64), Err(AnalogError::CodeOutOfRange(64)));
    }

    #[test]
    fn setting_ranges_enforced() {
        assert!(DacSetting::new(64, 0).is_err());
        assert!(DacSetting::new(0, 4).is_err());
        assert!(DacSetting::from_global(253).is_err());
        assert!(DacSetting::from_global(-1).is_err());
        let s = DacSetting::from_global(190).unwrap();
        assert_eq!((s.section(), s.code()), (3, 1));
        let s = DacSetting::from_global(63).unwrap();
        assert_eq!((s.section(), s.code()), (1, 0));
        let s = DacSetting::from_global(62).unwrap();
        assert_eq!((s.section(), s.code()), (0, 62));
        assert_eq!(
            DacSetting::from_global(252).unwrap(),
            DacSetting::full_scale()
        );
    }

    #[test]
    fn ideal_current_examples() {
        let c = cfg(0.0, 0);
        assert_eq!(dac_ideal_current(&c, DacSetting::new(0, 0).unwrap()), 0.0);
        let fs = dac_ideal_current(&c, DacSetting::full_scale());
        assert!((fs - 1.575e-6).abs() < 1e-20);
        let i8 = dac_ideal_current(&c, DacSetting::new(8, 0).unwrap());
        assert!((i8 - 50e-9).abs() < 1e-22);
    }

    #[test]
    fn zero_mismatch_matches_ideal_everywhere() {
        let c = cfg(0.0, 0);
        let r = DacRealization::draw(&c);
        assert_eq!(r, DacRealization::ideal());
        for section in 0..=3 {
            for code in 0..=63 {
                let s = DacSetting::new(code, section).unwrap();
                let a = dac_actual_current(&c, &r, s);
                assert!((a - dac_ideal_current(&c, s)).abs() < 1e-21);
            }
        }
        for k in 0..3 {
            let top = dac_actual_current(&c, &r, DacSetting::new(63, k).unwrap());
            let bottom = dac_actual_current(&c, &r, DacSetting::new(0, k + 1).unwrap());
            assert!((top - bottom).abs() < 1e-21);
        }
    }

    #[test]
    fn boundary_step_error_small_at_one_percent() {
        let mut total = 0.0;
        let mut n = 0;
        for seed in 0..100 {
            let c = cfg(0.01, seed);
            let r = DacRealization::draw(&c);
            for k in 0..3 {
                let top = dac_actual_current(&c, &r, DacSetting::new(63, k).unwrap());
                let bottom = dac_actual_current(&c, &r, DacSetting::new(0, k + 1).unwrap());
                total += ((top - bottom) / LSB).abs();
                n += 1;
            }
        }
        assert!(total / n as f64 <= 1.0);
    }

    #[test]
    fn realization_is_seed_deterministic() {
        let a = DacRealization::draw(&cfg(0.03, 42));
        let b = DacRealization::draw(&cfg(0.03, 42));
        let c = DacRealization::draw(&cfg(0.03, 43));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tia_examples() {
        assert_eq!(tia_sense_voltage(0.4, 0.0, 193e3).v_sns, 0.4);
        let o = tia_sense_voltage(0.4, LSB, 193e3);
        assert!((0.4 - o.v_sns - 1.20625e-3).abs() < 1e-12);
        assert!((o.v_sns - 0.3988).abs() < 1e-4);
        let o = tia_sense_voltage(0.4, 1.575e-6, 40.0);
        assert!((0.4 - o.v_sns - 63e-6).abs() < 1e-12);
        let o = tia_sense_voltage(0.4, 5e-6, 193e3);
        assert!(o.saturated);
        assert_eq!(o.v_sns, 0.0);
    }

    #[test]
    fn trigger_voltage_law() {
        let cm = ComparatorModel::new(1e-4, 0.0, 16).unwrap();
        assert!((cm.trigger_voltage() - 0.05e-3).abs() < 1e-15);
        assert!((cm.trigger_voltage_at(31) - cm.trigger_voltage_at(0) - 31.0 * 1e-4).abs() < 1e-15);
        for t in 0..31 {
            let step = cm.trigger_voltage_at(t + 1) - cm.trigger_voltage_at(t);
            assert!((step - 1e-4).abs() < 1e-15);
        }
        assert!(ComparatorModel::new(1e-4, 0.0, 32).is_err());
    }

    #[test]
    fn comparator_examples() {
        let cm = ComparatorModel::new(1e-4, 0.5e-3 - 0.05e-3, 16).unwrap();
        assert!((cm.trigger_voltage() - 0.5e-3).abs() < 1e-15);
        assert!(!cm.flag(0.4, 0.4));
        assert!(cm.flag(0.4, 0.4 - 1.20625e-3));
        assert!(!cm.flag(0.4, 0.4 - 63e-6));
    }

    proptest! {
        #[test]
        fn thermometer_msb_errors_keep_transfer_monotone(
            errs in prop::array::uniform7(-0.12f64..0.9),
        ) {
            let c = cfg(0.0, 0);
            let r = DacRealization { msb_unit_errors: errs, ..DacRealization::ideal() };
            for section in 0..=3 {
                let mut prev = -1.0;
                for code in 0..=63 {
                    let i = dac_actual_current(&c, &r, DacSetting::new(code, section).unwrap());
                    prop_assert!(i >= prev);
                    prev = i;
                }
            }
        }

        #[test]
        fn ideal_transfer_strictly_increasing_in_global(g in 0i64..252) {
            let c = cfg(0.0, 0);
            let r = DacRealization::ideal();
            let lo = dac_actual_current(&c, &r, DacSetting::from_global(g).unwrap());
            let hi = dac_actual_current(&c, &r, DacSetting::from_global(g + 1).unwrap());
            prop_assert!(hi > lo);
        }

        #[test]
        fn comparator_depends_only_on_difference(
            shift in -0.3f64..0.3, drop in 0.0f64..2e-3, trim in 0u32..32,
        ) {
            let cm = ComparatorModel::new(1e-4, 1e-4, trim).unwrap();
            let base = cm.flag(0.4, 0.4 - drop);
            let moved = cm.flag(0.4 + shift, 0.4 + shift - drop);
            // Equal up to rounding right at the threshold.
            if ((drop - cm.trigger_voltage()).abs()) > 1e-12 {
                prop_assert_eq!(base, moved);
            }
        }

        #[test]
        fn register_packing_round_trips(code in 0u32..64, section in 0u32..4) {
            let s = DacSetting::new(code, section).unwrap();
            prop_assert_eq!(DacSetting::from_register(s.to_register()), s);
        }
    }
}
