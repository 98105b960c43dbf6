//! Superconducting sensing film, on-die diode reference and lumped thermal model.
//!
//! Temperatures are in kelvin, currents in ampere, resistances in ohm and
//! powers in watt throughout.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::interp::{InterpError, Pchip};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("invalid film parameters: {0}")]
    InvalidFilm(String),
    #[error("invalid thermal model: {0}")]
    InvalidThermal(String),
    #[error("invalid diode curve: {0}")]
    InvalidDiode(String),
    #[error("negative bias current {0} A")]
    NegativeCurrent(f64),
    #[error("diode temperature {0} K outside calibrated span [{1}, {2}] K")]
    TemperatureOutOfRange(f64, f64, f64),
    #[error("diode voltage {0} V outside calibrated span [{1}, {2}] V")]
    VoltageOutOfRange(f64, f64, f64),
    #[error(transparent)]
    Interp(#[from] InterpError),
}

/// Default retrapping anchor table, (kelvin, nanoampere).
pub const DEFAULT_RETRAP_ANCHORS_NA: [(f64, f64); 12] = [
    (0.40, 88.5),
    (0.50, 85.3),
    (0.60, 82.1),
    (0.70, 78.9),
    (0.80, 72.0),
    (0.90, 57.0),
    (0.95, 46.0),
    (0.99, 36.0),
    (1.00, 27.0),
    (1.01, 18.0),
    (1.02, 9.0),
    (1.03, 0.0),
];

/// Lumped die-to-plate thermal resistance: 385 mK rise at 4.5 uW.
pub const DEFAULT_R_TH: f64 = (0.400 - 0.015) / 4.5e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ScFilmParams {
    pub tc: f64,
    pub r_normal: f64,
    pub r_residual: f64,
    /// (temperature, retrapping current), temperatures ascending.
    pub retrap_anchors: Vec<(f64, f64)>,
    pub sw_scale_current: f64,
    pub sw_sigma_rel: f64,
    pub rt_sigma_rel: f64,
}

impl Default for ScFilmParams {
    fn default() -> Self {
        Self {
            tc: 1.03,
            r_normal: 193e3,
            r_residual: 40.0,
            retrap_anchors: DEFAULT_RETRAP_ANCHORS_NA
                .iter()
                .map(|&(t, i)| (t, i * 1e-9))
                .collect(),
            sw_scale_current: 3e-6,
            sw_sigma_rel: 0.02,
            rt_sigma_rel: 0.0,
        }
    }
}

impl ScFilmParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |m: &str| Err(PhysicsError::InvalidFilm(m.to_string()));
        if !(self.tc > 0.0 && self.tc.is_finite()) {
            return bad("tc must be positive");
        }
        if !(self.r_residual >= 0.0 && self.r_normal > self.r_residual) {
            return bad("need r_normal > r_residual >= 0");
        }
        if !(self.sw_scale_current > 0.0) {
            return bad("sw_scale_current must be positive");
        }
        if !(self.sw_sigma_rel >= 0.0 && self.rt_sigma_rel >= 0.0) {
            return bad("relative sigmas must be non-negative");
        }
        let a = &self.retrap_anchors;
        if a.len() < 2 {
            return bad("retrap_anchors needs at least two entries");
        }
        if a.iter()
            .any(|&(t, i)| !(t > 0.0) || !(i >= 0.0) || !i.is_finite())
        {
            return bad("anchor temperatures must be positive and currents non-negative");
        }
        for w in a.windows(2) {
            if !(w[1].0 > w[0].0) {
                return bad("anchor temperatures must strictly increase");
            }
            if !(w[1].1 < w[0].1) {
                return bad("anchor currents must strictly decrease");
            }
        }
        let (t_last, i_last) = a[a.len() - 1];
        if (t_last - self.tc).abs() > 1e-12 || i_last != 0.0 {
            return bad("final anchor must be (tc, 0)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScState {
    Superconducting,
    Normal,
}

impl ScState {
    pub fn label(self) -> &'static str {
        match self {
            ScState::Superconducting => "superconducting",
            ScState::Normal => "normal",
        }
    }
}

/// Validated film model with its retrapping interpolant.
#[derive(Debug, Clone)]
pub struct ScFilm {
    params: ScFilmParams,
    retrap: Pchip,
}

impl ScFilm {
    pub fn new(params: ScFilmParams) -> Result<Self, PhysicsError> {
        params.validate()?;
        let retrap = Pchip::from_pairs(&params.retrap_anchors)?;
        let film = Self { params, retrap };
        // Hysteresis must hold everywhere below tc.
        let tc = film.params.tc;
        let t_lo = film.params.retrap_anchors[0].0.min(tc) * 0.5;
        for k in 0..2000 {
            let t = t_lo + (tc - t_lo) * k as f64 / 2000.0;
            if film.switching_current_mean(t) <= film.retrapping_current(t) {
                return Err(PhysicsError::InvalidFilm(format!(
                    "switching current does not exceed retrapping current at {t:.4} K"
                )));
            }
        }
        Ok(film)
    }

    pub fn params(&self) -> &ScFilmParams {
        &self.params
    }

    pub fn tc(&self) -> f64 {
        self.params.tc
    }

    pub fn retrapping_current(&self, t: f64) -> f64 {
        if t >= self.params.tc {
            return 0.0;
        }
        if t <= self.retrap.x_min() {
            return self.params.retrap_anchors[0].1;
        }
        self.retrap.eval(t).max(0.0)
    }

    /// Slope of the retrapping curve, A/K. Zero outside the anchor span.
    pub fn retrapping_slope(&self, t: f64) -> f64 {
        if t >= self.params.tc || t <= self.retrap.x_min() {
            return 0.0;
        }
        self.retrap.derivative(t)
    }

    pub fn switching_current_mean(&self, t: f64) -> f64 {
        if t >= self.params.tc {
            return 0.0;
        }
        let r = t / self.params.tc;
        self.params.sw_scale_current * (1.0 - r * r)
    }

    /// Draw one (switching, retrapping) pair. The switching sample is
    /// truncated from below at the retrapping sample.
    pub fn sample_transition_currents<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> (f64, f64) {
        let rt_mean = self.retrapping_current(t);
        let i_rt = gaussian(rt_mean, self.params.rt_sigma_rel * rt_mean, rng).max(0.0);
        let sw_mean = self.switching_current_mean(t);
        let i_sw = gaussian(sw_mean, self.params.sw_sigma_rel * sw_mean, rng).max(i_rt);
        (i_sw, i_rt)
    }

    /// Advance the hysteretic state for a quasi-static bias `i` at temperature `t`.
    pub fn step_state<R: Rng + ?Sized>(
        &self,
        state: ScState,
        i: f64,
        t: f64,
        rng: &mut R,
    ) -> Result<ScState, PhysicsError> {
        if i < 0.0 {
            return Err(PhysicsError::NegativeCurrent(i));
        }
        if t >= self.params.tc {
            return Ok(ScState::Normal);
        }
        let (i_sw, i_rt) = self.sample_transition_currents(t, rng);
        Ok(match state {
            ScState::Normal if i < i_rt => ScState::Superconducting,
            ScState::Superconducting if i > i_sw => ScState::Normal,
            s => s,
        })
    }

    pub fn resistance(&self, state: ScState) -> f64 {
        match state {
            ScState::Normal => self.params.r_normal,
            ScState::Superconducting => self.params.r_residual,
        }
    }
}

fn gaussian<R: Rng + ?Sized>(mean: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        Normal::new(mean, sigma)
            .expect("sigma is finite and positive")
            .sample(rng)
    } else {
        mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalModel {
    pub ambient: f64,
    pub r_th: f64,
}

impl Default for ThermalModel {
    fn default() -> Self {
        Self {
            ambient: 0.015,
            r_th: DEFAULT_R_TH,
        }
    }
}

impl ThermalModel {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.ambient >= 0.0 && self.ambient.is_finite()) {
            return Err(PhysicsError::InvalidThermal("ambient must be >= 0".into()));
        }
        if !(self.r_th >= 0.0 && self.r_th.is_finite()) {
            return Err(PhysicsError::InvalidThermal("r_th must be >= 0".into()));
        }
        Ok(())
    }

    pub fn local_temperature(&self, dissipated_power: f64) -> f64 {
        debug_assert!(dissipated_power >= 0.0);
        self.ambient + self.r_th * dissipated_power
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiodeModel {
    /// (temperature, forward voltage), temperatures ascending.
    pub curve: Vec<(f64, f64)>,
    pub noise_sigma: f64,
    pub bias_power: f64,
}

impl Default for DiodeModel {
    fn default() -> Self {
        // Synthetic forward-voltage curve, 0.01 K to 2.0 K.
        let mut temps = vec![0.01];
        temps.extend((1..=40).map(|k| k as f64 * 0.05));
        let curve = temps
            .into_iter()
            .map(|t| (t, 0.70 - 0.04 * t - 0.01 * t * t))
            .collect();
        Self {
            curve,
            noise_sigma: 10e-6,
            bias_power: 1e-9,
        }
    }
}

/// Diode with a monotone interpolant over its calibration curve.
#[derive(Debug, Clone)]
pub struct Diode {
    model: DiodeModel,
    v_of_t: Pchip,
}

impl Diode {
    pub fn new(model: DiodeModel) -> Result<Self, PhysicsError> {
        if model.curve.len() < 2 {
            return Err(PhysicsError::InvalidDiode(
                "need at least two points".into(),
            ));
        }
        if !(model.noise_sigma >= 0.0 && model.bias_power >= 0.0) {
            return Err(PhysicsError::InvalidDiode(
                "noise_sigma and bias_power must be >= 0".into(),
            ));
        }
        let dv: Vec<f64> = model.curve.windows(2).map(|w| w[1].1 - w[0].1).collect();
        let monotone = dv.iter().all(|&d| d > 0.0) || dv.iter().all(|&d| d < 0.0);
        if !monotone {
            return Err(PhysicsError::InvalidDiode(
                "voltage must be strictly monotone in temperature".into(),
            ));
        }
        let v_of_t = Pchip::from_pairs(&model.curve)?;
        Ok(Self { model, v_of_t })
    }

    pub fn model(&self) -> &DiodeModel {
        &self.model
    }

    fn t_span(&self) -> (f64, f64) {
        (self.v_of_t.x_min(), self.v_of_t.x_max())
    }

    /// Noise-free forward voltage at `t`.
    pub fn voltage(&self, t: f64) -> Result<f64, PhysicsError> {
        let (lo, hi) = self.t_span();
        if !(lo..=hi).contains(&t) {
            return Err(PhysicsError::TemperatureOutOfRange(t, lo, hi));
        }
        Ok(self.v_of_t.eval(t))
    }

    /// |dV/dT| at `t`, V/K.
    pub fn sensitivity(&self, t: f64) -> f64 {
        self.v_of_t.derivative(t).abs()
    }

    pub fn read<R: Rng + ?Sized>(&self, t_local: f64, rng: &mut R) -> Result<f64, PhysicsError> {
        let v = self.voltage(t_local)?;
        Ok(gaussian(v, self.model.noise_sigma, rng))
    }

    pub fn invert(&self, v: f64) -> Result<f64, PhysicsError> {
        let (lo, hi) = self.t_span();
        let (va, vb) = (self.v_of_t.eval(lo), self.v_of_t.eval(hi));
        let (vmin, vmax) = if va < vb { (va, vb) } else { (vb, va) };
        self.v_of_t
            .invert(v)
            .ok_or(PhysicsError::VoltageOutOfRange(v, vmin, vmax))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn film() -> ScFilm {
        ScFilm::new(ScFilmParams::default()).unwrap()
    }

    #[test]
    fn retrapping_vanishes_at_and_above_tc() {
        let f = film();
        assert_eq!(f.retrapping_current(1.03), 0.0);
        assert_eq!(f.retrapping_current(2.0), 0.0);
    }

    #[test]
    fn retrapping_at_0p8_brackets_codes_11_and_12() {
        let i = film().retrapping_current(0.8);
        assert!(i > 68.75e-9 && i <= 75e-9, "{i}");
        assert!((i - 72e-9).abs() < 1e-15);
    }

    #[test]
    fn retrapping_clamps_below_first_anchor() {
        let f = film();
        assert_eq!(f.retrapping_current(0.1), 88.5e-9);
        assert_eq!(f.retrapping_current(0.4), 88.5e-9);
    }

    #[test]
    fn switching_mean_values() {
        let f = film();
        assert_eq!(f.switching_current_mean(1.03), 0.0);
        let expected = 3e-6 * (1.0 - (0.4f64 / 1.03).powi(2));
        assert!((f.switching_current_mean(0.4) - expected).abs() < 1e-18);
        assert!((expected - 2.547e-6).abs() < 1e-9);
        assert!(f.switching_current_mean(0.4) > 1.575e-6);
    }

    #[test]
    fn hysteresis_ordering_on_dense_grid() {
        let f = film();
        let mut prev = f64::INFINITY;
        for k in 1..1030 {
            let t = k as f64 * 1e-3;
            let rt = f.retrapping_current(t);
            assert!(f.switching_current_mean(t) > rt, "at {t}");
            if t > 0.4 {
                assert!(rt < prev, "retrapping not decreasing at {t}");
            }
            prev = rt;
        }
    }

    #[test]
    fn zero_variance_retrapping_is_exact() {
        let f = film();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (_, rt) = f.sample_transition_currents(0.8, &mut rng);
            assert_eq!(rt, f.retrapping_current(0.8));
        }
    }

    #[test]
    fn switching_samples_match_mean_and_are_wider() {
        let f = film();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|_| f.sample_transition_currents(0.8, &mut rng))
            .collect();
        let mean = samples.iter().map(|s| s.0).sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - f.switching_current_mean(0.8)).abs() < 3.0 * se);
        let rt_min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let rt_max = samples
            .iter()
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(var.sqrt() > rt_max - rt_min);
    }

    #[test]
    fn identical_seeds_identical_samples() {
        let f = film();
        let a: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..50)
                .map(|_| f.sample_transition_currents(0.7, &mut r))
                .collect()
        };
        let b: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..50)
                .map(|_| f.sample_transition_currents(0.7, &mut r))
                .collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn state_machine_cases() {
        let f = film();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        use ScState::*;
        assert_eq!(
            f.step_state(Normal, 0.0, 0.8, &mut rng).unwrap(),
            Superconducting
        );
        assert_eq!(
            f.step_state(Superconducting, 0.0, 1.1, &mut rng).unwrap(),
            Normal
        );
        // Inside the band: 72 nA < 200 nA << 1.19 uA.
        assert_eq!(
            f.step_state(Superconducting, 200e-9, 0.8, &mut rng)
                .unwrap(),
            Superconducting
        );
        assert_eq!(f.step_state(Normal, 200e-9, 0.8, &mut rng).unwrap(), Normal);
        assert!(matches!(
            f.step_state(Normal, -1e-9, 0.8, &mut rng),
            Err(PhysicsError::NegativeCurrent(_))
        ));
    }

    #[test]
    fn resistance_by_state() {
        let f = film();
        assert_eq!(f.resistance(ScState::Normal), 193e3);
        assert_eq!(f.resistance(ScState::Superconducting), 40.0);
        let ideal = ScFilm::new(ScFilmParams {
            r_residual: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ideal.resistance(ScState::Superconducting), 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = ScFilmParams::default();
        p.retrap_anchors[3].1 = 90e-9;
        assert!(ScFilm::new(p).is_err());
        let p = ScFilmParams {
            tc: 0.0,
            ..Default::default()
        };
        assert!(ScFilm::new(p).is_err());
        let p = ScFilmParams {
            sw_scale_current: 50e-9,
            ..Default::default()
        };
        assert!(ScFilm::new(p).is_err());
        let p = ScFilmParams {
            r_normal: 10.0,
            ..Default::default()
        };
        assert!(ScFilm::new(p).is_err());
    }

    #[test]
    fn self_heating_arithmetic() {
        let tm = ThermalModel::default();
        assert!((tm.r_th * 1e-6 * 1e3 - 85.56).abs() < 0.01);
        assert!((tm.local_temperature(4.5e-6) - 0.400).abs() < 1e-12);
        assert_eq!(tm.local_temperature(0.0), 0.015);
        assert!((tm.local_temperature(1e-9) - 0.0150856).abs() < 1e-7);
    }

    #[test]
    fn diode_anchor_and_round_trip() {
        let d = Diode::new(DiodeModel {
            noise_sigma: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(t, v) in &d.model().curve.clone() {
            assert_eq!(d.read(t, &mut rng).unwrap(), v);
        }
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.02..1.9);
            let back = d.invert(d.read(t, &mut rng).unwrap()).unwrap();
            assert!((back - t).abs() < 1e-3);
        }
        assert!(matches!(
            d.invert(5.0),
            Err(PhysicsError::VoltageOutOfRange(..))
        ));
        assert!(matches!(
            d.read(3.0, &mut rng),
            Err(PhysicsError::TemperatureOutOfRange(..))
        ));
    }

    #[test]
    fn diode_noise_propagates_through_slope() {
        let d = Diode::new(DiodeModel::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = 0.8;
        let n = 4000;
        let temps: Vec<f64> = (0..n)
            .map(|_| d.invert(d.read(t, &mut rng).unwrap()).unwrap())
            .collect();
        let mean = temps.iter().sum::<f64>() / n as f64;
        let sd = (temps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let expected = d.model().noise_sigma / d.sensitivity(t);
        assert!((sd / expected - 1.0).abs() < 0.1, "{sd} vs {expected}");
    }

    #[test]
    fn non_monotone_diode_rejected() {
        let m = DiodeModel {
            curve: vec![(0.1, 0.5), (0.2, 0.6), (0.3, 0.55)],
            ..Default::default()
        };
        assert!(Diode::new(m).is_err());
    }
}
