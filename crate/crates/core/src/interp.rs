//! Shape-preserving piecewise cubic Hermite interpolation (PCHIP).
//!
//! Knot slopes use the Fritsch-Butland weighted harmonic mean in the interior
//! and the three-point one-sided formula at the ends, which keeps every
//! monotone data set monotone between knots.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("need at least two knots with matching x/y lengths")]
    TooFewKnots,
    #[error("knot abscissae must be strictly increasing")]
    NonIncreasing,
    #[error("knots must be finite")]
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, InterpError> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(InterpError::TooFewKnots);
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(InterpError::NonFinite);
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(InterpError::NonIncreasing);
        }

        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = y
            .windows(2)
            .zip(&h)
            .map(|(w, hk)| (w[1] - w[0]) / hk)
            .collect();

        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
            return Ok(Self { x, y, d });
        }

        for k in 1..n - 1 {
            let (s1, s2) = (delta[k - 1], delta[k]);
            if s1 == 0.0 || s2 == 0.0 || s1.signum() != s2.signum() {
                d[k] = 0.0;
            } else {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / s1 + w2 / s2);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);

        Ok(Self { x, y, d })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, InterpError> {
        let (x, y) = pairs.iter().copied().unzip();
        Self::new(x, y)
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }

    fn segment(&self, xq: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&v| v <= xq) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value at `xq`; outside the knot span the end cubic is extended.
    pub fn eval(&self, xq: f64) -> f64 {
        let k = self.segment(xq);
        let h = self.x[k + 1] - self.x[k];
        let t = (xq - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    pub fn derivative(&self, xq: f64) -> f64 {
        let k = self.segment(xq);
        let h = self.x[k + 1] - self.x[k];
        let t = (xq - self.x[k]) / h;
        let t2 = t * t;
        let dh00 = (6.0 * t2 - 6.0 * t) / h;
        let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
        let dh01 = (-6.0 * t2 + 6.0 * t) / h;
        let dh11 = 3.0 * t2 - 2.0 * t;
        dh00 * self.y[k] + dh10 * self.d[k] + dh01 * self.y[k + 1] + dh11 * self.d[k + 1]
    }

    /// Solve `eval(x) = target` on the knot span by bisection. Only valid for
    /// monotone data; returns `None` if `target` is outside the knot values.
    pub fn invert(&self, target: f64) -> Option<f64> {
        let (lo_x, hi_x) = (self.x_min(), self.x_max());
        let (f_lo, f_hi) = (self.y[0], self.y[self.y.len() - 1]);
        let increasing = f_hi > f_lo;
        let (min_y, max_y) = if increasing {
            (f_lo, f_hi)
        } else {
            (f_hi, f_lo)
        };
        if !(min_y..=max_y).contains(&target) {
            return None;
        }
        let (mut a, mut b) = (lo_x, hi_x);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let below = self.eval(m) < target;
            if below == increasing {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    }
}

fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d.signum() != s0.signum() {
        0.0
    } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ANCHORS: [(f64, f64); 12] = [
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

    // Reference values from SciPy's PchipInterpolator on the same knots.
    #[test]
    fn matches_reference_values() {
        let p = Pchip::from_pairs(&ANCHORS).unwrap();
        let cases = [
            (0.45, 86.9, -32.000000000000036),
            (0.65, 80.64653465346535, -29.069306930692946),
            (0.75, 76.08497219584972, -68.93916994439172),
            (0.83, 68.51846205563494, -135.48760400033606),
            (0.925, 51.82742854650654, -225.79856366121058),
            (0.97, 42.032896570950655, -206.0565932534149),
            (0.995, 32.07352941176471, -1014.7058823529403),
            (1.025, 4.5000000000001, -899.9999999999991),
        ];
        for (x, v, dv) in cases {
            assert!((p.eval(x) - v).abs() < 1e-9, "value at {x}");
            assert!((p.derivative(x) - dv).abs() < 1e-7, "slope at {x}");
        }
    }

    #[test]
    fn flat_segment_stays_flat() {
        let p = Pchip::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((p.eval(0.5) - 0.6875).abs() < 1e-12);
        assert!((p.eval(1.5) - 1.0).abs() < 1e-12);
        assert!((p.eval(2.5) - 1.3125).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_knots() {
        assert_eq!(
            Pchip::new(vec![0.0], vec![1.0]).unwrap_err(),
            InterpError::TooFewKnots
        );
        assert_eq!(
            Pchip::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap_err(),
            InterpError::NonIncreasing
        );
        assert_eq!(
            Pchip::new(vec![0.0, f64::NAN], vec![1.0, 2.0]).unwrap_err(),
            InterpError::NonFinite
        );
    }

    #[test]
    fn linear_data_is_reproduced() {
        let p = Pchip::new(vec![0.0, 1.0, 3.0, 4.0], vec![1.0, 3.0, 7.0, 9.0]).unwrap();
        for i in 0..=40 {
            let x = i as f64 * 0.1;
            assert!((p.eval(x) - (1.0 + 2.0 * x)).abs() < 1e-12);
            assert!((p.derivative(x) - 2.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn monotone_data_gives_monotone_interpolant(
            steps in prop::collection::vec((0.01f64..1.0, 0.0f64..5.0), 2..12),
            frac in prop::collection::vec(0.0f64..1.0, 20),
        ) {
            let mut x = vec![0.0];
            let mut y = vec![0.0];
            for (dx, dy) in &steps {
                x.push(x.last().unwrap() + dx);
                y.push(y.last().unwrap() - dy);
            }
            let p = Pchip::new(x.clone(), y.clone()).unwrap();
            for (xi, yi) in x.iter().zip(&y) {
                prop_assert!((p.eval(*xi) - yi).abs() < 1e-9);
            }
            let span = p.x_max() - p.x_min();
            let mut qs: Vec<f64> = frac.iter().map(|f| p.x_min() + f * span).collect();
            qs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in qs.windows(2) {
                prop_assert!(p.eval(w[1]) <= p.eval(w[0]) + 1e-9);
            }
        }

        #[test]
        fn invert_round_trips(q in 0.4f64..1.03) {
            let p = Pchip::from_pairs(&ANCHORS).unwrap();
            let back = p.invert(p.eval(q)).unwrap();
            prop_assert!((back - q).abs() < 1e-9);
        }
    }
}
