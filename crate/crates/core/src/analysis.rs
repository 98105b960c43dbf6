//! Post-processing: DAC linearity, resolution from a code-temperature map,
//! transition-current histograms and the CSV files every command emits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analog::{
    dac_actual_current, DacConfig, DacRealization, DacSetting, CODE_MAX, GLOBAL_MAX,
};
use crate::controller::{CodeTempMap, IvPoint};
use crate::interp::{InterpError, Pchip};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} entries, got {got}")]
    TooFewEntries { needed: usize, got: usize },
    #[error("degenerate code-temperature map: fewer than two distinct codes")]
    DegenerateMap,
    #[error("table codes must be strictly increasing")]
    UnorderedCodes,
    #[error("n_bins must be at least 1")]
    NoBins,
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

/// DAC current by code, codes strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTable {
    entries: Vec<(u32, f64)>,
}

impl TransferTable {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self, AnalysisError> {
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(AnalysisError::UnorderedCodes);
        }
        Ok(Self { entries })
    }

    /// Global codes 0..=252, one entry each.
    pub fn from_dac(cfg: &DacConfig, real: &DacRealization) -> Self {
        let entries = (0..=GLOBAL_MAX)
            .map(|g| {
                let s = DacSetting::from_global(g as i64).expect("in range");
                (g, dac_actual_current(cfg, real, s))
            })
            .collect();
        Self { entries }
    }

    /// In-section codes 0..=63 of one offset section.
    pub fn section(
        cfg: &DacConfig,
        real: &DacRealization,
        section: u32,
    ) -> Result<Self, AnalysisError> {
        let mut entries = Vec::with_capacity(CODE_MAX as usize + 1);
        for code in 0..=CODE_MAX as u32 {
            let s = DacSetting::new(code, section).map_err(|_| AnalysisError::UnorderedCodes)?;
            entries.push((code, dac_actual_current(cfg, real, s)));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn currents(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn endpoint_lsb(&self) -> Result<f64, AnalysisError> {
        let n = self.entries.len();
        if n < 2 {
            return Err(AnalysisError::TooFewEntries { needed: 2, got: n });
        }
        Ok((self.entries[n - 1].1 - self.entries[0].1) / (n - 1) as f64)
    }
}

/// DNL[k] for the step k -> k+1, in endpoint-normalized LSB.
pub fn compute_dnl(table: &TransferTable) -> Result<Vec<f64>, AnalysisError> {
    let lsb = table.endpoint_lsb()?;
    Ok(table
        .entries
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / lsb - 1.0)
        .collect())
}

/// INL against the endpoint line, in endpoint-normalized LSB.
pub fn compute_inl(table: &TransferTable) -> Result<Vec<f64>, AnalysisError> {
    let lsb = table.endpoint_lsb()?;
    let i0 = table.entries[0].1;
    Ok(table
        .entries
        .iter()
        .enumerate()
        .map(|(k, e)| (e.1 - (i0 + k as f64 * lsb)) / lsb)
        .collect())
}

/// Temperature step implied by one code, over the map's span.
#[derive(Debug, Clone)]
pub struct ResolutionCurve {
    points: Vec<(f64, f64)>,
    t_of_g: Pchip,
}

/// Sub-code sampling density of [`ResolutionCurve::points`].
const SAMPLES_PER_CODE: u32 = 8;

impl ResolutionCurve {
    /// (temperature, resolution) sorted by temperature.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Interpolated T(g) over global code.
    pub fn temperature_of_code(&self, g: f64) -> f64 {
        self.t_of_g.eval(g)
    }

    /// Resolution at temperature `t`: find g with T(g) = t, return |T(g-1) - T(g)|.
    /// `None` outside the span where both codes lie in the map.
    pub fn at(&self, t: f64) -> Option<f64> {
        let g = self.t_of_g.invert(t)?;
        if g - 1.0 < self.t_of_g.x_min() {
            return None;
        }
        Some((self.t_of_g.eval(g - 1.0) - t).abs())
    }
}

pub fn resolution_curve(map: &CodeTempMap) -> Result<ResolutionCurve, AnalysisError> {
    let mut by_code: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for &(t, g) in map.entries() {
        let e = by_code.entry(g).or_insert((0.0, 0));
        e.0 += t;
        e.1 += 1;
    }
    if by_code.len() < 2 {
        return Err(AnalysisError::DegenerateMap);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = by_code
        .iter()
        .map(|(g, (sum, n))| (*g as f64, sum / *n as f64))
        .unzip();
    let t_of_g = Pchip::new(x, y)?;

    let g_lo = t_of_g.x_min() as u32;
    let g_hi = t_of_g.x_max() as u32;
    let mut points = Vec::new();
    for k in (g_lo + 1) * SAMPLES_PER_CODE..=g_hi * SAMPLES_PER_CODE {
        let g = k as f64 / SAMPLES_PER_CODE as f64;
        let t = t_of_g.eval(g);
        let dt = (t_of_g.eval(g - 1.0) - t).abs();
        if dt > 0.0 && dt.is_finite() {
            points.push((t, dt));
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ResolutionCurve { points, t_of_g })
}

/// Uniform bins over [min, max] as (center, count). Identical samples give one bin.
pub fn histogram(samples: &[f64], n_bins: usize) -> Result<Vec<(f64, u64)>, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::TooFewEntries { needed: 1, got: 0 });
    }
    if n_bins == 0 {
        return Err(AnalysisError::NoBins);
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 0.0 {
        return Ok(vec![(lo, samples.len() as u64)]);
    }
    let width = span / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for &s in samples {
        let k = (((s - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + (k as f64 + 0.5) * width, c))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Int(v) => write!(out, "{v}").unwrap(),
            Cell::Float(v) => write!(out, "{v:.8e}").unwrap(),
            Cell::Text(s) => out.push_str(s),
        }
    }
}

/// A CSV file: header plus rows rendered with 9 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Dataset {
    pub fn new(header: Vec<&'static str>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (k, c) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                c.render(&mut out);
            }
            out.push('\n');
        }
        out
    }
}

pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<(), AnalysisError> {
    fs::write(path, dataset.render()).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn transfer_dataset(table: &TransferTable) -> Dataset {
    let mut d = Dataset::new(vec!["global_code", "current_A"]);
    for &(g, i) in table.entries() {
        d.push(vec![Cell::Int(g as i64), Cell::Float(i)]);
    }
    d
}

/// Row k carries DNL of the step k -> k+1; the last row has no step and reads 0.
pub fn linearity_dataset(table: &TransferTable) -> Result<Dataset, AnalysisError> {
    let dnl = compute_dnl(table)?;
    let inl = compute_inl(table)?;
    let mut d = Dataset::new(vec!["global_code", "current_A", "dnl_lsb", "inl_lsb"]);
    for (k, &(g, i)) in table.entries().iter().enumerate() {
        d.push(vec![
            Cell::Int(g as i64),
            Cell::Float(i),
            Cell::Float(dnl.get(k).copied().unwrap_or(0.0)),
            Cell::Float(inl[k]),
        ]);
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub ambient: f64,
    pub local: f64,
    pub section: u8,
    pub code: u8,
    pub global_code: u32,
    pub i_rt: f64,
}

pub const SWEEP_HEADER: [&str; 6] = [
    "ambient_K",
    "local_K",
    "section",
    "code",
    "global_code",
    "i_rt_A",
];

pub fn sweep_dataset(rows: &[SweepRow]) -> Dataset {
    let mut d = Dataset::new(SWEEP_HEADER.to_vec());
    for r in rows {
        d.push(vec![
            Cell::Float(r.ambient),
            Cell::Float(r.local),
            Cell::Int(r.section as i64),
            Cell::Int(r.code as i64),
            Cell::Int(r.global_code as i64),
            Cell::Float(r.i_rt),
        ]);
    }
    d
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, AnalysisError> {
    let text = fs::read_to_string(path).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let err = |line: usize, msg: String| AnalysisError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SWEEP_HEADER.join(",") => {}
        _ => return Err(err(1, "missing or wrong sweep header".into())),
    }
    let mut rows = Vec::new();
    for (k, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != SWEEP_HEADER.len() {
            return Err(err(k + 1, format!("expected 6 fields, got {}", f.len())));
        }
        let float = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| err(k + 1, format!("{s}: {e}")))
        };
        let int = |s: &str| {
            s.parse::<u32>()
                .map_err(|e| err(k + 1, format!("{s}: {e}")))
        };
        rows.push(SweepRow {
            ambient: float(f[0])?,
            local: float(f[1])?,
            section: int(f[2])? as u8,
            code: int(f[3])? as u8,
            global_code: int(f[4])?,
            i_rt: float(f[5])?,
        });
    }
    Ok(rows)
}

pub fn iv_dataset(points: &[IvPoint]) -> Dataset {
    let mut d = Dataset::new(vec!["step", "direction", "current_A", "voltage_V", "state"]);
    for p in points {
        d.push(vec![
            Cell::Int(p.step as i64),
            Cell::Text(p.direction.label().into()),
            Cell::Float(p.current),
            Cell::Float(p.voltage),
            Cell::Text(p.state.label().into()),
        ]);
    }
    d
}

pub fn hist_dataset(bins: &[(f64, u64)]) -> Dataset {
    let mut d = Dataset::new(vec!["bin_center_A", "count"]);
    for &(c, n) in bins {
        d.push(vec![Cell::Float(c), Cell::Int(n as i64)]);
    }
    d
}

pub fn resolution_dataset(curve: &ResolutionCurve) -> Dataset {
    let mut d = Dataset::new(vec!["temperature_K", "resolution_K"]);
    for &(t, r) in curve.points() {
        d.push(vec![Cell::Float(t), Cell::Float(r)]);
    }
    d
}
