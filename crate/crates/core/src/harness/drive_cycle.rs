//! Current profiles: CSV ingestion, resampling, scaling, the
//! discharge/charge repetition protocol and a synthetic excitation generator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};

/// Parses two numeric comma-separated columns. Blank lines and lines
/// starting with `#` are skipped; a non-numeric first record is taken as a
/// header.
pub fn parse_two_column_csv(text: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    let mut rows = Vec::new();
    let mut seen_record = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [a, b] => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((a, b)) if a.is_finite() && b.is_finite() => rows.push((a, b)),
            Some(_) => return Err(format!("line {}: non-finite value", lineno + 1)),
            None if !seen_record && fields.len() == 2 => {}
            None => {
                return Err(format!(
                    "line {}: expected two numeric columns, got `{line}`",
                    lineno + 1
                ))
            }
        }
        seen_record = true;
    }
    Ok(rows)
}

/// Scaling applied to a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub factor: f64,
    pub peak_a: f64,
    pub mean_a: f64,
    pub capacity_ah: f64,
}

impl ScalingInfo {
    pub fn peak_c_rate(&self) -> f64 {
        self.peak_a / self.capacity_ah
    }

    pub fn mean_c_rate(&self) -> f64 {
        self.mean_a / self.capacity_ah
    }
}

/// Current samples `(time [s], current [A])`; positive current discharges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveCycle {
    pub label: String,
    pub time_s: Vec<f64>,
    pub current_a: Vec<f64>,
    pub scaling: Option<ScalingInfo>,
}

/// Peak and mean C-rate targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleTarget {
    pub max_c_rate: f64,
    pub mean_c_rate: f64,
}

impl Default for CycleTarget {
    fn default() -> Self {
        CycleTarget {
            max_c_rate: 10.0,
            mean_c_rate: 1.8,
        }
    }
}

impl DriveCycle {
    pub fn from_samples(label: impl Into<String>, rows: &[(f64, f64)]) -> Result<Self> {
        let label = label.into();
        if rows.len() < 2 {
            return Err(FdiError::domain(format!(
                "drive cycle `{label}` needs at least 2 samples, got {}",
                rows.len()
            )));
        }
        if let Some(w) = rows.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            return Err(FdiError::domain(format!(
                "drive cycle `{label}`: time stamps not strictly increasing at t = {}",
                w[1].0
            )));
        }
        Ok(DriveCycle {
            label,
            time_s: rows.iter().map(|r| r.0).collect(),
            current_a: rows.iter().map(|r| r.1).collect(),
            scaling: None,
        })
    }

    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.time_s[self.len() - 1] - self.time_s[0]
    }

    /// Linear interpolation onto a uniform grid starting at the first time
    /// stamp.
    pub fn resample(&self, t_s: f64) -> Result<Self> {
        if !(t_s > 0.0 && t_s.is_finite()) {
            return Err(FdiError::domain(format!("sample time {t_s} must be positive")));
        }
        let t0 = self.time_s[0];
        let n = (self.duration() / t_s * (1.0 + 1e-12)).floor() as usize + 1;
        let mut time_s = Vec::with_capacity(n);
        let mut current_a = Vec::with_capacity(n);
        let mut j = 0;
        for k in 0..n {
            let t = t0 + k as f64 * t_s;
            while j + 2 < self.len() && self.time_s[j + 1] < t {
                j += 1;
            }
            let (ta, tb) = (self.time_s[j], self.time_s[j + 1]);
            let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            time_s.push(t);
            current_a.push(self.current_a[j] + w * (self.current_a[j + 1] - self.current_a[j]));
        }
        Ok(DriveCycle {
            label: self.label.clone(),
            time_s,
            current_a,
            scaling: self.scaling,
        })
    }

    pub fn peak_abs(&self) -> f64 {
        self.current_a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.current_a.iter().sum::<f64>() / self.len() as f64
    }

    /// Scales so that `max |I| = max_c_rate · capacity`; the resulting mean
    /// is recorded, not enforced.
    pub fn scale_to_peak(&mut self, max_c_rate: f64, capacity_ah: f64) -> Result<()> {
        let peak = self.peak_abs();
        if peak == 0.0 {
            return Err(FdiError::domain(format!(
                "drive cycle `{}` has zero amplitude",
                self.label
            )));
        }
        let peak_a = max_c_rate * capacity_ah;
        let factor = peak_a / peak;
        for v in &mut self.current_a {
            *v *= factor;
        }
        self.scaling = Some(ScalingInfo {
            factor,
            peak_a,
            mean_a: self.mean(),
            capacity_ah,
        });
        Ok(())
    }

    /// The profile followed by its inverse, repeated until `n` samples.
    pub fn mirrored_repeat(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut sign = 1.0;
        while out.len() < n {
            for &v in &self.current_a {
                if out.len() == n {
                    break;
                }
                out.push(sign * v);
            }
            sign = -sign;
        }
        out
    }
}

/// Reads, resamples to `t_s` and scales a CSV profile.
pub fn load_drive_cycle(
    path: &Path,
    target: CycleTarget,
    capacity_ah: f64,
    t_s: f64,
) -> Result<DriveCycle> {
    let text = std::fs::read_to_string(path).map_err(|source| FdiError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let rows = parse_two_column_csv(&text).map_err(|message| FdiError::Parse {
        path: path.to_path_buf(),
        message,
    })?;
    if rows.is_empty() {
        return Err(FdiError::Parse {
            path: path.to_path_buf(),
            message: "no samples".into(),
        });
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cycle".into());
    let mut cycle = DriveCycle::from_samples(label, &rows)?.resample(t_s)?;
    cycle.scale_to_peak(target.max_c_rate, capacity_ah)?;
    Ok(cycle)
}

/// Seeded persistent-excitation profile: pseudo-random multi-level pulses
/// superposed on a slow ramp, mapped affinely so that both the peak and the
/// mean C-rate hit their targets.
///
/// Pulses come as zero-net triplets `(+L, −L, +L)` with durations
/// `(h/2, h, h/2)`, so the charge they move never accumulates. Within
/// `guard_s` of either end of the segment the triplet polarity is chosen so
/// that the excursion points into the SOC window, for the segment and for
/// its inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCycle {
    /// Segment length [s]; one segment moves `mean_c_rate · segment_s / 3600`
    /// of the capacity.
    pub segment_s: f64,
    pub hold_min_s: f64,
    pub hold_max_s: f64,
    /// Ramp amplitude relative to the pulse amplitude; positive values put
    /// the heavier discharge at the start of the segment.
    pub ramp: f64,
    pub guard_s: f64,
    /// Pulse amplitude scale inside the guard windows at both segment ends.
    pub edge_gain: f64,
    pub seed: u64,
}

impl Default for SyntheticCycle {
    fn default() -> Self {
        SyntheticCycle {
            segment_s: 1440.0,
            hold_min_s: 2.0,
            hold_max_s: 20.0,
            ramp: -0.2,
            guard_s: 120.0,
            edge_gain: 0.25,
            seed: 20_170_101,
        }
    }
}

impl SyntheticCycle {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_s > 0.0) {
            return Err(FdiError::config("synthetic cycle segment_s must be > 0"));
        }
        if !(self.hold_min_s > 0.0 && self.hold_max_s >= self.hold_min_s) {
            return Err(FdiError::config(
                "synthetic cycle needs 0 < hold_min_s ≤ hold_max_s",
            ));
        }
        if !self.ramp.is_finite() {
            return Err(FdiError::config("synthetic cycle ramp must be finite"));
        }
        if !(self.edge_gain > 0.0 && self.edge_gain <= 1.0) {
            return Err(FdiError::config("synthetic cycle edge_gain must be in (0, 1]"));
        }
        if !(self.guard_s >= 0.0 && self.guard_s.is_finite()) {
            return Err(FdiError::config("synthetic cycle guard_s must be ≥ 0"));
        }
        Ok(())
    }

    pub fn generate(&self, target: CycleTarget, capacity_ah: f64, t_s: f64) -> Result<DriveCycle> {
        self.validate()?;
        if !(target.max_c_rate > target.mean_c_rate.abs() && target.mean_c_rate.is_finite()) {
            return Err(FdiError::config(
                "synthetic cycle needs max_c_rate > |mean_c_rate|",
            ));
        }
        let n = (self.segment_s / t_s).round() as usize;
        if n < 2 {
            return Err(FdiError::config(
                "synthetic cycle segment shorter than two samples",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut pulses = Vec::with_capacity(n);
        while pulses.len() < n {
            let start = pulses.len() as f64 * t_s;
            let hold = rng.random_range(self.hold_min_s..=self.hold_max_s);
            let mut level: f64 = rng.random_range(-1.0..=1.0);
            if start < self.guard_s {
                level = self.edge_gain * level.abs();
            } else if start + 2.0 * hold > self.segment_s - self.guard_s {
                level = -self.edge_gain * level.abs();
            }
            let half = ((0.5 * hold / t_s).round() as usize).max(1);
            for (len, sign) in [(half, 1.0), (2 * half, -1.0), (half, 1.0)] {
                pulses.extend(std::iter::repeat(sign * level).take(len));
            }
        }
        pulses.truncate(n);
        let mut raw: Vec<f64> = pulses
            .iter()
            .enumerate()
            .map(|(k, p)| p + self.ramp * (1.0 - 2.0 * k as f64 / (n - 1) as f64))
            .collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        for v in &mut raw {
            *v -= mean;
        }
        let hi = raw.iter().cloned().fold(f64::MIN, f64::max);
        let lo = raw.iter().cloned().fold(f64::MAX, f64::min);
        if !(hi > 0.0 && lo < 0.0) {
            return Err(FdiError::domain("synthetic cycle degenerated to a constant"));
        }
        // a·p + b with b the mean; a as large as the peak bound allows
        let b = target.mean_c_rate;
        let a = ((target.max_c_rate - b) / hi).min((target.max_c_rate + b) / -lo);
        let current_a: Vec<f64> = raw.iter().map(|p| (a * p + b) * capacity_ah).collect();
        let time_s = (0..n).map(|k| k as f64 * t_s).collect();
        let mut cycle = DriveCycle {
            label: format!("synthetic-{}", self.seed),
            time_s,
            current_a,
            scaling: None,
        };
        cycle.scaling = Some(ScalingInfo {
            factor: a * capacity_ah,
            peak_a: cycle.peak_abs(),
            mean_a: cycle.mean(),
            capacity_ah,
        });
        Ok(cycle)
    }
}
