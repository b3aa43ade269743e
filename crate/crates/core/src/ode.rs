//! Fixed-step explicit Euler integration, an adaptive Dormand–Prince 5(4)
//! reference integrator, step-size calibration against it, and trace records.
//!
//! Time is in days throughout. Fixed-step times are always formed as `k·dt`,
//! never by repeated addition.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest negative excursion that non-negative projection clamps to zero.
pub const NEGATIVE_SLACK: f64 = 1e-9;
/// Smallest step `calibrate_dt` will try.
pub const DT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedFirstOrder,
    AdaptiveOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub method: Method,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Keep every `stride`-th step in the trace (the final step is always kept).
    pub stride: usize,
    /// Project tiny negative excursions to zero; larger ones fail.
    pub nonnegative: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.00005,
            t_end: 20.0,
            method: Method::FixedFirstOrder,
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            stride: 200,
            nonnegative: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Configuration(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::Configuration(format!(
                "t_end must be non-negative, got {}",
                self.t_end
            )));
        }
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::Configuration("tolerances must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Configuration("stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Time-indexed record of states plus auxiliary columns (flows, inputs, costs).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationTrace {
    pub state_names: Vec<String>,
    pub aux_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub aux: Vec<Vec<f64>>,
}

impl SimulationTrace {
    pub fn new<S: AsRef<str>, A: AsRef<str>>(state_names: &[S], aux_names: &[A]) -> Self {
        Self {
            state_names: state_names.iter().map(|s| s.as_ref().to_owned()).collect(),
            aux_names: aux_names.iter().map(|s| s.as_ref().to_owned()).collect(),
            ..Self::default()
        }
    }

    /// Generic names `x1..xn` for anonymous systems.
    pub fn anonymous(dim: usize) -> Self {
        let names: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        Self::new::<String, String>(&names, &[])
    }

    pub fn push(&mut self, t: f64, state: &[f64], aux: &[f64]) -> Result<()> {
        if state.len() != self.state_names.len() || aux.len() != self.aux_names.len() {
            return Err(Error::InvalidArgument(format!(
                "trace row has {} states and {} aux values, expected {} and {}",
                state.len(),
                aux.len(),
                self.state_names.len(),
                self.aux_names.len()
            )));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidArgument(format!(
                    "trace times must increase strictly: {t} after {last}"
                )));
            }
        }
        self.times.push(t);
        self.states.push(state.to_vec());
        self.aux.push(aux.to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(|v| v.as_slice())
    }

    /// Column by header name, searching states then aux.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(i) = self.state_names.iter().position(|n| n == name) {
            return Some(self.states.iter().map(|r| r[i]).collect());
        }
        let i = self.aux_names.iter().position(|n| n == name)?;
        Some(self.aux.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_owned()];
        header.extend(self.state_names.iter().cloned());
        header.extend(self.aux_names.iter().cloned());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut line = format!("{}", self.times[k]);
            for v in self.states[k].iter().chain(self.aux[k].iter()) {
                line.push(',');
                line.push_str(&format!("{v}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a trace; the first `n_states` columns after `t` are states.
    pub fn read_csv<R: BufRead>(r: R, n_states: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trace file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 1 + n_states {
            return Err(Error::Parse(format!("bad trace header {header:?}")));
        }
        let mut trace = Self::new(&cols[1..1 + n_states], &cols[1 + n_states..]);
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, header has {}",
                    row + 2,
                    vals.len(),
                    cols.len()
                )));
            }
            trace.push(vals[0], &vals[1..1 + n_states], &vals[1 + n_states..])?;
        }
        Ok(trace)
    }

    pub fn load(path: &Path, n_states: usize) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), n_states)
    }
}

fn check_finite(t: f64, v: &[f64], what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::IntegrationFailure {
            t,
            reason: format!("non-finite {what} in component {i}"),
        });
    }
    Ok(())
}

/// Clamps values in `(−NEGATIVE_SLACK, 0)` to zero; fails on anything lower.
pub fn project_nonnegative(t: f64, x: &mut [f64]) -> Result<()> {
    for (i, v) in x.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v > -NEGATIVE_SLACK {
                *v = 0.0;
            } else {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("component {i} went negative ({v:e})"),
                });
            }
        }
    }
    Ok(())
}

/// One explicit Euler step `x + dt·field(t, x)`.
pub fn step_fixed<F>(t: f64, x: &[f64], field: &mut F, dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut dx = vec![0.0; x.len()];
    field(t, x, &mut dx)?;
    check_finite(t, &dx, "field output")?;
    let next: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + dt * d).collect();
    check_finite(t + dt, &next, "state")?;
    Ok(next)
}

/// Number of fixed steps covering `[0, t_end]`; the last may be shortened.
pub fn step_count(dt: f64, t_end: f64) -> usize {
    let n = t_end / dt;
    let r = n.round();
    if (n - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        n.ceil() as usize
    }
}

/// Fixed-step Euler trajectory, decimated by `config.stride`.
pub fn integrate<F>(x0: &[f64], field: &mut F, config: &IntegratorConfig) -> Result<SimulationTrace>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    config.validate()?;
    let mut trace = SimulationTrace::anonymous(x0.len());
    check_finite(0.0, x0, "initial state")?;
    trace.push(0.0, x0, &[])?;
    let n = step_count(config.dt, config.t_end);
    let mut x = x0.to_vec();
    for k in 0..n {
        let t = k as f64 * config.dt;
        let t_next = if k + 1 == n { config.t_end } else { (k + 1) as f64 * config.dt };
        x = step_fixed(t, &x, field, t_next - t)?;
        if config.nonnegative {
            project_nonnegative(t_next, &mut x)?;
        }
        if (k + 1) % config.stride == 0 || k + 1 == n {
            trace.push(t_next, &x, &[])?;
        }
    }
    Ok(trace)
}

/// Fixed-step Euler solution at each of `times` (sorted, non-negative).
pub fn integrate_fixed_at<F>(
    x0: &[f64],
    field: &mut F,
    dt: f64,
    times: &[f64],
    nonnegative: bool,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.to_vec();
    let mut k = 0usize;
    let mut t = 0.0;
    for &target in times {
        if target < t {
            return Err(Error::InvalidArgument("sample times must be sorted".into()));
        }
        loop {
            let grid_next = (k + 1) as f64 * dt;
            if grid_next <= target * (1.0 + 1e-12) {
                x = step_fixed(t, &x, field, grid_next - t)?;
                k += 1;
                t = grid_next;
            } else {
                if target > t {
                    x = step_fixed(t, &x, field, target - t)?;
                    t = target;
                }
                break;
            }
            if nonnegative {
                project_nonnegative(t, &mut x)?;
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_ORACLE_STEPS: usize = 50_000_000;

/// Adaptive solution sampled exactly at `times` (sorted, non-negative); steps are
/// shortened to land on each sample, so no interpolation error enters.
pub fn oracle_at<F>(
    x0: &[f64],
    field: &mut F,
    times: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(abs_tol > 0.0 && rel_tol > 0.0) {
        return Err(Error::Configuration("oracle tolerances must be positive".into()));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut t = 0.0f64;
    let span = times.last().copied().unwrap_or(0.0);
    let mut h = if span > 0.0 { 1e-4 * span } else { 1e-4 };
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut x5 = vec![0.0; n];
    let mut out = Vec::with_capacity(times.len());
    let mut steps = 0usize;
    field(t, &x, &mut k[0])?;
    check_finite(t, &k[0], "field output")?;
    for &target in times {
        if target < t {
            return Err(Error::InvalidArgument("sample times must be sorted".into()));
        }
        while t < target {
            steps += 1;
            if steps > MAX_ORACLE_STEPS {
                return Err(Error::Stiffness { t, h });
            }
            let mut clipped = false;
            let mut hs = h;
            if t + hs >= target {
                hs = target - t;
                clipped = true;
            }
            if hs <= 1e-14 * t.abs().max(1.0) && !clipped {
                return Err(Error::Stiffness { t, h: hs });
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    stage[i] = x[i] + hs * acc;
                }
                field(t + C[s] * hs, &stage, &mut k[s])?;
                check_finite(t + C[s] * hs, &k[s], "field output")?;
            }
            let mut err_sq = 0.0;
            for i in 0..n {
                let mut s5 = 0.0;
                let mut s4 = 0.0;
                for j in 0..7 {
                    s5 += B5[j] * k[j][i];
                    s4 += B4[j] * k[j][i];
                }
                x5[i] = x[i] + hs * s5;
                let sc = abs_tol + rel_tol * x[i].abs().max(x5[i].abs());
                let e = hs * (s5 - s4) / sc;
                err_sq += e * e;
            }
            let err = (err_sq / n.max(1) as f64).sqrt();
            if err <= 1.0 {
                t = if clipped { target } else { t + hs };
                x.copy_from_slice(&x5);
                // first-same-as-last: stage 7 is the derivative at the new point
                let last = k[6].clone();
                k[0] = last;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !clipped {
                    h = hs * fac;
                } else {
                    h = h.max(hs * fac);
                }
            } else {
                h = hs * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                if h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Stiffness { t, h });
                }
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Adaptive reference trajectory on the same sample grid `integrate` keeps.
pub fn oracle_integrate<F>(
    x0: &[f64],
    field: &mut F,
    config: &IntegratorConfig,
) -> Result<SimulationTrace>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    config.validate()?;
    let times = sample_grid(config);
    let states = oracle_at(x0, field, &times, config.abs_tol, config.rel_tol)?;
    let mut trace = SimulationTrace::anonymous(x0.len());
    for (t, s) in times.iter().zip(&states) {
        trace.push(*t, s, &[])?;
    }
    Ok(trace)
}

/// Retained sample times of a fixed-step run: `0, stride·dt, 2·stride·dt, …, t_end`.
pub fn sample_grid(config: &IntegratorConfig) -> Vec<f64> {
    let n = step_count(config.dt, config.t_end);
    let mut times = vec![0.0];
    for k in 1..=n {
        if k % config.stride == 0 || k == n {
            times.push(if k == n { config.t_end } else { k as f64 * config.dt });
        }
    }
    times
}

/// Largest component-wise relative deviation of `a` from `reference`.
pub fn max_relative_error(a: &[Vec<f64>], reference: &[Vec<f64>], floor: f64) -> f64 {
    a.iter()
        .zip(reference)
        .flat_map(|(ra, rr)| ra.iter().zip(rr))
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Settings for `calibrate_dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub t_end: f64,
    /// Number of equally spaced comparison points after `t = 0`.
    pub samples: usize,
    /// Accepted max relative deviation from the oracle.
    pub tolerance: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Denominator floor for relative errors of near-zero components.
    pub error_floor: f64,
    pub nonnegative: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            t_end: 20.0,
            samples: 100,
            tolerance: 1e-3,
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            error_floor: 1e-6,
            nonnegative: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub dt: f64,
    pub error: f64,
    /// `(dt, error)` for every step tried, largest first.
    pub history: Vec<(f64, f64)>,
}

/// Halves `dt0` until the Euler solution stays within `tolerance` of the oracle.
pub fn calibrate_dt<F>(
    x0: &[f64],
    field: &mut F,
    dt0: f64,
    config: &CalibrationConfig,
) -> Result<Calibration>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt0 > 0.0) {
        return Err(Error::InvalidArgument(format!("dt0 must be positive, got {dt0}")));
    }
    if config.samples == 0 || !(config.t_end > 0.0) {
        return Err(Error::Configuration("calibration needs a positive horizon and samples".into()));
    }
    let times: Vec<f64> = (1..=config.samples)
        .map(|j| config.t_end * j as f64 / config.samples as f64)
        .collect();
    let reference = oracle_at(x0, field, &times, config.abs_tol, config.rel_tol)?;
    let mut dt = dt0;
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    while dt >= DT_FLOOR {
        let error = match integrate_fixed_at(x0, field, dt, &times, config.nonnegative) {
            Ok(sol) => max_relative_error(&sol, &reference, config.error_floor),
            Err(e) => {
                log::debug!("dt = {dt:e} failed: {e}");
                f64::INFINITY
            }
        };
        history.push((dt, error));
        best = best.min(error);
        if error <= config.tolerance {
            return Ok(Calibration { dt, error, history });
        }
        dt /= 2.0;
    }
    Err(Error::CalibrationFailure {
        floor: DT_FLOOR,
        tolerance: config.tolerance,
        best_error: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        dx[0] = -x[0];
        Ok(())
    }

    #[test]
    fn euler_examples() {
        let mut zero = |_t: f64, _x: &[f64], dx: &mut [f64]| -> Result<()> {
            dx.fill(0.0);
            Ok(())
        };
        assert_eq!(step_fixed(0.0, &[3.0, -1.0], &mut zero, 0.5).unwrap(), vec![3.0, -1.0]);
        let next = step_fixed(0.0, &[1.0], &mut decay, 0.1).unwrap();
        assert!((next[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn euler_rejects_non_finite_field() {
        let mut bad = |_t: f64, _x: &[f64], dx: &mut [f64]| -> Result<()> {
            dx[0] = f64::NAN;
            Ok(())
        };
        match step_fixed(2.5, &[1.0], &mut bad, 0.1) {
            Err(Error::IntegrationFailure { t, .. }) => assert_eq!(t, 2.5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn euler_local_error_is_second_order() {
        // one full step vs two half steps on x' = -x, against exp(-h)
        let e = |h: f64| {
            let full = step_fixed(0.0, &[1.0], &mut decay, h).unwrap()[0];
            let half = step_fixed(0.0, &[1.0], &mut decay, h / 2.0).unwrap();
            let two = step_fixed(h / 2.0, &half, &mut decay, h / 2.0).unwrap()[0];
            ((full - (-h).exp()).abs(), (full - two).abs())
        };
        let (a1, d1) = e(0.1);
        let (a2, d2) = e(0.05);
        assert!((a1 / a2 - 4.0).abs() < 0.3);
        assert!((d1 / d2 - 4.0).abs() < 0.3);
    }

    #[test]
    fn zero_horizon_is_single_row() {
        let cfg = IntegratorConfig {
            t_end: 0.0,
            ..IntegratorConfig::default()
        };
        let tr = integrate(&[2.0], &mut decay, &cfg).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.states[0], vec![2.0]);
    }

    #[test]
    fn trace_times_are_multiples_of_dt() {
        let cfg = IntegratorConfig {
            dt: 0.001,
            t_end: 1.0,
            stride: 7,
            ..IntegratorConfig::default()
        };
        let tr = integrate(&[1.0], &mut decay, &cfg).unwrap();
        for (idx, t) in tr.times.iter().enumerate().take(tr.len() - 1) {
            assert_eq!(*t, (idx * 7) as f64 * 0.001);
        }
        assert_eq!(*tr.times.last().unwrap(), 1.0);
        let exact = (1.0 - 0.001f64).powi(1000);
        assert!((tr.last_state().unwrap()[0] - exact).abs() < 1e-13);
    }

    #[test]
    fn ragged_horizon_shortens_last_step() {
        let cfg = IntegratorConfig {
            dt: 0.3,
            t_end: 1.0,
            stride: 1,
            ..IntegratorConfig::default()
        };
        let tr = integrate(&[1.0], &mut decay, &cfg).unwrap();
        assert_eq!(tr.times.len(), 5);
        let exact = 0.7f64.powi(3) * 0.9;
        assert!((tr.last_state().unwrap()[0] - exact).abs() < 1e-15);
    }

    #[test]
    fn projection_rules() {
        let mut x = [-1e-12, 0.5];
        project_nonnegative(0.0, &mut x).unwrap();
        assert_eq!(x, [0.0, 0.5]);
        let mut y = [-1e-6];
        assert!(project_nonnegative(1.0, &mut y).is_err());
    }

    #[test]
    fn oracle_exponential() {
        let x = oracle_at(&[1.0], &mut decay, &[1.0], 1e-12, 1e-12).unwrap();
        assert!((x[0][0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn oracle_harmonic_energy() {
        let mut osc = |_t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
            dx[0] = x[1];
            dx[1] = -x[0];
            Ok(())
        };
        let t_end = 200.0 * std::f64::consts::PI;
        let x = oracle_at(&[1.0, 0.0], &mut osc, &[t_end], 1e-13, 1e-13).unwrap();
        let energy = 0.5 * (x[0][0] * x[0][0] + x[0][1] * x[0][1]);
        assert!((energy - 0.5).abs() < 1e-6, "{energy}");
    }

    #[test]
    fn oracle_is_deterministic() {
        let mut osc = |t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
            dx[0] = x[1] + t.sin();
            dx[1] = -x[0];
            Ok(())
        };
        let times = [0.5, 1.0, 3.0];
        let a = oracle_at(&[1.0, 0.0], &mut osc, &times, 1e-10, 1e-10).unwrap();
        let b = oracle_at(&[1.0, 0.0], &mut osc, &times, 1e-10, 1e-10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_stiff_underflow_reports_stiffness() {
        let mut blow = |_t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
            dx[0] = x[0] * x[0];
            Ok(())
        };
        // finite-time blow-up at t = 1
        let r = oracle_at(&[1.0], &mut blow, &[2.0], 1e-10, 1e-10);
        assert!(matches!(r, Err(Error::Stiffness { .. }) | Err(Error::IntegrationFailure { .. })));
    }

    #[test]
    fn euler_converges_first_order() {
        let mut f = |t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
            dx[0] = -x[0] + t.cos();
            Ok(())
        };
        let reference = oracle_at(&[1.0], &mut f, &[2.0], 1e-13, 1e-13).unwrap();
        type Field<'a> = dyn FnMut(f64, &[f64], &mut [f64]) -> Result<()> + 'a;
        let err = |dt: f64, f: &mut Field| {
            let mut g = |t: f64, x: &[f64], dx: &mut [f64]| f(t, x, dx);
            let s = integrate_fixed_at(&[1.0], &mut g, dt, &[2.0], false).unwrap();
            (s[0][0] - reference[0][0]).abs()
        };
        let ratio = err(1e-3, &mut f) / err(5e-4, &mut f);
        assert!((1.7..=2.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn calibration_accepts_dt0_on_easy_problem() {
        let cfg = CalibrationConfig {
            t_end: 1.0,
            samples: 10,
            tolerance: 1e-1,
            nonnegative: false,
            ..CalibrationConfig::default()
        };
        let c = calibrate_dt(&[1.0], &mut decay, 0.01, &cfg).unwrap();
        assert_eq!(c.dt, 0.01);
        assert_eq!(c.history.len(), 1);
    }

    #[test]
    fn calibration_refines_on_stiff_problem() {
        // x' = -1000 (x - cos t) has solution close to cos t; explicit Euler is
        // unstable for dt > 2e-3
        let mut stiff = |t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
            dx[0] = -1000.0 * (x[0] - t.cos());
            Ok(())
        };
        let cfg = CalibrationConfig {
            t_end: 1.0,
            samples: 20,
            tolerance: 1e-3,
            nonnegative: false,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            ..CalibrationConfig::default()
        };
        let c = calibrate_dt(&[1.0], &mut stiff, 0.01, &cfg).unwrap();
        assert!(c.dt < 2e-3);
        assert!(c.error <= 1e-3);
    }

    #[test]
    fn calibration_failure_below_floor() {
        let mut grow = |_t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
            dx[0] = x[0];
            Ok(())
        };
        // Euler error is about dt·t/2 relative, still 5e-13 at the floor
        let cfg = CalibrationConfig {
            t_end: 1e-4,
            samples: 2,
            tolerance: 1e-14,
            nonnegative: false,
            ..CalibrationConfig::default()
        };
        let r = calibrate_dt(&[1.0], &mut grow, 1e-7, &cfg);
        assert!(matches!(r, Err(Error::CalibrationFailure { .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut tr = SimulationTrace::new(&["a", "b"], &["m"]);
        tr.push(0.0, &[1.0 / 3.0, -2e-300], &[std::f64::consts::PI]).unwrap();
        tr.push(0.1, &[1e10, 5.0], &[0.1 + 0.2]).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,a,b,m\n"));
        let back = SimulationTrace::read_csv(std::io::Cursor::new(buf), 2).unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn trace_rejects_non_increasing_time() {
        let mut tr = SimulationTrace::anonymous(1);
        tr.push(1.0, &[0.0], &[]).unwrap();
        assert!(tr.push(1.0, &[0.0], &[]).is_err());
    }
}
