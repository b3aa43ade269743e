//! End-to-end scenarios: the controlled digester, the coupled three-vertex
//! network, ARS training over several seeds, and the validation suite.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ars::{self, LinearPolicy, TrainResult};
use crate::config::{preset_x0, Config};
use crate::control::{self, AffineSystem, FiniteTimeController};
use crate::digester::{self, DigesterState, TranslatedDigester, DIM};
use crate::env::{self, ConstantPolicy, MicroalgaeEnv, ReturnStats};
use crate::error::{Error, Result};
use crate::microalgae::{self, MonodState};
use crate::network;
use crate::ode::{self, SimulationTrace};

pub const DIGESTER_TRACE_STATES: [&str; DIM] = ["x1", "x2", "x3", "x4", "x5", "x6"];

/// Result of a closed-loop digester run in translated coordinates.
#[derive(Debug, Clone)]
pub struct DigesterRun {
    pub trace: SimulationTrace,
    pub t_max: f64,
    pub preset: String,
    pub x0: [f64; DIM],
    /// Time at which `‖x̃‖` first fell below the settle radius.
    pub settle_time: Option<f64>,
    pub final_state: [f64; DIM],
    pub final_time: f64,
    /// Accumulated performance functional.
    pub cost: f64,
    /// `V(x̃₀)`.
    pub v0: f64,
    /// Steps whose physical dilution had a negative component.
    pub infeasible_steps: usize,
    /// Largest relative deviation from the norm law over `t ≤ 0.95·T_max`.
    pub norm_law_error: f64,
    pub final_co2_outflow: f64,
}

pub fn translated_digester(cfg: &Config) -> Result<TranslatedDigester> {
    TranslatedDigester::new(cfg.digester.params.clone(), cfg.digester.equilibrium()?)
}

/// Closed-loop digester integrated with Euler at `integrator.digester_dt`.
/// `horizon` defaults to `t_max`.
pub fn run_digester(cfg: &Config, t_max: f64, preset: &str, horizon: Option<f64>) -> Result<DigesterRun> {
    let x0 = preset_x0(preset)?;
    let sys = translated_digester(cfg)?;
    let mut ctrl = FiniteTimeController::new(DVector::from_row_slice(&x0), t_max)?;
    let horizon = horizon.unwrap_or(t_max);
    let dt = cfg.integrator.digester_dt;
    let stride = cfg.integrator.stride;
    let n = ode::step_count(dt, horizon);
    let u_ss = sys.equilibrium().input.0;
    let x0_sq: f64 = x0.iter().map(|v| v * v).sum();
    let mut aux_names = vec!["m12".to_owned()];
    aux_names.extend((1..=DIM).map(|i| format!("u{i}")));
    aux_names.extend(["V".to_owned(), "J".to_owned()]);
    let mut trace = SimulationTrace::new(&DIGESTER_TRACE_STATES, &aux_names);

    let mut x = DVector::from_row_slice(&x0);
    let mut cost = control::CostAccumulator::default();
    let mut settle_time = None;
    let mut infeasible_steps = 0usize;
    let mut norm_law_error = 0.0f64;
    let mut last_t = 0.0;
    for k in 0..=n {
        let t = if k == n { horizon } else { k as f64 * dt };
        let xa: [f64; DIM] = x.as_slice().try_into().expect("state dimension");
        let f = sys.drift(&x)?;
        let g = sys.input_matrix(&x)?;
        let (vg, phi) = match ctrl.pq() {
            Some(pq) => {
                let vg = control::lyapunov_grad(&x, &pq);
                let phi = control::icd_control(&f, &g, &vg)?;
                (vg, phi)
            }
            None => (DVector::zeros(DIM), DVector::zeros(DIM)),
        };
        let settled = ctrl.observe(&x);
        if settled && settle_time.is_none() {
            settle_time = Some(t);
        }
        let u = if settled { DVector::zeros(DIM) } else { phi.clone() };
        if t <= 0.95 * t_max {
            let law = control::norm_law(x0_sq, t, t_max);
            norm_law_error = norm_law_error.max((x.norm_squared() - law).abs() / law);
        }
        if k % stride == 0 || k == n {
            let mut aux = vec![sys.outflow(&xa)?];
            aux.extend(u.iter().copied());
            aux.extend([ctrl.value(&x), cost.j]);
            trace.push(t, &xa, &aux)?;
        }
        last_t = t;
        if k == n {
            break;
        }
        let step = if k + 1 == n { horizon - t } else { dt };
        if u.iter().zip(&u_ss).any(|(a, b)| a + b < 0.0) {
            infeasible_steps += 1;
            if infeasible_steps == 1 {
                log::warn!("commanded dilution has a negative component at t = {t}");
            }
            if cfg.controller.strict_feasibility {
                return Err(Error::ModelDomain {
                    reason: format!("negative physical dilution at t = {t}"),
                    state: xa.to_vec(),
                });
            }
        }
        if ctrl.pq().is_some() {
            cost.add(control::cost_integrand(&f, &g, &u, &phi, &vg) * step, step);
        }
        let xdot = &f + &g * &u;
        x += xdot * step;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure {
                t: t + step,
                reason: "non-finite digester state".into(),
            });
        }
    }
    if infeasible_steps > 0 {
        log::info!("{infeasible_steps} of {n} steps commanded a negative physical dilution");
    }
    let final_state: [f64; DIM] = x.as_slice().try_into().expect("state dimension");
    Ok(DigesterRun {
        trace,
        t_max,
        preset: preset.to_owned(),
        x0,
        settle_time,
        final_state,
        final_time: last_t,
        cost: cost.j,
        v0: ctrl.value(&DVector::from_row_slice(&x0)),
        infeasible_steps,
        norm_law_error,
        final_co2_outflow: sys.outflow(&final_state)?,
    })
}

/// Microalgae under constant light from `(x0, s0)`, Euler at `integrator.dt`.
pub fn run_microalgae(cfg: &Config, light: f64, t_end: f64) -> Result<SimulationTrace> {
    let p = &cfg.microalgae.params;
    let mut field = |_t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
        dx.copy_from_slice(&microalgae::monod_field(&MonodState::new(x[0], x[1]), light, p)?);
        Ok(())
    };
    let mut ic = cfg.monod_integrator();
    ic.t_end = t_end;
    let raw = ode::integrate(&[cfg.microalgae.x_alg_0, cfg.microalgae.s_0], &mut field, &ic)?;
    let mut trace = SimulationTrace::new(&microalgae::STATE_NAMES, &["m23"]);
    for (t, s) in raw.times.iter().zip(&raw.states) {
        trace.push(*t, s, &[microalgae::carbon_uptake(s[1], light, p)?])?;
    }
    Ok(trace)
}

/// Key-value summary of the coupled network run.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSummary {
    pub m12_steady: f64,
    pub m23_steady: f64,
    pub m23_peak: f64,
    pub m23_peak_time: f64,
    pub x_alg_at_12: f64,
    pub x_alg_final: f64,
    pub compensation_volume: f64,
    pub v_m: f64,
    pub volume_ratio: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    /// `log10(ṁ₁,₂/ṁ₂,₃)` at the end of the run.
    pub uptake_orders_below_emissions: f64,
    pub m2_final: f64,
    pub settle_time: Option<f64>,
}

impl NetworkSummary {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("m12_steady", self.m12_steady.to_string()),
            ("m23_steady", self.m23_steady.to_string()),
            ("m23_peak", self.m23_peak.to_string()),
            ("m23_peak_time", self.m23_peak_time.to_string()),
            ("x_alg_at_12d", self.x_alg_at_12.to_string()),
            ("x_alg_final", self.x_alg_final.to_string()),
            ("compensation_volume", self.compensation_volume.to_string()),
            ("v_m", self.v_m.to_string()),
            ("volume_ratio", self.volume_ratio.to_string()),
            ("lambda_a", self.lambda_a.to_string()),
            ("lambda_b", self.lambda_b.to_string()),
            ("uptake_orders_below_emissions", self.uptake_orders_below_emissions.to_string()),
            ("m2_final", self.m2_final.to_string()),
        ];
        v.push((
            "digester_settle_time",
            self.settle_time.map_or("none".to_owned(), |t| t.to_string()),
        ));
        v.into_iter().map(|(k, s)| (k.to_owned(), s)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkRun {
    /// States `X_ALG, S, m2`; aux `m12, m23, dm2_dt`.
    pub trace: SimulationTrace,
    pub summary: NetworkSummary,
}

/// Coupled run: controlled digester from the configured preset, microalgae under
/// constant `i_ref`, and the atmosphere balance between them.
pub fn run_network(cfg: &Config) -> Result<NetworkRun> {
    let sys = translated_digester(cfg)?;
    let x0 = preset_x0(&cfg.controller.preset)?;
    let mut ctrl = FiniteTimeController::new(DVector::from_row_slice(&x0), cfg.controller.t_max)?;
    let p = &cfg.microalgae.params;
    let light = cfg.microalgae.i_ref;
    let dt = cfg.integrator.dt;
    let ratio = dt / cfg.integrator.digester_dt;
    let sub = ratio.round();
    if sub < 1.0 || (ratio - sub).abs() > 1e-9 * sub {
        return Err(Error::Configuration(format!(
            "integrator.dt {dt} must be a whole multiple of digester_dt {}",
            cfg.integrator.digester_dt
        )));
    }
    let sub = sub as usize;
    let ddt = dt / sub as f64;
    let t_end = cfg.integrator.t_end;
    let n = ode::step_count(dt, t_end);
    let vd = cfg.network.v_d;
    let m12_eq = digester::co2_outflow(&sys.equilibrium().state, &cfg.digester.params)?;
    let vm = match cfg.network.v_m {
        Some(v) => v,
        None => network::compensation_volume(m12_eq, microalgae::steady_uptake(p), vd)?,
    };

    let mut trace = SimulationTrace::new(&["X_ALG", "S", "m2"], &["m12", "m23", "dm2_dt"]);
    let mut x = DVector::from_row_slice(&x0);
    let mut alg = [cfg.microalgae.x_alg_0, cfg.microalgae.s_0];
    let mut m2 = 0.0;
    let mut settle_time = None;
    let (mut peak, mut peak_t) = (f64::MIN, 0.0);
    let mut x_alg_at_12 = f64::NAN;
    let mut m12 = 0.0;
    let mut m23 = 0.0;
    for k in 0..=n {
        let t = if k == n { t_end } else { k as f64 * dt };
        let xa: [f64; DIM] = x.as_slice().try_into().expect("state dimension");
        m12 = sys.outflow(&xa)?;
        m23 = microalgae::carbon_uptake(alg[1], light, p)?;
        let rate = network::atmosphere_rate(m12, m23, vd, vm)? / vd;
        if t < 1.0 && m23 > peak {
            peak = m23;
            peak_t = t;
        }
        if x_alg_at_12.is_nan() && t >= 12.0 {
            x_alg_at_12 = alg[0];
        }
        if k % cfg.integrator.stride == 0 || k == n {
            trace.push(t, &[alg[0], alg[1], m2], &[m12, m23, rate])?;
        }
        if k == n {
            break;
        }
        let step = if k + 1 == n { t_end - t } else { dt };
        let d_alg = microalgae::monod_field(&MonodState::new(alg[0], alg[1]), light, p)?;
        for i in 0..2 {
            alg[i] += step * d_alg[i];
        }
        ode::project_nonnegative(t + step, &mut alg)?;
        m2 += step * rate;
        let h = step / sub as f64;
        debug_assert!(h <= ddt * (1.0 + 1e-12));
        for j in 0..sub {
            let a = ctrl.action(&sys, &x)?;
            if a.settled && settle_time.is_none() {
                settle_time = Some(t + j as f64 * h);
            }
            let xdot = sys.drift(&x)? + sys.input_matrix(&x)? * a.u;
            x += xdot * h;
        }
    }
    let cv = network::compensation_volume(m12, m23, vd)?;
    let lambda_a = network::circularity(m12, cfg.network.delta)?.lambda;
    let net_b = network::atmosphere_rate(m12, m23, vd, vm)? / vd;
    let lambda_b = network::circularity_clamped(net_b, cfg.network.delta)?.lambda;
    let summary = NetworkSummary {
        m12_steady: m12,
        m23_steady: m23,
        m23_peak: peak,
        m23_peak_time: peak_t,
        x_alg_at_12,
        x_alg_final: alg[0],
        compensation_volume: cv,
        v_m: vm,
        volume_ratio: cv / vd,
        lambda_a,
        lambda_b,
        uptake_orders_below_emissions: (m12 / m23).log10(),
        m2_final: m2,
        settle_time,
    };
    Ok(NetworkRun { trace, summary })
}

/// Static net-zero figures from given steady flows.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeReport {
    pub compensation_volume: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
}

pub fn volume_report(m12: f64, m23: f64, vd: f64, delta: f64) -> Result<VolumeReport> {
    let vm = network::compensation_volume(m12, m23, vd)?;
    let net = network::atmosphere_rate(m12, m23, vd, vm)? / vd;
    Ok(VolumeReport {
        compensation_volume: vm,
        lambda_a: network::circularity(m12, delta)?.lambda,
        lambda_b: network::circularity_clamped(net, delta)?.lambda,
    })
}

pub fn make_env(cfg: &Config, seed: u64) -> Result<MicroalgaeEnv> {
    let mut ec = cfg.env_config();
    ec.seed = seed;
    MicroalgaeEnv::new(cfg.microalgae.params.clone(), ec)
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub result: TrainResult,
}

#[derive(Debug, Clone)]
pub struct ArsReport {
    pub runs: Vec<SeedRun>,
    pub optimal_light: f64,
    /// Median of `r_e − r_s` over seeds; `None` when no seed updated.
    pub median_delta: Option<f64>,
    pub median_r_start: f64,
    pub median_r_end: f64,
    /// Median over seeds of the mean action in the last evaluations.
    pub median_late_action: f64,
}

/// Evaluations averaged for the late-action figure.
pub const LATE_EVALUATIONS: usize = 10;

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Trains one policy per seed `base_seed, base_seed + 1, …`.
pub fn run_ars(cfg: &Config, total_steps: usize, seeds: usize, base_seed: u64) -> Result<ArsReport> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    make_env(cfg, 0)?;
    let mut runs = Vec::with_capacity(seeds);
    for k in 0..seeds as u64 {
        let seed = base_seed + k;
        let ac = ars::ArsConfig {
            total_steps,
            seed,
            ..cfg.ars.clone()
        };
        let result = ars::train(|| make_env(cfg, 0).expect("validated environment"), &ac)?;
        log::info!(
            "seed {seed}: r_s = {}, r_e = {}, late action = {}",
            result.r_start(),
            result.r_end(),
            result.late_mean_action(LATE_EVALUATIONS)
        );
        runs.push(SeedRun { seed, result });
    }
    let deltas: Vec<f64> = runs.iter().filter_map(|r| r.result.delta()).collect();
    Ok(ArsReport {
        optimal_light: microalgae::optimal_light(&cfg.microalgae.params),
        median_delta: (!deltas.is_empty()).then(|| median(deltas)),
        median_r_start: median(runs.iter().map(|r| r.result.r_start()).collect()),
        median_r_end: median(runs.iter().map(|r| r.result.r_end()).collect()),
        median_late_action: median(
            runs.iter()
                .map(|r| r.result.late_mean_action(LATE_EVALUATIONS))
                .collect(),
        ),
        runs,
    })
}

/// Return of a saved policy next to the constant optimal-light baseline.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub policy: ReturnStats,
    pub optimal_constant: ReturnStats,
}

pub fn evaluate_policy(cfg: &Config, policy: &LinearPolicy, episodes: usize, seed: u64) -> Result<PolicyEvaluation> {
    let stats = env::episode_return(policy, &mut make_env(cfg, seed)?, episodes)?;
    let opt = ConstantPolicy(microalgae::optimal_light(&cfg.microalgae.params));
    let base = env::episode_return(&opt, &mut make_env(cfg, seed)?, episodes)?;
    Ok(PolicyEvaluation {
        policy: stats,
        optimal_constant: base,
    })
}

/// One validation check with its measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.to_owned(),
            measured,
            threshold,
            passed: measured <= threshold,
            detail,
        }
    }

    fn failed(name: &str, threshold: f64, err: &Error) -> Self {
        Self {
            name: name.to_owned(),
            measured: f64::INFINITY,
            threshold,
            passed: false,
            detail: err.to_string(),
        }
    }
}

/// Random translated states with a physical untranslated counterpart and a
/// nonsingular input matrix.
pub fn sample_translated_states(sys: &TranslatedDigester, n: usize, seed: u64) -> Vec<[f64; DIM]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = sys.equilibrium().state.to_array();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: [f64; DIM] = std::array::from_fn(|i| {
            let lo = -(0.9 * xs[i]).min(3.0);
            rng.random_range(lo..3.0)
        });
        if sys.input_matrix_g(&x).is_ok() {
            out.push(x);
        }
    }
    out
}

/// Max-norm of `f + Gφ + ½V′ᵀ` over random states.
pub fn closed_loop_identity_residual(cfg: &Config, n: usize, seed: u64) -> Result<f64> {
    let sys = translated_digester(cfg)?;
    let x0 = DVector::from_row_slice(&preset_x0(&cfg.controller.preset)?);
    let pq = control::pq_from(&x0, cfg.controller.t_max)?;
    let mut worst = 0.0f64;
    for xa in sample_translated_states(&sys, n, seed) {
        let x = DVector::from_row_slice(&xa);
        let f = sys.drift(&x)?;
        let g: DMatrix<f64> = sys.input_matrix(&x)?;
        let vg = control::lyapunov_grad(&x, &pq);
        let u = control::icd_control(&f, &g, &vg)?;
        worst = worst.max((&f + &g * u + vg * 0.5).amax());
    }
    Ok(worst)
}

/// Scaled residual of the partial-pressure quadratic over random states.
pub fn pc_quadratic_residual(cfg: &Config, n: usize, seed: u64) -> Result<f64> {
    let p = &cfg.digester.params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let x = DigesterState::from_array([
            rng.random_range(0.0..5.0),
            rng.random_range(0.0..5.0),
            rng.random_range(0.0..20.0),
            rng.random_range(0.0..100.0),
            rng.random_range(0.0..150.0),
            rng.random_range(0.0..200.0),
        ]);
        let pc = digester::partial_pressure_pc(&x, p)?;
        let phi = digester::gas_phi(&x, p)?;
        let co2 = x.dissolved_co2();
        let resid = p.k_h * pc * pc - phi * pc + p.p_t * co2;
        let scale = 1.0 + (phi * pc).abs() + (p.p_t * co2).abs();
        worst = worst.max(resid.abs() / scale);
    }
    Ok(worst)
}

/// Max relative error of the Euler microalgae run at `integrator.dt` against
/// the adaptive oracle over `integrator.t_end`.
pub fn monod_oracle_error(cfg: &Config) -> Result<f64> {
    let p = cfg.microalgae.params.clone();
    let light = cfg.microalgae.i_ref;
    let mut field = move |_t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
        dx.copy_from_slice(&microalgae::monod_field(&MonodState::new(x[0], x[1]), light, &p)?);
        Ok(())
    };
    let ic = cfg.monod_integrator();
    let times: Vec<f64> = (1..=100).map(|j| ic.t_end * j as f64 / 100.0).collect();
    let x0 = [cfg.microalgae.x_alg_0, cfg.microalgae.s_0];
    let reference = ode::oracle_at(&x0, &mut field, &times, ic.abs_tol, ic.rel_tol)?;
    let fixed = ode::integrate_fixed_at(&x0, &mut field, ic.dt, &times, true)?;
    Ok(ode::max_relative_error(&fixed, &reference, 1e-6))
}

/// Runs the invariant suite against `cfg`.
pub fn validate(cfg: &Config, seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let eq_tol = digester::EQUILIBRIUM_TOLERANCE;
    match cfg
        .digester
        .equilibrium()
        .and_then(|eq| eq.residual(&cfg.digester.params))
    {
        Ok(r) => checks.push(Check::at_most("equilibrium_residual", r, eq_tol, String::new())),
        Err(e) => checks.push(Check::failed("equilibrium_residual", eq_tol, &e)),
    }

    let tol = cfg.integrator.calibration_tolerance;
    match monod_oracle_error(cfg) {
        Ok(e) => checks.push(Check::at_most(
            "monod_oracle_match",
            e,
            tol,
            format!("dt = {}", cfg.integrator.dt),
        )),
        Err(e) => checks.push(Check::failed("monod_oracle_match", tol, &e)),
    }

    let p = cfg.microalgae.params.clone();
    let light = cfg.microalgae.i_ref;
    let mut field = move |_t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
        dx.copy_from_slice(&microalgae::monod_field(&MonodState::new(x[0], x[1]), light, &p)?);
        Ok(())
    };
    let cal = ode::CalibrationConfig {
        t_end: cfg.integrator.t_end,
        tolerance: tol,
        abs_tol: cfg.integrator.abs_tol,
        rel_tol: cfg.integrator.rel_tol,
        ..ode::CalibrationConfig::default()
    };
    match ode::calibrate_dt(&[cfg.microalgae.x_alg_0, cfg.microalgae.s_0], &mut field, cfg.integrator.dt, &cal) {
        Ok(c) => checks.push(Check {
            name: "calibrated_dt".into(),
            measured: c.dt,
            threshold: cfg.integrator.dt,
            passed: c.dt == cfg.integrator.dt,
            detail: format!("error {:e} after {} halvings", c.error, c.history.len() - 1),
        }),
        Err(e) => checks.push(Check::failed("calibrated_dt", cfg.integrator.dt, &e)),
    }

    let nl_tol = cfg.integrator.norm_law_tolerance;
    for preset in ["1", "2"] {
        let name = format!("norm_law_preset_{preset}");
        match run_digester(cfg, cfg.controller.t_max, preset, None) {
            Ok(run) => {
                checks.push(Check::at_most(&name, run.norm_law_error, nl_tol, format!("T_max = {}", run.t_max)));
                let settle = run.settle_time.unwrap_or(f64::INFINITY);
                checks.push(Check::at_most(
                    &format!("settle_time_preset_{preset}"),
                    settle,
                    run.t_max,
                    String::new(),
                ));
                let rel = (run.cost - run.v0).abs() / run.v0;
                checks.push(Check::at_most(
                    &format!("value_identity_preset_{preset}"),
                    rel,
                    0.01,
                    format!("J = {}, V(x0) = {}", run.cost, run.v0),
                ));
            }
            Err(e) => checks.push(Check::failed(&name, nl_tol, &e)),
        }
    }

    match closed_loop_identity_residual(cfg, 1000, seed) {
        Ok(r) => checks.push(Check::at_most("closed_loop_identity", r, 1e-10, "1000 random states".into())),
        Err(e) => checks.push(Check::failed("closed_loop_identity", 1e-10, &e)),
    }
    match pc_quadratic_residual(cfg, 1000, seed) {
        Ok(r) => checks.push(Check::at_most("pc_quadratic", r, 1e-10, "1000 random states".into())),
        Err(e) => checks.push(Check::failed("pc_quadratic", 1e-10, &e)),
    }
    checks
}
