//! Augmented random search over linear policies.
//!
//! The policy computes `u = clip(M·[z; 1], 0, 1)` from the (optionally
//! normalized) observation `z` and maps it affinely onto the action bounds.
//! The trailing `1` gives `M` a bias column, so a zeroed policy emits the lower
//! action bound.

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Policy, ReturnStats};
use crate::error::{Error, Result};

/// Below this return spread the update is skipped.
pub const SIGMA_GUARD: f64 = 1e-8;
const VAR_FLOOR: f64 = 1e-8;

/// Running observation mean and population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// Merges a batch of observations (pairwise combination of moments).
    pub fn merge(&mut self, batch: &[Vec<f64>]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let dim = self.mean.len();
        let mut bmean = vec![0.0; dim];
        for o in batch {
            for i in 0..dim {
                bmean[i] += o[i];
            }
        }
        bmean.iter_mut().for_each(|m| *m /= n);
        let mut bvar = vec![0.0; dim];
        for o in batch {
            for i in 0..dim {
                bvar[i] += (o[i] - bmean[i]).powi(2);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= n);
        if self.count == 0.0 {
            self.mean = bmean;
            self.var = bvar;
            self.count = n;
            return;
        }
        let total = self.count + n;
        for i in 0..dim {
            let d = bmean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bvar[i] * n + d * d * self.count * n / total;
            self.mean[i] += d * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    /// `action_dim × (obs_dim + 1)`; the last column is the bias.
    pub weights: DMatrix<f64>,
    pub obs_mean: Vec<f64>,
    pub obs_var: Vec<f64>,
    pub obs_count: f64,
    pub normalize: bool,
    pub action_low: f64,
    pub action_high: f64,
}

impl LinearPolicy {
    pub fn zeros(obs_dim: usize, (action_low, action_high): (f64, f64), normalize: bool) -> Self {
        Self {
            weights: DMatrix::zeros(1, obs_dim + 1),
            obs_mean: vec![0.0; obs_dim],
            obs_var: vec![1.0; obs_dim],
            obs_count: 0.0,
            normalize,
            action_low,
            action_high,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn stats(&self) -> RunningStats {
        RunningStats {
            count: self.obs_count,
            mean: self.obs_mean.clone(),
            var: self.obs_var.clone(),
        }
    }

    pub fn set_stats(&mut self, s: &RunningStats) {
        self.obs_count = s.count;
        self.obs_mean = s.mean.clone();
        self.obs_var = s.var.clone();
    }

    pub fn with_weights(&self, weights: DMatrix<f64>) -> Self {
        Self {
            weights,
            ..self.clone()
        }
    }

    /// Unclipped linear output `M·[z; 1]`.
    pub fn raw_output(&self, obs: &[f64]) -> f64 {
        let d = self.obs_dim();
        debug_assert_eq!(obs.len(), d);
        let mut acc = self.weights[(0, d)];
        for (i, &o) in obs.iter().enumerate().take(d) {
            let z = if self.normalize {
                (o - self.obs_mean[i]) / self.obs_var[i].max(VAR_FLOOR).sqrt()
            } else {
                o
            };
            acc += self.weights[(0, i)] * z;
        }
        acc
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        writeln!(w, "shape {} {}", self.weights.nrows(), self.weights.ncols())?;
        for r in 0..self.weights.nrows() {
            let row: Vec<f64> = self.weights.row(r).iter().copied().collect();
            writeln!(w, "row {}", join(&row))?;
        }
        writeln!(w, "normalize {}", self.normalize)?;
        writeln!(w, "obs_count {}", self.obs_count)?;
        writeln!(w, "obs_mean {}", join(&self.obs_mean))?;
        writeln!(w, "obs_var {}", join(&self.obs_var))?;
        writeln!(w, "action_bounds {} {}", self.action_low, self.action_high)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("policy file: {m}"));
        let nums = |it: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            it.map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("policy file: {e}"))))
                .collect()
        };
        let mut shape = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let (mut normalize, mut count, mut mean, mut var, mut bounds) = (None, None, None, None, None);
        for line in r.lines() {
            let line = line?;
            let mut it = line.split_whitespace();
            let Some(key) = it.next() else { continue };
            match key {
                "shape" => {
                    let v = nums(it)?;
                    if v.len() != 2 {
                        return Err(bad("shape needs two numbers"));
                    }
                    shape = Some((v[0] as usize, v[1] as usize));
                }
                "row" => rows.push(nums(it)?),
                "normalize" => {
                    normalize = Some(
                        it.next()
                            .ok_or_else(|| bad("normalize needs a value"))?
                            .parse::<bool>()
                            .map_err(|e| bad(&e.to_string()))?,
                    )
                }
                "obs_count" => count = nums(it)?.first().copied(),
                "obs_mean" => mean = Some(nums(it)?),
                "obs_var" => var = Some(nums(it)?),
                "action_bounds" => bounds = Some(nums(it)?),
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        let (nr, nc) = shape.ok_or_else(|| bad("missing shape"))?;
        if rows.len() != nr || rows.iter().any(|r| r.len() != nc) || nc < 1 {
            return Err(bad("weight rows do not match shape"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let mean = mean.ok_or_else(|| bad("missing obs_mean"))?;
        let var = var.ok_or_else(|| bad("missing obs_var"))?;
        let bounds = bounds.ok_or_else(|| bad("missing action_bounds"))?;
        if mean.len() != nc - 1 || var.len() != nc - 1 || bounds.len() != 2 {
            return Err(bad("statistics do not match shape"));
        }
        if flat.iter().chain(&mean).chain(&var).any(|v| !v.is_finite()) || var.iter().any(|v| *v < 0.0) {
            return Err(bad("non-finite weights or negative variance"));
        }
        Ok(Self {
            weights: DMatrix::from_row_slice(nr, nc, &flat),
            obs_mean: mean,
            obs_var: var,
            obs_count: count.ok_or_else(|| bad("missing obs_count"))?,
            normalize: normalize.ok_or_else(|| bad("missing normalize"))?,
            action_low: bounds[0],
            action_high: bounds[1],
        })
    }
}

impl Policy for LinearPolicy {
    fn act(&self, obs: &[f64]) -> f64 {
        let u = self.raw_output(obs).clamp(0.0, 1.0);
        self.action_low + u * (self.action_high - self.action_low)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArsConfig {
    pub n_directions: usize,
    pub learning_rate: f64,
    pub noise: f64,
    pub episodes_per_candidate: usize,
    /// Number of best directions used in the update; `None` means all.
    pub top_directions: Option<usize>,
    /// Subtracted from every per-step reward.
    pub alive_bonus_offset: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub normalize: bool,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Wall-clock budget; training stops cleanly once exceeded.
    pub time_budget_secs: Option<f64>,
}

impl Default for ArsConfig {
    fn default() -> Self {
        Self {
            n_directions: 8,
            learning_rate: 0.02,
            noise: 0.05,
            episodes_per_candidate: 1,
            top_directions: None,
            alive_bonus_offset: 0.0,
            total_steps: 200_000,
            seed: 0,
            normalize: true,
            eval_episodes: 10,
            eval_seed: 12_345,
            time_budget_secs: None,
        }
    }
}

impl ArsConfig {
    pub fn top(&self) -> usize {
        self.top_directions.unwrap_or(self.n_directions)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.top();
        if self.n_directions == 0 || b == 0 || b > self.n_directions {
            return Err(Error::Configuration(format!(
                "need 1 <= top_directions <= n_directions, got {b} and {}",
                self.n_directions
            )));
        }
        if !(self.noise > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::Configuration(
                "noise must be positive and learning_rate non-negative".into(),
            ));
        }
        if self.episodes_per_candidate == 0 || self.eval_episodes == 0 {
            return Err(Error::Configuration("episode counts must be positive".into()));
        }
        Ok(())
    }
}

/// `(M + noise·δ, M − noise·δ, δ)` with standard-normal `δ`.
pub fn perturb(policy: &LinearPolicy, noise: f64, rng: &mut ChaCha8Rng) -> (LinearPolicy, LinearPolicy, DMatrix<f64>) {
    let (r, c) = policy.weights.shape();
    let delta = DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let plus = policy.with_weights(&policy.weights + &delta * noise);
    let minus = policy.with_weights(&policy.weights - &delta * noise);
    (plus, minus, delta)
}

/// Returns of one direction pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionResult {
    pub r_plus: f64,
    pub r_minus: f64,
    pub delta: DMatrix<f64>,
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Applies the update `M += lr/(b·σ_R)·Σ_top (r⁺ − r⁻)δ`.
pub fn update(policy: &LinearPolicy, results: &[DirectionResult], config: &ArsConfig) -> Result<LinearPolicy> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("update needs at least one direction".into()));
    }
    for (i, d) in results.iter().enumerate() {
        if !d.r_plus.is_finite() || !d.r_minus.is_finite() {
            return Err(Error::TrainingAbort(format!(
                "non-finite return in direction {i}: r+ = {}, r- = {}",
                d.r_plus, d.r_minus
            )));
        }
    }
    let all: Vec<f64> = results.iter().flat_map(|d| [d.r_plus, d.r_minus]).collect();
    let sigma = population_std(&all);
    if sigma < SIGMA_GUARD {
        return Ok(policy.clone());
    }
    let b = config.top().min(results.len());
    let mut order: Vec<usize> = (0..results.len()).collect();
    // stable sort keeps ties in direction order
    order.sort_by(|&i, &j| {
        let ki = results[i].r_plus.max(results[i].r_minus);
        let kj = results[j].r_plus.max(results[j].r_minus);
        kj.total_cmp(&ki)
    });
    let mut step = DMatrix::zeros(policy.weights.nrows(), policy.weights.ncols());
    for &i in order.iter().take(b) {
        step += &results[i].delta * (results[i].r_plus - results[i].r_minus);
    }
    Ok(policy.with_weights(&policy.weights + step * (config.learning_rate / (b as f64 * sigma))))
}

/// One point of the learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Training environment steps consumed before this evaluation.
    pub env_steps: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_action: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub policy: LinearPolicy,
    pub curve: Vec<CurvePoint>,
    pub env_steps: usize,
    pub eval_steps: usize,
    /// True when the wall-clock budget stopped training early.
    pub budget_exhausted: bool,
}

impl TrainResult {
    pub fn r_start(&self) -> f64 {
        self.curve.first().map_or(f64::NAN, |c| c.mean_return)
    }

    pub fn r_end(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |c| c.mean_return)
    }

    /// `r_e − r_s`; undefined (`None`) without any update.
    pub fn delta(&self) -> Option<f64> {
        (self.curve.len() >= 2).then(|| self.r_end() - self.r_start())
    }

    /// Mean action over the last `k` evaluations.
    pub fn late_mean_action(&self, k: usize) -> f64 {
        let tail = &self.curve[self.curve.len().saturating_sub(k)..];
        tail.iter().map(|c| c.mean_action).sum::<f64>() / tail.len().max(1) as f64
    }

    /// Learning curve in trace form: `t` is the training step count.
    pub fn curve_trace(&self) -> Result<crate::ode::SimulationTrace> {
        let mut tr = crate::ode::SimulationTrace::new::<&str, &str>(
            &[],
            &["iteration", "mean_return", "std_return", "mean_action"],
        );
        for c in &self.curve {
            tr.push(
                c.env_steps as f64,
                &[],
                &[c.iteration as f64, c.mean_return, c.std_return, c.mean_action],
            )?;
        }
        Ok(tr)
    }
}

/// Episode seed for item `i` of a stream, decorrelated by a SplitMix64 step.
pub fn derive_seed(base: u64, i: u64) -> u64 {
    let mut z = base ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Rollout {
    total: f64,
    actions: f64,
    observations: Vec<Vec<f64>>,
}

fn rollout<E: Environment, P: Policy>(policy: &P, env: &mut E, seed: u64, offset: f64, keep_obs: bool) -> Result<Rollout> {
    env.reseed(seed);
    let (lo, hi) = env.action_bounds();
    let mut obs = env.reset();
    let mut out = Rollout {
        total: 0.0,
        actions: 0.0,
        observations: Vec::new(),
    };
    loop {
        if keep_obs {
            out.observations.push(obs.clone());
        }
        let a = policy.act(&obs);
        out.actions += a.clamp(lo, hi);
        let (next, r, done) = env.step_scalar(a)?;
        out.total += r - offset;
        obs = next;
        if done {
            return Ok(out);
        }
    }
}

/// Mean return of `policy` over `n` episodes with seeds derived from `seed`.
pub fn evaluate<E, F>(policy: &LinearPolicy, make_env: &F, n: usize, seed: u64) -> Result<ReturnStats>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    let runs: Vec<Result<Rollout>> = (0..n)
        .into_par_iter()
        .map(|i| rollout(policy, &mut make_env(), derive_seed(seed, i as u64), 0.0, false))
        .collect();
    let mut returns = Vec::with_capacity(n);
    let mut action_sum = 0.0;
    let mut steps = 0;
    for r in runs {
        let r = r?;
        returns.push(r.total);
        action_sum += r.actions;
    }
    steps += n * make_env().episode_length();
    Ok(ReturnStats::from_episodes(returns, action_sum, steps))
}

/// Trains a zero-initialized linear policy until `total_steps` training
/// environment steps have been consumed.
pub fn train<E, F>(make_env: F, config: &ArsConfig) -> Result<TrainResult>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    config.validate()?;
    let start = Instant::now();
    let probe = make_env();
    let episode_len = probe.episode_length();
    let mut policy = LinearPolicy::zeros(probe.obs_dim(), probe.action_bounds(), config.normalize);
    let mut stats = RunningStats::new(probe.obs_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut curve = Vec::new();
    let mut env_steps = 0usize;
    let mut eval_steps = 0usize;
    let mut budget_exhausted = false;
    let per_iteration = 2 * config.n_directions * config.episodes_per_candidate * episode_len;
    let mut iteration = 0usize;
    loop {
        let ev = evaluate(&policy, &make_env, config.eval_episodes, config.eval_seed)?;
        eval_steps += config.eval_episodes * episode_len;
        curve.push(CurvePoint {
            iteration,
            env_steps,
            mean_return: ev.mean,
            std_return: ev.std,
            mean_action: ev.mean_action,
        });
        if env_steps >= config.total_steps {
            break;
        }
        if let Some(budget) = config.time_budget_secs {
            if start.elapsed().as_secs_f64() > budget {
                log::warn!("ARS wall-clock budget of {budget} s exhausted after {iteration} iterations");
                budget_exhausted = true;
                break;
            }
        }
        // draw every random quantity up front so the parallel phase is order-free
        let mut jobs = Vec::with_capacity(config.n_directions);
        for _ in 0..config.n_directions {
            let (plus, minus, delta) = perturb(&policy, config.noise, &mut rng);
            let seed: u64 = rng.random();
            jobs.push((plus, minus, delta, seed));
        }
        let keep_obs = config.normalize;
        let tasks: Vec<(usize, bool, u64)> = (0..config.n_directions)
            .flat_map(|d| {
                let seed = jobs[d].3;
                (0..config.episodes_per_candidate)
                    .flat_map(move |e| [(d, true, derive_seed(seed, e as u64)), (d, false, derive_seed(seed, e as u64))])
            })
            .collect();
        let outcomes: Vec<Result<Rollout>> = tasks
            .par_iter()
            .map(|&(d, positive, seed)| {
                let p = if positive { &jobs[d].0 } else { &jobs[d].1 };
                rollout(p, &mut make_env(), seed, config.alive_bonus_offset, keep_obs)
            })
            .collect();
        let mut results: Vec<DirectionResult> = jobs
            .iter()
            .map(|j| DirectionResult {
                r_plus: 0.0,
                r_minus: 0.0,
                delta: j.2.clone(),
            })
            .collect();
        let mut observations = Vec::new();
        let epc = config.episodes_per_candidate as f64;
        for (&(d, positive, _), out) in tasks.iter().zip(outcomes) {
            let out = out?;
            if positive {
                results[d].r_plus += out.total / epc;
            } else {
                results[d].r_minus += out.total / epc;
            }
            observations.extend(out.observations);
        }
        env_steps += per_iteration;
        policy = update(&policy, &results, config)?;
        if config.normalize {
            stats.merge(&observations);
            policy.set_stats(&stats);
        }
        iteration += 1;
    }
    Ok(TrainResult {
        policy,
        curve,
        env_steps,
        eval_steps,
        budget_exhausted,
    })
}
