//! Reset/step environment over the microalgae model: observation `(X_ALG, S)`,
//! action light intensity `I`, reward the CO2 uptake rate at the pre-step state.
//! Episodes have a fixed length and never terminate early.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microalgae::{self, MonodParams, MonodState};
use crate::ode::{self, SimulationTrace};

pub const OBS_DIM: usize = 2;
pub const ACTION_DIM: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_episode_steps: usize,
    pub action_low: f64,
    pub action_high: f64,
    /// Uniform initial-condition range for `X_ALG`.
    pub init_x_alg: (f64, f64),
    /// Uniform initial-condition range for `S`.
    pub init_s: (f64, f64),
    /// Simulated days per action.
    pub env_dt: f64,
    /// Inner Euler step.
    pub substep_dt: f64,
    pub seed: u64,
}

impl EnvConfig {
    /// Bounds `[0, 2·I*]` and initial ranges `[0.5, 1.5]×` the reference state.
    pub fn for_params(p: &MonodParams, x_alg_0: f64, s_0: f64) -> Self {
        Self {
            max_episode_steps: 200,
            action_low: 0.0,
            action_high: 2.0 * microalgae::optimal_light(p),
            init_x_alg: (0.5 * x_alg_0, 1.5 * x_alg_0),
            init_s: (0.5 * s_0, 1.5 * s_0),
            env_dt: 0.00005,
            substep_dt: 0.00005,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_episode_steps == 0 {
            return Err(Error::Configuration("max_episode_steps must be positive".into()));
        }
        if !(0.0 <= self.action_low && self.action_low < self.action_high) {
            return Err(Error::Configuration(format!(
                "action bounds must satisfy 0 <= low < high, got [{}, {}]",
                self.action_low, self.action_high
            )));
        }
        for (name, (lo, hi)) in [("init_x_alg", self.init_x_alg), ("init_s", self.init_s)] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Configuration(format!(
                    "{name} must be a non-negative range, got [{lo}, {hi}]"
                )));
            }
        }
        if !(self.substep_dt > 0.0 && self.env_dt >= self.substep_dt) {
            return Err(Error::Configuration(format!(
                "need env_dt >= substep_dt > 0, got {} and {}",
                self.env_dt, self.substep_dt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: [f64; OBS_DIM],
    pub reward: f64,
    /// Number of steps taken so far in this episode, counting this one.
    pub step_index: usize,
    pub episode_done: bool,
}

/// Minimal episodic interface shared by the microalgae environment and test
/// problems. Actions are scalar.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn episode_length(&self) -> usize;
    fn action_bounds(&self) -> (f64, f64);
    fn reseed(&mut self, seed: u64);
    fn reset(&mut self) -> Vec<f64>;
    /// Returns `(observation, reward, done)`.
    fn step_scalar(&mut self, action: f64) -> Result<(Vec<f64>, f64, bool)>;
}

/// Maps an observation to a scalar action.
pub trait Policy {
    fn act(&self, obs: &[f64]) -> f64;
}

/// Always returns the same action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn act(&self, _obs: &[f64]) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct MicroalgaeEnv {
    params: MonodParams,
    config: EnvConfig,
    rng: ChaCha8Rng,
    state: MonodState,
    steps: usize,
    substeps: usize,
}

impl MicroalgaeEnv {
    pub fn new(params: MonodParams, config: EnvConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let ratio = config.env_dt / config.substep_dt;
        let substeps = ratio.round();
        if (ratio - substeps).abs() > 1e-9 * substeps {
            return Err(Error::Configuration(format!(
                "env_dt {} is not a whole number of substeps {}",
                config.env_dt, config.substep_dt
            )));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut env = Self {
            params,
            config,
            rng,
            state: MonodState::default(),
            steps: 0,
            substeps: substeps as usize,
        };
        env.reset();
        Ok(env)
    }

    pub fn params(&self) -> &MonodParams {
        &self.params
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> MonodState {
        self.state
    }

    /// Places the environment at an explicit state and restarts the episode.
    pub fn set_state(&mut self, state: MonodState) {
        self.state = state;
        self.steps = 0;
    }

    fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    }

    pub fn reset_state(&mut self) -> [f64; OBS_DIM] {
        let x = Self::sample(&mut self.rng, self.config.init_x_alg);
        let s = Self::sample(&mut self.rng, self.config.init_s);
        self.state = MonodState::new(x, s);
        self.steps = 0;
        self.state.to_array()
    }

    pub fn clamp_action(&self, action: f64) -> f64 {
        if action.is_nan() {
            return self.config.action_low;
        }
        action.clamp(self.config.action_low, self.config.action_high)
    }

    pub fn step(&mut self, action: f64) -> Result<Transition> {
        if self.steps >= self.config.max_episode_steps {
            return Err(Error::EpisodeFinished { steps: self.steps });
        }
        let light = self.clamp_action(action);
        let reward = microalgae::carbon_uptake(self.state.s, light, &self.params)?;
        let params = &self.params;
        let mut field = |_t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
            let d = microalgae::monod_field(&MonodState::new(x[0], x[1]), light, params)?;
            dx.copy_from_slice(&d);
            Ok(())
        };
        let mut x = self.state.to_array().to_vec();
        let t0 = self.steps as f64 * self.config.env_dt;
        for k in 0..self.substeps {
            let t = t0 + k as f64 * self.config.substep_dt;
            x = ode::step_fixed(t, &x, &mut field, self.config.substep_dt)?;
            ode::project_nonnegative(t + self.config.substep_dt, &mut x)?;
        }
        self.state = MonodState::new(x[0], x[1]);
        self.steps += 1;
        Ok(Transition {
            observation: self.state.to_array(),
            reward,
            step_index: self.steps,
            episode_done: self.steps == self.config.max_episode_steps,
        })
    }

    /// Plain-text binding description for external RL frameworks.
    pub fn descriptor(&self) -> String {
        let c = &self.config;
        format!(
            "name = microalgae-light\n\
             observation_dim = {OBS_DIM}\n\
             observation_names = X_ALG,S\n\
             observation_low = 0,0\n\
             observation_high = inf,inf\n\
             action_dim = {ACTION_DIM}\n\
             action_names = I\n\
             action_low = {}\n\
             action_high = {}\n\
             max_episode_steps = {}\n\
             termination = none\n\
             reward = carbon_uptake\n\
             env_dt = {}\n\
             substep_dt = {}\n\
             init_x_alg = {},{}\n\
             init_s = {},{}\n",
            c.action_low,
            c.action_high,
            c.max_episode_steps,
            c.env_dt,
            c.substep_dt,
            c.init_x_alg.0,
            c.init_x_alg.1,
            c.init_s.0,
            c.init_s.1,
        )
    }
}

impl Environment for MicroalgaeEnv {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn episode_length(&self) -> usize {
        self.config.max_episode_steps
    }

    fn action_bounds(&self) -> (f64, f64) {
        (self.config.action_low, self.config.action_high)
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        self.reset_state().to_vec()
    }

    fn step_scalar(&mut self, action: f64) -> Result<(Vec<f64>, f64, bool)> {
        let tr = self.step(action)?;
        Ok((tr.observation.to_vec(), tr.reward, tr.episode_done))
    }
}

/// Summary of repeated episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
    /// Mean clamped action over every step of every episode.
    pub mean_action: f64,
}

impl ReturnStats {
    pub fn from_episodes(returns: Vec<f64>, action_sum: f64, steps: usize) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            returns,
            mean_action: action_sum / steps.max(1) as f64,
        }
    }
}

/// Runs one full episode, returning `(return, sum of clamped actions)`.
pub fn run_episode<E: Environment + ?Sized, P: Policy + ?Sized>(
    policy: &P,
    env: &mut E,
) -> Result<(f64, f64)> {
    let (lo, hi) = env.action_bounds();
    let mut obs = env.reset();
    let mut total = 0.0;
    let mut actions = 0.0;
    loop {
        let a = policy.act(&obs);
        actions += if a.is_nan() { lo } else { a.clamp(lo, hi) };
        let (next, r, done) = env.step_scalar(a)?;
        total += r;
        obs = next;
        if done {
            return Ok((total, actions));
        }
    }
}

/// Undiscounted return statistics over `n_episodes` consecutive resets of `env`.
pub fn episode_return<E: Environment + ?Sized, P: Policy + ?Sized>(
    policy: &P,
    env: &mut E,
    n_episodes: usize,
) -> Result<ReturnStats> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be at least 1".into()));
    }
    let mut returns = Vec::with_capacity(n_episodes);
    let mut action_sum = 0.0;
    for _ in 0..n_episodes {
        let (r, a) = run_episode(policy, env)?;
        returns.push(r);
        action_sum += a;
    }
    Ok(ReturnStats::from_episodes(
        returns,
        action_sum,
        n_episodes * env.episode_length(),
    ))
}

/// One episode logged in trace form: states `X_ALG, S`, aux `I, reward`.
pub fn record_episode<P: Policy + ?Sized>(policy: &P, env: &mut MicroalgaeEnv) -> Result<SimulationTrace> {
    let mut trace = SimulationTrace::new(&microalgae::STATE_NAMES, &["I", "reward"]);
    let mut obs = env.reset_state();
    let dt = env.config().env_dt;
    for k in 0..env.config().max_episode_steps {
        let light = env.clamp_action(policy.act(&obs));
        let tr = env.step(light)?;
        trace.push(k as f64 * dt, &obs, &[light, tr.reward])?;
        obs = tr.observation;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_with(seed: u64) -> MicroalgaeEnv {
        let cfg = crate::config::Config::reference();
        let mut ec = cfg.env_config();
        ec.seed = seed;
        MicroalgaeEnv::new(cfg.microalgae.params.clone(), ec).unwrap()
    }

    #[test]
    fn degenerate_range_is_deterministic() {
        let cfg = crate::config::Config::reference();
        let mut ec = cfg.env_config();
        ec.init_x_alg = (7.0, 7.0);
        ec.init_s = (3.0, 3.0);
        let mut env = MicroalgaeEnv::new(cfg.microalgae.params.clone(), ec).unwrap();
        for _ in 0..5 {
            assert_eq!(env.reset_state(), [7.0, 3.0]);
        }
    }

    #[test]
    fn same_seed_same_reset() {
        assert_eq!(env_with(42).reset_state(), env_with(42).reset_state());
        assert_ne!(env_with(42).reset_state(), env_with(43).reset_state());
    }

    #[test]
    fn reset_samples_are_uniform() {
        let mut env = env_with(7);
        let (lo, hi) = env.config().init_x_alg;
        let n = 10_000;
        let mean = (0..n).map(|_| env.reset_state()[0]).sum::<f64>() / n as f64;
        let sigma = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5 * (lo + hi)).abs() < 3.0 * sigma);
    }

    #[test]
    fn dark_and_starved_give_zero_reward() {
        let mut env = env_with(1);
        env.reset_state();
        assert_eq!(env.step(0.0).unwrap().reward, 0.0);
        env.set_state(MonodState::new(20.0, 0.0));
        assert_eq!(env.step(500.0).unwrap().reward, 0.0);
    }

    #[test]
    fn episode_is_exactly_full_length() {
        let mut env = env_with(3);
        env.reset_state();
        let n = env.config().max_episode_steps;
        for k in 1..=n {
            let tr = env.step(300.0).unwrap();
            assert_eq!(tr.step_index, k);
            assert_eq!(tr.episode_done, k == n);
            assert!(tr.reward >= 0.0);
        }
        assert!(matches!(env.step(300.0), Err(Error::EpisodeFinished { .. })));
    }

    #[test]
    fn reward_is_carbon_uptake_bitwise() {
        let mut env = env_with(5);
        let obs = env.reset_state();
        let tr = env.step(321.0).unwrap();
        let direct = microalgae::carbon_uptake(obs[1], 321.0, env.params()).unwrap();
        assert_eq!(tr.reward.to_bits(), direct.to_bits());
    }

    #[test]
    fn out_of_range_action_matches_clamped() {
        let mut a = env_with(9);
        let mut b = env_with(9);
        a.reset_state();
        b.reset_state();
        let hi = a.config().action_high;
        assert_eq!(a.step(10.0 * hi).unwrap(), b.step(hi).unwrap());
        assert_eq!(a.step(-5.0).unwrap(), b.step(0.0).unwrap());
    }

    #[test]
    fn seeded_episodes_repeat() {
        let p = ConstantPolicy(400.0);
        let ra = episode_return(&p, &mut env_with(11), 3).unwrap();
        let rb = episode_return(&p, &mut env_with(11), 3).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn zero_policy_returns_zero() {
        let r = episode_return(&ConstantPolicy(0.0), &mut env_with(2), 4).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.std, 0.0);
    }

    #[test]
    fn optimal_constant_light_beats_other_constants() {
        let mut env = env_with(0);
        let i_star = microalgae::optimal_light(env.params());
        let best = episode_return(&ConstantPolicy(i_star), &mut env_with(21), 5).unwrap().mean;
        let hi = env.config().action_high;
        for k in 0..=40 {
            let light = hi * k as f64 / 40.0;
            let r = episode_return(&ConstantPolicy(light), &mut env_with(21), 5).unwrap().mean;
            assert!(r <= best + 1e-9 * best, "I = {light}: {r} > {best}");
        }
        env.reset_state();
    }

    #[test]
    fn descriptor_lists_bounds() {
        let env = env_with(0);
        let d = env.descriptor();
        assert!(d.contains("observation_dim = 2"));
        assert!(d.contains("action_dim = 1"));
        assert!(d.contains(&format!("action_high = {}", env.config().action_high)));
    }

    #[test]
    fn record_episode_trace_shape() {
        let mut env = env_with(4);
        let tr = record_episode(&ConstantPolicy(500.0), &mut env).unwrap();
        assert_eq!(tr.len(), 200);
        assert_eq!(tr.aux_names, vec!["I", "reward"]);
    }
}
