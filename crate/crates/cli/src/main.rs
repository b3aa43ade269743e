use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use netzero_core::ars::LinearPolicy;
use netzero_core::config::{REFERENCE_TOML, preset_x0};
use netzero_core::{Config, network, scenario};

#[derive(Parser)]
#[command(name = "netzero", version, about = "Digester/atmosphere/microalgae CO2 network simulations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file; the embedded reference configuration when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// `section.key=value`, applied in order after the file is read.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop digester under the finite-time controller.
    DigesterSim {
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        preset: Option<String>,
        /// Simulated days; defaults to the control horizon.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Coupled digester, atmosphere and culture run.
    NetworkSim,
    /// Random-search training of the light policy, one policy per seed.
    ArsTrain {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Returns of a saved policy and of constant optimal light.
    PolicyEval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Runs the invariant checks; non-zero exit on any failure.
    Validate,
    /// Cultivation volume that balances the atmosphere.
    Volume {
        #[arg(long)]
        m12: f64,
        #[arg(long)]
        m23: f64,
        #[arg(long)]
        vd: Option<f64>,
    },
    /// Circularity index of a net flow over a horizon.
    Circularity {
        #[arg(long, allow_hyphen_values = true)]
        net_flow: f64,
        #[arg(long)]
        delta: Option<f64>,
        /// Report negative flows as net zero.
        #[arg(long)]
        clamp: bool,
    },
}

struct Summary(Vec<(String, String)>);

impl Summary {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn add(&mut self, key: impl Into<String>, value: impl Display) {
        self.0.push((key.into(), value.to_string()));
    }

    fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let cfg = match &common.config {
        Some(path) => Config::load(path, &common.overrides),
        None => Config::from_toml_str(REFERENCE_TOML, &common.overrides),
    };
    Ok(cfg?)
}

fn write_outputs(out: &Path, cfg: &Config, summary: &Summary) -> Result<()> {
    fs::write(out.join("manifest.toml"), cfg.to_toml_string()?)?;
    fs::write(out.join("summary.txt"), summary.render())?;
    print!("{}", summary.render());
    Ok(())
}

/// Returns whether every requested check passed.
fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    let mut cfg = load_config(common)?;
    fs::create_dir_all(&common.out).with_context(|| format!("create {}", common.out.display()))?;
    let out = common.out.as_path();
    let mut summary = Summary::new();
    let mut passed = true;
    match cli.command {
        Command::DigesterSim { t_max, preset, horizon } => {
            let t_max = t_max.unwrap_or(cfg.controller.t_max);
            let preset = preset.unwrap_or_else(|| cfg.controller.preset.clone());
            preset_x0(&preset)?;
            cfg.controller.t_max = t_max;
            cfg.controller.preset = preset.clone();
            let run = scenario::run_digester(&cfg, t_max, &preset, horizon)?;
            run.trace.save(&out.join("digester_trace.csv"))?;
            summary.add("preset", &preset);
            summary.add("t_max", t_max);
            match run.settle_time {
                Some(t) => summary.add("settle_time", t),
                None => summary.add("settle_time", "none"),
            }
            passed = run.settle_time.is_some_and(|t| t <= t_max);
            summary.add("settled_before_t_max", passed);
            summary.add("cost", run.cost);
            summary.add("v0", run.v0);
            summary.add("norm_law_error", run.norm_law_error);
            summary.add("infeasible_steps", run.infeasible_steps);
            summary.add("final_time", run.final_time);
            summary.add("final_co2_outflow", run.final_co2_outflow);
        }
        Command::NetworkSim => {
            let run = scenario::run_network(&cfg)?;
            run.trace.save(&out.join("network_trace.csv"))?;
            for (k, v) in run.summary.to_pairs() {
                summary.add(k, v);
            }
        }
        Command::ArsTrain { steps, seeds } => {
            let steps = steps.unwrap_or(cfg.ars.total_steps);
            cfg.ars.total_steps = steps;
            let report = scenario::run_ars(&cfg, steps, seeds, common.seed)?;
            for run in &report.runs {
                let r = &run.result;
                r.policy.save(&out.join(format!("policy_seed{}.txt", run.seed)))?;
                r.curve_trace()?.save(&out.join(format!("curve_seed{}.csv", run.seed)))?;
                summary.add(format!("seed{}_r_start", run.seed), r.r_start());
                summary.add(format!("seed{}_r_end", run.seed), r.r_end());
                match r.delta() {
                    Some(d) => summary.add(format!("seed{}_delta", run.seed), d),
                    None => summary.add(format!("seed{}_delta", run.seed), "undefined"),
                }
                summary.add(format!("seed{}_env_steps", run.seed), r.env_steps);
            }
            summary.add("steps", steps);
            summary.add("seeds", seeds);
            summary.add("median_r_start", report.median_r_start);
            summary.add("median_r_end", report.median_r_end);
            match report.median_delta {
                Some(d) => summary.add("median_delta", d),
                None => summary.add("median_delta", "undefined"),
            }
            summary.add("delta_defined", report.median_delta.is_some());
            summary.add("median_late_action", report.median_late_action);
            summary.add("optimal_light", report.optimal_light);
            summary.add(
                "late_action_relative_error",
                (report.median_late_action - report.optimal_light).abs() / report.optimal_light,
            );
        }
        Command::PolicyEval { policy, episodes } => {
            let pol = LinearPolicy::load(&policy)?;
            let episodes = episodes.unwrap_or(cfg.ars.eval_episodes);
            let ev = scenario::evaluate_policy(&cfg, &pol, episodes, common.seed)?;
            summary.add("episodes", episodes);
            summary.add("policy_mean_return", ev.policy.mean);
            summary.add("policy_std_return", ev.policy.std);
            summary.add("policy_mean_action", ev.policy.mean_action);
            summary.add("optimal_constant_mean_return", ev.optimal_constant.mean);
            summary.add("optimal_constant_std_return", ev.optimal_constant.std);
            summary.add("optimal_constant_action", ev.optimal_constant.mean_action);
        }
        Command::Validate => {
            for c in scenario::validate(&cfg, common.seed) {
                let status = if c.passed { "pass" } else { "FAIL" };
                eprintln!(
                    "{status} {}: measured {:e}, threshold {:e} {}",
                    c.name, c.measured, c.threshold, c.detail
                );
                summary.add(format!("{}_measured", c.name), c.measured);
                summary.add(format!("{}_threshold", c.name), c.threshold);
                summary.add(format!("{}_passed", c.name), c.passed);
                passed &= c.passed;
            }
            summary.add("all_passed", passed);
        }
        Command::Volume { m12, m23, vd } => {
            let vd = vd.unwrap_or(cfg.network.v_d);
            let r = scenario::volume_report(m12, m23, vd, cfg.network.delta)?;
            summary.add("m12", m12);
            summary.add("m23", m23);
            summary.add("v_d", vd);
            summary.add("compensation_volume", r.compensation_volume);
            summary.add("volume_ratio", r.compensation_volume / vd);
            summary.add("lambda_a", r.lambda_a);
            summary.add("lambda_b", r.lambda_b);
        }
        Command::Circularity { net_flow, delta, clamp } => {
            let delta = delta.unwrap_or(cfg.network.delta);
            let r = if clamp {
                network::circularity_clamped(net_flow, delta)?
            } else {
                network::circularity(net_flow, delta)?
            };
            summary.add("net_flow", r.net_flow);
            summary.add("delta", r.delta);
            summary.add("lambda", r.lambda);
        }
    }
    summary.add("seed", common.seed);
    write_outputs(out, &cfg, &summary)?;
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
