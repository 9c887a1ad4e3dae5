//! Implementations behind the five subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use dtr_core::basis::{FeatureBasis, StateEnumeration};
use dtr_core::data::StateVector;
use dtr_core::estimating::{
    estimate_propensity, solve_ggq, solve_vlearning, GgqConfig, PolicyClass, PropensityModel,
    PropensitySpec, VLearnConfig,
};
use dtr_core::finite_horizon::{backward_induction, BackwardInductionConfig, StageFeatures};
use dtr_core::policy::{Policy, UniformPolicy};
use dtr_core::proximal::{fit_proximal, Bandwidth, KernelSpec, ProximalFitConfig};
use dtr_core::residual::fit_rg;
use dtr_core::schedule::StepSchedule;
use dtr_core::sim::{generate_dataset, mc_value_initial};
use dtr_core::td::TdLearner;
use dtr_core::{LinearFunctional, OfflineDataset};

use crate::artifact::{Diagnostics, ModelArtifact, ModelParams};
use crate::config::RunConfig;
use crate::envspec::{build_env, EnvSetup};
use crate::ingest::{ingest, write_stacked, StackedPaths};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn preamble(out: &mut impl Write, config_hash: &str) -> Result<()> {
    writeln!(out, "version={VERSION}")?;
    writeln!(out, "config_hash={config_hash}")?;
    Ok(())
}

pub struct DataArgs {
    pub data: PathBuf,
    pub actions: PathBuf,
    pub rewards: PathBuf,
    pub n: usize,
    pub stages: usize,
}

fn load_dataset(
    args: &DataArgs,
    config: &RunConfig,
) -> Result<(OfflineDataset, dtr_core::ValidationReport)> {
    let action_count = match config.get("action_count") {
        Some(v) => Some(
            v.parse::<usize>()
                .with_context(|| format!("action_count: not an integer: '{v}'"))?,
        ),
        None => None,
    };
    ingest(
        &StackedPaths {
            states: &args.data,
            actions: &args.actions,
            rewards: &args.rewards,
        },
        args.n,
        args.stages,
        action_count,
    )
}

pub fn validate(args: &DataArgs, config_path: Option<&Path>, out: &mut impl Write) -> Result<i32> {
    let config = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (_, report) = load_dataset(args, &config)?;
    preamble(out, &config.hash())?;
    write!(out, "{report}")?;
    Ok(0)
}

fn state_basis(config: &RunConfig, ds: &OfflineDataset) -> Result<FeatureBasis> {
    match config.get("basis").unwrap_or("tabular") {
        "tabular" => Ok(FeatureBasis::tabular(StateEnumeration::from_dataset(ds))),
        "poly" => Ok(FeatureBasis::polynomial(
            ds.state_dim,
            config.get_usize("degree", 1)?,
        )),
        "radial" => {
            let per_dim = config.get_usize("centers_per_dim", 4)?;
            if per_dim < 1 {
                bail!("centers_per_dim must be at least 1");
            }
            // per-dimension grids over the observed ranges
            let mut lo = vec![f64::INFINITY; ds.state_dim];
            let mut hi = vec![f64::NEG_INFINITY; ds.state_dim];
            for traj in &ds.trajectories {
                for s in &traj.states {
                    for (j, &x) in s.as_slice().iter().enumerate() {
                        lo[j] = lo[j].min(x);
                        hi[j] = hi[j].max(x);
                    }
                }
            }
            let grids: Vec<Vec<f64>> = (0..ds.state_dim)
                .map(|j| {
                    (0..per_dim)
                        .map(|k| {
                            if per_dim == 1 {
                                (lo[j] + hi[j]) / 2.0
                            } else {
                                lo[j] + (hi[j] - lo[j]) * k as f64 / (per_dim - 1) as f64
                            }
                        })
                        .collect()
                })
                .collect();
            // tensor-product centers
            let mut centers: Vec<Vec<f64>> = vec![vec![]];
            for grid in &grids {
                let mut next = Vec::with_capacity(centers.len() * grid.len());
                for c in &centers {
                    for &g in grid {
                        let mut c2 = c.clone();
                        c2.push(g);
                        next.push(c2);
                    }
                }
                centers = next;
            }
            let spacing: f64 = grids
                .iter()
                .map(|g| {
                    if g.len() > 1 {
                        g[1] - g[0]
                    } else {
                        1.0
                    }
                })
                .sum::<f64>()
                / grids.len() as f64;
            Ok(FeatureBasis::radial_grid(centers, spacing.max(1e-6)))
        }
        other => bail!("unknown basis '{other}' (expected tabular, poly, or radial)"),
    }
}

fn propensity_for(
    config: &RunConfig,
    ds: &OfflineDataset,
) -> Result<(PropensityModel, Vec<String>)> {
    let spec = match config.get("basis").unwrap_or("tabular") {
        "tabular" => PropensitySpec::empirical(StateEnumeration::from_dataset(ds)),
        _ => PropensitySpec::logistic(),
    };
    let (model, fit) = estimate_propensity(ds, spec)?;
    Ok((model, fit.warnings))
}

/// Adapter: a fitted propensity model used as the behavior policy.
struct PropensityPolicy {
    model: PropensityModel,
    action_count: usize,
}

impl Policy for PropensityPolicy {
    fn action_count(&self) -> usize {
        self.action_count
    }

    fn action_probs(&self, state: &StateVector) -> Vec<f64> {
        self.model
            .probs(state)
            .expect("propensity evaluation at an observed-state type")
    }
}

pub fn fit(
    args: &DataArgs,
    config_path: &Path,
    out_path: &Path,
    seed_flag: Option<u64>,
    out: &mut impl Write,
) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    // every fit path is deterministic; the flag is accepted for interface
    // uniformity with simulate/evaluate
    let _ = seed_flag.unwrap_or(config.get_u64("seed", 0)?);
    let (ds, report) = load_dataset(args, &config)?;
    let mut warnings: Vec<String> = report.warnings.clone();

    let method = config.require("method")?;
    let gamma = config.get_f64("gamma", 0.9)?;
    let max_iter = config.get_usize("max_iter", 3000)?;
    let tol = config.get_f64("tol", 1e-8)?;

    // fail fast on knobs that belong to a different method
    if method != "pt" {
        for key in ["lambda_grid", "bandwidth", "zeta", "refresh_every", "cv"] {
            if config.get(key).is_some() {
                bail!("config key '{key}' only applies to method=pt, not method={method}");
            }
        }
    }
    if method != "backward_induction" && config.get("window").is_some() {
        bail!("config key 'window' only applies to method=backward_induction");
    }

    let (params, diagnostics) = match method {
        "backward_induction" => {
            let features = match config.get("basis").unwrap_or("linear") {
                "tabular" => StageFeatures::Indicator(StateEnumeration::from_dataset(&ds)),
                _ => StageFeatures::Linear,
            };
            let bi_config = BackwardInductionConfig {
                window: config.get("window").map(|w| w.parse()).transpose()?,
                features,
            };
            let stages = backward_induction(&ds, args.stages, &bi_config)?;
            let diag = Diagnostics {
                converged: true,
                iterations: args.stages,
                final_loss: 0.0,
                warnings: warnings.clone(),
            };
            (ModelParams::BackwardInduction { stages }, diag)
        }
        "td_on" | "td_off" => {
            let basis = state_basis(&config, &ds)?;
            let schedule = StepSchedule::Decay {
                a: config.get_f64("step_a", 0.5)?,
                b: config.get_f64("step_b", 1000.0)?,
            };
            let mut learner = TdLearner::new(LinearFunctional::zeros(basis), schedule, gamma)?;
            let epochs = config.get_usize("max_iter", 10)?;
            let mut last_mean_abs_delta = f64::INFINITY;
            if method == "td_on" {
                for _ in 0..epochs {
                    let mut total = 0.0;
                    let mut count = 0usize;
                    for traj in &ds.trajectories {
                        for tr in traj.transitions() {
                            total += learner.update(&tr)?.abs();
                            count += 1;
                        }
                    }
                    last_mean_abs_delta = total / count.max(1) as f64;
                }
                let diag = Diagnostics {
                    converged: true,
                    iterations: epochs,
                    final_loss: last_mean_abs_delta,
                    warnings: warnings.clone(),
                };
                (
                    ModelParams::TdOn {
                        model: learner.model,
                        gamma,
                    },
                    diag,
                )
            } else {
                let (prop, mut pw) = propensity_for(&config, &ds)?;
                warnings.append(&mut pw);
                let behavior = PropensityPolicy {
                    model: prop,
                    action_count: ds.action_count,
                };
                let target = UniformPolicy::new(ds.action_count);
                for _ in 0..epochs {
                    let mut total = 0.0;
                    let mut count = 0usize;
                    for traj in &ds.trajectories {
                        for tr in traj.transitions() {
                            total += learner.update_off_policy(&tr, &target, &behavior)?.abs();
                            count += 1;
                        }
                    }
                    last_mean_abs_delta = total / count.max(1) as f64;
                }
                if learner.clip_events > 0 {
                    warnings.push(format!(
                        "importance ratios clipped {} times at cap {}",
                        learner.clip_events, learner.ratio_cap
                    ));
                }
                let diag = Diagnostics {
                    converged: true,
                    iterations: epochs,
                    final_loss: last_mean_abs_delta,
                    warnings: warnings.clone(),
                };
                (
                    ModelParams::TdOff {
                        model: learner.model,
                        gamma,
                        clip_events: learner.clip_events,
                    },
                    diag,
                )
            }
        }
        "rg" => {
            let basis = state_basis(&config, &ds)?;
            let schedule = StepSchedule::Decay {
                a: config.get_f64("step_a", 0.5)?,
                b: config.get_f64("step_b", 1000.0)?,
            };
            let fit = fit_rg(&ds, basis, gamma, &schedule, max_iter, tol)?;
            let diag = Diagnostics {
                converged: fit.converged,
                iterations: fit.iterations,
                final_loss: fit.gradient_norm,
                warnings: warnings.clone(),
            };
            (
                ModelParams::Rg {
                    model: fit.model,
                    gamma,
                },
                diag,
            )
        }
        "ggq" => {
            let basis = state_basis(&config, &ds)?.with_actions(ds.action_count);
            let ggq_config = GgqConfig {
                tol,
                max_iter,
                ..GgqConfig::default()
            };
            let fit = solve_ggq(&ds, basis, gamma, &ggq_config)?;
            let mut w = warnings.clone();
            w.extend(fit.warnings.iter().cloned());
            let diag = Diagnostics {
                converged: fit.converged,
                iterations: fit.iterations,
                final_loss: fit.residual_norm,
                warnings: w,
            };
            (
                ModelParams::Ggq {
                    q_model: fit.model.q,
                    gamma,
                },
                diag,
            )
        }
        "vlearn" => {
            let basis = state_basis(&config, &ds)?;
            let (prop, mut pw) = propensity_for(&config, &ds)?;
            warnings.append(&mut pw);
            let policy_basis = state_basis(&config, &ds)?.with_actions(ds.action_count);
            let class = PolicyClass::Softmax {
                basis: policy_basis.clone(),
                init: vec![0.0; policy_basis.dim()],
                step: config.get_f64("step_v", 0.5)?,
                sweeps: config.get_usize("max_iter", 3000)?.min(20),
            };
            let fit = solve_vlearning(&ds, class, basis, gamma, &prop, &VLearnConfig::default())?;
            let mut w = warnings.clone();
            w.extend(fit.warnings.iter().cloned());
            let policy_beta = fit
                .softmax_beta
                .context("softmax class always reports its parameters")?;
            let diag = Diagnostics {
                converged: true,
                iterations: max_iter.min(20),
                final_loss: -fit.value,
                warnings: w,
            };
            (
                ModelParams::Vlearn {
                    v_model: fit.model.v,
                    gamma,
                    policy_beta,
                    policy_basis,
                },
                diag,
            )
        }
        "pt" => {
            let basis = state_basis(&config, &ds)?;
            let lambda_grid = config
                .get_f64_list("lambda_grid")?
                .unwrap_or_else(|| vec![0.5]);
            let cv = config.get_bool("cv", true)?;
            let grid = if cv || lambda_grid.len() == 1 {
                lambda_grid
            } else {
                vec![lambda_grid[0]]
            };
            let bandwidth = match config.get("bandwidth") {
                None | Some("median") => Bandwidth::MedianHeuristic,
                Some(v) => Bandwidth::Fixed(
                    v.parse()
                        .with_context(|| format!("bandwidth: not a number: '{v}'"))?,
                ),
            };
            let pt_config = ProximalFitConfig {
                step_v: config.get_f64("step_v", 1e-3)?,
                step_q: config.get_f64("step_q", 1e-3)?,
                decay: config.get_f64("decay", 1e-3)?,
                max_iter,
                refresh_every: config.get_usize("refresh_every", 10)?,
                cv_folds: 5,
                kernel: KernelSpec {
                    bandwidth,
                    zeta: config.get_f64("zeta", 1.0)?,
                    action_scale: 1.0,
                },
                exact_q: None,
                tol,
            };
            let fit = fit_proximal(&ds, &basis, gamma, &grid, &pt_config)?;
            let mut w = warnings.clone();
            w.extend(fit.diagnostics.warnings.iter().cloned());
            let diag = Diagnostics {
                converged: fit.diagnostics.converged,
                iterations: fit.diagnostics.iterations,
                final_loss: fit.loss,
                warnings: w,
            };
            (
                ModelParams::Pt {
                    model: fit.model,
                    cv_losses: fit.diagnostics.cv_losses,
                },
                diag,
            )
        }
        other => bail!(
            "unknown method '{other}' (expected backward_induction, td_on, td_off, rg, ggq, vlearn, or pt)"
        ),
    };

    let exit = if diagnostics.converged { 0 } else { 2 };
    let artifact = ModelArtifact {
        version: VERSION.to_string(),
        config_hash: config.hash(),
        state_dim: ds.state_dim,
        action_count: ds.action_count,
        diagnostics,
        params,
    };
    artifact.save(out_path)?;
    preamble(out, &artifact.config_hash)?;
    writeln!(out, "model={}", out_path.display())?;
    writeln!(out, "method={}", artifact.params.method_name())?;
    writeln!(out, "converged={}", artifact.diagnostics.converged)?;
    Ok(exit)
}

pub fn predict(model_path: &Path, state_arg: &str, out: &mut impl Write) -> Result<i32> {
    let artifact = ModelArtifact::load(model_path)?;
    let values: Vec<f64> = state_arg
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--state: expected comma-separated numbers, got '{state_arg}'"))?;
    let state = StateVector::new(values);
    let probs = artifact.action_probs(&state)?;
    let best = artifact.recommend(&state)?;

    preamble(out, &artifact.config_hash)?;
    let rendered: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
    writeln!(out, "prob={}", rendered.join(","))?;
    // user-facing action indices are 1-based
    writeln!(out, "recommend_trt={}", best + 1)?;
    if let Some(lb) = artifact.pt_lower_bound(&state) {
        writeln!(out, "pt_value_lower_bound={lb}")?;
    }
    Ok(0)
}

/// Stationary policy view over a loaded artifact.
struct ArtifactPolicy<'a> {
    artifact: &'a ModelArtifact,
}

impl Policy for ArtifactPolicy<'_> {
    fn action_count(&self) -> usize {
        self.artifact.action_count
    }

    fn action_probs(&self, state: &StateVector) -> Vec<f64> {
        self.artifact
            .action_probs(state)
            .expect("artifact policy evaluation")
    }
}

pub fn evaluate(
    model_path: &Path,
    config_path: &Path,
    seed: u64,
    out_file: Option<&Path>,
    out: &mut impl Write,
) -> Result<i32> {
    let artifact = ModelArtifact::load(model_path)?;
    let config = RunConfig::load(config_path)?;
    let EnvSetup { env, behavior } = build_env(&config)?;
    let gamma = config.get_f64("gamma", 0.9)?;
    let rollouts = config.get_usize("mc_rollouts", 200)?;

    let model_evaluable = !matches!(
        artifact.params,
        ModelParams::TdOn { .. } | ModelParams::TdOff { .. } | ModelParams::Rg { .. }
    );

    let (behavior_mean, behavior_se) =
        mc_value_initial(env.as_ref(), behavior.as_ref(), gamma, rollouts, None, seed)?;

    let mut rows: Vec<(String, f64, f64, Option<f64>)> = Vec::new();
    rows.push(("behavior".to_string(), behavior_mean, behavior_se, None));

    let uniform = UniformPolicy::new(env.action_count());
    let (u_mean, u_se) =
        mc_value_initial(env.as_ref(), &uniform, gamma, rollouts, None, seed.wrapping_add(1))?;
    rows.push(("uniform".to_string(), u_mean, u_se, None));

    if model_evaluable {
        let policy = ArtifactPolicy {
            artifact: &artifact,
        };
        let (m_mean, m_se) =
            mc_value_initial(env.as_ref(), &policy, gamma, rollouts, None, seed.wrapping_add(2))?;
        // pT models additionally report the sparsity-corrected value lower
        // bound averaged over sampled initial states
        let lb = match &artifact.params {
            ModelParams::Pt { model, .. } => {
                use rand::SeedableRng;
                let mut rng = rand::rngs::StdRng::seed_from_u64(seed.wrapping_add(3));
                let k = 100;
                let mut total = 0.0;
                for _ in 0..k {
                    let s0 = env.initial_state(&mut rng);
                    total += model.value_lower_bound(&s0)?;
                }
                Some(total / k as f64)
            }
            _ => None,
        };
        rows.push((artifact.params.method_name().to_string(), m_mean, m_se, lb));
    } else {
        eprintln!(
            "note: method '{}' has no induced policy; reporting behavior and uniform only",
            artifact.params.method_name()
        );
    }

    preamble(out, &artifact.config_hash)?;
    let is_pt = matches!(artifact.params, ModelParams::Pt { .. });
    let mut table = String::new();
    let header = if is_pt {
        "policy,mean_return,std_error,improvement_vs_behavior,pt_value_lower_bound"
    } else {
        "policy,mean_return,std_error,improvement_vs_behavior"
    };
    table.push_str(header);
    table.push('\n');
    for (name, mean, se, lb) in &rows {
        let improvement = mean - behavior_mean;
        if is_pt {
            let lb_str = lb.map(|v| v.to_string()).unwrap_or_default();
            table.push_str(&format!("{name},{mean},{se},{improvement},{lb_str}\n"));
        } else {
            table.push_str(&format!("{name},{mean},{se},{improvement}\n"));
        }
    }
    write!(out, "{table}")?;
    if let Some(path) = out_file {
        std::fs::write(path, table.as_bytes())
            .with_context(|| format!("writing evaluation table {}", path.display()))?;
    }
    Ok(0)
}

pub fn simulate(
    config_path: &Path,
    n: usize,
    stages: usize,
    seed: u64,
    out_prefix: &str,
    out: &mut impl Write,
) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let EnvSetup { env, behavior } = build_env(&config)?;
    let ds = generate_dataset(env.as_ref(), behavior.as_ref(), n, stages, seed)?;
    let report = dtr_core::data::validate_dataset(&ds)?;

    let states = PathBuf::from(format!("{out_prefix}_states.csv"));
    let actions = PathBuf::from(format!("{out_prefix}_actions.csv"));
    let rewards = PathBuf::from(format!("{out_prefix}_rewards.csv"));
    write_stacked(
        &ds,
        &StackedPaths {
            states: &states,
            actions: &actions,
            rewards: &rewards,
        },
    )?;

    preamble(out, &config.hash())?;
    writeln!(out, "states_file={}", states.display())?;
    writeln!(out, "actions_file={}", actions.display())?;
    writeln!(out, "rewards_file={}", rewards.display())?;
    write!(out, "{report}")?;
    Ok(0)
}
