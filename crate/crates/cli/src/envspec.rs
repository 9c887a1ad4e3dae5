//! Environment construction from the run config, including the plain-text
//! tabular MDP format:
//!
//! ```text
//! states=2
//! actions=2
//! P 0 0: 1.0 0.0
//! P 0 1: 0.0 1.0
//! ...
//! R 0 0: 0.5        # expected reward for (s, a)
//! R 1 0 1: 0.25     # optional (s, a, s') form
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use dtr_core::policy::{Policy, UniformPolicy};
use dtr_core::sim::{ChainEnv, Environment, GlucoseConfig, GlucoseEnv, GlucoseHeuristicPolicy};
use dtr_core::TabularMDP;

use crate::config::RunConfig;

pub fn parse_mdp_text(text: &str) -> Result<TabularMDP> {
    let mut states = None;
    let mut actions = None;
    let mut p_rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut r_sa: Vec<(usize, usize, f64)> = Vec::new();
    let mut r_sas: Vec<(usize, usize, usize, f64)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| -> anyhow::Error {
            anyhow::anyhow!("mdp line {}: {msg}", lineno + 1)
        };
        if let Some(v) = line.strip_prefix("states=") {
            states = Some(v.trim().parse::<usize>().map_err(|_| err("bad states".into()))?);
        } else if let Some(v) = line.strip_prefix("actions=") {
            actions = Some(v.trim().parse::<usize>().map_err(|_| err("bad actions".into()))?);
        } else if let Some(rest) = line.strip_prefix("P ") {
            let (idx, vals) = rest
                .split_once(':')
                .ok_or_else(|| err("expected 'P s a: p0 p1 …'".into()))?;
            let idx: Vec<usize> = idx
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err("bad indices".into()))?;
            if idx.len() != 2 {
                bail!(err("P needs exactly two indices".into()));
            }
            let row: Vec<f64> = vals
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err("bad probability".into()))?;
            p_rows.push((idx[0], idx[1], row));
        } else if let Some(rest) = line.strip_prefix("R ") {
            let (idx, val) = rest
                .split_once(':')
                .ok_or_else(|| err("expected 'R s a[: s']: value'".into()))?;
            let idx: Vec<usize> = idx
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err("bad indices".into()))?;
            let value: f64 = val.trim().parse().map_err(|_| err("bad reward".into()))?;
            match idx.len() {
                2 => r_sa.push((idx[0], idx[1], value)),
                3 => r_sas.push((idx[0], idx[1], idx[2], value)),
                _ => bail!(err("R needs two or three indices".into())),
            }
        } else {
            bail!(err(format!("unrecognized directive '{line}'")));
        }
    }

    let n = states.context("mdp: missing states=")?;
    let m = actions.context("mdp: missing actions=")?;
    let mut transition = vec![vec![Vec::new(); m]; n];
    for (s, a, row) in p_rows {
        if s >= n || a >= m {
            bail!("mdp: P index out of range (s={s}, a={a})");
        }
        if row.len() != n {
            bail!("mdp: P {s} {a} expects {n} probabilities, found {}", row.len());
        }
        transition[s][a] = row;
    }
    for (s, row_a) in transition.iter().enumerate() {
        for (a, row) in row_a.iter().enumerate() {
            if row.is_empty() {
                bail!("mdp: missing transition row P {s} {a}");
            }
        }
    }
    let mut reward = vec![vec![vec![0.0; n]; m]; n];
    for (s, a, v) in r_sa {
        if s >= n || a >= m {
            bail!("mdp: R index out of range (s={s}, a={a})");
        }
        reward[s][a] = vec![v; n];
    }
    for (s, a, sn, v) in r_sas {
        if s >= n || a >= m || sn >= n {
            bail!("mdp: R index out of range (s={s}, a={a}, s'={sn})");
        }
        reward[s][a][sn] = v;
    }
    Ok(TabularMDP::with_next_state_rewards(transition, reward)?)
}

pub fn load_mdp(path: &Path) -> Result<TabularMDP> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading mdp file {}", path.display()))?;
    parse_mdp_text(&text)
}

/// The environment plus the behavior policy named by the config.
pub struct EnvSetup {
    pub env: Box<dyn Environment>,
    pub behavior: Box<dyn Policy>,
}

pub fn build_env(config: &RunConfig) -> Result<EnvSetup> {
    match config.get("env") {
        Some("chain") => {
            let path = config.require("mdp_file")?;
            let mdp = load_mdp(Path::new(path))?;
            let m = mdp.action_count;
            let env: Box<dyn Environment> = match config.get("init_state") {
                Some(v) => {
                    let s0: usize = v
                        .parse()
                        .with_context(|| format!("init_state: not an index: '{v}'"))?;
                    Box::new(ChainEnv::fixed_start(mdp, s0))
                }
                None => Box::new(ChainEnv::uniform_start(mdp)),
            };
            let behavior: Box<dyn Policy> = match config.get("behavior").unwrap_or("uniform") {
                "uniform" => Box::new(UniformPolicy::new(m)),
                other => bail!("behavior '{other}' is not available for chain environments"),
            };
            Ok(EnvSetup { env, behavior })
        }
        Some("glucose") => {
            let mut gc = GlucoseConfig::default();
            gc.dose_count = config.get_usize("dose_count", gc.dose_count)?;
            gc.noise_sd = config.get_f64("noise_sd", gc.noise_sd)?;
            gc.meal_prob = config.get_f64("meal_prob", gc.meal_prob)?;
            let env = GlucoseEnv::new(gc);
            let epsilon = config.get_f64("behavior_epsilon", 0.3)?;
            let behavior: Box<dyn Policy> = match config.get("behavior").unwrap_or("heuristic") {
                "heuristic" => Box::new(GlucoseHeuristicPolicy::new(env.clone(), epsilon)),
                "uniform" => Box::new(UniformPolicy::new(env.config.dose_count)),
                other => bail!("behavior '{other}' is not available for glucose environments"),
            };
            Ok(EnvSetup {
                env: Box::new(env),
                behavior,
            })
        }
        Some(other) => bail!("unknown env '{other}' (expected chain or glucose)"),
        None => bail!("config key 'env' is required for this command"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_mdp() {
        let text = "states=2\nactions=1\nP 0 0: 0.0 1.0\nP 1 0: 0.0 1.0\nR 0 0: 1.0\n";
        let mdp = parse_mdp_text(text).unwrap();
        assert_eq!(mdp.state_count, 2);
        assert_eq!(mdp.expected_reward(0, 0), 1.0);
        assert_eq!(mdp.expected_reward(1, 0), 0.0);
    }

    #[test]
    fn missing_row_is_an_error() {
        let text = "states=2\nactions=1\nP 0 0: 0.0 1.0\n";
        assert!(parse_mdp_text(text).is_err());
    }
}
