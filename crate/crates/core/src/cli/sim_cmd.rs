use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use super::CliError;
use crate::advantage::Method;
use crate::sim::{
    median_final_success, median_updates_to_threshold, sweep, train_seeds, BranchEnv, ContextMode,
    ExperimentReport, RewardRule, SweepAxis, TrainConfig,
};

#[derive(Debug, Clone, Default, Args)]
pub struct SimOptions {
    /// TOML file with [train] and [env] tables; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated methods, e.g. tempo,grpo
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds: seed, seed + 1, ...
    #[arg(long)]
    pub runs: Option<usize>,
    /// Sweep axis (group_size | branch_count) and comma-separated values
    #[arg(long, num_args = 2, value_names = ["AXIS", "VALUES"])]
    pub sweep: Option<Vec<String>>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub groups_per_update: Option<usize>,
    #[arg(long = "lr", alias = "learning-rate")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub updates: Option<usize>,
    #[arg(long)]
    pub eps_low: Option<f64>,
    #[arg(long)]
    pub eps_high: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// position | prefix
    #[arg(long)]
    pub context: Option<String>,
    #[arg(long)]
    pub filler_bias: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub vocab: Option<u32>,
    /// Number of evenly spaced decision positions
    #[arg(long)]
    pub decisions: Option<usize>,
    /// Switch to probabilistic rewards with this base success rate
    #[arg(long)]
    pub base_rate: Option<f64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    pub depth: usize,
    pub vocab: u32,
    pub decisions: usize,
    pub base_rate: Option<f64>,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            depth: 12,
            vocab: 8,
            decisions: 3,
            base_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimFile {
    pub train: TrainConfig,
    pub env: EnvSpec,
    pub methods: Option<Vec<Method>>,
    pub runs: Option<usize>,
    pub sweep: Option<SweepSpec>,
}

fn config_err(field: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {e}"))
}

struct Plan {
    env: BranchEnv,
    train: TrainConfig,
    methods: Vec<Method>,
    seeds: Vec<u64>,
    sweep: Option<SweepSpec>,
}

fn parse_list<T: std::str::FromStr>(field: &str, s: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| config_err(field, e)))
        .collect()
}

fn plan(opts: &SimOptions) -> Result<Plan, CliError> {
    let mut file = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err("--config", format!("{}: {e}", path.display())))?;
            toml::from_str::<SimFile>(&text).map_err(|e| config_err("--config", e))?
        }
        None => SimFile::default(),
    };
    let t = &mut file.train;
    macro_rules! set {
        ($($opt:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = opts.$opt.clone() { $field = v; })*
        };
    }
    set! {
        seed => t.seed,
        group_size => t.group_size,
        groups_per_update => t.groups_per_update,
        learning_rate => t.learning_rate,
        updates => t.updates,
        eps_low => t.eps_low,
        eps_high => t.eps_high,
        rho => t.hepo_rho,
        lambda => t.gae_lambda,
        epochs => t.epochs,
        threshold => t.threshold,
        filler_bias => t.filler_bias,
        depth => file.env.depth,
        vocab => file.env.vocab,
        decisions => file.env.decisions,
    }
    if let Some(c) = &opts.context {
        t.context = match c.as_str() {
            "position" => ContextMode::Position,
            "prefix" => ContextMode::Prefix,
            other => return Err(config_err("context", format!("unknown mode {other:?}"))),
        };
    }
    if opts.base_rate.is_some() {
        file.env.base_rate = opts.base_rate;
    }
    let methods = match &opts.method {
        Some(list) => parse_list::<Method>("method", list)?,
        None => file
            .methods
            .clone()
            .unwrap_or_else(|| vec![file.train.method]),
    };
    if methods.is_empty() {
        return Err(config_err("method", "no methods given"));
    }
    let runs = opts.runs.or(file.runs).unwrap_or(1);
    if runs == 0 {
        return Err(config_err("runs", "must be positive"));
    }
    let sweep = match &opts.sweep {
        Some(v) => Some(SweepSpec {
            axis: v[0].parse().map_err(|e| config_err("sweep", e))?,
            values: parse_list("sweep", &v[1])?,
        }),
        None => file.sweep.clone(),
    };
    if let Some(s) = &sweep {
        if s.values.is_empty() {
            return Err(config_err("sweep", "no values"));
        }
    }

    let env = BranchEnv::evenly_spaced(file.env.depth, file.env.vocab, file.env.decisions)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let env = match file.env.base_rate {
        Some(base_rate) => env
            .with_rule(RewardRule::Probabilistic { base_rate })
            .map_err(|e| CliError::Config(e.to_string()))?,
        None => env,
    };
    for &m in &methods {
        file.train
            .with_method(m)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let seeds = (0..runs as u64)
        .map(|k| file.train.seed.wrapping_add(k))
        .collect();
    Ok(Plan {
        env,
        train: file.train,
        methods,
        seeds,
        sweep,
    })
}

/// Reports for one sweep value (`None` without a sweep).
type ValueBlock = (Option<usize>, Vec<ExperimentReport>);

/// Runs the configured experiments, writes every report as CSV and returns
/// a human-readable summary.
pub fn cmd_sim<W: Write + ?Sized>(opts: &SimOptions, out: &mut W) -> Result<String, CliError> {
    let plan = plan(opts)?;
    let run_err = |e: crate::Error| CliError::Config(e.to_string());

    let mut blocks: Vec<(Method, Vec<ValueBlock>)> = Vec::new();
    for &m in &plan.methods {
        let cfg = plan.train.with_method(m);
        let per_value = match &plan.sweep {
            Some(s) => {
                let reports =
                    sweep(&plan.env, &cfg, s.axis, &s.values, &plan.seeds).map_err(run_err)?;
                let n = plan.seeds.len();
                s.values
                    .iter()
                    .zip(reports.chunks(n))
                    .map(|(v, r)| (Some(*v), r.to_vec()))
                    .collect()
            }
            None => vec![(
                None,
                train_seeds(&plan.env, &cfg, &plan.seeds).map_err(run_err)?,
            )],
        };
        blocks.push((m, per_value));
    }

    writeln!(out, "{}", ExperimentReport::CSV_HEADER)?;
    for (_, per_value) in &blocks {
        for (_, reports) in per_value {
            for r in reports {
                r.write_csv_rows(out)?;
            }
        }
    }

    let mut summary = String::new();
    let axis = plan.sweep.as_ref().map(|s| s.axis);
    for (m, per_value) in &blocks {
        for (value, reports) in per_value {
            let tag = match (axis, value) {
                (Some(a), Some(v)) => format!(" {a}={v}"),
                _ => String::new(),
            };
            let _ = writeln!(
                summary,
                "method={m}{tag} runs={} median_final_success={:.4} median_updates_to_threshold={} threshold={}",
                reports.len(),
                median_final_success(reports),
                median_updates_to_threshold(reports),
                plan.train.threshold,
            );
        }
    }
    let find = |method: Method| blocks.iter().find(|(m, _)| *m == method);
    if let (Some((_, tempo)), Some((_, grpo))) = (find(Method::Tempo), find(Method::Grpo)) {
        for ((value, t), (_, g)) in tempo.iter().zip(grpo) {
            let tag = match (axis, value) {
                (Some(a), Some(v)) => format!(" {a}={v}"),
                _ => String::new(),
            };
            let ratio = median_updates_to_threshold(g) / median_updates_to_threshold(t);
            let _ = writeln!(
                summary,
                "updates_to_threshold_ratio grpo/tempo{tag}={ratio:.3}"
            );
        }
    }
    Ok(summary)
}
