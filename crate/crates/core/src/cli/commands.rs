use std::io::{BufRead, Write};

use rayon::prelude::*;

use super::records::{AdvantageRecord, GroupReader, LossRecord, SourcedGroup, TreeNodeRecord};
use super::CliError;
use crate::advantage::{estimate, td_corrections, EstimatorConfig, GaeConfig, Method};
use crate::loss::{clipped_surrogate, ClipConfig};
use crate::tree::{BranchTokenStats, PrefixTree};

const PARALLEL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvOptions {
    pub estimator: EstimatorConfig,
    pub buffered: bool,
    pub parallel: bool,
}

impl AdvOptions {
    pub fn new(
        method: Method,
        rho: f64,
        lambda: f64,
        buffered: bool,
        parallel: bool,
    ) -> Result<Self, CliError> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(CliError::Config(format!("--rho: {rho} not in (0, 1]")));
        }
        let gae = GaeConfig::new(lambda).map_err(|e| CliError::Config(format!("--lambda: {e}")))?;
        Ok(Self {
            estimator: EstimatorConfig {
                method,
                hepo_rho: rho,
                gae,
            },
            buffered,
            parallel,
        })
    }

    pub fn method(method: Method) -> Self {
        Self {
            estimator: EstimatorConfig::new(method),
            buffered: false,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub adv: AdvOptions,
    pub clip: ClipConfig,
}

impl LossOptions {
    pub fn new(adv: AdvOptions, eps_low: f64, eps_high: f64) -> Result<Self, CliError> {
        let clip = ClipConfig::new(eps_low, eps_high)
            .map_err(|e| CliError::Config(format!("--eps: {e}")))?;
        Ok(Self { adv, clip })
    }
}

fn group_error(g: &SourcedGroup, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!(
        "line {}: group {:?}: {e}",
        g.first_line, g.group.prompt_id
    ))
}

fn warn_singleton<W: Write + ?Sized>(
    g: &SourcedGroup,
    method: Method,
    warn: &mut W,
) -> Result<(), CliError> {
    if method.is_normalized() && g.group.size() == 1 {
        writeln!(
            warn,
            "warning: group {:?} (line {}) has a single rollout; emitting zero {method} advantages",
            g.group.prompt_id, g.first_line
        )?;
    }
    Ok(())
}

fn advantage_records(
    g: &SourcedGroup,
    estimator: &EstimatorConfig,
) -> Result<Vec<(usize, AdvantageRecord)>, CliError> {
    let adv = estimate(&g.group, estimator).map_err(|e| group_error(g, e))?;
    let tree = PrefixTree::build(&g.group).map_err(|e| group_error(g, e))?;
    let td = td_corrections(&g.group, &tree).map_err(|e| group_error(g, e))?;
    Ok(adv
        .rows
        .into_iter()
        .zip(td)
        .enumerate()
        .map(|(i, (advantages, deltas))| {
            let branch_positions = deltas
                .iter()
                .enumerate()
                .filter(|(_, d)| **d != 0.0)
                .map(|(t, _)| t)
                .collect();
            (
                g.positions[i],
                AdvantageRecord {
                    prompt_id: g.group.prompt_id.clone(),
                    rollout_index: i,
                    method: estimator.method,
                    advantages,
                    branch_positions,
                },
            )
        })
        .collect())
}

/// Writes one [`AdvantageRecord`] per input rollout, in input order.
pub fn cmd_adv<R, W, E>(
    input: R,
    out: &mut W,
    opts: &AdvOptions,
    warn: &mut E,
) -> Result<(), CliError>
where
    R: BufRead,
    W: Write + ?Sized,
    E: Write + ?Sized,
{
    let chunk_size = if opts.buffered {
        usize::MAX
    } else if opts.parallel {
        PARALLEL_CHUNK
    } else {
        1
    };
    let mut reader = GroupReader::new(input, opts.buffered).peekable();
    while reader.peek().is_some() {
        let chunk = reader
            .by_ref()
            .take(chunk_size)
            .collect::<Result<Vec<_>, _>>()?;
        for g in &chunk {
            warn_singleton(g, opts.estimator.method, warn)?;
        }
        let per_group: Vec<_> = if opts.parallel {
            chunk
                .par_iter()
                .map(|g| advantage_records(g, &opts.estimator))
                .collect::<Result<_, _>>()?
        } else {
            chunk
                .iter()
                .map(|g| advantage_records(g, &opts.estimator))
                .collect::<Result<_, _>>()?
        };
        let mut rows: Vec<_> = per_group.into_iter().flatten().collect();
        rows.sort_by_key(|(pos, _)| *pos);
        for (_, rec) in rows {
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Writes every group's prefix tree as a depth-first listing of nodes.
pub fn cmd_tree<R: BufRead, W: Write + ?Sized>(
    input: R,
    out: &mut W,
    buffered: bool,
) -> Result<(), CliError> {
    for g in GroupReader::new(input, buffered) {
        let g = g?;
        let tree = PrefixTree::build(&g.group).map_err(|e| group_error(&g, e))?;
        for (_, node) in tree.walk() {
            let rec = TreeNodeRecord {
                prompt_id: g.group.prompt_id.clone(),
                depth: node.depth,
                token: node.token.map(|t| t.0),
                descendant_count: node.descendant_count,
                terminal_count: node.terminal_count,
                reward_sum: node.reward_sum,
                value: node.value(),
                is_branch: node.is_branch(),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Writes one [`LossRecord`] per group.
pub fn cmd_loss<R, W, E>(
    input: R,
    out: &mut W,
    opts: &LossOptions,
    warn: &mut E,
) -> Result<(), CliError>
where
    R: BufRead,
    W: Write + ?Sized,
    E: Write + ?Sized,
{
    for g in GroupReader::new(input, opts.adv.buffered) {
        let g = g?;
        warn_singleton(&g, opts.adv.estimator.method, warn)?;
        let adv = estimate(&g.group, &opts.adv.estimator).map_err(|e| group_error(&g, e))?;
        let mut old = Vec::with_capacity(g.records.len());
        let mut new = Vec::with_capacity(g.records.len());
        for r in &g.records {
            match (&r.old_logprobs, &r.new_logprobs) {
                (Some(o), Some(n)) => {
                    old.push(o.clone());
                    new.push(n.clone());
                }
                _ => return Err(group_error(&g, "old_logprobs and new_logprobs required")),
            }
        }
        let report =
            clipped_surrogate(&adv, &old, &new, &opts.clip).map_err(|e| group_error(&g, e))?;
        let rec = LossRecord {
            prompt_id: g.group.prompt_id.clone(),
            method: opts.adv.estimator.method,
            objective: report.objective,
            clipped_fraction: report.clipped_fraction,
            token_count: report.token_count,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes `token,count` rows, descending by count, ties by ascending token.
pub fn cmd_branch_stats<R: BufRead, W: Write + ?Sized>(
    input: R,
    out: &mut W,
    top_n: Option<usize>,
    buffered: bool,
) -> Result<(), CliError> {
    let mut stats = BranchTokenStats::default();
    for g in GroupReader::new(input, buffered) {
        let g = g?;
        let tree = PrefixTree::build(&g.group).map_err(|e| group_error(&g, e))?;
        stats.add_tree(&tree);
    }
    let rows = stats.sorted();
    for (tok, count) in rows.into_iter().take(top_n.unwrap_or(usize::MAX)) {
        writeln!(out, "{tok},{count}")?;
    }
    Ok(())
}
