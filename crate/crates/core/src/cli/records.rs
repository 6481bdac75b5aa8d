//! Line-delimited record formats and the group reader.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::advantage::Method;
use crate::tree::{Group, Rollout, TokenId};

/// One input line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub prompt_id: String,
    pub tokens: Vec<u32>,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropies: Option<Vec<f64>>,
    /// Only read by the `loss` subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_logprobs: Option<Vec<f64>>,
}

impl RolloutRecord {
    pub fn to_rollout(&self) -> Rollout<f64> {
        Rollout {
            prompt_id: self.prompt_id.clone(),
            tokens: self.tokens.iter().copied().map(TokenId).collect(),
            reward: self.reward,
            old_logprobs: self.old_logprobs.clone(),
            entropies: self.entropies.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub prompt_id: String,
    pub rollout_index: usize,
    pub method: Method,
    pub advantages: Vec<f64>,
    /// Positions `t` whose TD correction is nonzero.
    pub branch_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeRecord {
    pub prompt_id: String,
    /// Prefix length.
    pub depth: usize,
    pub token: Option<u32>,
    pub descendant_count: usize,
    pub terminal_count: usize,
    pub reward_sum: f64,
    pub value: f64,
    pub is_branch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub prompt_id: String,
    pub method: Method,
    pub objective: f64,
    pub clipped_fraction: f64,
    pub token_count: usize,
}

/// A group together with where its records sat in the input.
#[derive(Debug, Clone)]
pub struct SourcedGroup {
    pub group: Group<f64>,
    pub records: Vec<RolloutRecord>,
    /// Zero-based input position of each rollout (record order, not line number).
    pub positions: Vec<usize>,
    /// One-based line number of the group's first record.
    pub first_line: usize,
}

fn parse_line(line: &str, line_no: usize) -> Result<RolloutRecord, CliError> {
    let rec: RolloutRecord =
        serde_json::from_str(line).map_err(|e| CliError::Input(format!("line {line_no}: {e}")))?;
    rec.to_rollout()
        .validate()
        .map_err(|e| CliError::Input(format!("line {line_no}: {e}")))?;
    Ok(rec)
}

fn finish(prompt_id: String, members: Vec<(usize, usize, RolloutRecord)>) -> SourcedGroup {
    let first_line = members.first().map(|m| m.0).unwrap_or(0);
    let positions = members.iter().map(|m| m.1).collect();
    let records: Vec<RolloutRecord> = members.into_iter().map(|m| m.2).collect();
    let rollouts = records.iter().map(RolloutRecord::to_rollout).collect();
    SourcedGroup {
        group: Group {
            prompt_id,
            rollouts,
        },
        records,
        positions,
        first_line,
    }
}

/// Reads rollout records and yields complete groups.
///
/// In contiguous mode each group must be a single run of lines, and only one
/// group is held in memory at a time. In buffered mode the whole input is
/// read first and groups are formed by prompt id in order of first appearance.
pub struct GroupReader<R> {
    lines: std::io::Lines<R>,
    buffered: bool,
    line_no: usize,
    record_no: usize,
    pending: Option<(usize, usize, RolloutRecord)>,
    seen: HashSet<String>,
    drained: Option<std::vec::IntoIter<SourcedGroup>>,
}

impl<R: BufRead> GroupReader<R> {
    pub fn new(input: R, buffered: bool) -> Self {
        Self {
            lines: input.lines(),
            buffered,
            line_no: 0,
            record_no: 0,
            pending: None,
            seen: HashSet::new(),
            drained: None,
        }
    }

    fn next_record(&mut self) -> Option<Result<(usize, usize, RolloutRecord), CliError>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(CliError::Io(e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let pos = self.record_no;
            self.record_no += 1;
            return Some(parse_line(&line, self.line_no).map(|r| (self.line_no, pos, r)));
        }
    }

    fn read_all(&mut self) -> Result<Vec<SourcedGroup>, CliError> {
        let mut order: Vec<String> = Vec::new();
        let mut members: HashMap<String, Vec<(usize, usize, RolloutRecord)>> = HashMap::new();
        while let Some(rec) = self.next_record() {
            let rec = rec?;
            let id = rec.2.prompt_id.clone();
            members
                .entry(id.clone())
                .or_insert_with(|| {
                    order.push(id);
                    Vec::new()
                })
                .push(rec);
        }
        Ok(order
            .into_iter()
            .map(|id| {
                let m = members.remove(&id).expect("grouped above");
                finish(id, m)
            })
            .collect())
    }

    fn next_contiguous(&mut self) -> Option<Result<SourcedGroup, CliError>> {
        let first = match self.pending.take() {
            Some(p) => p,
            None => match self.next_record()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            },
        };
        let id = first.2.prompt_id.clone();
        if !self.seen.insert(id.clone()) {
            return Some(Err(CliError::Input(format!(
                "line {}: prompt_id {id:?} reappears after its group ended (use --buffered)",
                first.0
            ))));
        }
        let mut members = vec![first];
        loop {
            match self.next_record() {
                None => break,
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(rec)) => {
                    if rec.2.prompt_id == id {
                        members.push(rec);
                    } else {
                        self.pending = Some(rec);
                        break;
                    }
                }
            }
        }
        Some(Ok(finish(id, members)))
    }
}

impl<R: BufRead> Iterator for GroupReader<R> {
    type Item = Result<SourcedGroup, CliError>;

    fn next(&mut self) -> Option<Self::Item> {
        if !self.buffered {
            return self.next_contiguous();
        }
        if self.drained.is_none() {
            match self.read_all() {
                Ok(groups) => self.drained = Some(groups.into_iter()),
                Err(e) => {
                    self.drained = Some(Vec::new().into_iter());
                    return Some(Err(e));
                }
            }
        }
        self.drained.as_mut().and_then(Iterator::next).map(Ok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, buffered: bool) -> Result<Vec<SourcedGroup>, CliError> {
        GroupReader::new(text.as_bytes(), buffered).collect()
    }

    const LINES: &str = r#"{"prompt_id":"a","tokens":[1,2],"reward":1}
{"prompt_id":"a","tokens":[1,3],"reward":0}

{"prompt_id":"b","tokens":[4],"reward":0.5}
"#;

    #[test]
    fn contiguous_groups() {
        let groups = read(LINES, false).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].group.size(), 2);
        assert_eq!(groups[1].first_line, 4);
        assert_eq!(groups[1].positions, vec![2]);
    }

    #[test]
    fn scattered_groups_need_buffering() {
        let text = r#"{"prompt_id":"a","tokens":[1],"reward":1}
{"prompt_id":"b","tokens":[1],"reward":1}
{"prompt_id":"a","tokens":[2],"reward":0}
"#;
        let err = read(text, false).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let groups = read(text, true).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].positions, vec![0, 2]);
    }

    #[test]
    fn malformed_line_is_named() {
        let text = "{\"prompt_id\":\"a\",\"tokens\":[1],\"reward\":1}\nnot json\n";
        let err = read(text, false).unwrap_err();
        assert!(matches!(err, CliError::Input(_)));
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        let bad_len = r#"{"prompt_id":"a","tokens":[1,2],"reward":1,"entropies":[0.1]}"#;
        assert!(read(bad_len, false)
            .unwrap_err()
            .to_string()
            .contains("line 1"));
        let empty = r#"{"prompt_id":"a","tokens":[],"reward":1}"#;
        assert!(read(empty, false)
            .unwrap_err()
            .to_string()
            .contains("empty rollout"));
    }

    #[test]
    fn empty_input() {
        assert!(read("", false).unwrap().is_empty());
        assert!(read("\n\n", true).unwrap().is_empty());
    }
}
