//! Prefix trees over a group of sampled token sequences.
//!
//! Every rollout of a group is inserted into a trie. Each node keeps the
//! number of rollouts passing through it and the sum of their rewards, so
//! the nonparametric prefix value `V(s) = reward_sum / descendant_count` is
//! available in O(1) once the tree is built. Rollouts that end at an
//! interior node are recorded through `terminal_count`, and termination
//! counts as a continuation when deciding whether a node branches.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Vocabulary index of a generated token.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// Convenience for building token sequences in tests and fixtures.
pub fn tokens(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().copied().map(TokenId).collect()
}

/// One sampled response with its verifiable reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<S> {
    pub prompt_id: String,
    pub tokens: Vec<TokenId>,
    pub reward: S,
    /// Log-probabilities under the sampling policy, one per token.
    pub old_logprobs: Option<Vec<S>>,
    /// Next-token entropies (nats) under the sampling policy, one per token.
    pub entropies: Option<Vec<S>>,
}

impl<S: Scalar> Rollout<S> {
    pub fn new(prompt_id: impl Into<String>, tokens: Vec<TokenId>, reward: S) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            tokens,
            reward,
            old_logprobs: None,
            entropies: None,
        }
    }

    pub fn with_old_logprobs(mut self, logprobs: Vec<S>) -> Self {
        self.old_logprobs = Some(logprobs);
        self
    }

    pub fn with_entropies(mut self, entropies: Vec<S>) -> Self {
        self.entropies = Some(entropies);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::EmptyRollout);
        }
        if !self.reward.is_finite() {
            return Err(invalid("reward", "must be finite"));
        }
        let n = self.tokens.len();
        if let Some(lp) = &self.old_logprobs {
            if lp.len() != n {
                return Err(Error::LengthMismatch {
                    field: "old_logprobs",
                    expected: n,
                    found: lp.len(),
                });
            }
            if let Some(bad) = lp.iter().find(|x| x.is_nan() || **x > S::zero()) {
                return Err(invalid("old_logprobs", format!("{bad} is not <= 0")));
            }
        }
        if let Some(ent) = &self.entropies {
            if ent.len() != n {
                return Err(Error::LengthMismatch {
                    field: "entropies",
                    expected: n,
                    found: ent.len(),
                });
            }
            if let Some(bad) = ent.iter().find(|x| !(**x >= S::zero() && x.is_finite())) {
                return Err(invalid(
                    "entropies",
                    format!("{bad} is not a finite value >= 0"),
                ));
            }
        }
        Ok(())
    }
}

/// All rollouts sampled for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Group<S> {
    pub prompt_id: String,
    pub rollouts: Vec<Rollout<S>>,
}

impl<S: Scalar> Group<S> {
    /// Builds a group, checking that it is nonempty, that every rollout is
    /// well formed, and that all rollouts share `prompt_id`.
    pub fn new(prompt_id: impl Into<String>, rollouts: Vec<Rollout<S>>) -> Result<Self> {
        let group = Self {
            prompt_id: prompt_id.into(),
            rollouts,
        };
        group.validate()?;
        Ok(group)
    }

    /// Group from bare `(tokens, reward)` pairs under a synthetic prompt id.
    pub fn from_sequences<I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<TokenId>, S)>,
    {
        let rollouts = items
            .into_iter()
            .map(|(t, r)| Rollout::new("p", t, r))
            .collect();
        Self::new("p", rollouts)
    }

    pub fn size(&self) -> usize {
        self.rollouts.len()
    }

    pub fn rewards(&self) -> impl Iterator<Item = S> + '_ {
        self.rollouts.iter().map(|r| r.reward)
    }

    pub fn token_count(&self) -> usize {
        self.rollouts.iter().map(Rollout::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rollouts.is_empty() {
            return Err(Error::EmptyGroup);
        }
        for r in &self.rollouts {
            if r.prompt_id != self.prompt_id {
                return Err(Error::PromptMismatch {
                    expected: self.prompt_id.clone(),
                    found: r.prompt_id.clone(),
                });
            }
            r.validate()?;
        }
        Ok(())
    }

    pub fn validate_vocab(&self, vocab: u32) -> Result<()> {
        for r in &self.rollouts {
            if let Some(t) = r.tokens.iter().find(|t| t.0 >= vocab) {
                return Err(Error::TokenOutOfVocab { token: t.0, vocab });
            }
        }
        Ok(())
    }
}

/// Index of a node inside a [`PrefixTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixNode<S> {
    /// Children keyed by next token, kept ordered so traversal is canonical.
    pub children: BTreeMap<TokenId, NodeId>,
    pub descendant_count: usize,
    pub reward_sum: S,
    pub terminal_count: usize,
    pub terminal_reward_sum: S,
    /// Token on the edge into this node; `None` for the root.
    pub token: Option<TokenId>,
    pub depth: usize,
}

impl<S: Scalar> PrefixNode<S> {
    fn new(token: Option<TokenId>, depth: usize) -> Self {
        Self {
            children: BTreeMap::new(),
            descendant_count: 0,
            reward_sum: S::zero(),
            terminal_count: 0,
            terminal_reward_sum: S::zero(),
            token,
            depth,
        }
    }

    /// Mean reward of the rollouts passing through this node.
    pub fn value(&self) -> S {
        self.reward_sum / S::from_count(self.descendant_count)
    }

    /// Number of distinct continuations, termination included.
    pub fn branching_degree(&self) -> usize {
        self.children.len() + usize::from(self.terminal_count > 0)
    }

    pub fn is_branch(&self) -> bool {
        self.branching_degree() >= 2
    }
}

/// Immutable trie over the token sequences of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixTree<S> {
    nodes: Vec<PrefixNode<S>>,
    group_size: usize,
}

/// A branch node reported by [`PrefixTree::branch_nodes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchPoint {
    pub prefix: Vec<TokenId>,
    pub degree: usize,
    pub node: NodeId,
}

impl<S: Scalar> PrefixTree<S> {
    /// Inserts every rollout of `group` into a fresh trie.
    ///
    /// Rollouts are inserted in a canonical order (by token sequence, then
    /// reward) so that the floating point sums, and therefore every value,
    /// do not depend on the order in which the group lists its rollouts.
    pub fn build(group: &Group<S>) -> Result<Self> {
        if group.rollouts.is_empty() {
            return Err(Error::EmptyGroup);
        }
        if group.rollouts.iter().any(Rollout::is_empty) {
            return Err(Error::EmptyRollout);
        }
        let mut order: Vec<usize> = (0..group.rollouts.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&group.rollouts[a], &group.rollouts[b]);
            ra.tokens.cmp(&rb.tokens).then_with(|| {
                ra.reward
                    .partial_cmp(&rb.reward)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });

        let mut nodes = vec![PrefixNode::new(None, 0)];
        for i in order {
            let rollout = &group.rollouts[i];
            let r = rollout.reward;
            let mut cur = 0usize;
            nodes[cur].descendant_count += 1;
            nodes[cur].reward_sum = nodes[cur].reward_sum + r;
            for (depth, &tok) in rollout.tokens.iter().enumerate() {
                let next = match nodes[cur].children.get(&tok) {
                    Some(id) => id.0,
                    None => {
                        let id = nodes.len();
                        nodes.push(PrefixNode::new(Some(tok), depth + 1));
                        nodes[cur].children.insert(tok, NodeId(id));
                        id
                    }
                };
                cur = next;
                nodes[cur].descendant_count += 1;
                nodes[cur].reward_sum = nodes[cur].reward_sum + r;
            }
            nodes[cur].terminal_count += 1;
            nodes[cur].terminal_reward_sum = nodes[cur].terminal_reward_sum + r;
        }
        Ok(Self {
            nodes,
            group_size: group.rollouts.len(),
        })
    }

    pub fn root(&self) -> &PrefixNode<S> {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &PrefixNode<S> {
        &self.nodes[id.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn value(&self, id: NodeId) -> S {
        self.nodes[id.0].value()
    }

    /// Node addressed by `prefix`, if the path exists.
    pub fn find(&self, prefix: &[TokenId]) -> Option<NodeId> {
        let mut cur = NodeId::ROOT;
        for tok in prefix {
            cur = *self.nodes[cur.0].children.get(tok)?;
        }
        Some(cur)
    }

    /// `V(prefix)`; the empty prefix yields the group mean reward.
    pub fn prefix_value(&self, prefix: &[TokenId]) -> Result<S> {
        self.find(prefix)
            .map(|id| self.value(id))
            .ok_or(Error::UnknownPrefix)
    }

    /// Node ids along `tokens`, starting at the root: `len + 1` entries.
    pub fn path(&self, tokens: &[TokenId]) -> Result<Vec<NodeId>> {
        let mut out = Vec::with_capacity(tokens.len() + 1);
        let mut cur = NodeId::ROOT;
        out.push(cur);
        for tok in tokens {
            cur = *self.nodes[cur.0]
                .children
                .get(tok)
                .ok_or(Error::UnknownPrefix)?;
            out.push(cur);
        }
        Ok(out)
    }

    /// Depth-first (pre-order) traversal; children visited by ascending token.
    pub fn walk(&self) -> Walk<'_, S> {
        Walk {
            tree: self,
            stack: vec![NodeId::ROOT],
        }
    }

    /// Every branch node with its prefix, in depth-first order.
    pub fn branch_nodes(&self) -> Vec<BranchPoint> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        self.collect_branches(NodeId::ROOT, &mut prefix, &mut out);
        out
    }

    fn collect_branches(&self, id: NodeId, prefix: &mut Vec<TokenId>, out: &mut Vec<BranchPoint>) {
        let node = &self.nodes[id.0];
        if node.is_branch() {
            out.push(BranchPoint {
                prefix: prefix.clone(),
                degree: node.branching_degree(),
                node: id,
            });
        }
        for (&tok, &child) in &node.children {
            prefix.push(tok);
            self.collect_branches(child, prefix, out);
            prefix.pop();
        }
    }

    /// Number of branch nodes in the tree.
    pub fn branch_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_branch()).count()
    }
}

pub struct Walk<'a, S> {
    tree: &'a PrefixTree<S>,
    stack: Vec<NodeId>,
}

impl<'a, S: Scalar> Iterator for Walk<'a, S> {
    type Item = (NodeId, &'a PrefixNode<S>);

    fn next(&mut self) -> Option<Self::Item> {
        let id = self.stack.pop()?;
        let node = &self.tree.nodes[id.0];
        self.stack.extend(node.children.values().rev().copied());
        Some((id, node))
    }
}

/// Child-token frequencies at branch nodes, aggregated over groups.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BranchTokenStats {
    counts: BTreeMap<TokenId, usize>,
}

impl BranchTokenStats {
    /// Counts each distinct child token of every branch node in `tree` once.
    pub fn add_tree<S: Scalar>(&mut self, tree: &PrefixTree<S>) {
        for bp in tree.branch_nodes() {
            for tok in tree.node(bp.node).children.keys() {
                *self.counts.entry(*tok).or_default() += 1;
            }
        }
    }

    pub fn get(&self, token: TokenId) -> usize {
        self.counts.get(&token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<TokenId, usize> {
        &self.counts
    }

    /// Descending by count, ties by ascending token id.
    pub fn sorted(&self) -> Vec<(TokenId, usize)> {
        let mut rows: Vec<_> = self.counts.iter().map(|(t, c)| (*t, *c)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows
    }
}

/// Aggregates [`BranchTokenStats`] over all `groups`.
pub fn branch_token_stats<S: Scalar>(groups: &[Group<S>]) -> Result<BranchTokenStats> {
    let mut stats = BranchTokenStats::default();
    for g in groups {
        stats.add_tree(&PrefixTree::build(g)?);
    }
    Ok(stats)
}
