//! Deduplication of findings and majority-vote localization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Finding, NanEvent, Stage};

fn better(a: &Finding, b: &Finding) -> bool {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| b.model_id.cmp(&a.model_id))
        .then_with(|| b.node.cmp(&a.node))
        .is_gt()
}

/// Collapses findings to one per (stage, kind, backend pair), keeping the
/// largest-distance exemplar and summing occurrence counts.
pub fn deduplicate(findings: impl IntoIterator<Item = Finding>) -> Vec<Finding> {
    let mut by_key: BTreeMap<(Stage, String, (String, String)), Finding> = BTreeMap::new();
    for f in findings {
        let key = (f.stage, f.kind.clone(), f.pair.clone());
        match by_key.get_mut(&key) {
            Some(acc) => {
                let count = acc.count + f.count;
                if better(&f, acc) {
                    *acc = f;
                }
                acc.count = count;
            }
            None => {
                by_key.insert(key, f);
            }
        }
    }
    by_key.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Implicated(String),
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteEntry {
    /// `FC`, `LC`, `BC` or `NaN`.
    pub channel: String,
    pub kind: String,
    pub vote: Vote,
    pub pairs: Vec<(String, String)>,
}

fn pairs_with(x: &str, backends: &BTreeSet<String>) -> BTreeSet<(String, String)> {
    backends
        .iter()
        .filter(|y| y.as_str() != x)
        .map(|y| if x < y.as_str() { (x.to_string(), y.clone()) } else { (y.clone(), x.to_string()) })
        .collect()
}

/// For each flagged (stage, kind), implicates the backend that appears in
/// every flagged pair while every pair without it is clean. Needs at least
/// three backends; otherwise, or when no single backend fits, the entry is
/// ambiguous.
pub fn vote_localize(findings: &[Finding], backends: &[String]) -> Vec<VoteEntry> {
    let all: BTreeSet<String> = backends.iter().cloned().collect();
    let mut groups: BTreeMap<(Stage, String), BTreeSet<(String, String)>> = BTreeMap::new();
    for f in findings {
        groups.entry((f.stage, f.kind.clone())).or_default().insert(f.pair.clone());
    }
    groups
        .into_iter()
        .map(|((stage, kind), flagged)| {
            let candidates: Vec<&String> =
                if all.len() < 3 { vec![] } else { all.iter().filter(|x| pairs_with(x, &all) == flagged).collect() };
            let vote = match candidates.as_slice() {
                [x] => Vote::Implicated((*x).clone()),
                _ => Vote::Ambiguous,
            };
            VoteEntry { channel: stage.to_string(), kind, vote, pairs: flagged.into_iter().collect() }
        })
        .collect()
}

/// The lone minority backend of a NaN event, when there is one.
pub(crate) fn vote_nan(e: &NanEvent) -> VoteEntry {
    let total = e.affected.len() + e.healthy.len();
    let vote = if total < 3 {
        Vote::Ambiguous
    } else if e.affected.len() == 1 {
        Vote::Implicated(e.affected[0].clone())
    } else if e.healthy.len() == 1 {
        Vote::Implicated(e.healthy[0].clone())
    } else {
        Vote::Ambiguous
    };
    VoteEntry { channel: "NaN".into(), kind: e.kind.clone().unwrap_or_else(|| "loss".into()), vote, pairs: Vec::new() }
}
