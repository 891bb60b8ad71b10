use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScenarioCycle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedCandidate {
    pub mark: usize,
    pub instance_id: String,
    pub category: String,
}

/// Set-of-mark view of one cycle. Marks run 1..=n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedScene {
    pub t: usize,
    pub candidates: Vec<MarkedCandidate>,
    /// Semantics text with every `{id}` placeholder replaced by `category [mark]`.
    pub semantics: String,
    /// Reference to the mark-annotated image.
    pub image: String,
}

impl MarkedScene {
    pub fn instance_for(&self, mark: usize) -> Option<&MarkedCandidate> {
        self.candidates.iter().find(|c| c.mark == mark)
    }

    pub fn mark_of(&self, instance_id: &str) -> Option<usize> {
        self.candidates.iter().find(|c| c.instance_id == instance_id).map(|c| c.mark)
    }

    pub fn marks(&self) -> impl Iterator<Item = usize> + '_ {
        self.candidates.iter().map(|c| c.mark)
    }
}

/// Instance ids referenced as `{id}` in a semantics string.
pub(crate) fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Assigns marks sorted by category, then left box edge, then id. Returns
/// `None` for a scene without candidates.
pub fn mark_scene(cycle: &ScenarioCycle) -> Option<MarkedScene> {
    if cycle.instances.is_empty() {
        return None;
    }
    let mut order: Vec<_> = cycle.instances.iter().collect();
    order.sort_by(|a, b| {
        a.category
            .cmp(&b.category)
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
            .then(a.id.cmp(&b.id))
    });
    let candidates: Vec<MarkedCandidate> = order
        .iter()
        .enumerate()
        .map(|(i, inst)| MarkedCandidate {
            mark: i + 1,
            instance_id: inst.id.clone(),
            category: inst.category.clone(),
        })
        .collect();
    let lookup: BTreeMap<&str, &MarkedCandidate> =
        candidates.iter().map(|c| (c.instance_id.as_str(), c)).collect();

    let mut semantics = String::with_capacity(cycle.semantics.len());
    let mut rest = cycle.semantics.as_str();
    while let Some(open) = rest.find('{') {
        semantics.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let id = &after[..close];
                match lookup.get(id) {
                    Some(c) => semantics.push_str(&format!("{} [{}]", c.category, c.mark)),
                    None => semantics.push_str(&rest[open..open + close + 2]),
                }
                rest = &after[close + 1..];
            }
            None => {
                semantics.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    semantics.push_str(rest);

    Some(MarkedScene {
        t: cycle.t,
        candidates,
        semantics,
        image: format!("{}#marked", cycle.image),
    })
}
