//! Multiply-accumulate accounting per pipeline stage.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCount {
    stages: BTreeMap<String, u64>,
}

impl OpCount {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, stage: &str, macs: u64) {
        *self.stages.entry(stage.to_string()).or_insert(0) += macs;
    }

    pub fn get(&self, stage: &str) -> u64 {
        self.stages.get(stage).copied().unwrap_or(0)
    }

    pub fn stages(&self) -> impl Iterator<Item = (&str, u64)> {
        self.stages.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Sum over stages whose name starts with `prefix`.
    pub fn prefixed(&self, prefix: &str) -> u64 {
        self.stages
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.stages.values().sum()
    }

    pub fn merge(&mut self, other: &OpCount) {
        for (k, v) in other.stages() {
            self.add(k, v);
        }
    }
}
