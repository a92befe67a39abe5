//! Parameter census: every component reports how many of its values are
//! trainable (receive gradient updates) and how many are fixed.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ParameterCount {
    pub trainable: usize,
    pub frozen: usize,
}

impl ParameterCount {
    pub const NONE: ParameterCount = ParameterCount {
        trainable: 0,
        frozen: 0,
    };

    pub fn trainable(n: usize) -> Self {
        Self {
            trainable: n,
            frozen: 0,
        }
    }

    pub fn frozen(n: usize) -> Self {
        Self {
            trainable: 0,
            frozen: n,
        }
    }
}

pub trait Trainable {
    fn parameter_count(&self) -> ParameterCount;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CensusEntry {
    pub component: String,
    pub count: ParameterCount,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParameterCensus {
    pub entries: Vec<CensusEntry>,
}

impl ParameterCensus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, component: impl Into<String>, item: &dyn Trainable) -> &mut Self {
        self.entries.push(CensusEntry {
            component: component.into(),
            count: item.parameter_count(),
        });
        self
    }

    /// Records a count directly, for components that are parts of a larger value.
    pub fn record_count(&mut self, component: impl Into<String>, count: ParameterCount) -> &mut Self {
        self.entries.push(CensusEntry {
            component: component.into(),
            count,
        });
        self
    }

    pub fn total_trainable(&self) -> usize {
        self.entries.iter().map(|e| e.count.trainable).sum()
    }

    pub fn trainable_components(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.count.trainable > 0)
            .map(|e| e.component.as_str())
            .collect()
    }

    pub fn get(&self, component: &str) -> Option<ParameterCount> {
        self.entries
            .iter()
            .find(|e| e.component == component)
            .map(|e| e.count)
    }
}

impl fmt::Display for ParameterCensus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<24} trainable={:<8} frozen={}",
                e.component, e.count.trainable, e.count.frozen
            )?;
        }
        write!(f, "{:<24} trainable={}", "total", self.total_trainable())
    }
}
