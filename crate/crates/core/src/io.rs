//! JSON formats for chains, metrics, partitions, and reports.
//!
//! - chain: `{"labels": [...], "matrix": [[...], ...]}` (labels optional)
//! - metric: `{"matrix": [[...], ...]}`
//! - partition: `{"blocks": [[...], ...]}`
//! - coupling: `[{"from": [x, y], "to": [u, v], "mass": m}, ...]`
//! - tail report: `{"r": [...], "empirical": [...], "bound": [...], "mc_stderr": [...]}`

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::markov::{validate_chain, validate_metric, MarkovChain, PseudoMetric};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    #[serde(default)]
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl ChainFile {
    pub fn into_chain(self) -> Result<MarkovChain> {
        validate_chain(&self.matrix, self.labels)
    }
}

impl From<&MarkovChain> for ChainFile {
    fn from(c: &MarkovChain) -> Self {
        Self {
            labels: c.labels().to_vec(),
            matrix: c.matrix().to_rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFile {
    pub matrix: Vec<Vec<f64>>,
}

impl MetricFile {
    pub fn into_metric(self) -> Result<PseudoMetric> {
        validate_metric(&self.matrix)
    }
}

impl From<&PseudoMetric> for MetricFile {
    fn from(m: &PseudoMetric) -> Self {
        Self {
            matrix: m.matrix().to_rows(),
        }
    }
}

pub fn parse_chain(json: &str) -> Result<MarkovChain> {
    serde_json::from_str::<ChainFile>(json)?.into_chain()
}

pub fn parse_metric(json: &str) -> Result<PseudoMetric> {
    serde_json::from_str::<MetricFile>(json)?.into_metric()
}

pub fn chain_to_json(chain: &MarkovChain) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ChainFile::from(chain))?)
}

pub fn metric_to_json(metric: &PseudoMetric) -> Result<String> {
    Ok(serde_json::to_string_pretty(&MetricFile::from(metric))?)
}
