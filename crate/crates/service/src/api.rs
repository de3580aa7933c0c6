//! Wire payloads. Every body carries `"v"`, the schema version; the JSON
//! Schemas under `docs/schemas/` describe them.

use serde::{Deserialize, Serialize};

use dempref::dynamics::{DriverParams, FeatureScaling};
use dempref::{OptBudget, Query, SamplerSettings, SystemSpec, Trajectory};

use crate::error::ServiceError;
use crate::store::{Status, SubmittedRanking};

pub const VERSION: u32 = 1;

fn default_domain() -> String {
    "driver".into()
}

fn default_beta_demo() -> f64 {
    0.1
}

fn default_beta_response() -> f64 {
    5.0
}

/// Body of `POST /sessions`. Live sessions always use the ranking update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub v: u32,
    #[serde(default = "default_domain")]
    pub domain: String,
    pub n_dem: usize,
    pub n_queries: usize,
    pub n_opt: usize,
    #[serde(default)]
    pub use_ic: bool,
    #[serde(default = "default_beta_demo")]
    pub beta_demo: f64,
    #[serde(default = "default_beta_response")]
    pub beta_response: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub budget: Option<OptBudget>,
    #[serde(default)]
    pub sampler: Option<SamplerSettings>,
}

impl CreateSession {
    pub fn new(n_dem: usize, n_queries: usize, n_opt: usize) -> Self {
        Self {
            v: VERSION,
            domain: default_domain(),
            n_dem,
            n_queries,
            n_opt,
            use_ic: false,
            beta_demo: default_beta_demo(),
            beta_response: default_beta_response(),
            seed: 0,
            budget: None,
            sampler: None,
        }
    }
}

/// Body of `POST /sessions/{id}/demonstrations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitDemonstration {
    pub v: u32,
    pub controls: Vec<Vec<f64>>,
}

/// Body of `POST /sessions/{id}/ranking`: the one-based permutation for query `iteration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRanking {
    pub v: u32,
    pub iteration: usize,
    pub ranking: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub v: u32,
    pub id: String,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationAccepted {
    pub v: u32,
    pub id: String,
    pub status: Status,
    /// Demonstrations still expected.
    pub remaining: usize,
    pub trajectory: Trajectory<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingAccepted {
    pub v: u32,
    pub id: String,
    pub status: Status,
    /// Iteration of the next query.
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSummary {
    pub v: u32,
    pub id: String,
    pub status: Status,
    pub iteration: usize,
    pub samples: usize,
    pub mean: Vec<f64>,
    pub mean_direction: Vec<f64>,
    pub belief_digest: String,
    pub evidence_digest: String,
}

/// Body of `GET /sessions/{id}/query`; which optional fields are present depends on `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryState {
    pub v: u32,
    pub id: String,
    pub status: Status,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<Query<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_demonstrations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<BeliefSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub v: u32,
    pub id: String,
    pub status: Status,
    pub domain: String,
    pub iteration: usize,
    pub n_dem: usize,
    pub n_queries: usize,
    pub n_opt: usize,
    pub use_ic: bool,
    pub demonstrations: usize,
    pub rankings: Vec<SubmittedRanking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

/// Body of `GET /domains/{name}`: everything a client needs to replay rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub v: u32,
    pub spec: SystemSpec<f64>,
    pub params: DriverParams<f64>,
    pub scaling: FeatureScaling<f64>,
    pub feature_names: Vec<String>,
}

/// Parses a request body, reporting the offending field on failure.
pub fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let value: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "body".to_string() } else { path };
        ServiceError::invalid(field, e.into_inner().to_string())
    })?;
    Ok(value)
}

pub fn check_version(v: u32) -> Result<(), ServiceError> {
    if v == VERSION {
        Ok(())
    } else {
        Err(ServiceError::invalid("v", format!("unsupported schema version {v}, expected {VERSION}")))
    }
}
