//! Request/response types for the HTTP service.
//!
//! Archives are referenced by server-side path (they are large and loaded
//! once into the service's cache); images travel inline as base64 so the
//! service never touches client filesystems.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use entroprune_core::bench::{BenchOptions, BenchRateRow};
use entroprune_core::entropy::Criterion;
use entroprune_core::error::{Error, Result};
use entroprune_core::flops::FlopsReport;
use entroprune_core::heatmap::HeatmapSidecar;
use entroprune_core::model::ModelConfig;
use entroprune_core::prune::{PruneSchedule, PruneTrace};
use entroprune_core::sweep::SweepRow;

/// Flat schedule encoding, mirroring the CLI flags one-to-one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleDto {
    /// 1-indexed pruning blocks.
    pub blocks: Vec<usize>,
    pub keep_rate: f64,
    /// One of "shannon", "renyi", "evit", "random".
    pub criterion: String,
    /// Rényi order; required when criterion = "renyi".
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Seed for the random criterion.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Score with the class column kept in the distribution (ablation).
    #[serde(default)]
    pub include_class: bool,
}

impl Default for ScheduleDto {
    fn default() -> Self {
        ScheduleDto {
            blocks: vec![4, 7, 10],
            keep_rate: 1.0,
            criterion: "shannon".to_string(),
            alpha: None,
            seed: None,
            include_class: false,
        }
    }
}

pub fn parse_criterion(name: &str, alpha: Option<f64>, seed: Option<u64>) -> Result<Criterion> {
    let criterion = match name {
        "shannon" => Criterion::Shannon,
        "renyi" => Criterion::Renyi {
            alpha: alpha.ok_or_else(|| {
                Error::Config("criterion 'renyi' requires an alpha".into())
            })?,
        },
        "evit" => Criterion::Evit,
        "random" => Criterion::Random {
            seed: seed.unwrap_or(0),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown criterion '{other}' (expected shannon|renyi|evit|random)"
            )))
        }
    };
    criterion.validate()?;
    Ok(criterion)
}

impl ScheduleDto {
    pub fn to_schedule(&self) -> Result<PruneSchedule> {
        Ok(PruneSchedule {
            blocks: self.blocks.iter().copied().collect::<BTreeSet<usize>>(),
            keep_rate: self.keep_rate,
            criterion: parse_criterion(&self.criterion, self.alpha, self.seed)?,
            include_class: self.include_class,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionDto {
    pub criterion: String,
    #[serde(default)]
    pub alpha: Option<f64>,
}

/// One input image: display name plus base64 file bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageInput {
    pub name: String,
    pub data_b64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyRequest {
    /// Server-side archive path.
    pub archive: String,
    pub config: ModelConfig,
    pub schedule: ScheduleDto,
    pub images: Vec<ImageInput>,
    pub top_k: usize,
    #[serde(default)]
    pub threads: usize,
    /// Attach the full pruning trace (per-block scores, kept/dropped ids)
    /// to each success record.
    #[serde(default)]
    pub include_trace: bool,
}

/// Per-image outcome. Success records carry top-k classes and the token
/// trajectory; failures carry the error text. One JSON object per image.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassifyRecord {
    Ok {
        path: String,
        classes: Vec<usize>,
        probs: Vec<f64>,
        tokens: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trace: Option<PruneTrace>,
    },
    Err {
        path: String,
        error: String,
    },
}

impl ClassifyRecord {
    pub fn is_err(&self) -> bool {
        matches!(self, ClassifyRecord::Err { .. })
    }

    pub fn path(&self) -> &str {
        match self {
            ClassifyRecord::Ok { path, .. } | ClassifyRecord::Err { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub results: Vec<ClassifyRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyMapRequest {
    pub archive: String,
    pub config: ModelConfig,
    #[serde(default)]
    pub schedule: Option<ScheduleDto>,
    /// 1-indexed block to visualize.
    pub block: usize,
    /// Rényi order for the map; Shannon when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub image: ImageInput,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyMapResponse {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// Complete binary PGM file, base64.
    pub pgm_b64: String,
    pub sidecar: HeatmapSidecar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    pub archive: String,
    pub config: ModelConfig,
    pub blocks: Vec<usize>,
    pub keep_rates: Vec<f64>,
    pub criteria: Vec<CriterionDto>,
    pub images: Vec<ImageInput>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub include_class: bool,
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResponse {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlopsRequest {
    pub config: ModelConfig,
    pub schedule: ScheduleDto,
}

pub type FlopsResponse = FlopsReport;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRequest {
    /// Server-side archive path; a seeded random archive is generated for
    /// the config when absent.
    #[serde(default)]
    pub archive: Option<String>,
    pub config: ModelConfig,
    pub blocks: Vec<usize>,
    pub criterion: CriterionDto,
    pub keep_rates: Vec<f64>,
    pub options: BenchOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResponse {
    pub dense_ips: f64,
    pub rows: Vec<BenchRateRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: String,
    pub error: String,
}
