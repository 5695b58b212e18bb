//! Endpoint implementations.

use std::sync::Arc;

use axum::extract::State;
use axum::Json;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use entroprune_api as api;
use entroprune_core::bench;
use entroprune_core::flops;
use entroprune_core::heatmap;
use entroprune_core::image;
use entroprune_core::model::Model;
use entroprune_core::parallel;
use entroprune_core::prune::{self, PruneSchedule};
use entroprune_core::sweep;
use entroprune_core::synth;
use entroprune_core::weights::WeightArchive;
use entroprune_core::{Error, ModelConfig, Result};

use crate::{AppState, ServiceError};

pub async fn healthz() -> Json<api::HealthResponse> {
    Json(api::HealthResponse {
        status: "ok".into(),
    })
}

/// Top-k class indices by probability, ties toward the lower index.
fn top_k_classes(probs: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k.max(1).min(probs.len()));
    let top_probs = order.iter().map(|&i| probs[i]).collect();
    (order, top_probs)
}

fn classify_one(
    model: &Model,
    schedule: &PruneSchedule,
    top_k: usize,
    include_trace: bool,
    input: api::ImageInput,
) -> api::ClassifyRecord {
    let run = || -> Result<api::ClassifyRecord> {
        let bytes = B64
            .decode(&input.data_b64)
            .map_err(|e| Error::Format(format!("invalid base64 image payload: {e}")))?;
        let img = image::load_image_bytes(&bytes, &model.config)?;
        let (probs, trace) = prune::pruned_forward(model, &img, schedule)?;
        let (classes, top_probs) = top_k_classes(&probs, top_k);
        Ok(api::ClassifyRecord::Ok {
            path: input.name.clone(),
            classes,
            probs: top_probs,
            tokens: trace.token_counts(),
            trace: include_trace.then_some(trace),
        })
    };
    run().unwrap_or_else(|err| api::ClassifyRecord::Err {
        path: input.name.clone(),
        error: err.to_string(),
    })
}

pub async fn classify(
    State(state): State<Arc<AppState>>,
    Json(req): Json<api::ClassifyRequest>,
) -> std::result::Result<Json<api::ClassifyResponse>, ServiceError> {
    req.config.validate().map_err(ServiceError::from)?;
    let schedule = req.schedule.to_schedule()?;
    let archive = state.archive(&req.archive).await?;
    let results = tokio::task::spawn_blocking(move || -> Result<Vec<api::ClassifyRecord>> {
        let model = Model::from_archive(&archive, req.config)?;
        schedule.validate(&model.config)?;
        Ok(parallel::map_ordered(req.images, req.threads, |input| {
            classify_one(&model, &schedule, req.top_k, req.include_trace, input)
        }))
    })
    .await
    .map_err(ServiceError::join)??;
    Ok(Json(api::ClassifyResponse { results }))
}

pub async fn entropy_map(
    State(state): State<Arc<AppState>>,
    Json(req): Json<api::EntropyMapRequest>,
) -> std::result::Result<Json<api::EntropyMapResponse>, ServiceError> {
    req.config.validate().map_err(ServiceError::from)?;
    let schedule = match &req.schedule {
        Some(dto) => dto.to_schedule()?,
        None => PruneSchedule::dense(),
    };
    let archive = state.archive(&req.archive).await?;
    let response = tokio::task::spawn_blocking(move || -> Result<api::EntropyMapResponse> {
        let model = Model::from_archive(&archive, req.config)?;
        let bytes = B64
            .decode(&req.image.data_b64)
            .map_err(|e| Error::Format(format!("invalid base64 image payload: {e}")))?;
        let img = image::load_image_bytes(&bytes, &model.config)?;
        let map = heatmap::entropy_map(&model, &img, &schedule, req.block, req.alpha)?;
        Ok(api::EntropyMapResponse {
            name: req.image.name,
            width: map.width,
            height: map.height,
            pgm_b64: B64.encode(map.to_pgm()),
            sidecar: map.sidecar,
        })
    })
    .await
    .map_err(ServiceError::join)??;
    Ok(Json(response))
}

pub async fn sweep(
    State(state): State<Arc<AppState>>,
    Json(req): Json<api::SweepRequest>,
) -> std::result::Result<Json<api::SweepResponse>, ServiceError> {
    req.config.validate().map_err(ServiceError::from)?;
    if req.keep_rates.is_empty() || req.criteria.is_empty() {
        return Err(ServiceError::from(Error::Config(
            "sweep needs at least one keep rate and one criterion".into(),
        )));
    }
    let mut criteria = Vec::with_capacity(req.criteria.len());
    for dto in &req.criteria {
        criteria.push(api::parse_criterion(
            &dto.criterion,
            dto.alpha,
            Some(req.seed),
        )?);
    }
    let archive = state.archive(&req.archive).await?;
    let rows = tokio::task::spawn_blocking(move || -> Result<Vec<sweep::SweepRow>> {
        let model = Model::from_archive(&archive, req.config)?;
        let mut images = Vec::with_capacity(req.images.len());
        for input in &req.images {
            let bytes = B64.decode(&input.data_b64).map_err(|e| {
                Error::Format(format!("image '{}': invalid base64: {e}", input.name))
            })?;
            images.push(image::load_image_bytes(&bytes, &model.config)?);
        }
        let opts = sweep::SweepOptions {
            keep_rates: req.keep_rates,
            criteria,
            blocks: req.blocks.iter().copied().collect(),
            include_class: req.include_class,
            threads: req.threads,
        };
        Ok(sweep::sweep(&model, &images, &opts)?.rows)
    })
    .await
    .map_err(ServiceError::join)??;
    Ok(Json(api::SweepResponse { rows }))
}

pub async fn flops(
    Json(req): Json<api::FlopsRequest>,
) -> std::result::Result<Json<api::FlopsResponse>, ServiceError> {
    let schedule = req.schedule.to_schedule()?;
    let report = flops::model_flops(&req.config, &schedule)?;
    Ok(Json(report))
}

pub async fn benchmark(
    State(state): State<Arc<AppState>>,
    Json(req): Json<api::BenchmarkRequest>,
) -> std::result::Result<Json<api::BenchmarkResponse>, ServiceError> {
    req.config.validate().map_err(ServiceError::from)?;
    if req.keep_rates.is_empty() {
        return Err(ServiceError::from(Error::Config(
            "benchmark needs at least one keep rate".into(),
        )));
    }
    let criterion =
        api::parse_criterion(&req.criterion.criterion, req.criterion.alpha, Some(req.options.seed))?;
    let archive: Arc<WeightArchive> = match &req.archive {
        Some(path) => state.archive(path).await?,
        None => {
            let config: ModelConfig = req.config.clone();
            let seed = req.options.seed;
            Arc::new(
                tokio::task::spawn_blocking(move || synth::random_archive(&config, seed))
                    .await
                    .map_err(ServiceError::join)?,
            )
        }
    };

    // Wall-clock measurements interfere; one benchmark at a time.
    let _guard = state.bench_guard().await;
    let response = tokio::task::spawn_blocking(move || -> Result<api::BenchmarkResponse> {
        let model = Model::from_archive(&archive, req.config)?;
        let base = PruneSchedule {
            blocks: req.blocks.iter().copied().collect(),
            keep_rate: 1.0,
            criterion,
            include_class: false,
        };
        let (dense_ips, rows) =
            bench::benchmark_rates(&model, &base, &req.keep_rates, &req.options)?;
        Ok(api::BenchmarkResponse { dense_ips, rows })
    })
    .await
    .map_err(ServiceError::join)??;
    Ok(Json(response))
}
