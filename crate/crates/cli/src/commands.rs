//! Command implementations: argument massaging, HTTP calls, output.

use std::path::Path;

use anyhow::Context;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use entroprune_api as api;
use entroprune_client::{Client, ClientError};
use entroprune_core::bench::BenchOptions;
use entroprune_core::model::ModelConfig;
use entroprune_core::{image, synth};

use crate::ScheduleArgs;

/// Exit codes: 0 ok, 1 per-item failures, 2 config/usage errors.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(client_err) = err.downcast_ref::<ClientError>() {
        return match client_err {
            ClientError::Api { status, .. } if *status == 400 || *status == 404 => 2,
            _ => 1,
        };
    }
    if err.downcast_ref::<entroprune_core::Error>().is_some() {
        return 2;
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    1
}

/// Resolve the service: an explicit URL, or an embedded loopback instance.
pub async fn connect(server: Option<String>) -> anyhow::Result<Client> {
    let base = match server {
        Some(url) => url,
        None => {
            let state = entroprune_service::AppState::new();
            let (addr, _handle) = entroprune_service::bind_ephemeral(state)
                .await
                .context("starting embedded server")?;
            tracing::debug!("embedded server on {addr}");
            format!("http://{addr}")
        }
    };
    let client = Client::new(base);
    client.health().await.context("service health check")?;
    Ok(client)
}

pub async fn serve(addr: &str) -> anyhow::Result<u8> {
    let state = entroprune_service::AppState::new();
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, entroprune_service::app(state)).await?;
    Ok(0)
}

fn load_config(path: &Option<String>) -> anyhow::Result<ModelConfig> {
    let config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {p}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {p}"))?
        }
        None => ModelConfig::deit_small(),
    };
    config.validate()?;
    Ok(config)
}

impl ScheduleArgs {
    fn to_dto(&self) -> api::ScheduleDto {
        // r = 1.0 means dense; drop the block list so the default blocks
        // don't trip validation on shallow models.
        let blocks = if self.keep_rate >= 1.0 {
            Vec::new()
        } else {
            self.blocks.clone()
        };
        api::ScheduleDto {
            blocks,
            keep_rate: self.keep_rate,
            criterion: self.criterion.clone(),
            alpha: self.alpha,
            seed: Some(self.seed),
            include_class: self.include_class,
        }
    }
}

/// Read each input file; unreadable files become local error records so the
/// rest of the batch still runs.
fn read_images(paths: &[String]) -> (Vec<api::ImageInput>, Vec<(usize, api::ClassifyRecord)>) {
    let mut inputs = Vec::new();
    let mut failures = Vec::new();
    for (idx, path) in paths.iter().enumerate() {
        match std::fs::read(path) {
            Ok(bytes) => inputs.push(api::ImageInput {
                name: path.clone(),
                data_b64: B64.encode(bytes),
            }),
            Err(err) => failures.push((
                idx,
                api::ClassifyRecord::Err {
                    path: path.clone(),
                    error: format!("unreadable image: {err}"),
                },
            )),
        }
    }
    (inputs, failures)
}

pub async fn classify(
    client: &Client,
    schedule: ScheduleArgs,
    top_k: usize,
    threads: usize,
    out: Option<String>,
    trace_dir: Option<String>,
    images: Vec<String>,
) -> anyhow::Result<u8> {
    let config = load_config(&schedule.config)?;
    if let Some(dir) = &trace_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {dir}"))?;
    }
    let (inputs, local_failures) = read_images(&images);
    let response = if inputs.is_empty() {
        api::ClassifyResponse { results: vec![] }
    } else {
        client
            .classify(&api::ClassifyRequest {
                archive: schedule.archive.clone(),
                config,
                schedule: schedule.to_dto(),
                images: inputs,
                top_k,
                threads,
                include_trace: trace_dir.is_some(),
            })
            .await?
    };

    // Re-interleave service results with local failures in input order.
    let mut records: Vec<Option<api::ClassifyRecord>> = vec![None; images.len()];
    for (idx, record) in local_failures {
        records[idx] = Some(record);
    }
    let mut remote = response.results.into_iter();
    for slot in records.iter_mut() {
        if slot.is_none() {
            *slot = remote.next();
        }
    }

    let mut lines = String::new();
    let mut any_failed = false;
    for mut record in records.into_iter().flatten() {
        any_failed |= record.is_err();
        if let (Some(dir), api::ClassifyRecord::Ok { path, trace, .. }) = (&trace_dir, &mut record)
        {
            if let Some(trace) = trace.take() {
                let stem = Path::new(path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "image".to_string());
                let trace_path = format!("{dir}/{stem}.trace.json");
                std::fs::write(&trace_path, serde_json::to_vec_pretty(&trace)?)
                    .with_context(|| format!("writing {trace_path}"))?;
            }
        }
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    match out {
        Some(path) => std::fs::write(&path, lines).with_context(|| format!("writing {path}"))?,
        None => print!("{lines}"),
    }
    Ok(u8::from(any_failed))
}

pub async fn entropy_map(
    client: &Client,
    schedule: ScheduleArgs,
    block: usize,
    out_dir: &str,
    images: Vec<String>,
) -> anyhow::Result<u8> {
    let config = load_config(&schedule.config)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {out_dir}"))?;
    let mut any_failed = false;
    for path in &images {
        let outcome = export_one_map(client, &schedule, &config, block, out_dir, path).await;
        match outcome {
            Ok(line) => println!("{line}"),
            Err(err) => {
                any_failed = true;
                let record = serde_json::json!({ "path": path, "error": format!("{err:#}") });
                println!("{record}");
            }
        }
    }
    Ok(u8::from(any_failed))
}

async fn export_one_map(
    client: &Client,
    schedule: &ScheduleArgs,
    config: &ModelConfig,
    block: usize,
    out_dir: &str,
    path: &str,
) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("unreadable image {path}"))?;
    let response = client
        .entropy_map(&api::EntropyMapRequest {
            archive: schedule.archive.clone(),
            config: config.clone(),
            schedule: Some(schedule.to_dto()),
            block,
            alpha: schedule.alpha,
            image: api::ImageInput {
                name: path.to_string(),
                data_b64: B64.encode(bytes),
            },
        })
        .await?;

    let stem = Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());
    let pgm_path = format!("{out_dir}/{stem}.block{block}.pgm");
    let json_path = format!("{out_dir}/{stem}.block{block}.json");
    std::fs::write(&pgm_path, B64.decode(&response.pgm_b64)?)?;
    std::fs::write(&json_path, serde_json::to_vec_pretty(&response.sidecar)?)?;
    Ok(serde_json::json!({
        "path": path,
        "pgm": pgm_path,
        "sidecar": json_path,
        "block": block,
        "score_min": response.sidecar.score_min,
        "score_max": response.sidecar.score_max,
    })
    .to_string())
}

/// Parse "shannon", "evit", "random", "renyi:2.5" style criterion specs.
fn parse_criteria_list(specs: &[String]) -> anyhow::Result<Vec<api::CriterionDto>> {
    specs
        .iter()
        .map(|spec| {
            let (name, alpha) = match spec.split_once(':') {
                Some((name, a)) => {
                    let alpha: f64 = a
                        .parse()
                        .with_context(|| format!("bad criterion order in '{spec}'"))?;
                    (name, Some(alpha))
                }
                None => (spec.as_str(), None),
            };
            Ok(api::CriterionDto {
                criterion: name.to_string(),
                alpha,
            })
        })
        .collect()
}

pub async fn sweep(
    client: &Client,
    schedule: ScheduleArgs,
    keep_rates: Option<Vec<f64>>,
    criteria: Option<Vec<String>>,
    threads: usize,
    json: bool,
    images: Vec<String>,
) -> anyhow::Result<u8> {
    let config = load_config(&schedule.config)?;
    let keep_rates = keep_rates.unwrap_or_else(|| vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3]);
    let specs = criteria.unwrap_or_else(|| {
        ["shannon", "renyi:2", "renyi:5", "renyi:10"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    });
    let criteria = parse_criteria_list(&specs)?;

    let mut inputs = Vec::new();
    for path in &images {
        let bytes = std::fs::read(path).with_context(|| format!("unreadable image {path}"))?;
        inputs.push(api::ImageInput {
            name: path.clone(),
            data_b64: B64.encode(bytes),
        });
    }

    let response = client
        .sweep(&api::SweepRequest {
            archive: schedule.archive.clone(),
            config,
            blocks: schedule.blocks.clone(),
            keep_rates,
            criteria,
            images: inputs,
            seed: schedule.seed,
            include_class: schedule.include_class,
            threads,
        })
        .await?;

    if json {
        for row in &response.rows {
            println!("{}", serde_json::to_string(row)?);
        }
    } else {
        print!(
            "{}",
            entroprune_core::sweep::render_table(&entroprune_core::sweep::SweepReport {
                rows: response.rows
            })
        );
    }
    Ok(0)
}

pub async fn flops(
    client: &Client,
    config: Option<String>,
    keep_rate: f64,
    blocks: Vec<usize>,
    json: bool,
) -> anyhow::Result<u8> {
    let config = load_config(&config)?;
    let report = client
        .flops(&api::FlopsRequest {
            config,
            schedule: api::ScheduleDto {
                blocks,
                keep_rate,
                criterion: "shannon".into(),
                alpha: None,
                seed: None,
                include_class: false,
            },
        })
        .await?;
    if json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        print!("{}", report.render_table());
    }
    Ok(0)
}

pub struct BenchArgs {
    pub archive: Option<String>,
    pub config: Option<String>,
    pub keep_rates: Vec<f64>,
    pub blocks: Vec<usize>,
    pub criterion: String,
    pub alpha: Option<f64>,
    pub n_images: usize,
    pub n_warmup: usize,
    pub repeats: usize,
    pub threads: usize,
    pub seed: u64,
    pub json: bool,
}

pub async fn benchmark(client: &Client, args: BenchArgs) -> anyhow::Result<u8> {
    let config = load_config(&args.config)?;
    let response = client
        .benchmark(&api::BenchmarkRequest {
            archive: args.archive,
            config,
            blocks: args.blocks,
            criterion: api::CriterionDto {
                criterion: args.criterion,
                alpha: args.alpha,
            },
            keep_rates: args.keep_rates,
            options: BenchOptions {
                n_images: args.n_images,
                n_warmup: args.n_warmup,
                repeats: args.repeats,
                threads: args.threads,
                seed: args.seed,
            },
        })
        .await?;
    if args.json {
        println!(
            "{}",
            serde_json::json!({ "dense_ips": response.dense_ips, "rows": response.rows })
        );
    } else {
        print!(
            "{}",
            entroprune_core::bench::render_table(response.dense_ips, &response.rows)
        );
    }
    Ok(0)
}

pub fn gen_archive(config: Option<String>, seed: u64, out: &str) -> anyhow::Result<u8> {
    let config = load_config(&config)?;
    let archive = synth::random_archive(&config, seed);
    archive.store(out).with_context(|| format!("writing {out}"))?;
    eprintln!(
        "wrote {} tensors ({} payload bytes) to {out}",
        archive.len(),
        archive.payload_len()
    );
    Ok(0)
}

pub fn gen_image(size: usize, channels: usize, pattern: &str, seed: u64, out: &str) -> anyhow::Result<u8> {
    let pattern = match pattern {
        "constant" => synth::ImagePattern::Constant,
        "noise" => synth::ImagePattern::Noise,
        "square" => synth::ImagePattern::Square,
        other => anyhow::bail!("unknown pattern '{other}' (constant|noise|square)"),
    };
    let img = synth::generate_image(pattern, size, channels, seed);
    let to_u8 = |img: &entroprune_core::image::ImageTensor| -> Vec<u8> {
        img.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    };
    let bytes = if out.ends_with(".pgm") {
        anyhow::ensure!(channels == 1, "PGM output needs --channels 1");
        image::encode_pgm(size, size, &to_u8(&img))
    } else if out.ends_with(".ppm") {
        anyhow::ensure!(channels == 3, "PPM output needs --channels 3");
        image::encode_ppm(size, size, &to_u8(&img))
    } else {
        image::encode_raw_f32(&img)
    };
    std::fs::write(out, bytes).with_context(|| format!("writing {out}"))?;
    Ok(0)
}
