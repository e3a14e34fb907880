use std::path::Path;

use qv2x::fed::{
    accuracy, dense_fedavg, encode_samples, fed_round, warm_start, EncodedSample, FedClient,
    FedCloud, RoundMetrics,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{codec_model, finish, Check};
use crate::artifact::{num, Artifacts, RunLog};
use crate::config::{Partition, ScenarioConfig};
use crate::data::Digits;
use crate::error::Result;

/// Largest accuracy gap to the dense baseline that still passes.
pub const BASELINE_GAP: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct FedOutcome {
    pub initial_accuracy: f64,
    pub rounds: Vec<RoundMetrics>,
    pub dense: Vec<RoundMetrics>,
    pub checks: Vec<Check>,
}

/// Splits the training samples over `n` clients. IID deals a seeded shuffle round
/// robin; label skew sorts by label and hands out contiguous blocks.
pub fn partition(
    data: &[EncodedSample],
    n: usize,
    how: Partition,
    seed: u64,
) -> Vec<Vec<EncodedSample>> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    match how {
        Partition::Iid => idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        Partition::LabelSkew => idx.sort_by_key(|&i| (data[i].sample.label, i)),
    }
    let mut parts = vec![Vec::new(); n];
    match how {
        Partition::Iid => {
            for (k, &i) in idx.iter().enumerate() {
                parts[k % n].push(data[i].clone());
            }
        }
        Partition::LabelSkew => {
            let size = data.len().div_ceil(n);
            for (k, chunk) in idx.chunks(size.max(1)).enumerate() {
                parts[k] = chunk.iter().map(|&i| data[i].clone()).collect();
            }
        }
    }
    parts
}

fn metrics_rows(rows: &[RoundMetrics]) -> impl Iterator<Item = String> + '_ {
    rows.iter().map(|m| {
        format!(
            "{},{},{},{},{}",
            m.round,
            num(m.accuracy),
            m.params_uploaded,
            num(m.compression_ratio),
            m.wall_ms
        )
    })
}

const METRICS_COLUMNS: &str = "round,accuracy,params_uploaded,compression_ratio,wall_ms";

/// Federated rounds over the digits training split with one client per vehicle,
/// next to the dense FedAvg baseline run from the same start.
pub fn run_fed(cfg: &ScenarioConfig, out: &Path) -> Result<FedOutcome> {
    let digits = Digits::load(cfg.dataset_path()?, cfg.seed)?;
    let hash = cfg.hash();
    let mut artifacts = Artifacts::create(out, &hash)?;
    let mut log = RunLog::new("fed", &hash);
    let f = &cfg.fed;
    let fed_cfg = f.fed_config(cfg.seed);

    let template = codec_model(cfg)?;
    let train = encode_samples(&digits.train, &template)?;
    let val = encode_samples(&digits.val, &template)?;
    let test = encode_samples(&digits.test, &template)?;
    let template = warm_start(
        &template,
        &val,
        f.warm_start_steps,
        f.warm_start_lr,
        f.lambda,
    )?;

    let parts = partition(&train, cfg.n_vehicles, f.partition, cfg.seed);
    let client_data: Vec<(u32, Vec<EncodedSample>)> = parts
        .into_iter()
        .enumerate()
        .map(|(k, d)| (k as u32 + 1, d))
        .collect();
    let mut clients: Vec<FedClient> = client_data
        .iter()
        .map(|(id, d)| FedClient::new(*id, d.clone(), cfg.seed))
        .collect::<qv2x::Result<_>>()?;
    let mut cloud = FedCloud::broadcast(template.clone(), &mut clients, &fed_cfg)?;
    let initial_accuracy = accuracy(&cloud.global_codec()?, &test)?;
    log.record("broadcast", 0, "accuracy", initial_accuracy);

    let mut rounds = Vec::with_capacity(f.rounds);
    for _ in 0..f.rounds {
        let m = fed_round(&mut cloud, &mut clients, &fed_cfg, &test)?;
        log.record("aggregate", m.round, "accuracy", m.accuracy);
        log.record(
            "aggregate",
            m.round,
            "params_uploaded",
            m.params_uploaded as f64,
        );
        rounds.push(m);
    }
    artifacts.csv("round_metrics.csv", METRICS_COLUMNS, metrics_rows(&rounds))?;
    artifacts.binary("global_payload.bin", &cloud.global.to_payload())?;

    let dense = if f.dense_baseline {
        let d = dense_fedavg(&template, &client_data, &fed_cfg, cfg.seed, &test)?;
        for m in &d {
            log.record("dense_baseline", m.round, "accuracy", m.accuracy);
        }
        artifacts.csv("dense_baseline.csv", METRICS_COLUMNS, metrics_rows(&d))?;
        d
    } else {
        Vec::new()
    };

    let mut checks = Vec::new();
    if let Some(last) = rounds.last() {
        let fewer = rounds
            .iter()
            .zip(&dense)
            .all(|(l, d)| l.params_uploaded < d.params_uploaded);
        let ratio = rounds.iter().all(|m| m.compression_ratio < 1.0);
        checks.push(Check::new(
            "uploads below the dense count",
            ratio && (dense.is_empty() || fewer),
            format!(
                "final round {} parameters, compression ratio {:.4}",
                last.params_uploaded, last.compression_ratio
            ),
        ));
        if let Some(d) = dense.last() {
            let gap = d.accuracy - last.accuracy;
            checks.push(Check::new(
                "accuracy within 5 points of dense FedAvg",
                gap.abs() <= BASELINE_GAP,
                format!(
                    "low-rank {:.4}, dense {:.4}, gap {:+.4}",
                    last.accuracy, d.accuracy, gap
                ),
            ));
        }
    }
    let mut lines = vec![
        format!("config_hash: {hash}"),
        format!(
            "clients: {} ({:?}), sizes {:?}",
            cfg.n_vehicles,
            f.partition,
            client_data.iter().map(|(_, d)| d.len()).collect::<Vec<_>>()
        ),
        format!(
            "warm start: {} steps on {} validation samples",
            f.warm_start_steps,
            val.len()
        ),
        format!("initial accuracy: {initial_accuracy:.4}"),
    ];
    if let Some(m) = rounds.last() {
        lines.push(format!(
            "round {}: accuracy {:.4}, uploaded {}, compression {:.4}",
            m.round, m.accuracy, m.params_uploaded, m.compression_ratio
        ));
        let ranks: Vec<String> = cloud
            .global
            .layers
            .iter()
            .map(|l| format!("{}×{} r={}", l.rows, l.cols, l.rank))
            .collect();
        lines.push(format!("global ranks: {}", ranks.join(", ")));
    }
    if let Some(d) = dense.last() {
        lines.push(format!(
            "dense baseline round {}: accuracy {:.4}, uploaded {}",
            d.round, d.accuracy, d.params_uploaded
        ));
    }
    finish(&mut artifacts, &log, "fed", &lines, &checks)?;
    Ok(FedOutcome {
        initial_accuracy,
        rounds,
        dense,
        checks,
    })
}
