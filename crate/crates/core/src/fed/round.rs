use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dual::{dense_loss_grad, local_update, recombine, split_dual, EncodedSample};
use super::lowrank::{codec_matrices, LowRankModel};
use super::secure::{aggregate, mask_update, reverse_correct, MaskedUpdate, SeedBook};
use crate::codec::{argmax, CodecModel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub rounds: usize,
    /// Minibatch gradient steps per client per round.
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Distortion weight in the local task loss.
    pub lambda: f64,
    /// Energy threshold for client-side compression (uploads, reverse correction).
    pub client_tau: f64,
    /// Energy threshold for the cloud's re-decomposition of the aggregate.
    pub cloud_tau: f64,
    pub r_max: usize,
    /// Weight of the global model in reverse correction.
    pub alpha: f64,
    /// Base for the pairwise mask seeds.
    pub mask_seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            local_steps: 20,
            batch_size: 32,
            lr: 0.5,
            lambda: 0.0,
            client_tau: 0.95,
            cloud_tau: 1.0,
            r_max: 16,
            alpha: 0.8,
            mask_seed: 0x5eed,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 || self.batch_size == 0 || self.r_max == 0 {
            return Err(Error::Domain(
                "local_steps, batch_size and r_max must be ≥ 1".into(),
            ));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() || !(self.lambda >= 0.0) {
            return Err(Error::Domain("lr and lambda must be finite and ≥ 0".into()));
        }
        for tau in [self.client_tau, self.cloud_tau] {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::Domain(format!(
                    "energy threshold {tau} outside (0, 1]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("α = {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// One row of the round metrics table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub accuracy: f64,
    pub params_uploaded: usize,
    /// Uploaded parameters over the dense parameter count of the same uploads.
    pub compression_ratio: f64,
    pub wall_ms: u64,
}

/// Top-1 accuracy of `model` on precomputed features.
pub fn accuracy(model: &CodecModel, data: &[EncodedSample]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for e in data {
        if argmax(&model.head.forward(&e.features)?) == e.sample.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

fn client_rng(seed: u64, id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (u64::from(id) << 32 | 0x9e37))
}

/// Minibatches for one round: a fresh shuffle, chunked, cycled to `steps`.
fn round_batches<'a>(
    data: &'a [EncodedSample],
    batch: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<&'a EncodedSample>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let chunks: Vec<Vec<&EncodedSample>> = order
        .chunks(batch)
        .map(|c| c.iter().map(|&i| &data[i]).collect())
        .collect();
    (0..steps)
        .map(|t| chunks[t % chunks.len()].clone())
        .collect()
}

#[derive(Clone, Debug)]
pub struct FedClient {
    pub id: u32,
    pub local: LowRankModel,
    pub data: Vec<EncodedSample>,
    rng: ChaCha8Rng,
}

impl FedClient {
    pub fn new(id: u32, data: Vec<EncodedSample>, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Domain(format!("client {id} has no data")));
        }
        Ok(Self {
            id,
            local: LowRankModel {
                layers: Vec::new(),
                round: 0,
                client_id: id,
            },
            data,
            rng: client_rng(seed, id),
        })
    }
}

/// Aggregation server: the global low-rank model, the shared codec template that
/// fixes the convolution circuit, and the mask roster.
#[derive(Clone, Debug)]
pub struct FedCloud {
    pub global: LowRankModel,
    pub template: CodecModel,
    pub roster: Vec<u32>,
    pub seeds: SeedBook,
}

impl FedCloud {
    /// Compresses `template` into the initial global model and hands a copy to
    /// every client.
    pub fn broadcast(
        template: CodecModel,
        clients: &mut [FedClient],
        cfg: &FedConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        template.validate()?;
        let global = LowRankModel::from_codec(&template, cfg.cloud_tau, cfg.r_max)?;
        let mut roster: Vec<u32> = clients.iter().map(|c| c.id).collect();
        roster.sort_unstable();
        for c in clients.iter_mut() {
            c.local = LowRankModel {
                client_id: c.id,
                ..global.clone()
            };
        }
        let seeds = SeedBook::derive(cfg.mask_seed, &roster);
        Ok(Self {
            global,
            template,
            roster,
            seeds,
        })
    }

    pub fn global_codec(&self) -> Result<CodecModel> {
        self.global.to_codec(&self.template)
    }
}

/// One round: every client splits its model, trains the core factors, uploads a
/// masked update; the cloud aggregates; every client reverse-corrects towards
/// the new global model.
pub fn fed_round(
    cloud: &mut FedCloud,
    clients: &mut [FedClient],
    cfg: &FedConfig,
    test: &[EncodedSample],
) -> Result<RoundMetrics> {
    cfg.validate()?;
    if clients.len() < 2 {
        return Err(Error::Protocol(
            "a federated round needs at least 2 clients".into(),
        ));
    }
    let round = cloud.global.round + 1;
    let mut trained = Vec::with_capacity(clients.len());
    for c in clients.iter_mut() {
        let batches = round_batches(&c.data, cfg.batch_size, cfg.local_steps, &mut c.rng);
        let split = split_dual(&c.local)?;
        let updated = local_update(
            &split,
            &batches,
            &cloud.template,
            cfg.local_steps,
            cfg.lr,
            cfg.lambda,
        )?;
        let mut model = recombine(&updated)?;
        model.round = round;
        trained.push(model);
    }
    // Masks cancel only between equal-length vectors, so the roster agrees on the
    // largest rank per layer and every upload is zero-padded to it.
    let ranks: Vec<usize> = (0..trained[0].layers.len())
        .map(|i| trained.iter().map(|m| m.layers[i].rank).max().unwrap_or(0))
        .collect();
    let mut uploads: Vec<MaskedUpdate> = Vec::with_capacity(clients.len());
    for (c, model) in clients.iter().zip(&trained) {
        uploads.push(mask_update(
            &model.padded(&ranks)?,
            c.id,
            &cloud.roster,
            &cloud.seeds,
            round,
        )?);
    }
    let weights: Vec<f64> = clients.iter().map(|c| c.data.len() as f64).collect();
    let mut global = aggregate(&uploads, &weights, &cloud.roster, cfg.cloud_tau, cfg.r_max)?;
    global.round = round;
    global.client_id = 0;
    cloud.global = global;
    for (c, model) in clients.iter_mut().zip(&trained) {
        c.local = reverse_correct(&cloud.global, model, cfg.alpha, cfg.client_tau, cfg.r_max)?;
    }

    let params_uploaded: usize = uploads.iter().map(|u| u.factors.len()).sum();
    let dense: usize = trained.iter().map(LowRankModel::dense_len).sum();
    Ok(RoundMetrics {
        round,
        accuracy: accuracy(&cloud.global_codec()?, test)?,
        params_uploaded,
        compression_ratio: params_uploaded as f64 / dense as f64,
        wall_ms: 0,
    })
}

/// Uncompressed FedAvg with the same batching and local steps, for comparison.
pub fn dense_fedavg(
    template: &CodecModel,
    client_data: &[(u32, Vec<EncodedSample>)],
    cfg: &FedConfig,
    seed: u64,
    test: &[EncodedSample],
) -> Result<Vec<RoundMetrics>> {
    cfg.validate()?;
    if client_data.len() < 2 {
        return Err(Error::Protocol(
            "a federated round needs at least 2 clients".into(),
        ));
    }
    let mut rngs: Vec<ChaCha8Rng> = client_data
        .iter()
        .map(|(id, _)| client_rng(seed, *id))
        .collect();
    let mut global = template.clone();
    let total: f64 = client_data.iter().map(|(_, d)| d.len() as f64).sum();
    let mut out = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds as u64 {
        let mut acc: Vec<DMatrix<f64>> = codec_matrices(&global).iter().map(|m| m * 0.0).collect();
        let mut uploaded = 0;
        for ((_, data), rng) in client_data.iter().zip(&mut rngs) {
            let batches = round_batches(data, cfg.batch_size, cfg.local_steps, rng);
            let mut local = global.clone();
            for batch in &batches {
                dense_step(&mut local, batch, cfg.lr, cfg.lambda)?;
            }
            let w = data.len() as f64 / total;
            for (a, m) in acc.iter_mut().zip(codec_matrices(&local)) {
                *a += m * w;
                uploaded += a.len();
            }
        }
        for (dense, w) in [&mut global.head, &mut global.decoder]
            .into_iter()
            .zip(&acc)
        {
            dense.set_augmented(&row_major(w))?;
        }
        out.push(RoundMetrics {
            round,
            accuracy: accuracy(&global, test)?,
            params_uploaded: uploaded,
            compression_ratio: 1.0,
            wall_ms: 0,
        });
    }
    Ok(out)
}

/// One full gradient step on the dense head and decoder.
fn dense_step(
    model: &mut CodecModel,
    batch: &[&EncodedSample],
    lr: f64,
    lambda: f64,
) -> Result<()> {
    let (loss, grads) = dense_loss_grad(model, batch, lambda)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("local loss {loss}")));
    }
    for (dense, g) in [&mut model.head, &mut model.decoder].into_iter().zip(grads) {
        let mut w = DMatrix::from_row_slice(dense.rows, dense.cols + 1, &dense.augmented());
        w -= g * lr;
        dense.set_augmented(&row_major(&w))?;
    }
    Ok(())
}

/// Cloud-side warm start of the broadcast template: `steps` full-batch dense
/// gradient steps on the head and decoder over `data`.
pub fn warm_start(
    template: &CodecModel,
    data: &[EncodedSample],
    steps: usize,
    lr: f64,
    lambda: f64,
) -> Result<CodecModel> {
    let mut model = template.clone();
    if steps == 0 {
        return Ok(model);
    }
    if data.is_empty() {
        return Err(Error::Domain("warm start needs data".into()));
    }
    let batch: Vec<&EncodedSample> = data.iter().collect();
    for _ in 0..steps {
        dense_step(&mut model, &batch, lr, lambda)?;
    }
    Ok(model)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>())
        .collect()
}
