use std::path::Path;

use qv2x::channel::{draw_fading, transmit, ChannelState, KnowledgeBase, Link, ProtocolMode};
use qv2x::codec::{
    argmax, classify, decode, encode, pixel_distribution, reconstruction_distribution,
    relative_entropy, train_epoch, Checkpoint, CheckpointMeta, CodecModel, OptimizerState,
    SemanticFeatures, TrainHyper,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{codec_model, finish, Check};
use crate::artifact::{num, Artifacts, RunLog};
use crate::config::ScenarioConfig;
use crate::data::Digits;
use crate::error::{Result, SimError};

/// Mean distortion of one sweep point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub mse: f64,
    pub relative_entropy: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct LinkOutcome {
    pub noiseless: SnrPoint,
    pub sweep: Vec<SnrPoint>,
    pub checks: Vec<Check>,
}

/// Number of adjacent pairs where the value goes up as SNR increases.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

fn obtain_codec(
    cfg: &ScenarioConfig,
    digits: &Digits,
    log: &mut RunLog,
) -> Result<(CodecModel, bool)> {
    if let Some(path) = &cfg.link.checkpoint {
        let ckpt = Checkpoint::load(path)
            .map_err(|e| SimError::Data(format!("checkpoint {}: {e}", path.display())))?;
        return Ok((ckpt.model()?, false));
    }
    if !cfg.link.train {
        return Err(SimError::Config(
            "link.checkpoint is not set and link.train is false".into(),
        ));
    }
    let mut model = codec_model(cfg)?;
    let hyper = TrainHyper {
        lambda: cfg.link.lambda,
        ..cfg.codec.hyper()
    };
    let mut opt = OptimizerState::new(hyper.optimizer, model.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    for epoch in 1..=cfg.link.epochs {
        let loss = train_epoch(&mut model, &digits.train, &mut opt, &hyper, &mut rng)?;
        log.record("train", epoch as u64, "train_loss", loss);
    }
    Ok((model, true))
}

fn distortion(
    model: &CodecModel,
    images: &[(Vec<f64>, usize)],
    received: &[SemanticFeatures],
    cfg: &ScenarioConfig,
) -> Result<(f64, f64, f64)> {
    let (mut mse, mut re, mut acc) = (0.0, 0.0, 0.0);
    for ((pixels, label), rx) in images.iter().zip(received) {
        let recon = decode(rx.values(), model, cfg.link.decode)?.pixels;
        mse += pixels
            .iter()
            .zip(&recon)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / pixels.len() as f64;
        re += relative_entropy(
            &pixel_distribution(pixels)?,
            &reconstruction_distribution(&recon),
        )?;
        if argmax(&classify(rx, model)?) == *label {
            acc += 1.0;
        }
    }
    let n = images.len().max(1) as f64;
    Ok((mse / n, re / n, acc / n))
}

/// Sends the test images' latent features through a block-fading channel at each
/// SNR of the sweep and measures reconstruction distortion. Every sweep point reuses
/// the same fading and noise draws (scaled by its SNR), so points differ only in SNR.
/// Then runs one adaptive link per RSU and exports its channel trace.
pub fn run_semantic_link(cfg: &ScenarioConfig, out: &Path) -> Result<LinkOutcome> {
    let digits = Digits::load(cfg.dataset_path()?, cfg.seed)?;
    let hash = cfg.hash();
    let mut artifacts = Artifacts::create(out, &hash)?;
    let mut log = RunLog::new("semantic-link", &hash);
    let (model, trained) = obtain_codec(cfg, &digits, &mut log)?;
    if trained {
        let meta = CheckpointMeta {
            seed: cfg.seed,
            epoch: cfg.link.epochs,
            hyper: TrainHyper {
                lambda: cfg.link.lambda,
                ..cfg.codec.hyper()
            },
            config_hash: hash.clone(),
        };
        artifacts.raw(
            "codec_checkpoint.json",
            &Checkpoint::new(&model, meta).to_json(),
        )?;
    }

    let n = match cfg.link.samples {
        0 => digits.test.len(),
        k => k.min(digits.test.len()),
    };
    let test = &digits.test[..n];
    let features: Vec<SemanticFeatures> = test
        .iter()
        .map(|s| encode(&s.image, &model))
        .collect::<qv2x::Result<_>>()?;
    let images: Vec<(Vec<f64>, usize)> = test
        .iter()
        .map(|s| (s.image.pixels().to_vec(), s.label))
        .collect();

    let (mse, re, acc) = distortion(&model, &images, &features, cfg)?;
    let noiseless = SnrPoint {
        snr_db: f64::INFINITY,
        mse,
        relative_entropy: re,
        accuracy: acc,
    };

    let mut sweep = Vec::new();
    for (i, &snr_db) in cfg.link.snrs_db.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
        let received: Vec<SemanticFeatures> = features
            .iter()
            .map(|f| {
                let mut state = ChannelState::new(snr_db, draw_fading(&mut rng), 1)?;
                transmit(f, &mut state, &mut rng)
            })
            .collect::<qv2x::Result<_>>()?;
        let (mse, re, acc) = distortion(&model, &images, &received, cfg)?;
        log.record("sweep", i as u64, "mse", mse);
        log.record("sweep", i as u64, "relative_entropy", re);
        sweep.push(SnrPoint {
            snr_db,
            mse,
            relative_entropy: re,
            accuracy: acc,
        });
    }
    let rows = sweep.iter().map(|p| {
        format!(
            "{},{},{},{}",
            p.snr_db,
            num(p.mse),
            num(p.relative_entropy),
            num(p.accuracy)
        )
    });
    artifacts.csv(
        "distortion_vs_snr.csv",
        "snr_db,mse,relative_entropy,accuracy",
        rows,
    )?;

    let train_features: Vec<SemanticFeatures> = digits
        .train
        .iter()
        .map(|s| encode(&s.image, &model))
        .collect::<qv2x::Result<_>>()?;
    let chunk = cfg.codec.latent_wires.len();
    let chunks: Vec<Vec<f64>> = train_features
        .iter()
        .flat_map(|f| {
            f.values()
                .chunks(chunk)
                .map(<[f64]>::to_vec)
                .collect::<Vec<_>>()
        })
        .collect();
    let kb = KnowledgeBase::from_kmeans(
        &chunks,
        cfg.link.kb_prototypes,
        50,
        cfg.link.kb_match_tol,
        cfg.seed,
    )?;

    let mut link_lines = Vec::new();
    for rsu in 0..cfg.n_rsus {
        let seed = cfg.seed.wrapping_add(100 + rsu as u64);
        let mut link = Link::new(
            cfg.channel.initial_state()?,
            cfg.channel.dynamics(),
            cfg.channel.thresholds.clone(),
            seed,
        )?;
        let mut rows = Vec::new();
        let (mut high, mut tokens, mut err) = (0usize, 0usize, 0.0);
        for step in 0..cfg.channel.trace_steps {
            link.advance();
            log.record("channel", step as u64, "snr_db", link.state().snr_db);
            let f = &features[step % features.len()];
            let (rx, report) = link.send(f, Some(&kb))?;
            log.record(
                "transmit",
                step as u64,
                "payload_dims",
                report.payload_dims_sent as f64,
            );
            if link.state().protocol_mode == ProtocolMode::HighRate {
                high += 1;
            }
            tokens += report.tokens_substituted;
            err += f
                .values()
                .iter()
                .zip(&rx)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / rx.len() as f64;
            let r = link.trace_row();
            rows.push(format!(
                "{},{},{},{},{},{}",
                r.step,
                num(r.snr_db),
                num(r.re_h),
                num(r.im_h),
                num(r.capacity),
                r.protocol_mode
            ));
        }
        artifacts.csv(
            &format!("channel_trace_rsu{rsu}.csv"),
            "step,snr_db,re_h,im_h,capacity,protocol_mode",
            rows,
        )?;
        let steps = cfg.channel.trace_steps.max(1) as f64;
        link_lines.push(format!(
            "rsu {rsu}: high-rate share {:.3}, tokens per message {:.2}, feature mse {:.5}",
            high as f64 / steps,
            tokens as f64 / steps,
            err / steps
        ));
    }

    let mut checks = Vec::new();
    if let (Some(lo), Some(hi)) = (
        sweep.iter().min_by(|a, b| a.snr_db.total_cmp(&b.snr_db)),
        sweep.iter().max_by(|a, b| a.snr_db.total_cmp(&b.snr_db)),
    ) {
        let mut by_snr = sweep.clone();
        by_snr.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        let mse: Vec<f64> = by_snr.iter().map(|p| p.mse).collect();
        let re: Vec<f64> = by_snr.iter().map(|p| p.relative_entropy).collect();
        checks.push(Check::new(
            "distortion falls from lowest to highest SNR",
            hi.mse < lo.mse && hi.relative_entropy < lo.relative_entropy,
            format!(
                "mse {:.5} → {:.5}, relative entropy {:.5} → {:.5}",
                lo.mse, hi.mse, lo.relative_entropy, hi.relative_entropy
            ),
        ));
        checks.push(Check::new(
            "distortion non-increasing with at most one inversion",
            inversions(&mse) <= 1 && inversions(&re) <= 1,
            format!(
                "inversions: mse {}, relative entropy {}",
                inversions(&mse),
                inversions(&re)
            ),
        ));
    }
    let mut lines = vec![
        format!("config_hash: {hash}"),
        format!(
            "codec: {}",
            if trained {
                "trained in this run"
            } else {
                "loaded from checkpoint"
            }
        ),
        format!("test images: {n}"),
        format!(
            "noiseless: mse {:.5}, relative entropy {:.5}, accuracy {:.4}",
            noiseless.mse, noiseless.relative_entropy, noiseless.accuracy
        ),
    ];
    for p in &sweep {
        lines.push(format!(
            "{:>5} dB: mse {:.5}, relative entropy {:.5}, accuracy {:.4}",
            p.snr_db, p.mse, p.relative_entropy, p.accuracy
        ));
    }
    lines.extend(link_lines);
    finish(&mut artifacts, &log, "semantic-link", &lines, &checks)?;
    Ok(LinkOutcome {
        noiseless,
        sweep,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_count() {
        assert_eq!(inversions(&[5.0, 4.0, 3.0]), 0);
        assert_eq!(inversions(&[5.0, 6.0, 3.0, 3.5]), 2);
        assert_eq!(inversions(&[1.0]), 0);
    }
}
