//! Hybrid loss: cross-entropy of the head plus λ-weighted relative-entropy distortion
//! of the classical reconstruction, with analytic gradients for the classical weights
//! and parameter-shift gradients for the convolution circuit.

use serde::{Deserialize, Serialize};

use super::entropy::{normalize, relative_entropy, smooth};
use super::model::{CodecModel, Dense, Image, IMAGE_PIXELS};
use super::pipeline::{encode, encode_batch_with_jacobian};
use crate::error::{Error, Result};

/// Labeled training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub distortion: f64,
}

/// Gradient accumulator for the two dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub head: Dense,
    pub decoder: Dense,
}

impl DenseGrads {
    pub fn zeros_like(model: &CodecModel) -> Self {
        Self {
            head: Dense::zeros(model.head.rows, model.head.cols),
            decoder: Dense::zeros(model.decoder.rows, model.decoder.cols),
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "distortion weight λ = {lambda} must be ≥ 0"
        )));
    }
    Ok(())
}

/// Pixel intensities as a probability vector.
pub fn pixel_distribution(pixels: &[f64]) -> Result<Vec<f64>> {
    normalize(pixels).ok_or_else(|| Error::Domain("image has zero total intensity".into()))
}

/// Reconstruction distribution; an all-zero reconstruction reads as uniform.
pub fn reconstruction_distribution(recon: &[f64]) -> Vec<f64> {
    normalize(recon).unwrap_or_else(|| vec![1.0 / recon.len() as f64; recon.len()])
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Loss terms of one sample given its latent features; accumulates `scale·∂/∂weights`
/// into `grads` and returns `scale·∂/∂features`.
#[allow(clippy::too_many_arguments)]
pub fn sample_backward(
    features: &[f64],
    pixels: &[f64],
    label: usize,
    head: &Dense,
    decoder: &Dense,
    lambda: f64,
    scale: f64,
    grads: Option<&mut DenseGrads>,
) -> Result<(f64, f64, Vec<f64>)> {
    if label >= head.rows {
        return Err(Error::Domain(format!(
            "label {label} outside 0..{}",
            head.rows
        )));
    }
    let logits = head.forward(features)?;
    let logp = log_softmax(&logits);
    let ce = -logp[label];
    let mut g_logits: Vec<f64> = logp.iter().map(|l| scale * l.exp()).collect();
    g_logits[label] -= scale;
    let mut d_features = head.backward_input(&g_logits);

    let mut distortion = 0.0;
    let mut g_out = vec![0.0; decoder.rows];
    if lambda > 0.0 {
        let p = pixel_distribution(pixels)?;
        let y = decoder.forward(features)?;
        let r: Vec<f64> = y.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mass: f64 = r.iter().sum();
        distortion = relative_entropy(&p, &reconstruction_distribution(&r))?;
        if mass > 0.0 {
            let q = smooth(&r.iter().map(|v| v / mass).collect::<Vec<_>>());
            let denom = mass * (1.0 + IMAGE_PIXELS as f64 * super::entropy::SMOOTHING_EPS);
            let cross: f64 = p
                .iter()
                .zip(&q)
                .zip(&r)
                .map(|((pi, qi), ri)| pi * ri / (qi * mass))
                .sum();
            for j in 0..r.len() {
                let inside = y[j] > 0.0 && y[j] < 1.0;
                if inside {
                    g_out[j] = scale * lambda * (-p[j] / q[j] + cross) / denom;
                }
            }
            for (d, g) in d_features.iter_mut().zip(decoder.backward_input(&g_out)) {
                *d += g;
            }
        }
    }

    if let Some(grads) = grads {
        accumulate(&mut grads.head, &g_logits, features);
        if lambda > 0.0 {
            accumulate(&mut grads.decoder, &g_out, features);
        }
    }
    Ok((ce, distortion, d_features))
}

fn accumulate(dst: &mut Dense, g_out: &[f64], x: &[f64]) {
    for ((row, b), g) in dst
        .weights
        .chunks_mut(dst.cols)
        .zip(&mut dst.bias)
        .zip(g_out)
    {
        if *g == 0.0 {
            continue;
        }
        *b += g;
        for (w, xi) in row.iter_mut().zip(x) {
            *w += g * xi;
        }
    }
}

/// Mean cross-entropy plus `λ ·` mean relative-entropy distortion over the batch.
pub fn codec_loss(batch: &[&Sample], model: &CodecModel, lambda: f64) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut out = LossBreakdown::default();
    for s in batch {
        let f = encode(&s.image, model)?;
        let (ce, d, _) = sample_backward(
            f.values(),
            s.image.pixels(),
            s.label,
            &model.head,
            &model.decoder,
            lambda,
            scale,
            None,
        )?;
        out.cross_entropy += scale * ce;
        out.distortion += scale * d;
    }
    out.total = out.cross_entropy + lambda * out.distortion;
    Ok(out)
}

/// Loss with its gradient in [`CodecModel::flat_params`] order.
pub fn codec_loss_grad(
    batch: &[&Sample],
    model: &CodecModel,
    lambda: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_lambda(lambda)?;
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let images: Vec<&Image> = batch.iter().map(|s| &s.image).collect();
    let encoded = encode_batch_with_jacobian(&images, model)?;
    let mut grads = DenseGrads::zeros_like(model);
    let mut conv_grad = vec![0.0; model.conv_params.len()];
    let mut out = LossBreakdown::default();
    for (s, enc) in batch.iter().zip(&encoded) {
        let (ce, d, d_features) = sample_backward(
            enc.features.values(),
            s.image.pixels(),
            s.label,
            &model.head,
            &model.decoder,
            lambda,
            scale,
            Some(&mut grads),
        )?;
        out.cross_entropy += scale * ce;
        out.distortion += scale * d;
        for (df, row) in d_features.iter().zip(&enc.jacobian) {
            for (g, j) in conv_grad.iter_mut().zip(row) {
                *g += df * j;
            }
        }
    }
    out.total = out.cross_entropy + lambda * out.distortion;
    let mut flat = conv_grad;
    flat.extend_from_slice(&grads.head.weights);
    flat.extend_from_slice(&grads.head.bias);
    flat.extend_from_slice(&grads.decoder.weights);
    flat.extend_from_slice(&grads.decoder.bias);
    Ok((out, flat))
}
