//! Encoder, classifier and the two decoder modes.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::model::{
    patch_pixel_indices, CodecModel, Image, SemanticFeatures, IMAGE_PIXELS, N_PATCHES, PATCH_QUBITS,
};
use crate::error::{check_dim, Result};
use crate::qcore::{expect, param_shift_full, z_expectations, StateVector};

fn encoded_patch(patch: &[f64; PATCH_QUBITS]) -> Result<StateVector<f64>> {
    let angles: Vec<f64> = patch.iter().map(|x| std::f64::consts::PI * x).collect();
    StateVector::product_ry(&angles)
}

/// Runs every patch through angle encoding and the shared convolution circuit and
/// concatenates `⟨Z⟩` of the latent wires, patch-major.
pub fn encode(image: &Image, model: &CodecModel) -> Result<SemanticFeatures> {
    let circuit = model.ansatz.circuit();
    let obs = model.latent_observables();
    let mut values = Vec::with_capacity(model.latent_dim());
    for patch in image.patches() {
        let out = circuit.apply(&encoded_patch(&patch)?, &model.conv_params)?;
        for o in &obs {
            values.push(expect(&out, o)?);
        }
    }
    SemanticFeatures::new(values)
}

/// Features plus `∂feature/∂conv_param`, row per feature.
#[derive(Clone, Debug)]
pub struct EncodedWithJacobian {
    pub features: SemanticFeatures,
    pub jacobian: Vec<Vec<f64>>,
}

/// Latent values and their Jacobian rows for one patch.
type PatchEval = (Vec<f64>, Vec<Vec<f64>>);

/// Batch encoding with parameter-shift Jacobians. Identical patches within the batch
/// share one evaluation; results are independent of that sharing.
pub fn encode_batch_with_jacobian(
    images: &[&Image],
    model: &CodecModel,
) -> Result<Vec<EncodedWithJacobian>> {
    let circuit = model.ansatz.circuit();
    let obs = model.latent_observables();
    let mut memo: HashMap<[u64; PATCH_QUBITS], PatchEval> = HashMap::new();
    let mut out = Vec::with_capacity(images.len());
    for image in images {
        let mut values = Vec::with_capacity(model.latent_dim());
        let mut jacobian = Vec::with_capacity(model.latent_dim());
        for patch in image.patches() {
            let key = patch.map(f64::to_bits);
            let (vals, jac) = match memo.entry(key) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(param_shift_full(
                    &circuit,
                    &model.conv_params,
                    &encoded_patch(&patch)?,
                    &obs,
                )?),
            };
            values.extend_from_slice(vals);
            jacobian.extend(jac.iter().cloned());
        }
        out.push(EncodedWithJacobian {
            features: SemanticFeatures::new(values)?,
            jacobian,
        });
    }
    Ok(out)
}

/// Head logits; the predicted class is [`argmax`] of these.
pub fn classify(features: &SemanticFeatures, model: &CodecModel) -> Result<Vec<f64>> {
    model.head.forward(features.values())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Classical,
    QuantumInverse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub pixels: Vec<f64>,
    /// Received values that fell outside `[-1, 1]` and were clamped.
    pub clamped: usize,
}

/// Reconstructs an image from received latent values (possibly channel-corrupted).
pub fn decode(received: &[f64], model: &CodecModel, mode: DecodeMode) -> Result<Decoded> {
    check_dim(model.latent_dim(), received.len())?;
    let clamped = received
        .iter()
        .filter(|v| !(-1.0..=1.0).contains(*v))
        .count();
    let values: Vec<f64> = received
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) })
        .collect();
    let pixels = match mode {
        DecodeMode::Classical => model
            .decoder
            .forward(&values)?
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect(),
        DecodeMode::QuantumInverse => {
            let k = model.latent_wires.len();
            let mut pixels = vec![0.0; IMAGE_PIXELS];
            for p in 0..N_PATCHES {
                let patch = invert_patch(&values[p * k..(p + 1) * k], model)?;
                for (idx, v) in patch_pixel_indices(p).into_iter().zip(patch) {
                    pixels[idx] = v;
                }
            }
            pixels
        }
    };
    Ok(Decoded { pixels, clamped })
}

const FIT_TOL: f64 = 1e-30;
const FIT_MAX_ITERS: usize = 200;

/// Inverse transform for one patch.
///
/// The initial estimate re-prepares a product state whose `⟨Z⟩` match the received
/// latent values (unread wires at `⟨Z⟩ = 0`), runs the exact inverse circuit and reads
/// the recovered angles. That estimate is then refined by damped Gauss-Newton on the
/// forward map so the re-encoded patch reproduces the received values; with all four
/// wires read the fit is exact wherever the forward map is locally invertible.
pub fn invert_patch(latent: &[f64], model: &CodecModel) -> Result<[f64; PATCH_QUBITS]> {
    check_dim(model.latent_wires.len(), latent.len())?;
    let conv = model.ansatz.circuit();
    let mut angles = [std::f64::consts::FRAC_PI_2; PATCH_QUBITS];
    for (&w, &z) in model.latent_wires.iter().zip(latent) {
        angles[w] = z.clamp(-1.0, 1.0).acos();
    }
    let prepared = StateVector::product_ry(&angles)?;
    let unwound = conv.inverse().apply(&prepared, &model.conv_params)?;
    let mut start = [0.0; PATCH_QUBITS];
    for (x, z) in start.iter_mut().zip(z_expectations(&unwound)) {
        *x = z.clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
    }

    let forward = model.ansatz.pixel_circuit(&model.conv_params);
    let obs = model.latent_observables();
    let fit = |x: &[f64; PATCH_QUBITS]| -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let input = StateVector::basis(PATCH_QUBITS, 0)?;
        let (vals, jac) = param_shift_full(&forward, x, &input, &obs)?;
        let resid: Vec<f64> = vals.iter().zip(latent).map(|(v, t)| v - t).collect();
        Ok((resid.iter().map(|r| r * r).sum(), resid, jac))
    };

    let mut best = refine(start, &fit)?;
    if best.1 > 1e-20 && model.latent_wires.len() == PATCH_QUBITS {
        // fall back to a coarse multi-start when the first descent stalls
        const GRID: [f64; 3] = [1.0 / 6.0, 0.5, 5.0 / 6.0];
        for cell in 0..GRID.len().pow(PATCH_QUBITS as u32) {
            let mut x0 = [0.0; PATCH_QUBITS];
            let mut rest = cell;
            for x in x0.iter_mut() {
                *x = GRID[rest % GRID.len()];
                rest /= GRID.len();
            }
            let cand = refine(x0, &fit)?;
            if cand.1 < best.1 {
                best = cand;
            }
            if best.1 <= 1e-20 {
                break;
            }
        }
    }
    Ok(best.0)
}

/// Folds a coordinate back into `[0, 1]` by mirroring at the edges. Clamping would
/// park iterates on the edges, where the encoding's derivative vanishes.
fn reflect_unit(x: f64) -> f64 {
    let t = x.rem_euclid(2.0);
    if t > 1.0 {
        2.0 - t
    } else {
        t
    }
}

type FitFn<'a> = dyn Fn(&[f64; PATCH_QUBITS]) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> + 'a;

fn refine(mut x: [f64; PATCH_QUBITS], fit: &FitFn<'_>) -> Result<([f64; PATCH_QUBITS], f64)> {
    let (mut cost, mut resid, mut jac) = fit(&x)?;
    let mut damping = 1e-3;
    for _ in 0..FIT_MAX_ITERS {
        if cost <= FIT_TOL {
            break;
        }
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (row, r) in jac.iter().zip(&resid) {
            for a in 0..PATCH_QUBITS {
                jtr[a] += row[a] * r;
                for b in 0..PATCH_QUBITS {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut lhs = jtj;
            for a in 0..PATCH_QUBITS {
                lhs[(a, a)] += damping * (1.0 + jtj[(a, a)]);
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(-jtr))) else {
                damping *= 4.0;
                continue;
            };
            let mut cand = x;
            for (c, s) in cand.iter_mut().zip(step.iter()) {
                *c = reflect_unit(*c + s);
            }
            let (c_cost, c_resid, c_jac) = fit(&cand)?;
            if c_cost < cost {
                x = cand;
                cost = c_cost;
                resid = c_resid;
                jac = c_jac;
                damping = (damping / 5.0).max(1e-15);
                improved = true;
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok((x, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::model::{ConvAnsatz, N_CLASSES};
    use crate::qcore::{Circuit, Observable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng) -> Image {
        Image::new((0..IMAGE_PIXELS).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn constant_images_with_zero_params() {
        let m = CodecModel::zeros(ConvAnsatz::default(), vec![0, 1]).unwrap();
        let f = encode(&Image::new(vec![0.0; 64]).unwrap(), &m).unwrap();
        assert_eq!(f.dim(), 32);
        assert!(f.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        // all ones: every wire starts in |1⟩; the CNOT ring keeps Z-parities of
        // products of (−1)s, which for the two-layer ring on wires 0,1 is −1
        let f = encode(&Image::new(vec![1.0; 64]).unwrap(), &m).unwrap();
        assert!(
            f.values().iter().all(|&v| (v + 1.0).abs() < 1e-12),
            "{:?}",
            f.values()
        );
    }

    #[test]
    fn encode_matches_direct_statevector_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let image = random_image(&mut rng);
        let m = CodecModel::init(ConvAnsatz::default(), vec![1, 3], 5).unwrap();
        let f = encode(&image, &m).unwrap();
        // oracle: explicit angle-encoding circuit + ansatz applied to |0000⟩
        for p in 0..N_PATCHES {
            let px: Vec<f64> = patch_pixel_indices(p)
                .iter()
                .map(|&i| image.pixels()[i])
                .collect();
            let mut c = crate::qcore::angle_encode(&px).unwrap();
            let mut full = Circuit::with_params(4, m.ansatz.n_params()).unwrap();
            full.extend(&c).unwrap();
            full.extend(&m.ansatz.circuit()).unwrap();
            c = full;
            let out = c
                .apply(&StateVector::basis(4, 0).unwrap(), &m.conv_params)
                .unwrap();
            for (k, &w) in m.latent_wires.iter().enumerate() {
                let want = expect(&out, &Observable::z(w)).unwrap();
                assert!((f.values()[2 * p + k] - want).abs() < 1e-14);
            }
        }
        // determinism: bitwise identical
        assert_eq!(encode(&image, &m).unwrap(), f);
    }

    #[test]
    fn batch_jacobian_matches_plain_encode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng);
        let m = CodecModel::init(ConvAnsatz::default(), vec![0, 2], 1).unwrap();
        let batch = encode_batch_with_jacobian(&[&a, &a], &m).unwrap();
        assert_eq!(batch[0].features, encode(&a, &m).unwrap());
        assert_eq!(batch[0].jacobian.len(), 32);
        assert_eq!(batch[0].jacobian[0].len(), 16);
        assert_eq!(batch[0].jacobian, batch[1].jacobian);
    }

    #[test]
    fn classify_examples() {
        let mut m = CodecModel::zeros(ConvAnsatz::default(), vec![0, 1]).unwrap();
        let f = SemanticFeatures::new(vec![0.3; 32]).unwrap();
        let logits = classify(&f, &m).unwrap();
        assert_eq!(logits, vec![0.0; N_CLASSES]);
        assert_eq!(argmax(&logits), 0);
        m.head.bias[7] = 1.0;
        assert_eq!(argmax(&classify(&f, &m).unwrap()), 7);
        let short = SemanticFeatures::new(vec![0.3; 31]).unwrap();
        assert!(classify(&short, &m).is_err());
    }

    #[test]
    fn classical_decode_uses_bias_and_clamps() {
        let mut m = CodecModel::zeros(ConvAnsatz::default(), vec![0, 1]).unwrap();
        m.decoder.bias = vec![0.5; 64];
        let d = decode(&[0.0; 32], &m, DecodeMode::Classical).unwrap();
        assert_eq!(d.pixels, vec![0.5; 64]);
        assert_eq!(d.clamped, 0);
        let mut noisy = vec![0.0; 32];
        noisy[3] = 1.7;
        m.decoder.bias = vec![2.0; 64];
        let d = decode(&noisy, &m, DecodeMode::Classical).unwrap();
        assert_eq!(d.clamped, 1);
        assert!(d.pixels.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn quantum_inverse_full_readout_round_trip() {
        // zero conv params: the readout is an invertible sign-product map of cos(πx),
        // so away from x = 0.5 the patch is uniquely determined by its ⟨Z⟩ values
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = CodecModel::zeros(ConvAnsatz::default(), vec![0, 1, 2, 3]).unwrap();
        let image = Image::new(
            (0..IMAGE_PIXELS)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..0.4);
                    if rng.random::<bool>() {
                        1.0 - v
                    } else {
                        v
                    }
                })
                .collect(),
        )
        .unwrap();
        let f = encode(&image, &m).unwrap();
        let d = decode(f.values(), &m, DecodeMode::QuantumInverse).unwrap();
        let worst = d
            .pixels
            .iter()
            .zip(image.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-8, "worst pixel error {worst}");
    }

    #[test]
    fn quantum_inverse_full_readout_reproduces_received_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut m = CodecModel::init(ConvAnsatz::default(), vec![0, 1, 2, 3], 4).unwrap();
        for p in m.conv_params.iter_mut() {
            *p = rng.random_range(-1.5..1.5);
        }
        let image = Image::new(
            (0..IMAGE_PIXELS)
                .map(|_| rng.random_range(0.05..0.95))
                .collect(),
        )
        .unwrap();
        let f = encode(&image, &m).unwrap();
        let d = decode(f.values(), &m, DecodeMode::QuantumInverse).unwrap();
        let again = encode(&Image::new(d.pixels).unwrap(), &m).unwrap();
        for (a, b) in again.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn quantum_inverse_partial_readout_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = CodecModel::init(ConvAnsatz::default(), vec![0, 1], 4).unwrap();
        let image = random_image(&mut rng);
        let f = encode(&image, &m).unwrap();
        let d = decode(f.values(), &m, DecodeMode::QuantumInverse).unwrap();
        assert!(d.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        // the recovered image re-encodes to the received latent values
        let again = encode(&Image::new(d.pixels).unwrap(), &m).unwrap();
        for (a, b) in again.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
