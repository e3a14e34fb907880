use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lowrank::{reconstruct, svd, LayerFactors, LowRankModel};
use crate::codec::{encode, sample_backward, CodecModel, DenseGrads, Sample};
use crate::error::{check_dim, Error, Result};

/// Per-layer partition of the singular triplets: `core` holds the leading
/// `⌈r/2⌉` (trained locally), `auxiliary` the rest (frozen within a round).
/// Relative floor on singular values inside the step preconditioner.
const PRECONDITION_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSplit {
    pub core: Vec<LayerFactors>,
    pub auxiliary: Vec<LayerFactors>,
    pub round: u64,
    pub client_id: u32,
}

pub fn split_dual(model: &LowRankModel) -> Result<DualSplit> {
    let mut core = Vec::with_capacity(model.layers.len());
    let mut auxiliary = Vec::with_capacity(model.layers.len());
    for (i, l) in model.layers.iter().enumerate() {
        if l.rank == 0 {
            return Err(Error::Domain(format!("layer {i} has rank 0")));
        }
        let k = l.rank.div_ceil(2);
        core.push(l.slice(0..k));
        auxiliary.push(l.slice(k..l.rank));
    }
    Ok(DualSplit {
        core,
        auxiliary,
        round: model.round,
        client_id: model.client_id,
    })
}

pub fn recombine(split: &DualSplit) -> Result<LowRankModel> {
    check_dim(split.core.len(), split.auxiliary.len())?;
    let layers = split
        .core
        .iter()
        .zip(&split.auxiliary)
        .map(|(c, a)| c.concat(a))
        .collect::<Result<_>>()?;
    Ok(LowRankModel {
        layers,
        round: split.round,
        client_id: split.client_id,
    })
}

/// A training sample with its latent features precomputed; the convolution
/// circuit is shared and fixed during federated rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub features: Vec<f64>,
    pub sample: Sample,
}

pub fn encode_samples(samples: &[Sample], model: &CodecModel) -> Result<Vec<EncodedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(EncodedSample {
                features: encode(&s.image, model)?.into_values(),
                sample: s.clone(),
            })
        })
        .collect()
}

/// Mean codec loss over `batch` and its gradient with respect to each augmented
/// weight matrix of `model` (head, decoder).
pub fn dense_loss_grad(
    model: &CodecModel,
    batch: &[&EncodedSample],
    lambda: f64,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = DenseGrads::zeros_like(model);
    let mut loss = 0.0;
    for e in batch {
        let (ce, d, _) = sample_backward(
            &e.features,
            e.sample.image.pixels(),
            e.sample.label,
            &model.head,
            &model.decoder,
            lambda,
            scale,
            Some(&mut grads),
        )?;
        loss += scale * (ce + lambda * d);
    }
    let mats = [&grads.head, &grads.decoder]
        .iter()
        .map(|g| DMatrix::from_row_slice(g.rows, g.cols + 1, &g.augmented()))
        .collect();
    Ok((loss, mats))
}

/// Orthonormalizes the columns of `core` against the fixed orthonormal columns of
/// `fixed` and each other (modified Gram–Schmidt, i.e. the Q factor of a QR
/// decomposition with positive diagonal).
/// Thin QR of `p` after projecting out the orthonormal columns of `fixed`:
/// returns `Q` (orthonormal, orthogonal to `fixed`) and upper-triangular `R`
/// with `Q·R = (I − F·Fᵀ)·p`. A column that vanishes gets an arbitrary
/// orthogonal completion and a zero diagonal entry.
fn project_qr(p: &DMatrix<f64>, fixed: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, k) = p.shape();
    let mut q = DMatrix::zeros(m, k);
    let mut r = DMatrix::zeros(k, k);
    let scale = p.norm().max(1.0);
    let project_fixed = |col: &mut nalgebra::DVector<f64>| {
        for _ in 0..2 {
            for f in fixed.column_iter() {
                *col -= f * f.dot(col);
            }
        }
    };
    for j in 0..k {
        let mut col = p.column(j).clone_owned();
        project_fixed(&mut col);
        for i in 0..j {
            let c = q.column(i).dot(&col);
            r[(i, j)] += c;
            col -= q.column(i) * c;
        }
        let norm = col.norm();
        if norm > 1e-12 * scale {
            r[(j, j)] = norm;
            q.set_column(j, &(col / norm));
            continue;
        }
        let completion = (0..m).find_map(|e| {
            let mut c = nalgebra::DVector::zeros(m);
            c[e] = 1.0;
            project_fixed(&mut c);
            for i in 0..j {
                let qi = q.column(i).clone_owned();
                c -= &qi * qi.dot(&c);
            }
            let n = c.norm();
            (n > 0.5).then(|| c / n)
        });
        let c = completion
            .ok_or_else(|| Error::Domain("core rank exceeds the free dimension".into()))?;
        q.set_column(j, &c);
    }
    Ok((q, r))
}

/// One scaled gradient step on the core triplets of a layer given `G = ∂L/∂W`.
/// The core is written as balanced factors `L = U·√S`, `R = V·√S` and each factor
/// takes a gradient step preconditioned by the other's Gram matrix
/// (`LᵀL = RᵀR = S`): `L ← L − η·G·R·S⁻¹`, `R ← R − η·Gᵀ·L·S⁻¹`. The result is
/// brought back to orthonormal `U`, `V` orthogonal to the auxiliary columns
/// (QR, then an SVD of the small `R_L·R_Rᵀ`).
pub fn core_step(
    core: &LayerFactors,
    auxiliary: &LayerFactors,
    grad: &DMatrix<f64>,
    lr: f64,
) -> Result<LayerFactors> {
    if grad.shape() != (core.rows, core.cols) {
        return Err(Error::Dimension {
            expected: core.rows * core.cols,
            got: grad.len(),
        });
    }
    if core.rank == 0 {
        return Ok(core.clone());
    }
    let u = core.u_matrix();
    let v = core.v_matrix();
    let gv = grad * &v;
    let gtu = grad.transpose() * &u;
    let floor = PRECONDITION_FLOOR * core.s[0].max(1.0);
    let mut l = u.clone();
    let mut r = v.clone();
    for (k, &s) in core.s.iter().enumerate() {
        let step = lr / s.max(floor).sqrt();
        l.set_column(k, &(u.column(k) * s.sqrt() - gv.column(k) * step));
        r.set_column(k, &(v.column(k) * s.sqrt() - gtu.column(k) * step));
    }
    let (ql, rl) = project_qr(&l, &auxiliary.u_matrix())?;
    let (qr, rr) = project_qr(&r, &auxiliary.v_matrix())?;
    let (x, sigma, y) = svd(&(rl * rr.transpose()))?;
    let row_major = |m: &DMatrix<f64>| -> Vec<f64> {
        (0..m.nrows())
            .flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>())
            .collect()
    };
    Ok(LayerFactors {
        rows: core.rows,
        cols: core.cols,
        rank: core.rank,
        u: row_major(&(ql * x)),
        s: sigma,
        v: row_major(&(qr * y)),
    })
}

/// Gradient descent on the core factors only, `steps` minibatch steps cycling
/// through `batches`. The loss is the codec task loss of `template` with its head
/// and decoder replaced by the reconstructed weights.
pub fn local_update(
    split: &DualSplit,
    batches: &[Vec<&EncodedSample>],
    template: &CodecModel,
    steps: usize,
    lr: f64,
    lambda: f64,
) -> Result<DualSplit> {
    if steps == 0 {
        return Err(Error::Domain("local_update needs steps ≥ 1".into()));
    }
    if batches.is_empty() || batches.iter().any(Vec::is_empty) {
        return Err(Error::Domain("local_update needs non-empty batches".into()));
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Domain(format!(
            "learning rate {lr} must be finite and ≥ 0"
        )));
    }
    let mut out = split.clone();
    for t in 0..steps {
        let model = recombine(&out)?.to_codec(template)?;
        let (loss, grads) = dense_loss_grad(&model, &batches[t % batches.len()], lambda)?;
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("local loss {loss}")));
        }
        for ((core, aux), g) in out.core.iter_mut().zip(&out.auxiliary).zip(&grads) {
            *core = core_step(core, aux, g, lr)?;
        }
    }
    Ok(out)
}

/// Reconstruction of a split without recombining.
pub fn reconstruct_split(split: &DualSplit) -> Vec<DMatrix<f64>> {
    split
        .core
        .iter()
        .zip(&split.auxiliary)
        .map(|(c, a)| reconstruct(c) + reconstruct(a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{ConvAnsatz, Image};
    use crate::fed::lowrank::decompose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn toy_data(model: &CodecModel, n: usize) -> Vec<EncodedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<Sample> = (0..n)
            .map(|i| Sample {
                image: Image::new((0..64).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap(),
                label: i % 10,
            })
            .collect();
        encode_samples(&samples, model).unwrap()
    }

    #[test]
    fn split_sizes() {
        let one = LowRankModel::from_matrices(&[random(3, 3, 1)], 1.0, 1).unwrap();
        let s = split_dual(&one).unwrap();
        assert_eq!((s.core[0].rank, s.auxiliary[0].rank), (1, 0));
        let four = LowRankModel::from_matrices(&[random(5, 4, 2)], 1.0, 4).unwrap();
        let s = split_dual(&four).unwrap();
        assert_eq!((s.core[0].rank, s.auxiliary[0].rank), (2, 2));
        let five = LowRankModel::from_matrices(&[random(5, 5, 3)], 1.0, 5).unwrap();
        let s = split_dual(&five).unwrap();
        assert_eq!((s.core[0].rank, s.auxiliary[0].rank), (3, 2));
    }

    #[test]
    fn recombine_is_bitwise_identity() {
        let m = LowRankModel {
            round: 3,
            client_id: 2,
            ..LowRankModel::from_matrices(&[random(6, 4, 5), random(3, 7, 6)], 0.95, 8).unwrap()
        };
        assert_eq!(recombine(&split_dual(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn one_by_one_step_matches_hand_computation() {
        // W = L·R with L = R = √2 and loss ½(W − t)², so G = W − t.
        let core = LayerFactors {
            rows: 1,
            cols: 1,
            rank: 1,
            u: vec![1.0],
            s: vec![2.0],
            v: vec![1.0],
        };
        let aux = LayerFactors::empty(1, 1);
        let (t, lr) = (0.5, 0.1);
        let g = DMatrix::from_element(1, 1, 2.0 - t);
        let next = core_step(&core, &aux, &g, lr).unwrap();
        assert_eq!(next.u, vec![1.0]);
        assert_eq!(next.v, vec![1.0]);
        let root = 2f64.sqrt();
        let by_hand = (root - lr * 1.5 * root / 2.0).powi(2);
        assert!(
            (next.s[0] - by_hand).abs() < 1e-14,
            "{} vs {by_hand}",
            next.s[0]
        );
        // finite difference of the loss in L, preconditioned by RᵀR = 2
        let h = 1e-6;
        let loss = |l: f64| 0.5 * (l * root - t).powi(2);
        let fd = (loss(root + h) - loss(root - h)) / (2.0 * h);
        let stepped = root - lr * fd / 2.0;
        assert!((stepped * stepped - next.s[0]).abs() < 1e-9);
    }

    #[test]
    fn zero_singular_values_still_learn() {
        let core = LayerFactors {
            rows: 2,
            cols: 2,
            rank: 1,
            u: vec![1.0, 0.0],
            s: vec![0.0],
            v: vec![1.0, 0.0],
        };
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        let next = core_step(&core, &LayerFactors::empty(2, 2), &g, 0.1).unwrap();
        assert!(next.s[0] > 0.0 && next.s[0].is_finite());
    }

    #[test]
    fn core_step_keeps_factors_orthonormal() {
        let f = decompose(&random(8, 6, 7), 1.0, 6).unwrap();
        let (core, aux) = (f.slice(0..3), f.slice(3..6));
        let next = core_step(&core, &aux, &random(8, 6, 8), 0.05).unwrap();
        let joined = next.concat(&aux).unwrap();
        let u = joined.u_matrix();
        let v = joined.v_matrix();
        assert!((u.transpose() * &u - DMatrix::identity(6, 6)).norm() < 1e-10);
        assert!((v.transpose() * &v - DMatrix::identity(6, 6)).norm() < 1e-10);
        assert!(next.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn local_update_freezes_auxiliary_and_reduces_loss() {
        let template = CodecModel::init(ConvAnsatz::default(), vec![0, 1], 3).unwrap();
        let data = toy_data(&template, 20);
        let batch: Vec<&EncodedSample> = data.iter().collect();
        let lr_model = LowRankModel::from_codec(&template, 1.0, 16).unwrap();
        let split = split_dual(&lr_model).unwrap();
        let batches = vec![batch.clone()];

        let same = local_update(&split, &batches, &template, 3, 0.0, 0.0).unwrap();
        for (a, b) in reconstruct_split(&same)
            .iter()
            .zip(reconstruct_split(&split))
        {
            assert!((a - b).norm() < 1e-12);
        }

        let next = local_update(&split, &batches, &template, 20, 0.5, 0.0).unwrap();
        assert_eq!(next.auxiliary, split.auxiliary);
        let before = dense_loss_grad(
            &recombine(&split).unwrap().to_codec(&template).unwrap(),
            &batch,
            0.0,
        )
        .unwrap()
        .0;
        let after = dense_loss_grad(
            &recombine(&next).unwrap().to_codec(&template).unwrap(),
            &batch,
            0.0,
        )
        .unwrap()
        .0;
        assert!(after < before, "{after} ≥ {before}");
        assert!(local_update(&split, &batches, &template, 0, 0.1, 0.0).is_err());
    }
}
