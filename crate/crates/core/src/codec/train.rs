use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{codec_loss_grad, sample_backward, LossBreakdown, Sample};
use super::model::CodecModel;
use super::optim::{OptimizerKind, OptimizerState};
use super::pipeline::{argmax, classify, encode};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub lambda: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            batch_size: 64,
            lambda: 0.0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Domain(format!(
                "learning rate {} must be > 0",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be ≥ 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Domain(format!("λ = {} must be ≥ 0", self.lambda)));
        }
        Ok(())
    }
}

/// One optimizer step on `batch`. A non-finite loss or gradient leaves `model`
/// untouched and reports [`Error::NonFinite`].
pub fn train_step(
    model: &mut CodecModel,
    batch: &[&Sample],
    opt: &mut OptimizerState,
    hyper: &TrainHyper,
) -> Result<LossBreakdown> {
    let (loss, grad) = codec_loss_grad(batch, model, hyper.lambda)?;
    if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("loss {}", loss.total)));
    }
    let mut flat = model.flat_params();
    opt.step(&mut flat, &grad, hyper.lr)?;
    if flat.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("parameters diverged".into()));
    }
    model.set_flat_params(&flat)?;
    Ok(loss)
}

/// Shuffles `train` with `rng` and runs one pass of minibatch steps; returns the
/// sample-weighted mean training loss.
pub fn train_epoch(
    model: &mut CodecModel,
    train: &[Sample],
    opt: &mut OptimizerState,
    hyper: &TrainHyper,
    rng: &mut impl Rng,
) -> Result<f64> {
    hyper.validate()?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(hyper.batch_size) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
        let loss = train_step(model, &batch, opt, hyper)?;
        total += loss.total * chunk.len() as f64;
    }
    Ok(total / train.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss (cross-entropy + λ·distortion) and top-1 accuracy.
pub fn evaluate(model: &CodecModel, samples: &[Sample], lambda: f64) -> Result<Evaluation> {
    if samples.is_empty() {
        return Ok(Evaluation::default());
    }
    let scale = 1.0 / samples.len() as f64;
    let mut out = Evaluation::default();
    for s in samples {
        let f = encode(&s.image, model)?;
        let (ce, d, _) = sample_backward(
            f.values(),
            s.image.pixels(),
            s.label,
            &model.head,
            &model.decoder,
            lambda,
            1.0,
            None,
        )?;
        out.loss += scale * (ce + lambda * d);
        if argmax(&classify(&f, model)?) == s.label {
            out.accuracy += scale;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::model::{ConvAnsatz, Image};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_class_toy() -> Vec<Sample> {
        // bright top half vs bright bottom half
        (0..16)
            .map(|i| {
                let label = i % 2;
                let pixels = (0..64)
                    .map(|p| if (p < 32) == (label == 0) { 0.9 } else { 0.1 })
                    .collect();
                Sample {
                    image: Image::new(pixels).unwrap(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss_on_separable_toy() {
        let data = two_class_toy();
        let mut m = CodecModel::init(ConvAnsatz::default(), vec![0, 1], 3).unwrap();
        let hyper = TrainHyper {
            batch_size: 8,
            ..TrainHyper::default()
        };
        let mut opt = OptimizerState::new(hyper.optimizer, m.n_params());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = evaluate(&m, &data, 0.0).unwrap();
        for _ in 0..20 {
            train_epoch(&mut m, &data, &mut opt, &hyper, &mut rng).unwrap();
        }
        let after = evaluate(&m, &data, 0.0).unwrap();
        assert!(after.loss < before.loss);
        assert_eq!(after.accuracy, 1.0);
    }

    #[test]
    fn bad_hyper_rejected() {
        let h = TrainHyper {
            lr: 0.0,
            ..TrainHyper::default()
        };
        assert!(h.validate().is_err());
        let h = TrainHyper {
            batch_size: 0,
            ..TrainHyper::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn divergent_step_is_reported_and_model_kept() {
        let data = two_class_toy();
        let mut m = CodecModel::init(ConvAnsatz::default(), vec![0, 1], 3).unwrap();
        m.head.bias[0] = f64::INFINITY;
        let before = m.clone();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, m.n_params());
        let batch: Vec<&Sample> = data.iter().take(2).collect();
        let err = train_step(&mut m, &batch, &mut opt, &TrainHyper::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(m, before);
    }
}
