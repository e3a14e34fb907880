use std::path::Path;

use qv2x::codec::{
    evaluate, train_epoch, Checkpoint, CheckpointMeta, OptimizerKind, OptimizerState, Sample,
    TrainHyper,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{codec_model, finish, Check};
use crate::artifact::{num, Artifacts, RunLog};
use crate::config::ScenarioConfig;
use crate::data::Digits;
use crate::error::Result;

/// Accuracy the reference cell must reach on the test split.
pub const REFERENCE_TEST_ACCURACY: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub hyper: TrainHyper,
    pub curve: Vec<EpochRow>,
    pub final_val_accuracy: f64,
    pub test_accuracy: f64,
    /// Error that stopped training early, if any.
    pub diverged: Option<String>,
}

impl CellResult {
    fn label(&self) -> String {
        format!(
            "lr={} optimizer={} batch={}",
            self.hyper.lr,
            self.hyper.optimizer.name(),
            self.hyper.batch_size
        )
    }

    fn file_name(&self) -> String {
        format!(
            "curve_lr{}_{}_b{}.csv",
            self.hyper.lr,
            self.hyper.optimizer.name().to_ascii_lowercase(),
            self.hyper.batch_size
        )
    }

    /// Ranking score: diverged cells rank below every finished one.
    fn score(&self) -> f64 {
        if self.diverged.is_some() {
            f64::NEG_INFINITY
        } else {
            self.final_val_accuracy
        }
    }
}

#[derive(Clone, Debug)]
pub struct HparamOutcome {
    pub cells: Vec<CellResult>,
    pub reference: CellResult,
    pub best_lr: f64,
    pub best_optimizer: OptimizerKind,
    pub best_batch_size: usize,
    pub checks: Vec<Check>,
}

/// Every cell starts from the same initial model and sees the same shuffles.
fn train_cell(
    cfg: &ScenarioConfig,
    digits: &Digits,
    hyper: TrainHyper,
    log: &mut RunLog,
) -> Result<(CellResult, qv2x::codec::CodecModel)> {
    let mut model = codec_model(cfg)?;
    let mut opt = OptimizerState::new(hyper.optimizer, model.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let eval = |m: &_, s: &[Sample]| evaluate(m, s, hyper.lambda);
    let first = eval(&model, &digits.val)?;
    let mut curve = vec![EpochRow {
        epoch: 0,
        train_loss: eval(&model, &digits.train)?.loss,
        val_loss: first.loss,
        val_accuracy: first.accuracy,
    }];
    let mut diverged = None;
    for epoch in 1..=cfg.codec.epochs {
        let train_loss = match train_epoch(&mut model, &digits.train, &mut opt, &hyper, &mut rng) {
            Ok(l) => l,
            Err(e) => {
                diverged = Some(e.to_string());
                break;
            }
        };
        let v = eval(&model, &digits.val)?;
        log.record("train", epoch as u64, "train_loss", train_loss);
        log.record("eval", epoch as u64, "val_accuracy", v.accuracy);
        curve.push(EpochRow {
            epoch,
            train_loss,
            val_loss: v.loss,
            val_accuracy: v.accuracy,
        });
    }
    let last = curve.last().expect("epoch 0 row");
    let result = CellResult {
        hyper,
        final_val_accuracy: last.val_accuracy,
        test_accuracy: eval(&model, &digits.test)?.accuracy,
        curve,
        diverged,
    };
    Ok((result, model))
}

fn best_by<K>(cells: &[&CellResult], key: impl Fn(&CellResult) -> K) -> K {
    let best = cells
        .iter()
        .copied()
        .reduce(|a, b| if b.score() > a.score() { b } else { a })
        .expect("non-empty panel");
    key(best)
}

/// Trains the codec classifier over the learning-rate × optimizer grid and the
/// batch-size panel. The `[codec]` section is the reference cell: the learning-rate
/// panel is read at the reference optimizer, the optimizer panel at the reference
/// learning rate, the batch panel at both.
pub fn run_repro_hparam(cfg: &ScenarioConfig, out: &Path) -> Result<HparamOutcome> {
    let digits = Digits::load(cfg.dataset_path()?, cfg.seed)?;
    let hash = cfg.hash();
    let mut artifacts = Artifacts::create(out, &hash)?;
    let mut log = RunLog::new("repro-hparam", &hash);
    let reference = cfg.codec.hyper();

    let mut grid: Vec<TrainHyper> = Vec::new();
    for &lr in &cfg.hparam.lrs {
        for &optimizer in &cfg.hparam.optimizers {
            grid.push(TrainHyper {
                lr,
                optimizer,
                ..reference
            });
        }
    }
    for &batch_size in &cfg.hparam.batch_sizes {
        grid.push(TrainHyper {
            batch_size,
            ..reference
        });
    }
    if !grid.contains(&reference) {
        grid.push(reference);
    }
    let mut unique: Vec<TrainHyper> = Vec::new();
    for h in grid {
        if !unique.contains(&h) {
            unique.push(h);
        }
    }

    let mut cells = Vec::new();
    let mut reference_model = None;
    for hyper in unique {
        let (cell, model) = train_cell(cfg, &digits, hyper, &mut log)?;
        let rows = cell.curve.iter().map(|r| {
            format!(
                "{},{},{},{}",
                r.epoch,
                num(r.train_loss),
                num(r.val_loss),
                num(r.val_accuracy)
            )
        });
        artifacts.csv(
            &cell.file_name(),
            "epoch,train_loss,val_loss,val_accuracy",
            rows,
        )?;
        if hyper == reference {
            reference_model = Some(model);
        }
        cells.push(cell);
    }
    let reference_cell = cells
        .iter()
        .find(|c| c.hyper == reference)
        .expect("reference trained")
        .clone();
    let checkpoint = Checkpoint::new(
        &reference_model.expect("reference trained"),
        CheckpointMeta {
            seed: cfg.seed,
            epoch: cfg.codec.epochs,
            hyper: reference,
            config_hash: hash.clone(),
        },
    );
    artifacts.raw("codec_checkpoint.json", &checkpoint.to_json())?;

    let rows = cells.iter().map(|c| {
        format!(
            "{},{},{},{},{},{}",
            c.hyper.lr,
            c.hyper.optimizer.name(),
            c.hyper.batch_size,
            num(c.final_val_accuracy),
            num(c.test_accuracy),
            c.diverged.as_deref().map_or("ok".to_string(), |e| format!(
                "diverged: {}",
                e.replace(',', ";")
            ))
        )
    });
    artifacts.csv(
        "hparam_grid.csv",
        "lr,optimizer,batch_size,final_val_accuracy,test_accuracy,status",
        rows,
    )?;

    let lr_panel: Vec<&CellResult> = cells
        .iter()
        .filter(|c| {
            c.hyper.optimizer == reference.optimizer && c.hyper.batch_size == reference.batch_size
        })
        .filter(|c| cfg.hparam.lrs.contains(&c.hyper.lr))
        .collect();
    let opt_panel: Vec<&CellResult> = cells
        .iter()
        .filter(|c| c.hyper.lr == reference.lr && c.hyper.batch_size == reference.batch_size)
        .filter(|c| cfg.hparam.optimizers.contains(&c.hyper.optimizer))
        .collect();
    let batch_panel: Vec<&CellResult> = cells
        .iter()
        .filter(|c| c.hyper.lr == reference.lr && c.hyper.optimizer == reference.optimizer)
        .filter(|c| cfg.hparam.batch_sizes.contains(&c.hyper.batch_size))
        .collect();
    let best_lr = best_by(&lr_panel, |c| c.hyper.lr);
    let best_optimizer = best_by(&opt_panel, |c| c.hyper.optimizer);
    let best_batch_size = best_by(&batch_panel, |c| c.hyper.batch_size);
    let best_cell = best_by(&cells.iter().collect::<Vec<_>>(), |c| c.label());

    let panel = |p: &[&CellResult]| -> String {
        p.iter()
            .map(|c| format!("{}: {:.4}", c.label(), c.final_val_accuracy))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let checks = if cfg.codec.epochs == 0 {
        Vec::new()
    } else {
        vec![
            Check::new(
                "reference test accuracy",
                reference_cell.test_accuracy >= REFERENCE_TEST_ACCURACY,
                format!(
                    "{:.4} (need ≥ {REFERENCE_TEST_ACCURACY})",
                    reference_cell.test_accuracy
                ),
            ),
            Check::new(
                "learning-rate panel selects the reference",
                best_lr == reference.lr,
                format!("selected {best_lr}; {}", panel(&lr_panel)),
            ),
            Check::new(
                "optimizer panel selects the reference",
                best_optimizer == reference.optimizer,
                format!("selected {}; {}", best_optimizer.name(), panel(&opt_panel)),
            ),
            Check::new(
                "batch-size panel selects the reference",
                best_batch_size == reference.batch_size,
                format!("selected {best_batch_size}; {}", panel(&batch_panel)),
            ),
        ]
    };
    let lines = vec![
        format!("config_hash: {hash}"),
        format!(
            "split: train {} / val {} / test {}",
            digits.train.len(),
            digits.val.len(),
            digits.test.len()
        ),
        format!("epochs: {}", cfg.codec.epochs),
        format!("cells trained: {}", cells.len()),
        format!(
            "reference cell: {} val {:.4} test {:.4}",
            reference_cell.label(),
            reference_cell.final_val_accuracy,
            reference_cell.test_accuracy
        ),
        format!("best cell overall: {best_cell}"),
        format!("best learning rate: {best_lr}"),
        format!("best optimizer: {}", best_optimizer.name()),
        format!("best batch size: {best_batch_size}"),
    ];
    finish(&mut artifacts, &log, "repro-hparam", &lines, &checks)?;
    Ok(HparamOutcome {
        cells,
        reference: reference_cell,
        best_lr,
        best_optimizer,
        best_batch_size,
        checks,
    })
}
