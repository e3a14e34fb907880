use std::path::Path;

use qv2x::codec::{Image, Sample, IMAGE_PIXELS, N_CLASSES};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Largest raw pixel value in the 8×8 optical-digits layout.
pub const PIXEL_MAX: u32 = 16;

/// Parses digits CSV text: each row holds 64 integer pixels in `0..=16` followed by a
/// label in `0..=9`. Pixels are scaled to `[0, 1]`. Blank lines and lines starting
/// with `#` are skipped.
pub fn parse_digits(text: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| SimError::Data(format!("line {}: {msg}", i + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != IMAGE_PIXELS + 1 {
            return Err(bad(format!(
                "expected {} fields, got {}",
                IMAGE_PIXELS + 1,
                fields.len()
            )));
        }
        let mut pixels = Vec::with_capacity(IMAGE_PIXELS);
        for f in &fields[..IMAGE_PIXELS] {
            let v: u32 = f
                .parse()
                .map_err(|_| bad(format!("pixel {f:?} is not an integer")))?;
            if v > PIXEL_MAX {
                return Err(bad(format!("pixel {v} outside 0..={PIXEL_MAX}")));
            }
            pixels.push(v as f64 / PIXEL_MAX as f64);
        }
        let label: usize = fields[IMAGE_PIXELS].parse().map_err(|_| {
            bad(format!(
                "label {:?} is not an integer",
                fields[IMAGE_PIXELS]
            ))
        })?;
        if label >= N_CLASSES {
            return Err(bad(format!("label {label} outside 0..{N_CLASSES}")));
        }
        let image = Image::new(pixels).map_err(|e| bad(e.to_string()))?;
        out.push(Sample { image, label });
    }
    Ok(out)
}

pub fn load_digits(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_digits(&text)
}

/// Disjoint, exhaustive index lists over a corpus, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    /// Stratified 6:2:2 split. Each class is shuffled with the seed; its first
    /// `round(0.6·n)` indices go to train and the next `round(0.8·n) − round(0.6·n)`
    /// to validation, so every class is within one sample of its exact share.
    pub fn stratified(samples: &[Sample], seed: u64) -> Result<Self> {
        let mut by_class = vec![Vec::new(); N_CLASSES];
        for (i, s) in samples.iter().enumerate() {
            by_class[s.label].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(SimError::Data(format!("class {c} has no samples")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = Self {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for mut idx in by_class {
            idx.shuffle(&mut rng);
            let n = idx.len() as f64;
            let a = (0.6 * n).round() as usize;
            let b = (0.8 * n).round() as usize;
            split.train.extend_from_slice(&idx[..a]);
            split.val.extend_from_slice(&idx[a..b]);
            split.test.extend_from_slice(&idx[b..]);
        }
        for part in [&mut split.train, &mut split.val, &mut split.test] {
            part.sort_unstable();
        }
        Ok(split)
    }

    pub fn select(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
        idx.iter().map(|&i| samples[i].clone()).collect()
    }
}

/// The three parts of a corpus after splitting.
#[derive(Clone, Debug)]
pub struct Digits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Digits {
    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        let all = load_digits(path)?;
        let split = DatasetSplit::stratified(&all, seed)?;
        Ok(Self {
            train: DatasetSplit::select(&all, &split.train),
            val: DatasetSplit::select(&all, &split.val),
            test: DatasetSplit::select(&all, &split.test),
        })
    }
}
