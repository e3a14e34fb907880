use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One transmitted unit: a prototype reference or the raw vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KbSymbol {
    Token(u32),
    Raw(Vec<f64>),
}

/// Static dictionary of feature prototypes shared by sender and receiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    entries: Vec<(u32, Vec<f64>)>,
    match_tol: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl KnowledgeBase {
    /// Entries are kept sorted by token id.
    pub fn new(mut entries: Vec<(u32, Vec<f64>)>, match_tol: f64) -> Result<Self> {
        if !(match_tol >= 0.0) || !match_tol.is_finite() {
            return Err(Error::Domain(format!(
                "match_tol {match_tol} must be finite and ≥ 0"
            )));
        }
        entries.sort_by_key(|(id, _)| *id);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("duplicate token id".into()));
        }
        if let Some((_, first)) = entries.first() {
            if first.is_empty() {
                return Err(Error::Domain("empty prototype".into()));
            }
            for (_, p) in &entries {
                check_dim(first.len(), p.len())?;
            }
        }
        Ok(Self { entries, match_tol })
    }

    /// Lloyd's k-means over `data` with `k` distinct seeded initial centroids; token ids
    /// are the cluster indices.
    pub fn from_kmeans(
        data: &[Vec<f64>],
        k: usize,
        max_iters: usize,
        match_tol: f64,
        seed: u64,
    ) -> Result<Self> {
        if data.is_empty() || k == 0 {
            return Self::new(Vec::new(), match_tol);
        }
        let dim = data[0].len();
        for d in data {
            check_dim(dim, d.len())?;
        }
        let k = k.min(data.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids: Vec<Vec<f64>> = sample(&mut rng, data.len(), k)
            .into_iter()
            .map(|i| data[i].clone())
            .collect();
        let mut assign = vec![usize::MAX; data.len()];
        for _ in 0..max_iters {
            let mut changed = false;
            for (a, x) in assign.iter_mut().zip(data) {
                let best = nearest(&centroids, x).0;
                changed |= *a != best;
                *a = best;
            }
            if !changed {
                break;
            }
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (&a, x) in assign.iter().zip(data) {
                counts[a] += 1;
                for (s, v) in sums[a].iter_mut().zip(x) {
                    *s += v;
                }
            }
            for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
                if n > 0 {
                    *c = s.into_iter().map(|v| v / n as f64).collect();
                }
            }
        }
        Self::new(
            centroids
                .into_iter()
                .enumerate()
                .map(|(i, c)| (i as u32, c))
                .collect(),
            match_tol,
        )
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Prototype dimension (0 for an empty base).
    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |(_, p)| p.len())
    }

    pub fn match_tol(&self) -> f64 {
        self.match_tol
    }

    pub fn entries(&self) -> &[(u32, Vec<f64>)] {
        &self.entries
    }

    pub fn prototype(&self, token: u32) -> Result<&[f64]> {
        self.entries
            .binary_search_by_key(&token, |(id, _)| *id)
            .map(|i| self.entries[i].1.as_slice())
            .map_err(|_| Error::Integrity(format!("unknown token {token}")))
    }

    /// Replaces each vector with the token of its nearest prototype when that lies
    /// within `match_tol`; equidistant prototypes resolve to the lowest token id.
    pub fn compress(&self, vectors: &[&[f64]]) -> Result<Vec<KbSymbol>> {
        if self.is_empty() {
            return Ok(vectors.iter().map(|v| KbSymbol::Raw(v.to_vec())).collect());
        }
        let protos: Vec<Vec<f64>> = self.entries.iter().map(|(_, p)| p.clone()).collect();
        vectors
            .iter()
            .map(|v| {
                check_dim(self.dim(), v.len())?;
                let (i, d) = nearest(&protos, v);
                Ok(if d <= self.match_tol {
                    KbSymbol::Token(self.entries[i].0)
                } else {
                    KbSymbol::Raw(v.to_vec())
                })
            })
            .collect()
    }

    pub fn decompress(&self, symbols: &[KbSymbol]) -> Result<Vec<Vec<f64>>> {
        symbols
            .iter()
            .map(|s| match s {
                KbSymbol::Token(id) => self.prototype(*id).map(<[f64]>::to_vec),
                KbSymbol::Raw(v) => Ok(v.clone()),
            })
            .collect()
    }
}

/// Index and distance of the closest centroid; the first wins ties.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}
