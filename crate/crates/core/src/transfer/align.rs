use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Smallest kernel bandwidth; guards batches whose points all coincide.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Affine map `G(x) = A·x + b` into the shared feature space, with the weight of the
/// alignment penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMap {
    /// Row-major `out_dim × in_dim`.
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub beta: f64,
}

impl DomainMap {
    pub fn identity(dim: usize, beta: f64) -> Self {
        let matrix = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            matrix,
            offset: vec![0.0; dim],
            beta,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Domain(format!(
                "alignment weight {} must be ≥ 0",
                self.beta
            )));
        }
        if self.matrix.is_empty() || self.in_dim() == 0 {
            return Err(Error::Domain("empty transform".into()));
        }
        check_dim(self.matrix.len(), self.offset.len())?;
        for row in &self.matrix {
            check_dim(self.in_dim(), row.len())?;
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.in_dim(), x.len())?;
        Ok(self
            .matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, b)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median of the distinct-pair Euclidean distances, floored at [`BANDWIDTH_FLOOR`].
pub fn median_bandwidth(points: &[&[f64]]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(points[i], points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return BANDWIDTH_FLOOR;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    med.max(BANDWIDTH_FLOOR)
}

/// Biased MMD² with kernel `k(a, b) = exp(−‖a − b‖² / (2h²))`.
pub fn gaussian_mmd2(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Domain("MMD needs two non-empty batches".into()));
    }
    let dim = x[0].len();
    for v in x.iter().chain(y) {
        check_dim(dim, v.len())?;
    }
    let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * bandwidth * bandwidth)).exp();
    let mean = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        p.iter()
            .map(|a| q.iter().map(|b| k(a, b)).sum::<f64>())
            .sum::<f64>()
            / (p.len() * q.len()) as f64
    };
    Ok((mean(x, x) + mean(y, y) - 2.0 * mean(x, y)).max(0.0))
}

/// `task_loss + β·MMD²(G(source), target)` with the median-distance bandwidth of the
/// pooled mapped batches.
pub fn align_loss(
    g: &DomainMap,
    source: &[Vec<f64>],
    target: &[Vec<f64>],
    task_loss: f64,
) -> Result<f64> {
    g.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Domain("alignment needs non-empty batches".into()));
    }
    let mapped: Vec<Vec<f64>> = source.iter().map(|x| g.apply(x)).collect::<Result<_>>()?;
    for t in target {
        check_dim(g.matrix.len(), t.len())?;
    }
    if g.beta == 0.0 {
        return Ok(task_loss);
    }
    let pooled: Vec<&[f64]> = mapped.iter().chain(target).map(Vec::as_slice).collect();
    let h = median_bandwidth(&pooled);
    Ok(task_loss + g.beta * gaussian_mmd2(&mapped, target, h)?)
}
