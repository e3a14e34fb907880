use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::CodecModel;
use crate::error::{check_dim, Error, Result};

/// Orthonormality tolerance for `UᵀU` and `VᵀV`.
pub const ORTHO_TOL: f64 = 1e-8;

/// Truncated SVD `W ≈ U·diag(S)·Vᵀ` of an `rows × cols` matrix, factors stored
/// row-major (`u` is `rows × rank`, `v` is `cols × rank`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFactors {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}

fn max_ortho_defect(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

impl LayerFactors {
    /// Rank-zero factors of the given shape.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rank: 0,
            u: Vec::new(),
            s: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn u_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.rank, &self.u)
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.cols, self.rank, &self.v)
    }

    /// Checks storage sizes only.
    pub fn check_shape(&self) -> Result<()> {
        check_dim(self.rows * self.rank, self.u.len())?;
        check_dim(self.rank, self.s.len())?;
        check_dim(self.cols * self.rank, self.v.len())?;
        if self.rank > self.rows.min(self.cols) {
            return Err(Error::Domain(format!(
                "rank {} exceeds min({}, {})",
                self.rank, self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Shape, orthonormal columns and a non-negative, descending spectrum.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        if self
            .u
            .iter()
            .chain(&self.s)
            .chain(&self.v)
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite("layer factors".into()));
        }
        if self.s.iter().any(|&s| s < 0.0) || self.s.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Domain(
                "singular values must be non-negative and descending".into(),
            ));
        }
        if self.rank > 0 {
            let defect = max_ortho_defect(&self.u_matrix()).max(max_ortho_defect(&self.v_matrix()));
            if defect > ORTHO_TOL {
                return Err(Error::Domain(format!(
                    "factor columns not orthonormal ({defect:.2e})"
                )));
            }
        }
        Ok(())
    }

    /// Parameters sent for this layer: `r·(m + n + 1)`.
    pub fn upload_len(&self) -> usize {
        self.rank * (self.rows + self.cols + 1)
    }

    /// `U`, `S`, `V` concatenated.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.s);
        out.extend_from_slice(&self.v);
    }

    fn from_flat(rows: usize, cols: usize, rank: usize, flat: &[f64]) -> Result<Self> {
        check_dim(rank * (rows + cols + 1), flat.len())?;
        let (u, rest) = flat.split_at(rows * rank);
        let (s, v) = rest.split_at(rank);
        let f = Self {
            rows,
            cols,
            rank,
            u: u.to_vec(),
            s: s.to_vec(),
            v: v.to_vec(),
        };
        f.check_shape()?;
        Ok(f)
    }

    /// Triplets `range` as their own factor set.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let k = range.len();
        let mut u = Vec::with_capacity(self.rows * k);
        for row in self.u.chunks(self.rank.max(1)).take(self.rows) {
            u.extend_from_slice(&row[range.clone()]);
        }
        let mut v = Vec::with_capacity(self.cols * k);
        for row in self.v.chunks(self.rank.max(1)).take(self.cols) {
            v.extend_from_slice(&row[range.clone()]);
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            rank: k,
            u,
            s: self.s[range].to_vec(),
            v,
        }
    }

    /// Appends zero triplets up to `rank`; the reconstruction is unchanged.
    pub fn padded(&self, rank: usize) -> Result<Self> {
        if rank < self.rank || rank > self.rows.min(self.cols) {
            return Err(Error::Domain(format!(
                "cannot pad rank {} to {rank} in a {}×{} layer",
                self.rank, self.rows, self.cols
            )));
        }
        let extra = rank - self.rank;
        self.concat(&Self {
            rows: self.rows,
            cols: self.cols,
            rank: extra,
            u: vec![0.0; self.rows * extra],
            s: vec![0.0; extra],
            v: vec![0.0; self.cols * extra],
        })
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        check_dim(self.rows, other.rows)?;
        check_dim(self.cols, other.cols)?;
        let rank = self.rank + other.rank;
        let join = |a: &[f64], b: &[f64], n: usize| {
            let mut out = Vec::with_capacity(n * rank);
            for i in 0..n {
                out.extend_from_slice(&a[i * self.rank..(i + 1) * self.rank]);
                out.extend_from_slice(&b[i * other.rank..(i + 1) * other.rank]);
            }
            out
        };
        let mut s = self.s.clone();
        s.extend_from_slice(&other.s);
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            rank,
            u: join(&self.u, &other.u, self.rows),
            s,
            v: join(&self.v, &other.v, self.cols),
        })
    }
}

/// Thin SVD `(U, σ, V)` with σ sorted descending (stable in decomposition order).
pub(crate) fn svd(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (m, n) = w.shape();
    let a = faer::Mat::<f64>::from_fn(m, n, |i, j| w[(i, j)]);
    let svd = a
        .thin_svd()
        .map_err(|e| Error::NonFinite(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let sigma: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    Ok((
        DMatrix::from_fn(m, order.len(), |i, c| u[(i, order[c])]),
        order.iter().map(|&j| sigma[j]).collect(),
        DMatrix::from_fn(n, order.len(), |i, c| v[(i, order[c])]),
    ))
}

/// Truncated SVD with adaptive rank: `r = min(r_max, smallest k whose leading
/// σ² mass reaches τ·Σσ²)`. Singular values are sorted descending, ties kept in
/// decomposition order.
pub fn decompose(w: &DMatrix<f64>, tau: f64, r_max: usize) -> Result<LayerFactors> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix to decompose".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Domain(format!(
            "energy threshold τ = {tau} outside (0, 1]"
        )));
    }
    if r_max == 0 {
        return Err(Error::Domain("r_max must be ≥ 1".into()));
    }
    let (m, n) = w.shape();
    if m == 0 || n == 0 {
        return Err(Error::Domain("empty matrix".into()));
    }
    let (u_full, sigma, v_full) = svd(w)?;
    let order: Vec<usize> = (0..sigma.len()).collect();

    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut cum = 0.0;
    let mut k = order.len();
    for (i, &j) in order.iter().enumerate() {
        cum += sigma[j] * sigma[j];
        if cum >= tau * total {
            k = i + 1;
            break;
        }
    }
    let r = k.min(r_max);
    let keep = &order[..r];
    let u = DMatrix::from_fn(m, r, |i, c| u_full[(i, keep[c])]);
    let v = DMatrix::from_fn(n, r, |i, c| v_full[(i, keep[c])]);
    Ok(LayerFactors {
        rows: m,
        cols: n,
        rank: r,
        u: row_major(&u),
        s: keep.iter().map(|&j| sigma[j]).collect(),
        v: row_major(&v),
    })
}

/// `U·diag(S)·Vᵀ`.
pub fn reconstruct(f: &LayerFactors) -> DMatrix<f64> {
    if f.rank == 0 {
        return DMatrix::zeros(f.rows, f.cols);
    }
    let mut us = f.u_matrix();
    for (c, s) in f.s.iter().enumerate() {
        us.column_mut(c).scale_mut(*s);
    }
    us * f.v_matrix().transpose()
}

/// Shape of one layer as `(rows, cols, rank)`.
pub type LayerShape = (usize, usize, usize);

/// Low-rank form of the codec's classical weights: the head and decoder as
/// augmented `[W | b]` matrices, in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankModel {
    pub layers: Vec<LayerFactors>,
    pub round: u64,
    pub client_id: u32,
}

/// Augmented `[W | b]` matrices of the head and decoder.
pub fn codec_matrices(model: &CodecModel) -> Vec<DMatrix<f64>> {
    [&model.head, &model.decoder]
        .iter()
        .map(|d| DMatrix::from_row_slice(d.rows, d.cols + 1, &d.augmented()))
        .collect()
}

impl LowRankModel {
    pub fn from_matrices(mats: &[DMatrix<f64>], tau: f64, r_max: usize) -> Result<Self> {
        let layers = mats
            .iter()
            .map(|w| decompose(w, tau, r_max))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            round: 0,
            client_id: 0,
        })
    }

    pub fn from_codec(model: &CodecModel, tau: f64, r_max: usize) -> Result<Self> {
        Self::from_matrices(&codec_matrices(model), tau, r_max)
    }

    pub fn reconstruct(&self) -> Vec<DMatrix<f64>> {
        self.layers.iter().map(reconstruct).collect()
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers
            .iter()
            .map(|l| (l.rows, l.cols, l.rank))
            .collect()
    }

    /// Layer shapes must match the reference model's head and decoder.
    pub fn check_architecture(&self, reference: &CodecModel) -> Result<()> {
        let want = codec_matrices(reference);
        check_dim(want.len(), self.layers.len())?;
        for (w, l) in want.iter().zip(&self.layers) {
            if w.shape() != (l.rows, l.cols) {
                return Err(Error::Domain(format!(
                    "layer shape {}×{} does not match {}×{}",
                    l.rows,
                    l.cols,
                    w.nrows(),
                    w.ncols()
                )));
            }
            l.check_shape()?;
        }
        Ok(())
    }

    /// Writes the reconstructed weights into a copy of `template`.
    pub fn to_codec(&self, template: &CodecModel) -> Result<CodecModel> {
        self.check_architecture(template)?;
        let mut out = template.clone();
        let mats = self.reconstruct();
        for (dense, w) in [&mut out.head, &mut out.decoder].into_iter().zip(&mats) {
            dense.set_augmented(&row_major(w))?;
        }
        Ok(out)
    }

    /// Every layer padded with zero triplets to the given ranks.
    pub fn padded(&self, ranks: &[usize]) -> Result<Self> {
        check_dim(self.layers.len(), ranks.len())?;
        Ok(Self {
            layers: self
                .layers
                .iter()
                .zip(ranks)
                .map(|(l, &r)| l.padded(r))
                .collect::<Result<_>>()?,
            ..self.clone()
        })
    }

    /// Parameters in an upload: `Σ r·(m + n + 1)`.
    pub fn upload_len(&self) -> usize {
        self.layers.iter().map(LayerFactors::upload_len).sum()
    }

    /// Parameters of the dense weights: `Σ m·n`.
    pub fn dense_len(&self) -> usize {
        self.layers.iter().map(|l| l.rows * l.cols).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.upload_len());
        for l in &self.layers {
            l.flatten_into(&mut out);
        }
        out
    }

    pub fn unflatten(shapes: &[LayerShape], flat: &[f64]) -> Result<Self> {
        let total: usize = shapes.iter().map(|(m, n, r)| r * (m + n + 1)).sum();
        check_dim(total, flat.len())?;
        let mut rest = flat;
        let mut layers = Vec::with_capacity(shapes.len());
        for &(m, n, r) in shapes {
            let (now, later) = rest.split_at(r * (m + n + 1));
            layers.push(LayerFactors::from_flat(m, n, r, now)?);
            rest = later;
        }
        Ok(Self {
            layers,
            round: 0,
            client_id: 0,
        })
    }

    /// Binary upload payload. Per layer, little-endian: layer index (u32), rank
    /// (u32), `U` row-major, `S`, `V` row-major (f64).
    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (self.upload_len() + self.layers.len()));
        for (i, l) in self.layers.iter().enumerate() {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.extend_from_slice(&(l.rank as u32).to_le_bytes());
            for x in l.u.iter().chain(&l.s).chain(&l.v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parses [`to_payload`](Self::to_payload) output given each layer's `(rows, cols)`.
    pub fn from_payload(bytes: &[u8], dims: &[(usize, usize)]) -> Result<Self> {
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let chunk = bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::Format(format!("payload truncated at byte {pos}")))?;
            pos += n;
            Ok(chunk)
        };
        let mut layers = Vec::with_capacity(dims.len());
        for (i, &(m, n)) in dims.iter().enumerate() {
            let index = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            if index != i {
                return Err(Error::Format(format!("expected layer {i}, found {index}")));
            }
            let r = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            if r > m.min(n) {
                return Err(Error::Format(format!(
                    "layer {i}: rank {r} exceeds min({m}, {n})"
                )));
            }
            let len = r * (m + n + 1);
            let flat: Vec<f64> = take(8 * len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            layers.push(LayerFactors::from_flat(m, n, r, &flat)?);
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing payload bytes",
                bytes.len() - pos
            )));
        }
        Ok(Self {
            layers,
            round: 0,
            client_id: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag321() -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]))
    }

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Singular values from the eigenvalues of `WᵀW`, descending.
    fn oracle_sigma(w: &DMatrix<f64>) -> Vec<f64> {
        let eig = (w.transpose() * w).symmetric_eigen();
        let mut s: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    #[test]
    fn diagonal_examples() {
        let w = diag321();
        let full = decompose(&w, 1.0, 8).unwrap();
        assert_eq!(full.rank, 3);
        assert_eq!(full.s, vec![3.0, 2.0, 1.0]);
        assert!((reconstruct(&full) - &w).norm() < 1e-12);

        let capped = decompose(&w, 1.0, 2).unwrap();
        assert_eq!(capped.rank, 2);
        assert_eq!(capped.s, vec![3.0, 2.0]);
        assert!(((reconstruct(&capped) - &w).norm() - 1.0).abs() < 1e-12);

        // cumulative σ² = (9, 13, 14)/14 = (0.643, 0.929, 1)
        assert_eq!(decompose(&w, 0.9, 8).unwrap().rank, 2);
        assert_eq!(decompose(&w, 0.6, 8).unwrap().rank, 1);
    }

    #[test]
    fn errors() {
        let mut w = diag321();
        assert!(decompose(&w, 0.0, 2).is_err());
        assert!(decompose(&w, 1.1, 2).is_err());
        assert!(decompose(&w, 1.0, 0).is_err());
        w[(0, 1)] = f64::NAN;
        assert!(matches!(decompose(&w, 1.0, 2), Err(Error::NonFinite(_))));
    }

    #[test]
    fn random_8x6_rank3_error_matches_oracle() {
        let w = random(8, 6, 3);
        let f = decompose(&w, 1.0, 3).unwrap();
        f.validate().unwrap();
        let sigma = oracle_sigma(&w);
        for (a, b) in f.s.iter().zip(&sigma) {
            assert!((a - b).abs() < 1e-10);
        }
        let dropped = sigma[3..].iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!(((reconstruct(&f) - &w).norm() - dropped).abs() < 1e-8);
    }

    #[test]
    fn wide_and_zero_matrices() {
        let w = random(3, 7, 5);
        let f = decompose(&w, 1.0, 10).unwrap();
        assert_eq!((f.rows, f.cols, f.rank), (3, 7, 3));
        assert!((reconstruct(&f) - &w).norm() < 1e-10);
        let z = decompose(&DMatrix::zeros(4, 4), 0.9, 4).unwrap();
        assert_eq!(z.rank, 1);
        assert_eq!(reconstruct(&z), DMatrix::zeros(4, 4));
    }

    #[test]
    fn flatten_and_payload_round_trip() {
        let model =
            LowRankModel::from_matrices(&[random(4, 3, 1), random(2, 5, 2)], 0.9, 2).unwrap();
        let flat = model.flatten();
        assert_eq!(flat.len(), model.upload_len());
        assert_eq!(
            LowRankModel::unflatten(&model.shapes(), &flat).unwrap(),
            model
        );

        let bytes = model.to_payload();
        let l0 = &model.layers[0];
        assert_eq!(&bytes[0..4], &0u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &(l0.rank as u32).to_le_bytes());
        assert_eq!(&bytes[8..16], &l0.u[0].to_le_bytes());
        assert_eq!(bytes.len(), 8 * model.upload_len() + 8 * 2);
        let back = LowRankModel::from_payload(&bytes, &[(4, 3), (2, 5)]).unwrap();
        assert_eq!(back, model);
        assert!(LowRankModel::from_payload(&bytes[..bytes.len() - 1], &[(4, 3), (2, 5)]).is_err());
        assert!(LowRankModel::from_payload(&bytes, &[(4, 3)]).is_err());
    }

    #[test]
    fn slice_and_concat_partition() {
        let f = decompose(&random(5, 4, 9), 1.0, 4).unwrap();
        let joined = f.slice(0..2).concat(&f.slice(2..4)).unwrap();
        assert_eq!(joined, f);
        let empty = f.slice(4..4);
        assert_eq!(empty.rank, 0);
        assert_eq!(f.concat(&empty).unwrap(), f);
        let p = f.slice(0..2).padded(3).unwrap();
        assert_eq!((p.rank, p.s[2]), (3, 0.0));
        assert!((reconstruct(&p) - reconstruct(&f.slice(0..2))).norm() < 1e-15);
        assert!(f.padded(5).is_err());
        assert!(f.padded(2).is_err());
    }

    #[test]
    fn codec_round_trip_at_full_rank() {
        use crate::codec::ConvAnsatz;
        let m = CodecModel::init(ConvAnsatz::default(), vec![0, 1], 4).unwrap();
        let lr = LowRankModel::from_codec(&m, 1.0, 64).unwrap();
        assert_eq!(lr.shapes()[0].0, 10);
        assert_eq!(lr.shapes()[1].0, 64);
        let back = lr.to_codec(&m).unwrap();
        for (a, b) in back.flat_params().iter().zip(m.flat_params()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
