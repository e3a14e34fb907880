use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lowrank::{LayerShape, LowRankModel};
use crate::error::{check_dim, Error, Result};

/// Tolerance on the element-wise sum of all masks in a round.
pub const MASK_CANCEL_TOL: f64 = 1e-9;

fn pair(i: u32, j: u32) -> (u32, u32) {
    (i.min(j), i.max(j))
}

/// Pairwise shared seeds, provisioned from configuration.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedBook {
    seeds: BTreeMap<(u32, u32), u64>,
}

impl SeedBook {
    /// One seed per unordered pair of `roster`, derived from `base`.
    pub fn derive(base: u64, roster: &[u32]) -> Self {
        let mut book = Self::default();
        for (a, &i) in roster.iter().enumerate() {
            for &j in &roster[a + 1..] {
                let (lo, hi) = pair(i, j);
                let mut h = Sha256::new();
                h.update(b"pair-seed");
                h.update(base.to_le_bytes());
                h.update(lo.to_le_bytes());
                h.update(hi.to_le_bytes());
                let d = h.finalize();
                book.insert(
                    i,
                    j,
                    u64::from_le_bytes(d[..8].try_into().expect("8 bytes")),
                );
            }
        }
        book
    }

    pub fn insert(&mut self, i: u32, j: u32, seed: u64) {
        self.seeds.insert(pair(i, j), seed);
    }

    pub fn get(&self, i: u32, j: u32) -> Option<u64> {
        self.seeds.get(&pair(i, j)).copied()
    }
}

/// Deterministic mask stream for the unordered pair `(i, j)`: ChaCha keyed by the
/// shared seed, the sorted pair and the round salt; values uniform in `[-1, 1]`.
pub fn pair_mask(seed: u64, i: u32, j: u32, round_salt: u64, len: usize) -> Vec<f64> {
    let (lo, hi) = pair(i, j);
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(lo.to_le_bytes());
    h.update(hi.to_le_bytes());
    h.update(round_salt.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// A client's masked contribution: flattened factors plus its pairwise mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedUpdate {
    pub client_id: u32,
    pub round: u64,
    pub shapes: Vec<LayerShape>,
    pub factors: Vec<f64>,
    pub mask: Vec<f64>,
}

impl MaskedUpdate {
    /// What goes on the wire: `factors + mask`.
    pub fn upload(&self) -> Vec<f64> {
        self.factors
            .iter()
            .zip(&self.mask)
            .map(|(f, m)| f + m)
            .collect()
    }

    pub fn model(&self) -> Result<LowRankModel> {
        let mut m = LowRankModel::unflatten(&self.shapes, &self.factors)?;
        m.round = self.round;
        m.client_id = self.client_id;
        Ok(m)
    }
}

/// Masks the flattened factors of `model` for `self_id`:
/// `mask = Σ_{j>i} m_ij − Σ_{j<i} m_ji`, so masks over the full roster sum to zero.
pub fn mask_update(
    model: &LowRankModel,
    self_id: u32,
    roster: &[u32],
    seeds: &SeedBook,
    round_salt: u64,
) -> Result<MaskedUpdate> {
    if roster.len() < 2 {
        return Err(Error::Protocol(
            "secure aggregation needs at least 2 clients".into(),
        ));
    }
    if !roster.contains(&self_id) {
        return Err(Error::Protocol(format!(
            "client {self_id} is not on the roster"
        )));
    }
    let factors = model.flatten();
    let mut mask = vec![0.0; factors.len()];
    for &j in roster.iter().filter(|&&j| j != self_id) {
        let seed = seeds.get(self_id, j).ok_or_else(|| {
            Error::Protocol(format!("no shared seed for clients {self_id} and {j}"))
        })?;
        let m = pair_mask(seed, self_id, j, round_salt, factors.len());
        let sign = if j > self_id { 1.0 } else { -1.0 };
        for (acc, x) in mask.iter_mut().zip(m) {
            *acc += sign * x;
        }
    }
    Ok(MaskedUpdate {
        client_id: self_id,
        round: model.round,
        shapes: model.shapes(),
        factors,
        mask,
    })
}

/// Element-wise sum of the uploads, in ascending client-id order.
pub fn secure_sum(uploads: &[MaskedUpdate]) -> Result<Vec<f64>> {
    let mut order: Vec<&MaskedUpdate> = uploads.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let len = order.first().map_or(0, |u| u.factors.len());
    let mut sum = vec![0.0; len];
    for u in order {
        check_dim(len, u.factors.len())?;
        for (s, x) in sum.iter_mut().zip(u.upload()) {
            *s += x;
        }
    }
    Ok(sum)
}

fn check_roster(uploads: &[MaskedUpdate], roster: &[u32]) -> Result<()> {
    let mut got: Vec<u32> = uploads.iter().map(|u| u.client_id).collect();
    let mut want = roster.to_vec();
    got.sort_unstable();
    want.sort_unstable();
    if got != want || want.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Protocol(format!(
            "uploads from {got:?} do not match roster {want:?}"
        )));
    }
    Ok(())
}

/// Weighted mean `Σ wᵢ·W̃ᵢ / Σ wᵢ` of the clients' reconstructed weight matrices,
/// summed in ascending client-id order. Fails if the uploads do not cover the
/// roster exactly or their masks do not cancel.
pub fn aggregate_matrices(
    uploads: &[MaskedUpdate],
    weights: &[f64],
    roster: &[u32],
) -> Result<Vec<DMatrix<f64>>> {
    check_dim(uploads.len(), weights.len())?;
    check_roster(uploads, roster)?;
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain(
            "client weights must be finite and ≥ 0".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("client weights sum to zero".into()));
    }
    let mut mask_sum = vec![0.0; uploads[0].mask.len()];
    for u in uploads {
        check_dim(mask_sum.len(), u.mask.len())?;
        for (s, m) in mask_sum.iter_mut().zip(&u.mask) {
            *s += m;
        }
    }
    if let Some(bad) = mask_sum.iter().find(|s| s.abs() > MASK_CANCEL_TOL) {
        return Err(Error::Protocol(format!(
            "masks do not cancel (residual {bad:e})"
        )));
    }

    let mut order: Vec<(&MaskedUpdate, f64)> =
        uploads.iter().zip(weights.iter().copied()).collect();
    order.sort_by_key(|(u, _)| u.client_id);
    let mut acc: Option<Vec<DMatrix<f64>>> = None;
    for (u, w) in order {
        let mats = u.model()?.reconstruct();
        match &mut acc {
            None => acc = Some(mats.into_iter().map(|m| m * (w / total)).collect()),
            Some(acc) => {
                check_dim(acc.len(), mats.len())?;
                for (a, m) in acc.iter_mut().zip(mats) {
                    if a.shape() != m.shape() {
                        return Err(Error::Domain("client layer shapes differ".into()));
                    }
                    *a += m * (w / total);
                }
            }
        }
    }
    Ok(acc.expect("roster is non-empty"))
}

/// [`aggregate_matrices`] re-decomposed at the cloud's `tau` and `r_max`.
pub fn aggregate(
    uploads: &[MaskedUpdate],
    weights: &[f64],
    roster: &[u32],
    tau: f64,
    r_max: usize,
) -> Result<LowRankModel> {
    let mats = aggregate_matrices(uploads, weights, roster)?;
    let mut global = LowRankModel::from_matrices(&mats, tau, r_max)?;
    global.round = uploads.iter().map(|u| u.round).max().unwrap_or(0);
    Ok(global)
}

/// `W = α·W̃_global + (1 − α)·W̃_local` per layer, re-decomposed at the client's
/// `tau` and `r_max`.
pub fn reverse_correct(
    global: &LowRankModel,
    local: &LowRankModel,
    alpha: f64,
    tau: f64,
    r_max: usize,
) -> Result<LowRankModel> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("α = {alpha} outside [0, 1]")));
    }
    check_dim(global.layers.len(), local.layers.len())?;
    let mats: Vec<DMatrix<f64>> = global
        .reconstruct()
        .into_iter()
        .zip(local.reconstruct())
        .map(|(g, l)| {
            if g.shape() != l.shape() {
                return Err(Error::Domain(format!(
                    "layer shapes {:?} and {:?} differ",
                    g.shape(),
                    l.shape()
                )));
            }
            Ok(g * alpha + l * (1.0 - alpha))
        })
        .collect::<Result<_>>()?;
    let mut out = LowRankModel::from_matrices(&mats, tau, r_max)?;
    out.round = global.round;
    out.client_id = local.client_id;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> LowRankModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats = [(4, 3), (2, 5)]
            .map(|(m, n)| DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)));
        LowRankModel::from_matrices(&mats, 1.0, 8).unwrap()
    }

    fn masked_roster(n: u32, salt: u64) -> (Vec<LowRankModel>, Vec<MaskedUpdate>, Vec<u32>) {
        let roster: Vec<u32> = (1..=n).collect();
        let book = SeedBook::derive(42, &roster);
        let models: Vec<LowRankModel> = roster.iter().map(|&i| random_model(i as u64)).collect();
        let ups = models
            .iter()
            .zip(&roster)
            .map(|(m, &i)| mask_update(m, i, &roster, &book, salt).unwrap())
            .collect();
        (models, ups, roster)
    }

    #[test]
    fn masks_cancel_for_two_and_five_clients() {
        for n in [2, 5] {
            let (models, ups, _) = masked_roster(n, 7);
            let len = models[0].flatten().len();
            let mut plain = vec![0.0; len];
            for m in &models {
                for (p, x) in plain.iter_mut().zip(m.flatten()) {
                    *p += x;
                }
            }
            for (a, b) in secure_sum(&ups).unwrap().iter().zip(&plain) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!(ups.iter().all(|u| u.upload() != u.factors));
        }
    }

    #[test]
    fn mask_values_are_bounded_and_salted() {
        let a = pair_mask(1, 2, 3, 0, 1000);
        assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(a, pair_mask(1, 3, 2, 0, 1000));
        assert_ne!(a, pair_mask(1, 2, 3, 1, 1000));
    }

    #[test]
    fn protocol_errors() {
        let m = random_model(1);
        let book = SeedBook::derive(1, &[1, 2]);
        assert!(matches!(
            mask_update(&m, 1, &[1], &book, 0),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            mask_update(&m, 3, &[1, 2], &book, 0),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            mask_update(&m, 1, &[1, 2, 3], &book, 0),
            Err(Error::Protocol(_))
        ));

        let (_, ups, roster) = masked_roster(3, 0);
        assert!(matches!(
            aggregate(&ups[..2], &[1.0, 1.0], &roster, 1.0, 8),
            Err(Error::Protocol(_))
        ));
        let mut tampered = ups.clone();
        tampered[0].mask[0] += 1.0;
        assert!(matches!(
            aggregate(&tampered, &[1.0; 3], &roster, 1.0, 8),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn aggregation_examples() {
        let (models, ups, roster) = masked_roster(2, 3);
        let first = aggregate_matrices(&ups, &[1.0, 0.0], &roster).unwrap();
        for (a, b) in first.iter().zip(models[0].reconstruct()) {
            assert!((a - b).norm() < 1e-12);
        }

        // two known 2×2 layers, equal weights
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, -1.0, 2.0]);
        let roster = [1, 2];
        let book = SeedBook::derive(5, &roster);
        let ups: Vec<MaskedUpdate> = [&a, &b]
            .iter()
            .zip(roster)
            .map(|(w, i)| {
                let m = LowRankModel::from_matrices(&[(*w).clone()], 1.0, 2).unwrap();
                mask_update(&m, i, &roster, &book, 0).unwrap()
            })
            .collect();
        let avg = &aggregate_matrices(&ups, &[1.0, 1.0], &roster).unwrap()[0];
        let hand = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert!((avg - hand).norm() < 1e-12);
    }

    #[test]
    fn identical_clients_reproduce_the_model() {
        let m = random_model(9);
        let roster = [1, 2, 3];
        let book = SeedBook::derive(0, &roster);
        let ups: Vec<MaskedUpdate> = roster
            .iter()
            .map(|&i| mask_update(&m, i, &roster, &book, 1).unwrap())
            .collect();
        let g = aggregate(&ups, &[3.0, 1.0, 2.0], &roster, 1.0, 8).unwrap();
        for (a, b) in g.reconstruct().iter().zip(m.reconstruct()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn aggregation_ignores_upload_order() {
        let (_, ups, roster) = masked_roster(4, 11);
        let w = [1.0, 2.0, 3.0, 4.0];
        let a = aggregate_matrices(&ups, &w, &roster).unwrap();
        let rev: Vec<MaskedUpdate> = ups.iter().rev().cloned().collect();
        let rw: Vec<f64> = w.iter().rev().copied().collect();
        let b = aggregate_matrices(&rev, &rw, &roster).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn reverse_correction_examples() {
        let (g, l) = (random_model(1), random_model(2));
        let one = reverse_correct(&g, &l, 1.0, 1.0, 8).unwrap();
        let zero = reverse_correct(&g, &l, 0.0, 1.0, 8).unwrap();
        for ((a, b), (c, d)) in one
            .reconstruct()
            .iter()
            .zip(g.reconstruct())
            .zip(zero.reconstruct().iter().zip(l.reconstruct()))
        {
            assert!((a - b).norm() < 1e-8);
            assert!((c - d).norm() < 1e-8);
        }
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let ga = LowRankModel::from_matrices(&[a], 1.0, 2).unwrap();
        let lb = LowRankModel::from_matrices(&[b], 1.0, 2).unwrap();
        let mid = reverse_correct(&ga, &lb, 0.5, 1.0, 2)
            .unwrap()
            .reconstruct();
        let hand = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        assert!((&mid[0] - hand).norm() < 1e-12);
        assert!(reverse_correct(&ga, &lb, 1.5, 1.0, 2).is_err());
        let other = LowRankModel::from_matrices(&[DMatrix::zeros(3, 2)], 1.0, 2).unwrap();
        assert!(reverse_correct(&ga, &other, 0.5, 1.0, 2).is_err());
    }
}
