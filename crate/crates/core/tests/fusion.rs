use num_complex::Complex64;
use proptest::prelude::*;
use qv2x::fusion::{cross_fuse, fused_distribution, unfuse};
use qv2x::qcore::{state_fidelity, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(n_qubits: usize, rng: &mut ChaCha8Rng) -> StateVector<f64> {
    let amps = (0..1usize << n_qubits)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    StateVector::from_unnormalized(amps).unwrap()
}

proptest! {
    #[test]
    fn unfuse_inverts_cross_fuse(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(n, &mut rng);
        let b: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(0.0..=1.0)).collect();
        let (fused, handle) = cross_fuse(&s, &b).unwrap();
        prop_assert!((fused.norm_sqr() - 1.0).abs() < 1e-12);
        let p = fused_distribution(&fused);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let back = unfuse(&fused, &handle).unwrap();
        prop_assert!(1.0 - state_fidelity(&s, &back).unwrap() < 1e-12);
    }
}

#[test]
fn fusion_rejects_bad_semantics_and_tampered_handles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_state(2, &mut rng);
    assert!(cross_fuse(&s, &[0.5; 3]).is_err());
    assert!(cross_fuse(&s, &[0.5, 0.5, 1.5, 0.0]).is_err());
    let (fused, mut handle) = cross_fuse(&s, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    handle.source_dims = 8;
    assert!(unfuse(&fused, &handle).is_err());
}
