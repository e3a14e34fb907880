use num_complex::Complex64;
use proptest::prelude::*;
use qv2x::qcore::{state_fidelity, Angle, Circuit, GateKind, GateOp, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(n_qubits: usize, rng: &mut ChaCha8Rng) -> StateVector<f64> {
    let amps = (0..1usize << n_qubits)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    StateVector::from_unnormalized(amps).unwrap()
}

fn random_circuit(
    n_qubits: usize,
    n_gates: usize,
    n_params: usize,
    rng: &mut ChaCha8Rng,
) -> Circuit<f64> {
    let mut c = Circuit::with_params(n_qubits, n_params).unwrap();
    for _ in 0..n_gates {
        let q = rng.random_range(0..n_qubits);
        let angle = if n_params > 0 && rng.random_bool(0.5) {
            Angle::slot(rng.random_range(0..n_params))
        } else {
            Angle::Fixed(rng.random_range(-4.0..4.0))
        };
        let op = match rng.random_range(0..5) {
            0 => GateOp::rotation(GateKind::Rx, q, angle),
            1 => GateOp::rotation(GateKind::Ry, q, angle),
            2 => GateOp::rotation(GateKind::Rz, q, angle),
            3 => GateOp::h(q),
            _ if n_qubits > 1 => GateOp::cnot(q, (q + rng.random_range(1..n_qubits)) % n_qubits),
            _ => GateOp::h(q),
        };
        c.push(op).unwrap();
    }
    c
}

proptest! {
    #[test]
    fn circuits_preserve_the_norm(seed in any::<u64>(), n in 1usize..=6, gates in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_circuit(n, gates, 3, &mut rng);
        let params: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
        let out = c.apply(&random_state(n, &mut rng), &params).unwrap();
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inverse_undoes_the_circuit(seed in any::<u64>(), n in 1usize..=6, gates in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_circuit(n, gates, 2, &mut rng);
        let params = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let s = random_state(n, &mut rng);
        let back = c.inverse().apply(&c.apply(&s, &params).unwrap(), &params).unwrap();
        prop_assert!((state_fidelity(&s, &back).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fidelity_is_symmetric_and_bounded(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_state(n, &mut rng), random_state(n, &mut rng));
        let f = state_fidelity(&a, &b).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
        prop_assert!((f - state_fidelity(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((state_fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mismatched_widths_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = random_circuit(3, 5, 0, &mut rng);
    assert!(c.apply(&random_state(2, &mut rng), &[]).is_err());
    assert!(state_fidelity(&random_state(2, &mut rng), &random_state(3, &mut rng)).is_err());
}
