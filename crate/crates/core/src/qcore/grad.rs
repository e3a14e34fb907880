//! Parameter-shift gradients.
//!
//! Every slot-driven rotation `exp(-iθG/2)` has a generator with eigenvalues ±1, so
//! `∂⟨O⟩/∂θ = (⟨O⟩(θ+π/2) − ⟨O⟩(θ−π/2)) / 2` holds exactly. A slot that drives several
//! gates gets the sum of the per-gate shifts, each weighted by the gate's angle scale.

use super::circuit::Circuit;
use super::gate::Angle;
use super::observable::{expect, Observable};
use super::state::StateVector;
use crate::error::Result;
use crate::scalar::Real;

/// Expectations of `observables` after running `circuit` on `input`.
pub fn expectations<T: Real>(
    circuit: &Circuit<T>,
    params: &[T],
    input: &StateVector<T>,
    observables: &[Observable],
) -> Result<Vec<T>> {
    let out = circuit.apply(input, params)?;
    observables.iter().map(|o| expect(&out, o)).collect()
}

/// `∂⟨O⟩/∂θ_j` for every slot `j`.
pub fn param_shift_grad<T: Real>(
    circuit: &Circuit<T>,
    params: &[T],
    input: &StateVector<T>,
    obs: &Observable,
) -> Result<Vec<T>> {
    let mut jac = param_shift_jacobian(circuit, params, input, std::slice::from_ref(obs))?;
    Ok(jac.pop().expect("one observable"))
}

/// Jacobian `[observable][slot]` of several observables, sharing the shifted runs.
pub fn param_shift_jacobian<T: Real>(
    circuit: &Circuit<T>,
    params: &[T],
    input: &StateVector<T>,
    observables: &[Observable],
) -> Result<Vec<Vec<T>>> {
    Ok(param_shift_full(circuit, params, input, observables)?.1)
}

/// Forward expectations together with their parameter-shift Jacobian.
pub fn param_shift_full<T: Real>(
    circuit: &Circuit<T>,
    params: &[T],
    input: &StateVector<T>,
    observables: &[Observable],
) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    circuit.check(input, params)?;
    for o in observables {
        for &w in o.wires() {
            input.wire_mask(w)?;
        }
    }
    let mut jac = vec![vec![T::zero(); circuit.n_params()]; observables.len()];
    let half_pi = T::FRAC_PI_2();
    let two = T::lit(2.0);

    let mut prefix = input.clone();
    for (idx, op) in circuit.ops().iter().enumerate() {
        if let Some(Angle::Param { slot, scale }) = op.angle {
            for (sign, weight) in [(T::one(), T::one()), (-T::one(), -T::one())] {
                let mut shifted = prefix.clone();
                circuit.run_range(&mut shifted, params, idx, Some((idx, sign * half_pi)));
                for (row, o) in jac.iter_mut().zip(observables) {
                    row[slot] = row[slot] + weight * scale * expect(&shifted, o)? / two;
                }
            }
        }
        super::circuit::apply_op(&mut prefix, op, params, None);
    }
    let values = observables
        .iter()
        .map(|o| expect(&prefix, o))
        .collect::<Result<Vec<_>>>()?;
    Ok((values, jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::state::init_state;
    use std::f64::consts::PI;

    fn single_ry() -> Circuit<f64> {
        let mut c = Circuit::new(1).unwrap();
        c.ry(0, Angle::slot(0)).unwrap();
        c
    }

    #[test]
    fn single_ry_gradient_is_minus_sine() {
        let c = single_ry();
        let s = init_state(1).unwrap();
        let g = param_shift_grad(&c, &[PI / 2.0], &s, &Observable::z(0)).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-12);
        let g = param_shift_grad(&c, &[0.0], &s, &Observable::z(0)).unwrap();
        assert!(g[0].abs() < 1e-12);
        let g = param_shift_grad(&c, &[0.7], &s, &Observable::z(0)).unwrap();
        assert!((g[0] + 0.7f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn shared_and_negated_slots_sum_per_gate() {
        // RY(θ) then RY(-θ) is the identity, so the gradient must vanish.
        let mut c = Circuit::new(1).unwrap();
        c.ry(0, Angle::slot(0)).unwrap();
        c.ry(
            0,
            Angle::Param {
                slot: 0,
                scale: -1.0f64,
            },
        )
        .unwrap();
        let g = param_shift_grad(&c, &[0.4], &init_state(1).unwrap(), &Observable::z(0)).unwrap();
        assert!(g[0].abs() < 1e-12);
        // RY(θ) twice = RY(2θ): gradient −2 sin 2θ
        let mut c = Circuit::new(1).unwrap();
        c.ry(0, Angle::slot(0)).unwrap();
        c.ry(0, Angle::slot(0)).unwrap();
        let g = param_shift_grad(&c, &[0.4], &init_state(1).unwrap(), &Observable::z(0)).unwrap();
        assert!((g[0] + 2.0 * 0.8f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn mismatched_params_error() {
        let c = single_ry();
        assert!(param_shift_grad(&c, &[], &init_state(1).unwrap(), &Observable::z(0)).is_err());
    }
}
