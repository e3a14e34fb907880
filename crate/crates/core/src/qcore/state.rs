use num_complex::Complex;

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Largest register the dense engine accepts (2^12 amplitudes).
pub const MAX_QUBITS: usize = 12;

/// Dense pure state over `n_qubits` wires.
///
/// Basis index bit layout is big-endian in the wire label: wire 0 is the most
/// significant bit, so the ket `|10⟩` (wire 0 set) is index 2.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T: Real> {
    n_qubits: usize,
    amps: Vec<Complex<T>>,
}

fn check_qubits(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::Capacity(format!(
            "register of {n_qubits} qubits outside 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}

/// `|0…0⟩` on `n_qubits` wires.
pub fn init_state<T: Real>(n_qubits: usize) -> Result<StateVector<T>> {
    StateVector::basis(n_qubits, 0)
}

/// `|⟨a|b⟩|²`.
pub fn state_fidelity<T: Real>(a: &StateVector<T>, b: &StateVector<T>) -> Result<T> {
    Ok(a.inner(b)?.norm_sqr())
}

impl<T: Real> StateVector<T> {
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::Domain(format!("basis index {index} >= {dim}")));
        }
        let mut amps = vec![Complex::new(T::zero(), T::zero()); dim];
        amps[index] = Complex::new(T::one(), T::zero());
        Ok(Self { n_qubits, amps })
    }

    /// Wraps an amplitude vector that must already be normalized.
    pub fn from_amplitudes(amps: Vec<Complex<T>>) -> Result<Self> {
        let dim = amps.len();
        if !dim.is_power_of_two() || dim < 2 {
            return Err(Error::Domain(format!("amplitude length {dim} is not 2^n")));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        check_qubits(n_qubits)?;
        let state = Self { n_qubits, amps };
        let norm = state.norm_sqr();
        if !norm.is_finite() || (norm - T::one()).abs() > T::norm_tol() {
            return Err(Error::Domain(format!("state norm² {norm:?} is not 1")));
        }
        Ok(state)
    }

    /// Normalizes `amps` before wrapping; a zero vector is a domain error.
    pub fn from_unnormalized(mut amps: Vec<Complex<T>>) -> Result<Self> {
        let norm = amps
            .iter()
            .fold(T::zero(), |acc, a| acc + a.norm_sqr())
            .sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::Domain("cannot normalize a zero state".into()));
        }
        for a in &mut amps {
            *a = *a / norm;
        }
        Self::from_amplitudes(amps)
    }

    /// Real non-negative amplitude encoding: amplitudes proportional to `values`.
    pub fn from_real(values: &[T]) -> Result<Self> {
        Self::from_unnormalized(values.iter().map(|&v| Complex::new(v, T::zero())).collect())
    }

    /// Product state `⊗_w RY(angle_w)|0⟩`, identical to running the RY gates on `|0…0⟩`.
    pub fn product_ry(angles: &[T]) -> Result<Self> {
        let n = angles.len();
        check_qubits(n)?;
        let two = T::lit(2.0);
        let halves: Vec<(T, T)> = angles
            .iter()
            .map(|&a| ((a / two).cos(), (a / two).sin()))
            .collect();
        let amps = (0..1usize << n)
            .map(|idx| {
                let mut amp = T::one();
                for (w, &(c, s)) in halves.iter().enumerate() {
                    amp = amp * if idx & (1 << (n - 1 - w)) != 0 { s } else { c };
                }
                Complex::new(amp, T::zero())
            })
            .collect();
        Ok(Self { n_qubits: n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> T {
        self.amps
            .iter()
            .fold(T::zero(), |acc, a| acc + a.norm_sqr())
    }

    /// Measurement distribution in the computational basis.
    pub fn probabilities(&self) -> Vec<T> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Bit of the basis index that carries `wire`.
    pub fn wire_mask(&self, wire: usize) -> Result<usize> {
        if wire >= self.n_qubits {
            return Err(Error::Wire(format!(
                "wire {wire} on a {}-qubit register",
                self.n_qubits
            )));
        }
        Ok(1 << (self.n_qubits - 1 - wire))
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<Complex<T>> {
        check_dim(self.dim(), other.dim())?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            }))
    }

    pub fn fidelity(&self, other: &Self) -> Result<T> {
        state_fidelity(self, other)
    }

    pub(crate) fn apply_single(&mut self, wire: usize, m: &[[Complex<T>; 2]; 2]) {
        let mask = 1usize << (self.n_qubits - 1 - wire);
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let j = i | mask;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[j] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    pub(crate) fn apply_cnot(&mut self, control: usize, target: usize) {
        let cmask = 1usize << (self.n_qubits - 1 - control);
        let tmask = 1usize << (self.n_qubits - 1 - target);
        for i in 0..self.amps.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amps.swap(i, i | tmask);
            }
        }
    }

    /// Multiplies amplitude `j` by `exp(i·phases[j])`.
    pub fn apply_diagonal_phase(&mut self, phases: &[T]) -> Result<()> {
        check_dim(self.dim(), phases.len())?;
        for (a, &p) in self.amps.iter_mut().zip(phases) {
            *a = *a * Complex::new(p.cos(), p.sin());
        }
        Ok(())
    }

    /// Hadamard on every wire.
    pub fn apply_hadamard_layer(&mut self) {
        let h = T::FRAC_1_SQRT_2();
        let m = [
            [Complex::new(h, T::zero()), Complex::new(h, T::zero())],
            [Complex::new(h, T::zero()), Complex::new(-h, T::zero())],
        ];
        for w in 0..self.n_qubits {
            self.apply_single(w, &m);
        }
    }

    /// Applies the basis permutation `index -> perm[index]`; `perm` must be a bijection.
    pub fn apply_permutation(&mut self, perm: &[usize]) -> Result<()> {
        check_dim(self.dim(), perm.len())?;
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Domain("basis map is not a permutation".into()));
            }
        }
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.dim()];
        for (i, &p) in perm.iter().enumerate() {
            out[p] = self.amps[i];
        }
        self.amps = out;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_state_is_all_zero_ket() {
        let s: StateVector<f64> = init_state(1).unwrap();
        assert_eq!(
            s.amplitudes(),
            &[Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]
        );
        let s: StateVector<f64> = init_state(2).unwrap();
        assert_eq!(s.dim(), 4);
        assert_eq!(s.amplitudes()[0], Complex::new(1.0, 0.0));
    }

    #[test]
    fn register_cap_is_enforced() {
        assert!(matches!(init_state::<f64>(13), Err(Error::Capacity(_))));
        assert!(matches!(init_state::<f64>(0), Err(Error::Capacity(_))));
        assert!(init_state::<f32>(12).is_ok());
    }

    #[test]
    fn fidelity_examples() {
        let zero: StateVector<f64> = init_state(1).unwrap();
        let one = StateVector::<f64>::basis(1, 1).unwrap();
        let mut plus = zero.clone();
        plus.apply_hadamard_layer();
        assert!((state_fidelity(&zero, &zero).unwrap() - 1.0).abs() < 1e-15);
        assert!(state_fidelity(&zero, &one).unwrap().abs() < 1e-15);
        assert!((state_fidelity(&zero, &plus).unwrap() - 0.5).abs() < 1e-15);
        let two: StateVector<f64> = init_state(2).unwrap();
        assert!(matches!(
            state_fidelity(&zero, &two),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn product_ry_matches_angle_formula() {
        let s = StateVector::<f64>::product_ry(&[std::f64::consts::PI, 0.0]).unwrap();
        // wire 0 flipped, wire 1 untouched: |10⟩ = index 2
        assert!((s.amplitudes()[2].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_zero_vector_rejected() {
        assert!(StateVector::<f64>::from_real(&[0.0, 0.0]).is_err());
        assert!(StateVector::<f64>::from_amplitudes(vec![Complex::new(1.0, 0.0); 3]).is_err());
    }
}
