use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    H,
    Cnot,
}

impl GateKind {
    pub fn is_rotation(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Rz)
    }
}

/// Rotation angle: either baked into the circuit or read from a parameter slot.
///
/// A slot angle evaluates to `scale · params[slot]`; inverse circuits use `scale = -1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Angle<T> {
    Fixed(T),
    Param { slot: usize, scale: T },
}

impl<T: Real> Angle<T> {
    pub fn slot(slot: usize) -> Self {
        Angle::Param {
            slot,
            scale: T::one(),
        }
    }

    pub fn resolve(&self, params: &[T]) -> T {
        match *self {
            Angle::Fixed(a) => a,
            Angle::Param { slot, scale } => scale * params[slot],
        }
    }

    pub fn negated(&self) -> Self {
        match *self {
            Angle::Fixed(a) => Angle::Fixed(-a),
            Angle::Param { slot, scale } => Angle::Param {
                slot,
                scale: -scale,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateOp<T> {
    pub kind: GateKind,
    pub target: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle: Option<Angle<T>>,
}

impl<T: Real> GateOp<T> {
    pub fn rotation(kind: GateKind, target: usize, angle: Angle<T>) -> Self {
        debug_assert!(kind.is_rotation());
        Self {
            kind,
            target,
            control: None,
            angle: Some(angle),
        }
    }

    pub fn rx(target: usize, angle: Angle<T>) -> Self {
        Self::rotation(GateKind::Rx, target, angle)
    }

    pub fn ry(target: usize, angle: Angle<T>) -> Self {
        Self::rotation(GateKind::Ry, target, angle)
    }

    pub fn rz(target: usize, angle: Angle<T>) -> Self {
        Self::rotation(GateKind::Rz, target, angle)
    }

    pub fn h(target: usize) -> Self {
        Self {
            kind: GateKind::H,
            target,
            control: None,
            angle: None,
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            kind: GateKind::Cnot,
            target,
            control: Some(control),
            angle: None,
        }
    }

    /// The gate undoing this one.
    pub fn inverse(&self) -> Self {
        Self {
            angle: self.angle.map(|a| a.negated()),
            ..*self
        }
    }
}

/// 2×2 unitary of a single-qubit gate at rotation angle `theta` (ignored for H).
///
/// `RX(θ) = exp(-iθX/2)`, `RY(θ) = exp(-iθY/2)`, `RZ(θ) = exp(-iθZ/2)`.
pub fn single_qubit_matrix<T: Real>(kind: GateKind, theta: T) -> [[Complex<T>; 2]; 2] {
    let zero = T::zero();
    let half = theta / T::lit(2.0);
    let (c, s) = (half.cos(), half.sin());
    match kind {
        GateKind::Rx => [
            [Complex::new(c, zero), Complex::new(zero, -s)],
            [Complex::new(zero, -s), Complex::new(c, zero)],
        ],
        GateKind::Ry => [
            [Complex::new(c, zero), Complex::new(-s, zero)],
            [Complex::new(s, zero), Complex::new(c, zero)],
        ],
        GateKind::Rz => [
            [Complex::new(c, -s), Complex::new(zero, zero)],
            [Complex::new(zero, zero), Complex::new(c, s)],
        ],
        GateKind::H => {
            let h = T::FRAC_1_SQRT_2();
            [
                [Complex::new(h, zero), Complex::new(h, zero)],
                [Complex::new(h, zero), Complex::new(-h, zero)],
            ]
        }
        GateKind::Cnot => unreachable!("CNOT is a two-qubit gate"),
    }
}
