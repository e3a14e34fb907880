use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::qcore::{Angle, Circuit, Observable};

/// Side length of the square input image.
pub const IMAGE_SIDE: usize = 8;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Qubits per convolution patch (one per pixel of a 2×2 patch).
pub const PATCH_QUBITS: usize = 4;
pub const N_PATCHES: usize = IMAGE_PIXELS / PATCH_QUBITS;
pub const N_CLASSES: usize = 10;

/// 8×8 grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        check_dim(IMAGE_PIXELS, pixels.len())?;
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, &v)| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::Domain(format!("pixel {i} = {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// The 16 non-overlapping 2×2 patches in row-major patch order; within a patch
    /// the pixels are (top-left, top-right, bottom-left, bottom-right) → wires 0..3.
    pub fn patches(&self) -> [[f64; PATCH_QUBITS]; N_PATCHES] {
        let mut out = [[0.0; PATCH_QUBITS]; N_PATCHES];
        for (p, patch) in out.iter_mut().enumerate() {
            for (k, &idx) in patch_pixel_indices(p).iter().enumerate() {
                patch[k] = self.pixels[idx];
            }
        }
        out
    }
}

/// Image indices of the four pixels in patch `p`.
pub fn patch_pixel_indices(p: usize) -> [usize; PATCH_QUBITS] {
    let half = IMAGE_SIDE / 2;
    let (r, c) = (2 * (p / half), 2 * (p % half));
    [
        r * IMAGE_SIDE + c,
        r * IMAGE_SIDE + c + 1,
        (r + 1) * IMAGE_SIDE + c,
        (r + 1) * IMAGE_SIDE + c + 1,
    ]
}

/// Latent vector of Pauli-Z expectations, every entry in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticFeatures {
    values: Vec<f64>,
}

impl SemanticFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("feature {v} outside [-1, 1]")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Weight-shared convolution circuit: `layers` repetitions of per-wire RY, RZ and a
/// CNOT ring 0→1→2→3→0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvAnsatz {
    pub layers: usize,
}

impl Default for ConvAnsatz {
    fn default() -> Self {
        Self { layers: 2 }
    }
}

impl ConvAnsatz {
    pub fn n_params(&self) -> usize {
        self.layers * 2 * PATCH_QUBITS
    }

    /// Slot `8l + 2w` drives RY on wire `w` in layer `l`, slot `8l + 2w + 1` the RZ.
    pub fn circuit(&self) -> Circuit<f64> {
        let mut c = Circuit::with_params(PATCH_QUBITS, self.n_params()).expect("4 qubits");
        for l in 0..self.layers {
            for w in 0..PATCH_QUBITS {
                let base = l * 2 * PATCH_QUBITS + 2 * w;
                c.ry(w, Angle::slot(base)).expect("valid wire");
                c.rz(w, Angle::slot(base + 1)).expect("valid wire");
            }
            for w in 0..PATCH_QUBITS {
                c.cnot(w, (w + 1) % PATCH_QUBITS).expect("valid wire");
            }
        }
        c
    }

    /// Encoding RY gates (slot `i` scaled by π) followed by the convolution with
    /// `conv_params` baked in as fixed angles. Pixel values are the parameters.
    pub fn pixel_circuit(&self, conv_params: &[f64]) -> Circuit<f64> {
        let mut c = Circuit::with_params(PATCH_QUBITS, PATCH_QUBITS).expect("4 qubits");
        for w in 0..PATCH_QUBITS {
            c.ry(
                w,
                Angle::Param {
                    slot: w,
                    scale: std::f64::consts::PI,
                },
            )
            .expect("valid wire");
        }
        for op in self.circuit().ops() {
            let mut op = *op;
            if let Some(a) = op.angle {
                op.angle = Some(Angle::Fixed(a.resolve(conv_params)));
            }
            c.push(op).expect("valid op");
        }
        c
    }
}

/// Affine map `y = W x + b`, `W` row-major `rows × cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut d = Self::zeros(rows, cols);
        for w in d.weights.iter_mut().chain(d.bias.iter_mut()) {
            *w = rng.random_range(-scale..=scale);
        }
        d
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.cols, x.len())?;
        Ok(self
            .weights
            .chunks(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect())
    }

    /// `Wᵀ g`.
    pub fn backward_input(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, g) in self.weights.chunks(self.cols).zip(grad_out) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += g * w;
            }
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `[W | b]` as a `rows × (cols + 1)` row-major matrix.
    pub fn augmented(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * (self.cols + 1));
        for (row, b) in self.weights.chunks(self.cols).zip(&self.bias) {
            out.extend_from_slice(row);
            out.push(*b);
        }
        out
    }

    pub fn set_augmented(&mut self, aug: &[f64]) -> Result<()> {
        check_dim(self.rows * (self.cols + 1), aug.len())?;
        for (r, row) in aug.chunks(self.cols + 1).enumerate() {
            self.weights[r * self.cols..(r + 1) * self.cols].copy_from_slice(&row[..self.cols]);
            self.bias[r] = row[self.cols];
        }
        Ok(())
    }
}

/// Trainable semantic codec: convolution circuit parameters plus the classical
/// classification head and reconstruction decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecModel {
    pub ansatz: ConvAnsatz,
    pub conv_params: Vec<f64>,
    pub latent_wires: Vec<usize>,
    pub head: Dense,
    pub decoder: Dense,
}

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.1;

impl CodecModel {
    /// Seeded initialization, every weight uniform in `[-0.1, 0.1]`.
    pub fn init(ansatz: ConvAnsatz, latent_wires: Vec<usize>, seed: u64) -> Result<Self> {
        validate_latent(&latent_wires)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = N_PATCHES * latent_wires.len();
        let conv_params = (0..ansatz.n_params())
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        let head = Dense::uniform(N_CLASSES, d, INIT_SCALE, &mut rng);
        let decoder = Dense::uniform(IMAGE_PIXELS, d, INIT_SCALE, &mut rng);
        Ok(Self {
            ansatz,
            conv_params,
            latent_wires,
            head,
            decoder,
        })
    }

    /// All-zero parameters, handy for analytic checks.
    pub fn zeros(ansatz: ConvAnsatz, latent_wires: Vec<usize>) -> Result<Self> {
        validate_latent(&latent_wires)?;
        let d = N_PATCHES * latent_wires.len();
        Ok(Self {
            ansatz,
            conv_params: vec![0.0; ansatz.n_params()],
            latent_wires,
            head: Dense::zeros(N_CLASSES, d),
            decoder: Dense::zeros(IMAGE_PIXELS, d),
        })
    }

    pub fn latent_dim(&self) -> usize {
        N_PATCHES * self.latent_wires.len()
    }

    pub fn latent_observables(&self) -> Vec<Observable> {
        self.latent_wires
            .iter()
            .map(|&w| Observable::z(w))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        validate_latent(&self.latent_wires)?;
        check_dim(self.ansatz.n_params(), self.conv_params.len())?;
        let d = self.latent_dim();
        check_dim(d, self.head.cols)?;
        check_dim(d, self.decoder.cols)?;
        check_dim(N_CLASSES, self.head.rows)?;
        check_dim(IMAGE_PIXELS, self.decoder.rows)?;
        check_dim(self.head.rows * self.head.cols, self.head.weights.len())?;
        check_dim(
            self.decoder.rows * self.decoder.cols,
            self.decoder.weights.len(),
        )?;
        check_dim(self.head.rows, self.head.bias.len())?;
        check_dim(self.decoder.rows, self.decoder.bias.len())?;
        Ok(())
    }

    /// Total trainable parameter count (quantum + classical).
    pub fn n_params(&self) -> usize {
        self.conv_params.len() + self.head.n_params() + self.decoder.n_params()
    }

    /// Flat parameter vector: conv params, head W, head b, decoder W, decoder b.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&self.conv_params);
        out.extend_from_slice(&self.head.weights);
        out.extend_from_slice(&self.head.bias);
        out.extend_from_slice(&self.decoder.weights);
        out.extend_from_slice(&self.decoder.bias);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.n_params(), flat.len())?;
        let mut rest = flat;
        for dst in [
            &mut self.conv_params,
            &mut self.head.weights,
            &mut self.head.bias,
            &mut self.decoder.weights,
            &mut self.decoder.bias,
        ] {
            let (now, later) = rest.split_at(dst.len());
            dst.copy_from_slice(now);
            rest = later;
        }
        Ok(())
    }
}

fn validate_latent(latent: &[usize]) -> Result<()> {
    if latent.is_empty() {
        return Err(Error::Domain("latent_wires is empty".into()));
    }
    let mut seen = [false; PATCH_QUBITS];
    for &w in latent {
        if w >= PATCH_QUBITS || std::mem::replace(&mut seen[w], true) {
            return Err(Error::Wire(format!(
                "latent wires {latent:?} not a subset of 0..4"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patches_cover_image_once() {
        let mut seen = [0; IMAGE_PIXELS];
        for p in 0..N_PATCHES {
            for i in patch_pixel_indices(p) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(patch_pixel_indices(5), [18, 19, 26, 27]);
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(vec![0.5; 63]).is_err());
        assert!(matches!(Image::new(vec![1.5; 64]), Err(Error::Domain(_))));
        assert!(Image::new(vec![1.0; 64]).is_ok());
    }

    #[test]
    fn default_model_shape() {
        let m = CodecModel::init(ConvAnsatz::default(), vec![0, 1], 7).unwrap();
        assert_eq!(m.latent_dim(), 32);
        assert_eq!(m.conv_params.len(), 16);
        assert!(m.flat_params().iter().all(|v| v.abs() <= INIT_SCALE));
        assert_eq!(
            m,
            CodecModel::init(ConvAnsatz::default(), vec![0, 1], 7).unwrap()
        );
        m.validate().unwrap();
        assert!(CodecModel::init(ConvAnsatz::default(), vec![], 7).is_err());
        assert!(CodecModel::init(ConvAnsatz::default(), vec![0, 4], 7).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        let m = CodecModel::init(ConvAnsatz::default(), vec![0, 1, 2], 3).unwrap();
        let mut z = CodecModel::zeros(ConvAnsatz::default(), vec![0, 1, 2]).unwrap();
        z.set_flat_params(&m.flat_params()).unwrap();
        assert_eq!(z, m);
    }

    #[test]
    fn augmented_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::uniform(3, 2, 1.0, &mut rng);
        let mut e = Dense::zeros(3, 2);
        e.set_augmented(&d.augmented()).unwrap();
        assert_eq!(d, e);
    }
}
