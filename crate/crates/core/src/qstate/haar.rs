use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{StateVector, UnitaryMatrix};
use crate::error::{Error, Result};

pub const MAX_HAAR_QUBITS: usize = 5;

/// Haar-random unitary on `n_qubits` qubits: QR of a complex Ginibre matrix
/// with the phases of `R`'s diagonal folded back into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<UnitaryMatrix> {
    if n_qubits == 0 || n_qubits > MAX_HAAR_QUBITS {
        return Err(Error::TooManyQubits { got: n_qubits, max: MAX_HAAR_QUBITS });
    }
    let dim = 1usize << n_qubits;
    // column-major fill order is part of the determinism contract
    let z = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    let data = (0..dim).flat_map(|r| (0..dim).map(move |c| (r, c))).map(|(r, c)| q[(r, c)]).collect();
    UnitaryMatrix::from_row_major(dim, data)
}

/// `haar_unitary(n) |0...0>`.
pub fn haar_state<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<StateVector> {
    let u = haar_unitary(n_qubits, rng)?;
    let dim = u.dim();
    StateVector::from_amplitudes((0..dim).map(|r| u.get(r, 0)).collect())
}
