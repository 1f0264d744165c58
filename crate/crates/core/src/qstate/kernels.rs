//! In-place amplitude kernels shared by [`StateVector`](super::StateVector) and the
//! compiled program runner.
//!
//! Every kernel takes a control mask and value: the gate acts only on basis
//! indices `i` with `i & cmask == cval`. Targets must not appear in `cmask`.

use num_complex::Complex64 as C64;

use super::UnitaryMatrix;

#[inline(always)]
fn pair_index(k: usize, low: usize) -> usize {
    ((k & !low) << 1) | (k & low)
}

/// exp(-i theta Y / 2)
pub(crate) fn apply_ry(amps: &mut [C64], target: usize, cmask: usize, cval: usize, theta: f64) {
    let (s, c) = (0.5 * theta).sin_cos();
    let tbit = 1usize << target;
    let low = tbit - 1;
    for k in 0..amps.len() >> 1 {
        let i0 = pair_index(k, low);
        if i0 & cmask != cval {
            continue;
        }
        let i1 = i0 | tbit;
        let a0 = amps[i0];
        let a1 = amps[i1];
        amps[i0] = a0 * c - a1 * s;
        amps[i1] = a0 * s + a1 * c;
    }
}

/// exp(-i theta Z / 2)
pub(crate) fn apply_rz(amps: &mut [C64], target: usize, cmask: usize, cval: usize, theta: f64) {
    let (s, c) = (0.5 * theta).sin_cos();
    let p0 = C64::new(c, -s);
    let p1 = C64::new(c, s);
    let tbit = 1usize << target;
    for (i, a) in amps.iter_mut().enumerate() {
        if i & cmask != cval {
            continue;
        }
        *a *= if i & tbit == 0 { p0 } else { p1 };
    }
}

/// exp(-i theta X / 2)
pub(crate) fn apply_rx(amps: &mut [C64], target: usize, cmask: usize, cval: usize, theta: f64) {
    let (s, c) = (0.5 * theta).sin_cos();
    let tbit = 1usize << target;
    let low = tbit - 1;
    for k in 0..amps.len() >> 1 {
        let i0 = pair_index(k, low);
        if i0 & cmask != cval {
            continue;
        }
        let i1 = i0 | tbit;
        let a0 = amps[i0];
        let a1 = amps[i1];
        // -i s a
        amps[i0] = a0 * c + C64::new(a1.im * s, -a1.re * s);
        amps[i1] = a1 * c + C64::new(a0.im * s, -a0.re * s);
    }
}

pub(crate) fn apply_h(amps: &mut [C64], target: usize, cmask: usize, cval: usize) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let tbit = 1usize << target;
    let low = tbit - 1;
    for k in 0..amps.len() >> 1 {
        let i0 = pair_index(k, low);
        if i0 & cmask != cval {
            continue;
        }
        let i1 = i0 | tbit;
        let a0 = amps[i0];
        let a1 = amps[i1];
        amps[i0] = (a0 + a1) * r;
        amps[i1] = (a0 - a1) * r;
    }
}

pub(crate) fn apply_x(amps: &mut [C64], target: usize, cmask: usize, cval: usize) {
    let tbit = 1usize << target;
    let low = tbit - 1;
    for k in 0..amps.len() >> 1 {
        let i0 = pair_index(k, low);
        if i0 & cmask != cval {
            continue;
        }
        amps.swap(i0, i0 | tbit);
    }
}

pub(crate) fn apply_cz(amps: &mut [C64], a: usize, b: usize, cmask: usize, cval: usize) {
    let mask = cmask | (1 << a) | (1 << b);
    let val = cval | (1 << a) | (1 << b);
    for (i, amp) in amps.iter_mut().enumerate() {
        if i & mask == val {
            *amp = -*amp;
        }
    }
}

/// Applies `mat` to the sub-register `targets` (targets[0] is the least
/// significant bit of the matrix index).
pub(crate) fn apply_unitary(amps: &mut [C64], targets: &[usize], cmask: usize, cval: usize, mat: &UnitaryMatrix) {
    let dim = mat.dim();
    let tmask: usize = targets.iter().map(|t| 1usize << t).sum();
    let offsets: Vec<usize> = (0..dim)
        .map(|s| {
            targets
                .iter()
                .enumerate()
                .filter(|(j, _)| s >> j & 1 == 1)
                .map(|(_, t)| 1usize << t)
                .sum()
        })
        .collect();
    let mut buf = vec![C64::new(0.0, 0.0); dim];
    for base in 0..amps.len() {
        if base & tmask != 0 || base & cmask != cval {
            continue;
        }
        for (s, off) in offsets.iter().enumerate() {
            buf[s] = amps[base | off];
        }
        for (r, off) in offsets.iter().enumerate() {
            let row = &mat.data()[r * dim..(r + 1) * dim];
            amps[base | off] = row.iter().zip(&buf).map(|(m, v)| m * v).sum();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Pauli {
    X,
    Y,
    Z,
}

/// `<lambda| P |psi>` restricted to the control subspace.
pub(crate) fn pauli_overlap(lambda: &[C64], psi: &[C64], pauli: Pauli, target: usize, cmask: usize, cval: usize) -> C64 {
    let tbit = 1usize << target;
    let low = tbit - 1;
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..psi.len() >> 1 {
        let i0 = pair_index(k, low);
        if i0 & cmask != cval {
            continue;
        }
        let i1 = i0 | tbit;
        let (l0, l1) = (lambda[i0].conj(), lambda[i1].conj());
        let (p0, p1) = (psi[i0], psi[i1]);
        acc += match pauli {
            Pauli::X => l0 * p1 + l1 * p0,
            // Y = [[0, -i], [i, 0]]
            Pauli::Y => l0 * C64::new(p1.im, -p1.re) + l1 * C64::new(-p0.im, p0.re),
            Pauli::Z => l0 * p0 - l1 * p1,
        };
    }
    acc
}
