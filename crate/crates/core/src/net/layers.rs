//! Dense and 3x3 convolution kernels with their backward passes.
//!
//! Convolution activations are stored cell-major (`cells x channels`) so the
//! innermost loops run over contiguous output channels. Weights for a 3x3
//! convolution are laid out `[tap][in][out]` with taps in row-major order.

use super::Real;

pub(crate) fn silu<T: Real>(z: T) -> T {
    z * sigmoid(z)
}

pub(crate) fn silu_grad<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::one() + z * (T::one() - s))
}

pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// `out = b + x W` with `W` stored `[in][out]`.
pub(crate) fn dense_forward<T: Real>(x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let n_out = b.len();
    debug_assert_eq!(w.len(), x.len() * n_out);
    out.copy_from_slice(b);
    for (xi, row) in x.iter().zip(w.chunks_exact(n_out)) {
        if *xi == T::zero() {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += *xi * *wij;
        }
    }
}

pub(crate) fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    dout: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let n_out = dout.len();
    for (d, g) in db.iter_mut().zip(dout) {
        *d += *g;
    }
    for (xi, drow) in x.iter().zip(dw.chunks_exact_mut(n_out)) {
        if *xi == T::zero() {
            continue;
        }
        for (d, g) in drow.iter_mut().zip(dout) {
            *d += *xi * *g;
        }
    }
    if let Some(dx) = dx {
        for (dxi, row) in dx.iter_mut().zip(w.chunks_exact(n_out)) {
            let mut acc = T::zero();
            for (wij, g) in row.iter().zip(dout) {
                acc += *wij * *g;
            }
            *dxi += acc;
        }
    }
}

/// Yields `(tap, neighbour cell)` for every in-board 3x3 neighbour of `cell`.
#[inline]
fn taps(n: usize, cell: usize) -> impl Iterator<Item = (usize, usize)> {
    let (r, c) = ((cell / n) as isize, (cell % n) as isize);
    (0..9).filter_map(move |k| {
        let (rr, cc) = (r + k as isize / 3 - 1, c + k as isize % 3 - 1);
        (rr >= 0 && cc >= 0 && rr < n as isize && cc < n as isize)
            .then(|| (k, rr as usize * n + cc as usize))
    })
}

/// Same-padded 3x3 convolution over an `n x n` board.
pub(crate) fn conv3x3_forward<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    w: &[T],
    b: &[T],
    out: &mut [T],
) {
    let cout = b.len();
    for cell in 0..n * n {
        let orow = &mut out[cell * cout..(cell + 1) * cout];
        orow.copy_from_slice(b);
        for (k, q) in taps(n, cell) {
            let xrow = &x[q * cin..(q + 1) * cin];
            let wk = &w[k * cin * cout..(k + 1) * cin * cout];
            for (xi, wrow) in xrow.iter().zip(wk.chunks_exact(cout)) {
                if *xi == T::zero() {
                    continue;
                }
                for (o, wij) in orow.iter_mut().zip(wrow) {
                    *o += *xi * *wij;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    w: &[T],
    dout: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let cout = db.len();
    for cell in 0..n * n {
        let grow = &dout[cell * cout..(cell + 1) * cout];
        for (d, g) in db.iter_mut().zip(grow) {
            *d += *g;
        }
        for (k, q) in taps(n, cell) {
            let xrow = &x[q * cin..(q + 1) * cin];
            let base = k * cin * cout;
            for (ci, xi) in xrow.iter().enumerate() {
                let off = base + ci * cout;
                if *xi != T::zero() {
                    for (d, g) in dw[off..off + cout].iter_mut().zip(grow) {
                        *d += *xi * *g;
                    }
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let mut acc = T::zero();
                    for (wij, g) in w[off..off + cout].iter().zip(grow) {
                        acc += *wij * *g;
                    }
                    dx[q * cin + ci] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_center_tap_is_identity_when_other_taps_are_zero() {
        let n = 3;
        let mut w = vec![0.0f64; 9];
        w[4] = 2.0;
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let mut out = vec![0.0; 9];
        conv3x3_forward(&x, n, 1, &w, &[0.5], &mut out);
        for i in 0..9 {
            assert_eq!(out[i], 2.0 * x[i] + 0.5);
        }
    }

    #[test]
    fn conv_corner_sees_four_cells() {
        let n = 3;
        let w = vec![1.0f64; 9];
        let x = vec![1.0; 9];
        let mut out = vec![0.0; 9];
        conv3x3_forward(&x, n, 1, &w, &[0.0], &mut out);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn softplus_is_stable_and_positive() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0f64), 800.0);
        assert!(softplus(-800.0f64) >= 0.0);
        assert!((silu_grad(0.0f64) - 0.5).abs() < 1e-15);
    }
}
