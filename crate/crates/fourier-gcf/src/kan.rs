//! Learnable edge transforms: Fourier KAN, spline KAN and plain linear.
//!
//! The Fourier layer maps x to out[n,j] = sum over input dims i and
//! frequencies k of cos(k x[n,i]) a[j,i,k] + sin(k x[n,i]) b[j,i,k], with no
//! bias. On the tape it is composed from scale/cos/sin/linear primitives so
//! the engine's backward pass stays an independent route from the closed-form
//! input gradient below.
//!
//! The spline layer maps x to out[n,j] = sum_i w[j,i] (SiLU(x[n,i]) +
//! sum_m c[j,i,m] B_m(x[n,i])) over a clamped uniform B-spline basis.

use crate::error::{Error, Result};
use crate::rng;
use crate::spline::SplineGrid;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Draws cos/sin coefficient tensors of shape (d_out, d_in, g), each entry
/// from a zero-mean normal with standard deviation 1 / (sqrt(d_in) * g).
pub fn fourier_init(d_in: usize, d_out: usize, g: usize, seed: u64) -> Result<(Tensor, Tensor)> {
    if d_in == 0 || d_out == 0 || g == 0 {
        return Err(Error::contract(format!(
            "fourier layer needs positive dimensions, got d_in={d_in}, d_out={d_out}, g={g}"
        )));
    }
    use rand_distr::{Distribution, Normal};
    let std = 1.0 / ((d_in as f64).sqrt() * g as f64);
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::contract(format!("coefficient distribution: {e}")))?;
    let mut rng = rng::seeded(seed);
    let n = d_out * d_in * g;
    let a = Tensor::new(
        vec![d_out, d_in, g],
        (0..n).map(|_| normal.sample(&mut rng)).collect(),
    )?;
    let b = Tensor::new(
        vec![d_out, d_in, g],
        (0..n).map(|_| normal.sample(&mut rng)).collect(),
    )?;
    Ok((a, b))
}

fn check_fourier_shapes(x: &Tensor, a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    x.require_rank(2, "fourier input")?;
    a.require_rank(3, "fourier cos coefficients")?;
    b.require_rank(3, "fourier sin coefficients")?;
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "cos/sin coefficient shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (d_out, d_in, g) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    if g == 0 {
        return Err(Error::contract("fourier grid size must be at least 1"));
    }
    if x.cols() != d_in {
        return Err(Error::shape(format!(
            "fourier input has {} features, coefficients expect {}",
            x.cols(),
            d_in
        )));
    }
    Ok((d_out, d_in, g))
}

/// Records the Fourier layer on the tape: (batch, d_in) -> (batch, d_out).
pub fn fourier_kan_forward(tape: &mut Tape, x: NodeId, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (_, _, g) = {
        let (tx, ta, tb) = (tape.value(x)?, tape.value(a)?, tape.value(b)?);
        check_fourier_shapes(tx, ta, tb)?
    };
    let mut out = None;
    for k in 1..=g {
        let xs = tape.scale(x, k as f64)?;
        let ck = tape.cos(xs)?;
        let sk = tape.sin(xs)?;
        let ak = tape.freq_slice(a, k - 1)?;
        let bk = tape.freq_slice(b, k - 1)?;
        let cos_term = tape.linear(ck, ak)?;
        let sin_term = tape.linear(sk, bk)?;
        let term = tape.add(cos_term, sin_term)?;
        out = Some(match out {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(out.expect("g >= 1 checked above"))
}

/// Closed-form gradient of sum_j out[n,j] with respect to x[n,i]:
/// sum_j sum_k k (cos(k x) b[j,i,k] - sin(k x) a[j,i,k]).
///
/// This is derived by hand, independent of the tape's backward pass, and is
/// cross-checked against it in tests.
pub fn fourier_kan_input_gradient(x: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (d_out, d_in, g) = check_fourier_shapes(x, a, b)?;
    let n = x.rows();
    let mut out = Tensor::zeros(vec![n, d_in]);
    for r in 0..n {
        for i in 0..d_in {
            let xv = x.values()[r * d_in + i];
            let mut acc = 0.0;
            for j in 0..d_out {
                for k in 1..=g {
                    let kf = k as f64;
                    let av = a.values()[(j * d_in + i) * g + (k - 1)];
                    let bv = b.values()[(j * d_in + i) * g + (k - 1)];
                    acc += kf * ((kf * xv).cos() * bv - (kf * xv).sin() * av);
                }
            }
            out.values_mut()[r * d_in + i] = acc;
        }
    }
    Ok(out)
}

/// Draws the spline layer's parameters: a (d_out, d_in) mixing matrix via
/// Xavier bounds and small-noise B-spline coefficients (d_out, d_in, G + k).
pub fn spline_init(
    d_in: usize,
    d_out: usize,
    grid: SplineGrid,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    use rand_distr::{Distribution, Normal};
    let w = crate::train::xavier_init(&[d_out, d_in], rng::mix(seed, &[0]))?;
    let std = 0.1 / grid.intervals as f64;
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::contract(format!("coefficient distribution: {e}")))?;
    let mut r = rng::seeded(rng::mix(seed, &[1]));
    let m = grid.basis_count();
    let c = Tensor::new(
        vec![d_out, d_in, m],
        (0..d_out * d_in * m).map(|_| normal.sample(&mut r)).collect(),
    )?;
    Ok((w, c))
}

/// Records the spline KAN layer: out = SiLU(x) W^T + B(x) (w ⊙ c)^T where
/// B(x) is the flattened per-feature basis expansion.
pub fn spline_kan_forward(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    c: NodeId,
    grid: SplineGrid,
) -> Result<NodeId> {
    let (d_out, d_in) = {
        let (tx, tw, tc) = (tape.value(x)?, tape.value(w)?, tape.value(c)?);
        tx.require_rank(2, "spline input")?;
        tw.require_rank(2, "spline mixing weight")?;
        tc.require_rank(3, "spline coefficients")?;
        let (d_out, d_in) = (tw.rows(), tw.cols());
        if tx.cols() != d_in {
            return Err(Error::shape(format!(
                "spline input has {} features, weight expects {}",
                tx.cols(),
                d_in
            )));
        }
        if tc.shape() != [d_out, d_in, grid.basis_count()] {
            return Err(Error::shape(format!(
                "spline coefficients {:?}, expected {:?}",
                tc.shape(),
                [d_out, d_in, grid.basis_count()]
            )));
        }
        (d_out, d_in)
    };
    let silu = tape.silu(x)?;
    let base = tape.linear(silu, w)?;
    let basis = tape.bspline_basis(x, grid)?;
    let mixed = tape.broadcast_mul_last(w, c)?;
    let flat = tape.reshape(mixed, vec![d_out, d_in * grid.basis_count()])?;
    let spline_term = tape.linear(basis, flat)?;
    tape.add(base, spline_term)
}

/// Records x W^T, the plain dense transform.
pub fn linear_forward(tape: &mut Tape, x: NodeId, w: NodeId) -> Result<NodeId> {
    tape.linear(x, w)
}
