//! Clamped uniform B-spline bases via the Cox-de Boor recursion.
//!
//! A grid with `intervals` = G pieces and `degree` = k carries G + k basis
//! functions over a clamped knot vector: the boundary knots repeat k extra
//! times so the basis spans all of [min, max] and sums to one everywhere on
//! it. Inputs outside the grid are clamped to the nearest boundary before
//! evaluation, which makes the spline constant (zero derivative) out there.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineGrid {
    pub intervals: usize,
    pub degree: usize,
    pub min: f64,
    pub max: f64,
}

impl SplineGrid {
    pub fn new(intervals: usize, degree: usize, min: f64, max: f64) -> Result<Self> {
        if intervals < 1 || degree < 1 {
            return Err(Error::contract(format!(
                "spline grid needs at least 1 interval and degree 1, got G={intervals}, k={degree}"
            )));
        }
        if !(min < max) {
            return Err(Error::contract(format!(
                "spline grid range [{min}, {max}] is empty"
            )));
        }
        Ok(SplineGrid {
            intervals,
            degree,
            min,
            max,
        })
    }

    pub fn basis_count(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    /// Knot vector of length G + 2k + 1: k repeats of each boundary around
    /// G + 1 uniformly spaced interior breakpoints.
    fn knots(&self) -> Vec<f64> {
        let g = self.intervals;
        let k = self.degree;
        let mut t = Vec::with_capacity(g + 2 * k + 1);
        for _ in 0..k {
            t.push(self.min);
        }
        let step = (self.max - self.min) / g as f64;
        for i in 0..=g {
            t.push(self.min + step * i as f64);
        }
        // Write the top breakpoint exactly so clamped inputs hit it bitwise.
        *t.last_mut().unwrap() = self.max;
        for _ in 0..k {
            t.push(self.max);
        }
        t
    }

    /// All G + k basis values at `x` (clamped first).
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let t = self.knots();
        let xc = self.clamp(x);
        self.basis_upto(&t, xc, self.degree)
    }

    /// Basis values together with d/dx of each, where the derivative is taken
    /// with respect to the raw (unclamped) input: identically zero strictly
    /// outside the grid.
    pub fn basis_with_derivative(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let t = self.knots();
        let k = self.degree;
        let xc = self.clamp(x);
        let lower = self.basis_upto(&t, xc, k - 1);
        let basis = self.raise_degree(&t, xc, lower.clone(), k - 1, k);
        let mut deriv = vec![0.0; basis.len()];
        if x >= self.min && x <= self.max {
            for j in 0..deriv.len() {
                let left = safe_div(lower[j], t[j + k] - t[j]);
                let right = safe_div(lower[j + 1], t[j + k + 1] - t[j + 1]);
                deriv[j] = k as f64 * (left - right);
            }
        }
        (basis, deriv)
    }

    /// Degree-0 indicators raised to degree `upto` via Cox-de Boor.
    fn basis_upto(&self, t: &[f64], xc: f64, upto: usize) -> Vec<f64> {
        let mut b = vec![0.0; t.len() - 1];
        for j in 0..b.len() {
            let inside = t[j] <= xc && xc < t[j + 1];
            // The last non-degenerate interval is closed so x = max evaluates.
            let at_top = xc == self.max && t[j] < t[j + 1] && t[j + 1] == self.max;
            if inside || at_top {
                b[j] = 1.0;
            }
        }
        self.raise_degree(t, xc, b, 0, upto)
    }

    fn raise_degree(&self, t: &[f64], xc: f64, mut b: Vec<f64>, from: usize, to: usize) -> Vec<f64> {
        for d in (from + 1)..=to {
            let n = t.len() - d - 1;
            let mut next = vec![0.0; n];
            for j in 0..n {
                let left = safe_div(xc - t[j], t[j + d] - t[j]) * b[j];
                let right = safe_div(t[j + d + 1] - xc, t[j + d + 1] - t[j + 1]) * b[j + 1];
                next[j] = left + right;
            }
            b = next;
        }
        b
    }
}

/// 0/0 is 0 by the usual B-spline convention for repeated knots.
fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
