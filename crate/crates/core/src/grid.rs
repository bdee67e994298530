//! Tensor-product state grids and multilinear interpolation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest supported state dimension (2^6 interpolation corners).
pub const MAX_DIM: usize = 6;
const MAX_CORNERS: usize = 1 << MAX_DIM;

#[derive(Clone, Debug, PartialEq)]
pub struct StateGrid<T> {
    lo: Vec<T>,
    hi: Vec<T>,
    counts: Vec<usize>,
    spacing: Vec<T>,
    strides: Vec<usize>,
}

/// Interpolation stencil: corner node indices and their weights.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<T> {
    len: usize,
    nodes: [usize; MAX_CORNERS],
    weights: [T; MAX_CORNERS],
    /// The query fell outside the grid and was moved onto its boundary.
    pub clamped: bool,
}

impl<T: Scalar> Stencil<T> {
    /// `(node, weight)` pairs with nonzero weight.
    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        (0..self.len)
            .map(move |i| (self.nodes[i], self.weights[i]))
            .filter(|(_, w)| *w != T::zero())
    }

    #[inline]
    pub fn apply(&self, values: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.len {
            let w = self.weights[i];
            if w != T::zero() {
                acc = acc + w * values[self.nodes[i]];
            }
        }
        acc
    }
}

impl<T: Scalar> StateGrid<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>, counts: Vec<usize>) -> Result<Self> {
        let n = lo.len();
        if hi.len() != n || counts.len() != n {
            return Err(Error::Dimension {
                what: "grid specification",
                expected: n,
                got: if hi.len() != n { hi.len() } else { counts.len() },
            });
        }
        if n == 0 || n > MAX_DIM {
            return Err(Error::Config(format!(
                "grid dimension {n} unsupported (1..={MAX_DIM})"
            )));
        }
        for d in 0..n {
            if !(lo[d] < hi[d]) || !lo[d].is_finite() || !hi[d].is_finite() {
                return Err(Error::Config(format!(
                    "grid dimension {d}: need lo < hi, got [{}, {}]",
                    lo[d], hi[d]
                )));
            }
            if counts[d] < 2 {
                return Err(Error::Config(format!(
                    "grid dimension {d}: need at least 2 points, got {}",
                    counts[d]
                )));
            }
        }
        let spacing = (0..n)
            .map(|d| (hi[d] - lo[d]) / T::from_count(counts[d] as u64 - 1))
            .collect();
        let mut strides = vec![1usize; n];
        for d in (0..n.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * counts[d + 1];
        }
        Ok(Self {
            lo,
            hi,
            counts,
            spacing,
            strides,
        })
    }

    /// Uniform grid with the same bounds and count in every dimension.
    pub fn cube(dim: usize, lo: T, hi: T, count: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[T] {
        &self.spacing
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.counts)
            .map(|(s, c)| (node / s) % c)
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    #[inline]
    fn coord(&self, d: usize, i: usize) -> T {
        if i + 1 == self.counts[d] {
            self.hi[d]
        } else {
            self.lo[d] + T::from_count(i as u64) * self.spacing[d]
        }
    }

    pub fn node_into(&self, node: usize, out: &mut [T]) {
        for d in 0..self.dim() {
            let i = (node / self.strides[d]) % self.counts[d];
            out[d] = self.coord(d, i);
        }
    }

    pub fn node(&self, node: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.node_into(node, &mut out);
        out
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|d| x[d] >= self.lo[d] && x[d] <= self.hi[d])
    }

    /// Multilinear interpolation stencil for `x`. Out-of-range coordinates
    /// are clamped onto the boundary when `clamp` is set and rejected
    /// otherwise.
    pub fn stencil(&self, x: &[T], clamp: bool) -> Result<Stencil<T>> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::Dimension {
                what: "interpolation query",
                expected: n,
                got: x.len(),
            });
        }
        let mut cell = [0usize; MAX_DIM];
        let mut frac = [T::zero(); MAX_DIM];
        let mut clamped = false;
        for d in 0..n {
            let top = T::from_count(self.counts[d] as u64 - 1);
            let mut pos = (x[d] - self.lo[d]) / self.spacing[d];
            if !(pos >= T::zero()) || pos > top {
                if !clamp {
                    return Err(Error::OutOfRange {
                        dim: d,
                        point: x.iter().map(|v| v.as_f64()).collect(),
                    });
                }
                clamped = true;
                pos = if pos > top { top } else { T::zero() };
            }
            let mut i = pos.floor().to_usize().unwrap_or(0);
            if i + 1 >= self.counts[d] {
                i = self.counts[d] - 2;
            }
            cell[d] = i;
            frac[d] = pos - T::from_count(i as u64);
        }
        let len = 1usize << n;
        let mut st = Stencil {
            len,
            nodes: [0; MAX_CORNERS],
            weights: [T::zero(); MAX_CORNERS],
            clamped,
        };
        for mask in 0..len {
            let mut idx = 0;
            let mut w = T::one();
            for d in 0..n {
                if mask & (1 << (n - 1 - d)) != 0 {
                    idx += (cell[d] + 1) * self.strides[d];
                    w = w * frac[d];
                } else {
                    idx += cell[d] * self.strides[d];
                    w = w * (T::one() - frac[d]);
                }
            }
            st.nodes[mask] = idx;
            st.weights[mask] = w;
        }
        Ok(st)
    }

    /// Multilinear interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[T], x: &[T], clamp: bool) -> Result<T> {
        Ok(self.stencil(x, clamp)?.apply(values))
    }

    /// Index of the node nearest to `x` (after clamping) and whether `x` was
    /// outside the grid.
    pub fn nearest(&self, x: &[T]) -> (usize, bool) {
        let mut idx = 0;
        let mut outside = false;
        for d in 0..self.dim() {
            let top = self.counts[d] - 1;
            let pos = ((x[d] - self.lo[d]) / self.spacing[d]).round();
            let i = if !(pos >= T::zero()) {
                outside = true;
                0
            } else {
                let p = pos.to_usize().unwrap_or(usize::MAX);
                if p > top {
                    outside = true;
                    top
                } else {
                    p
                }
            };
            if x[d] < self.lo[d] || x[d] > self.hi[d] {
                outside = true;
            }
            idx += i * self.strides[d];
        }
        (idx, outside)
    }
}
