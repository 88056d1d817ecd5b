//! 1-D convolution kernels on flat slices.
//!
//! Everything is phrased in terms of a plain strided cross-correlation
//! `y[b,o,j] = Σ_{i,k} w[o,i,k] · x[b,i,j·s − p + k]` and its two adjoints.
//! The transposed convolution reuses the same three kernels with the roles
//! of input and output swapped.
//!
//! Each output element is owned by exactly one parallel task and reduced in
//! a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

/// Geometry of a cross-correlation `x: [batch, cin, lin] -> y: [batch, cout, lout]`
/// with weight `[cout, cin, k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub lin: usize,
    pub lout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Geom {
    /// Valid kernel taps `k0..k1` for output position `j`, and the input
    /// index of tap `k0`.
    #[inline]
    fn taps(&self, j: usize) -> (usize, usize, usize) {
        let start = (j * self.stride) as isize - self.padding as isize;
        let k0 = (-start).max(0) as usize;
        let k1 = ((self.lin as isize - start).min(self.k as isize)).max(0) as usize;
        if k1 <= k0 {
            return (0, 0, 0);
        }
        (k0, k1, (start + k0 as isize) as usize)
    }
}

/// `y = conv(x, w) + bias`.
pub(crate) fn forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: Geom) -> Vec<f64> {
    let mut y = vec![0.0; g.batch * g.cout * g.lout];
    if g.lout == 0 {
        return y;
    }
    y.par_chunks_mut(g.lout).enumerate().for_each(|(bo, row)| {
        let (b, o) = (bo / g.cout, bo % g.cout);
        if let Some(bias) = bias {
            row.fill(bias[o]);
        }
        for i in 0..g.cin {
            let xr = &x[(b * g.cin + i) * g.lin..][..g.lin];
            let wr = &w[(o * g.cin + i) * g.k..][..g.k];
            for (j, out) in row.iter_mut().enumerate() {
                let (k0, k1, i0) = g.taps(j);
                let n = k1 - k0;
                *out += wr[k0..k1]
                    .iter()
                    .zip(&xr[i0..i0 + n])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
    });
    y
}

/// Adjoint with respect to the input: scatters `dy` back through `w`.
pub(crate) fn backward_input(dy: &[f64], w: &[f64], g: Geom) -> Vec<f64> {
    let mut dx = vec![0.0; g.batch * g.cin * g.lin];
    if g.lin == 0 {
        return dx;
    }
    dx.par_chunks_mut(g.lin).enumerate().for_each(|(bi, row)| {
        let (b, i) = (bi / g.cin, bi % g.cin);
        for o in 0..g.cout {
            let dyr = &dy[(b * g.cout + o) * g.lout..][..g.lout];
            let wr = &w[(o * g.cin + i) * g.k..][..g.k];
            for (j, &d) in dyr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let (k0, k1, i0) = g.taps(j);
                for (dst, wk) in row[i0..i0 + (k1 - k0)].iter_mut().zip(&wr[k0..k1]) {
                    *dst += d * wk;
                }
            }
        }
    });
    dx
}

/// Adjoint with respect to the weight.
pub(crate) fn backward_weight(dy: &[f64], x: &[f64], g: Geom) -> Vec<f64> {
    let mut dw = vec![0.0; g.cout * g.cin * g.k];
    if g.k == 0 {
        return dw;
    }
    dw.par_chunks_mut(g.cin * g.k).enumerate().for_each(|(o, block)| {
        for b in 0..g.batch {
            let dyr = &dy[(b * g.cout + o) * g.lout..][..g.lout];
            for i in 0..g.cin {
                let xr = &x[(b * g.cin + i) * g.lin..][..g.lin];
                let dwr = &mut block[i * g.k..][..g.k];
                for (j, &d) in dyr.iter().enumerate() {
                    let (k0, k1, i0) = g.taps(j);
                    for (dst, xv) in dwr[k0..k1].iter_mut().zip(&xr[i0..i0 + (k1 - k0)]) {
                        *dst += d * xv;
                    }
                }
            }
        }
    });
    dw
}

/// Per-channel sum over batch and length of a `[batch, c, l]` array.
pub(crate) fn channel_sums(dy: &[f64], batch: usize, c: usize, l: usize) -> Vec<f64> {
    (0..c)
        .map(|o| {
            (0..batch)
                .map(|b| dy[(b * c + o) * l..][..l].iter().sum::<f64>())
                .sum()
        })
        .collect()
}
