//! Per-slice covariate rows and their regime-wise Gram matrices.

use crate::tensor::Tensor;

/// Covariate entries of every mode slice, laid out `T × q` row-major.
#[derive(Clone, Debug)]
pub(crate) struct SliceCache {
    /// `[m][j]`
    pub offsets: Vec<Vec<Vec<usize>>>,
    /// `[m][j]`, row `t` holds `X_t` at `offsets[m][j]`.
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl SliceCache {
    pub fn new(xs: &[Tensor]) -> Self {
        let shape = xs[0].shape().to_vec();
        let offsets: Vec<Vec<Vec<usize>>> = (0..shape.len())
            .map(|m| (0..shape[m]).map(|j| Tensor::slice_offsets(&shape, m, j)).collect())
            .collect();
        let rows = offsets
            .iter()
            .map(|per_mode| {
                per_mode
                    .iter()
                    .map(|offs| {
                        let mut r = Vec::with_capacity(xs.len() * offs.len());
                        for x in xs {
                            let data = x.data();
                            r.extend(offs.iter().map(|&o| data[o]));
                        }
                        r
                    })
                    .collect()
            })
            .collect();
        SliceCache { offsets, rows }
    }

    pub fn q(&self, m: usize, j: usize) -> usize {
        self.offsets[m][j].len()
    }

    pub fn row(&self, m: usize, j: usize, t: usize) -> &[f64] {
        let q = self.q(m, j);
        &self.rows[m][j][t * q..(t + 1) * q]
    }

    /// `Σ_{t ∈ times} x_t x_tᵀ`, `q × q` row-major.
    pub fn gram(&self, m: usize, j: usize, times: &[usize]) -> Vec<f64> {
        let q = self.q(m, j);
        let mut g = vec![0.0; q * q];
        for &t in times {
            let r = self.row(m, j, t);
            for a in 0..q {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let out = &mut g[a * q..a * q + a + 1];
                for (o, &rb) in out.iter_mut().zip(&r[..=a]) {
                    *o += ra * rb;
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                g[b * q + a] = g[a * q + b];
            }
        }
        g
    }
}
