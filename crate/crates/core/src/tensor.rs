//! Dense multi-way arrays and the PARAFAC algebra used by the back-fitting
//! sampler.
//!
//! Data are stored flat with the first mode varying fastest. A mode-`m`
//! slice at index `j` is vectorized in the same order over the remaining
//! modes, so `mode_slice_vec` and `set_mode_slice_vec` are exact inverses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Dimension("tensor order must be at least 1".into()));
    }
    if shape.iter().any(|&p| p == 0) {
        return Err(Error::Dimension(format!("mode sizes must be positive, got {shape:?}")));
    }
    Ok(shape.iter().product())
}

/// Geometry of the slices along one mode: offset of element `(a, j, b)` is
/// `a + inner * (j + size * b)` where `a` runs over the earlier modes and
/// `b` over the later ones.
#[derive(Clone, Copy, Debug)]
struct ModeLayout {
    inner: usize,
    size: usize,
    outer: usize,
}

impl ModeLayout {
    fn new(shape: &[usize], mode: usize) -> Self {
        ModeLayout {
            inner: shape[..mode].iter().product(),
            size: shape[mode],
            outer: shape[mode + 1..].iter().product(),
        }
    }

    fn offsets(self, j: usize) -> impl Iterator<Item = usize> {
        let ModeLayout { inner, size, outer } = self;
        (0..outer).flat_map(move |b| (0..inner).map(move |a| a + inner * (j + size * b)))
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// # Panics
    /// If the shape is empty or has a zero-sized mode.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    /// # Panics
    /// If the shape is empty or has a zero-sized mode.
    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, p) in idx.iter_mut().zip(shape) {
                *i += 1;
                if *i < *p {
                    break;
                }
                *i = 0;
            }
        }
        Tensor { shape: shape.to_vec(), data }
    }

    /// Rank-1 tensor `v_1 ⊗ v_2 ⊗ … ⊗ v_M`.
    pub fn outer(vectors: &[&[f64]]) -> Self {
        let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        Self::from_fn(&shape, |idx| idx.iter().zip(vectors).map(|(&i, v)| v[i]).product())
    }

    /// An `n × n` identity matrix.
    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |idx| if idx[0] == idx[1] { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of entries in a slice along `mode`, i.e. the product of all
    /// other mode sizes.
    pub fn slice_len(&self, mode: usize) -> usize {
        self.data.len() / self.shape[mode]
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &p) in idx.iter().zip(&self.shape) {
            debug_assert!(i < p);
            off += i * stride;
            stride *= p;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    fn check_slice(&self, mode: usize, j: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::Index(format!("mode {mode} for an order-{} tensor", self.order())));
        }
        if j >= self.shape[mode] {
            return Err(Error::Index(format!(
                "slice {j} along mode {mode} of size {}",
                self.shape[mode]
            )));
        }
        Ok(())
    }

    /// Flat offsets of the mode-`mode` slice at index `j`, in vectorization
    /// order. Shared by every tensor of the given shape.
    pub fn slice_offsets(shape: &[usize], mode: usize, j: usize) -> Vec<usize> {
        ModeLayout::new(shape, mode).offsets(j).collect()
    }

    /// `vec` of the `j`-th slice along `mode` (length `slice_len(mode)`).
    pub fn mode_slice_vec(&self, mode: usize, j: usize) -> Result<Vec<f64>> {
        self.check_slice(mode, j)?;
        Ok(ModeLayout::new(&self.shape, mode).offsets(j).map(|o| self.data[o]).collect())
    }

    pub fn set_mode_slice_vec(&mut self, mode: usize, j: usize, values: &[f64]) -> Result<()> {
        self.check_slice(mode, j)?;
        if values.len() != self.slice_len(mode) {
            return Err(Error::Dimension(format!(
                "slice along mode {mode} has {} entries, got {}",
                self.slice_len(mode),
                values.len()
            )));
        }
        for (o, &v) in ModeLayout::new(&self.shape, mode).offsets(j).zip(values) {
            self.data[o] = v;
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!("shapes {:?} and {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.hadamard_assign(other)?;
        Ok(out)
    }

    pub fn hadamard_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a *= b);
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|a| *a *= c);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sum of the entries whose indices are all equal. Requires every mode to
    /// have the same size.
    pub fn trace(&self) -> Result<f64> {
        let p = self.shape[0];
        if self.shape.iter().any(|&s| s != p) {
            return Err(Error::Dimension(format!("trace needs equal mode sizes, got {:?}", self.shape)));
        }
        let stride: usize = (0..self.order()).map(|m| p.pow(m as u32)).sum();
        Ok((0..p).map(|i| self.data[i * stride]).sum())
    }
}

/// Sum over all entries of the elementwise product.
pub fn inner_product(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(dot(&a.data, &b.data))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Soft-PARAFAC factors `B^{(d)}_m`, stored `[d][m]`, all of the full
/// coefficient shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSet {
    factors: Vec<Vec<Tensor>>,
}

impl FactorSet {
    pub fn new(factors: Vec<Vec<Tensor>>) -> Result<Self> {
        let first = factors
            .first()
            .and_then(|c| c.first())
            .ok_or_else(|| Error::Dimension("factor set needs D ≥ 1 and M ≥ 2".into()))?;
        let shape = first.shape().to_vec();
        let order = shape.len();
        if order < 2 {
            return Err(Error::Dimension("factor set needs M ≥ 2".into()));
        }
        for comp in &factors {
            if comp.len() != order {
                return Err(Error::Dimension(format!(
                    "each component needs {order} factors, got {}",
                    comp.len()
                )));
            }
            if let Some(t) = comp.iter().find(|t| t.shape() != shape.as_slice()) {
                return Err(Error::Dimension(format!("factor shape {:?} != {shape:?}", t.shape())));
            }
        }
        Ok(FactorSet { factors })
    }

    /// `rank` components of `order` copies of `fill`.
    pub fn filled(shape: &[usize], rank: usize, value: f64) -> Self {
        let t = Tensor::filled(shape, value);
        FactorSet { factors: vec![vec![t; shape.len()]; rank] }
    }

    pub fn rank(&self) -> usize {
        self.factors.len()
    }

    pub fn order(&self) -> usize {
        self.factors[0].len()
    }

    pub fn shape(&self) -> &[usize] {
        self.factors[0][0].shape()
    }

    pub fn factor(&self, d: usize, m: usize) -> &Tensor {
        &self.factors[d][m]
    }

    pub fn factor_mut(&mut self, d: usize, m: usize) -> &mut Tensor {
        &mut self.factors[d][m]
    }

    /// `B^{(d)}_1 ∘ … ∘ B^{(d)}_M`.
    pub fn component(&self, d: usize) -> Tensor {
        self.component_except(d, None)
    }

    /// Hadamard product of the factors of component `d`, leaving out mode
    /// `skip` when given.
    pub fn component_except(&self, d: usize, skip: Option<usize>) -> Tensor {
        let comp = &self.factors[d];
        let mut out = Tensor::filled(self.shape(), 1.0);
        for (m, f) in comp.iter().enumerate() {
            if Some(m) != skip {
                out.data.iter_mut().zip(&f.data).for_each(|(a, b)| *a *= b);
            }
        }
        out
    }
}

/// `Σ_d B^{(d)}_1 ∘ … ∘ B^{(d)}_M`.
pub fn hadamard_compose(f: &FactorSet) -> Tensor {
    let mut out = f.component(0);
    for d in 1..f.rank() {
        out.add_assign(&f.component(d)).expect("factor shapes are validated");
    }
    out
}

/// PARAFAC marginals `γ^{(d)}_m`, stored `[d][m][j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    gamma: Vec<Vec<Vec<f64>>>,
}

impl Marginals {
    pub fn new(gamma: Vec<Vec<Vec<f64>>>, shape: &[usize]) -> Result<Self> {
        for comp in &gamma {
            if comp.len() != shape.len() || comp.iter().zip(shape).any(|(g, &p)| g.len() != p) {
                return Err(Error::Dimension(format!("marginal lengths do not match shape {shape:?}")));
            }
        }
        Ok(Marginals { gamma })
    }

    pub fn zeros(shape: &[usize], rank: usize) -> Self {
        let comp: Vec<Vec<f64>> = shape.iter().map(|&p| vec![0.0; p]).collect();
        Marginals { gamma: vec![comp; rank] }
    }

    pub fn rank(&self) -> usize {
        self.gamma.len()
    }

    pub fn get(&self, d: usize, m: usize) -> &[f64] {
        &self.gamma[d][m]
    }

    pub fn get_mut(&mut self, d: usize, m: usize) -> &mut Vec<f64> {
        &mut self.gamma[d][m]
    }

    /// Prior location `G^{(d)}_m` of factor `(d, m)`: `γ^{(d)}_m` laid along
    /// mode `m` and repeated along every other mode. For `M = 2` this is
    /// `γ_1 ⊗ ι` and `ι ⊗ γ_2`.
    pub fn location(&self, d: usize, m: usize, shape: &[usize]) -> Tensor {
        let g = &self.gamma[d][m];
        Tensor::from_fn(shape, |idx| g[idx[m]])
    }

    /// `Σ_d γ^{(d)}_1 ⊗ … ⊗ γ^{(d)}_M`, the conditional prior mean of the
    /// coefficient tensor.
    pub fn parafac_mean(&self) -> Tensor {
        let mut out: Option<Tensor> = None;
        for comp in &self.gamma {
            let vs: Vec<&[f64]> = comp.iter().map(|v| v.as_slice()).collect();
            let t = Tensor::outer(&vs);
            match out.as_mut() {
                Some(o) => o.add_assign(&t).expect("same shape"),
                None => out = Some(t),
            }
        }
        out.expect("rank ≥ 1")
    }
}

/// The pieces of the back-fitting representation of `<B, X>` around one
/// slice `β = vec(B^{(d)}_{m, j})`:
/// `<B, X> = β'ψ + r_slice + r_comp`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackfitTerms {
    pub psi: Vec<f64>,
    pub r_slice: f64,
    pub r_comp: f64,
}

pub fn backfit_terms(f: &FactorSet, x: &Tensor, d: usize, m: usize, j: usize) -> Result<BackfitTerms> {
    if x.shape() != f.shape() {
        return Err(Error::Dimension(format!("covariate {:?} vs factors {:?}", x.shape(), f.shape())));
    }
    if d >= f.rank() {
        return Err(Error::Index(format!("component {d} of rank {}", f.rank())));
    }
    x.check_slice(m, j)?;

    let mut others = f.component_except(d, Some(m));
    others.hadamard_assign(x)?;
    let psi = others.mode_slice_vec(m, j)?;

    let full = f.component(d);
    let layout = ModeLayout::new(f.shape(), m);
    let mut in_slice = vec![false; x.len()];
    for o in layout.offsets(j) {
        in_slice[o] = true;
    }
    let r_slice = full
        .data
        .iter()
        .zip(&x.data)
        .zip(&in_slice)
        .filter(|(_, &inside)| !inside)
        .map(|((a, b), _)| a * b)
        .sum();

    let r_comp = (0..f.rank())
        .filter(|&dd| dd != d)
        .map(|dd| dot(&f.component(dd).data, &x.data))
        .sum();

    Ok(BackfitTerms { psi, r_slice, r_comp })
}
