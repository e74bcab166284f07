//! Fixed layer set: dense, 2-D convolution, depth-wise temporal convolution,
//! pointwise activations, L2 normalization, embedding table, positional
//! sequence pooling and attention pooling over grid cells.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Axis, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::error::Result;

fn uniform_fan_in<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
) -> ArrayD<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(rng.gen_range(-bound..bound)))
}

fn add_to<T: Real>(grads: &mut ParamStore<T>, name: &str, delta: ArrayD<T>) {
    let g = grads.entry_zeros(name, delta.shape());
    *g += &delta;
}

/// Fully connected layer `y = x W + b` with `W: [inputs, outputs]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Dense {
            name: name.into(),
            inputs,
            outputs,
        }
    }

    fn w(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn b(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        store.insert(
            self.w(),
            uniform_fan_in(rng, &[self.inputs, self.outputs], self.inputs),
        )?;
        store.insert(self.b(), ArrayD::zeros(IxDyn(&[self.outputs])))
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&p.matrix(&self.w()));
        y += &p.vector(&self.b());
        y
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        dy: ArrayView2<T>,
        grads: &mut ParamStore<T>,
    ) -> Array2<T> {
        add_to(grads, &self.w(), x.t().dot(&dy).into_dyn());
        add_to(grads, &self.b(), dy.sum_axis(Axis(0)).into_dyn());
        dy.dot(&p.matrix(&self.w()).t())
    }
}

/// Batch of feature maps; rows of `data` are ordered `(example, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Array2<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(n: usize, h: usize, w: usize, data: Array2<T>) -> Self {
        debug_assert_eq!(data.nrows(), n * h * w);
        FeatureMap { n, h, w, data }
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_data(&self, data: Array2<T>) -> Self {
        FeatureMap::new(self.n, self.h, self.w, data)
    }
}

/// 2-D convolution over NHWC feature maps, computed as im2col + matmul.
/// Weight layout `[k * k * in_channels, out_channels]` with patch columns
/// ordered `(ky, kx, channel)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn w(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn b(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        let fan_in = self.patch_len();
        store.insert(
            self.w(),
            uniform_fan_in(rng, &[fan_in, self.out_channels], fan_in),
        )?;
        store.insert(self.b(), ArrayD::zeros(IxDyn(&[self.out_channels])))
    }

    /// Unfolds patches into rows.
    pub fn im2col<T: Real>(&self, x: &FeatureMap<T>) -> Array2<T> {
        let (ho, wo) = self.output_size(x.h, x.w);
        let c = x.channels();
        let k = self.kernel;
        let mut cols = Array2::<T>::zeros((x.n * ho * wo, k * k * c));
        let src = x.data.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("fresh array");
        let row_len = k * k * c;
        for b in 0..x.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (b * ho + oy) * wo + ox;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let s = ((b * x.h + iy as usize) * x.w + ix as usize) * c;
                            let d = row * row_len + (ky * k + kx) * c;
                            dst[d..d + c].copy_from_slice(&src[s..s + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, dcols: &Array2<T>, n: usize, h: usize, w: usize) -> Array2<T> {
        let (ho, wo) = self.output_size(h, w);
        let c = self.in_channels;
        let k = self.kernel;
        let mut dx = Array2::<T>::zeros((n * h * w, c));
        let dst = dx.as_slice_mut().expect("fresh array");
        let src = dcols.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let row_len = k * k * c;
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (b * ho + oy) * wo + ox;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let d = ((b * h + iy as usize) * w + ix as usize) * c;
                            let s = row * row_len + (ky * k + kx) * c;
                            for j in 0..c {
                                dst[d + j] += src[s + j];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output map and the unfolded input (needed by backward).
    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &FeatureMap<T>,
    ) -> (FeatureMap<T>, Array2<T>) {
        debug_assert_eq!(x.channels(), self.in_channels);
        let (ho, wo) = self.output_size(x.h, x.w);
        let cols = self.im2col(x);
        let mut y = cols.dot(&p.matrix(&self.w()));
        y += &p.vector(&self.b());
        (FeatureMap::new(x.n, ho, wo, y), cols)
    }

    /// Gradient with respect to the input map (shape of `x`).
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cols: &Array2<T>,
        input_shape: (usize, usize, usize),
        dy: ArrayView2<T>,
        grads: &mut ParamStore<T>,
    ) -> Array2<T> {
        add_to(grads, &self.w(), cols.t().dot(&dy).into_dyn());
        add_to(grads, &self.b(), dy.sum_axis(Axis(0)).into_dyn());
        let dcols = dy.dot(&p.matrix(&self.w()).t());
        let (n, h, w) = input_shape;
        self.col2im(&dcols, n, h, w)
    }

    /// Backward pass that only accumulates parameter gradients.
    pub fn backward_params<T: Real>(
        &self,
        cols: &Array2<T>,
        dy: ArrayView2<T>,
        grads: &mut ParamStore<T>,
    ) {
        add_to(grads, &self.w(), cols.t().dot(&dy).into_dyn());
        add_to(grads, &self.b(), dy.sum_axis(Axis(0)).into_dyn());
    }
}

/// Depth-wise causal convolution along a stacked frame axis. With frames
/// `x_0 .. x_{F-1}` (each `[rows, channels]`) and kernel length `K`:
/// `y_t = b + sum_j w[j] * x_{t-(K-1)+j}` per channel, with frames before 0
/// treated as zero.
///
/// In zero-sum mode the effective kernel is `w` minus its mean over taps and
/// the bias is ignored, so a static input yields exactly zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthwiseTemporal {
    pub name: String,
    pub channels: usize,
    pub kernel: usize,
    #[serde(default)]
    pub zero_sum: bool,
}

impl DepthwiseTemporal {
    pub fn new(name: impl Into<String>, channels: usize, kernel: usize) -> Self {
        DepthwiseTemporal {
            name: name.into(),
            channels,
            kernel,
            zero_sum: false,
        }
    }

    pub fn with_zero_sum(mut self) -> Self {
        self.zero_sum = true;
        self
    }

    /// The kernel actually applied, `[kernel, channels]`.
    pub fn effective_kernel<T: Real>(&self, p: &ParamStore<T>) -> Array2<T> {
        let w = p.matrix(&self.w()).to_owned();
        if !self.zero_sum {
            return w;
        }
        let mean = w.sum_axis(Axis(0)) / T::lit(self.kernel as f64);
        w - &mean
    }

    fn w(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn b(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Zero initialization: a residual adapter built on this layer starts
    /// as the identity.
    pub fn init_zero<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.insert(
            self.w(),
            ArrayD::zeros(IxDyn(&[self.kernel, self.channels])),
        )?;
        store.insert(self.b(), ArrayD::zeros(IxDyn(&[self.channels])))
    }

    /// Weights `-1` on the previous frame and `+1` on the current one: the
    /// last output is the temporal difference.
    pub fn init_difference<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut w = ArrayD::zeros(IxDyn(&[self.kernel, self.channels]));
        for c in 0..self.channels {
            w[[self.kernel - 1, c]] = T::one();
            if self.kernel > 1 {
                w[[self.kernel - 2, c]] = -T::one();
            }
        }
        store.insert(self.w(), w)?;
        store.insert(self.b(), ArrayD::zeros(IxDyn(&[self.channels])))
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        store.insert(
            self.w(),
            uniform_fan_in(rng, &[self.kernel, self.channels], self.kernel),
        )?;
        store.insert(self.b(), ArrayD::zeros(IxDyn(&[self.channels])))
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, frames: &[Array2<T>]) -> Vec<Array2<T>> {
        let w = self.effective_kernel(p);
        let b = p.vector(&self.b());
        let k = self.kernel;
        (0..frames.len())
            .map(|t| {
                let mut y = Array2::<T>::zeros(frames[t].raw_dim());
                if !self.zero_sum {
                    y += &b;
                }
                for j in 0..k {
                    let Some(s) = (t + j + 1).checked_sub(k) else {
                        continue;
                    };
                    y += &(&frames[s] * &w.row(j));
                }
                y
            })
            .collect()
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        frames: &[Array2<T>],
        dys: &[Array2<T>],
        grads: &mut ParamStore<T>,
    ) -> Vec<Array2<T>> {
        let w = self.effective_kernel(p);
        let k = self.kernel;
        let mut dx: Vec<Array2<T>> = frames.iter().map(|f| Array2::zeros(f.raw_dim())).collect();
        let mut dw = Array2::<T>::zeros((k, self.channels));
        let mut db = Array1::<T>::zeros(self.channels);
        for (t, dy) in dys.iter().enumerate() {
            db += &dy.sum_axis(Axis(0));
            for j in 0..k {
                let Some(s) = (t + j + 1).checked_sub(k) else {
                    continue;
                };
                dx[s] += &(dy * &w.row(j));
                let mut row = dw.row_mut(j);
                row += &(dy * &frames[s]).sum_axis(Axis(0));
            }
        }
        if self.zero_sum {
            // The projection onto zero-mean kernels is its own adjoint.
            let mean = dw.sum_axis(Axis(0)) / T::lit(k as f64);
            dw -= &mean;
            db.fill(T::zero());
        }
        add_to(grads, &self.w(), dw.into_dyn());
        add_to(grads, &self.b(), db.into_dyn());
        dx
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Silu,
    Tanh,
    Identity,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl Activation {
    pub fn forward<T: Real>(self, x: &Array2<T>) -> Array2<T> {
        match self {
            Activation::Relu => x.mapv(|v| v.max(T::zero())),
            Activation::Silu => x.mapv(|v| v * sigmoid(v)),
            Activation::Tanh => x.mapv(|v| v.tanh()),
            Activation::Identity => x.clone(),
        }
    }

    /// Gradient through the activation; `x` is the forward input.
    pub fn backward<T: Real>(self, x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
        let mut dx = dy.clone();
        match self {
            Activation::Relu => dx.zip_mut_with(x, |d, &v| {
                if v <= T::zero() {
                    *d = T::zero()
                }
            }),
            Activation::Silu => dx.zip_mut_with(x, |d, &v| {
                let s = sigmoid(v);
                *d *= s * (T::one() + v * (T::one() - s));
            }),
            Activation::Tanh => dx.zip_mut_with(x, |d, &v| {
                let t = v.tanh();
                *d *= T::one() - t * t;
            }),
            Activation::Identity => {}
        }
        dx
    }
}

/// Row-wise L2 normalization `y = x / sqrt(|x|^2 + eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct L2Normalize;

const L2_EPS: f64 = 1e-12;

impl L2Normalize {
    pub fn forward<T: Real>(x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            let n = (row.dot(&row) + T::lit(L2_EPS)).sqrt();
            row /= n;
        }
        y
    }

    pub fn backward<T: Real>(x: ArrayView2<T>, dy: ArrayView2<T>) -> Array2<T> {
        let mut dx = Array2::<T>::zeros(x.raw_dim());
        for ((xr, dyr), mut dxr) in x.rows().into_iter().zip(dy.rows()).zip(dx.rows_mut()) {
            let n = (xr.dot(&xr) + T::lit(L2_EPS)).sqrt();
            let y = &xr / n;
            let proj = y.dot(&dyr);
            dxr.assign(&((&dyr - &(&y * proj)) / n));
        }
        dx
    }
}

/// Token embedding table `[vocab, dim]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedding {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, vocab: usize, dim: usize) -> Self {
        Embedding {
            name: name.into(),
            vocab,
            dim,
        }
    }

    fn w(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        store.insert(
            self.w(),
            ArrayD::from_shape_simple_fn(IxDyn(&[self.vocab, self.dim]), || {
                T::lit(normal.sample(rng))
            }),
        )
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, tokens: &[u32]) -> Array2<T> {
        let w = p.matrix(&self.w());
        let mut out = Array2::<T>::zeros((tokens.len(), self.dim));
        for (i, &t) in tokens.iter().enumerate() {
            out.row_mut(i).assign(&w.row(t as usize));
        }
        out
    }

    pub fn backward<T: Real>(&self, tokens: &[u32], dy: ArrayView2<T>, grads: &mut ParamStore<T>) {
        let g = grads.entry_zeros(&self.w(), &[self.vocab, self.dim]);
        let mut g = g
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-D");
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = g.row_mut(t as usize);
            row += &dy.row(i);
        }
    }
}

/// Sequence pooling with a learned per-position gate:
/// `out[d] = (1/L) * sum_p gate[p, d] * x[p, d]`.
/// The gate lets the pooled vector depend on word order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalPool {
    pub name: String,
    pub max_len: usize,
    pub dim: usize,
}

impl PositionalPool {
    pub fn new(name: impl Into<String>, max_len: usize, dim: usize) -> Self {
        PositionalPool {
            name: name.into(),
            max_len,
            dim,
        }
    }

    fn g(&self) -> String {
        format!("{}.gate", self.name)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        store.insert(
            self.g(),
            ArrayD::from_shape_simple_fn(IxDyn(&[self.max_len, self.dim]), || {
                T::lit(rng.gen_range(0.5..1.5))
            }),
        )
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: ArrayView2<T>) -> Array1<T> {
        let len = x.nrows();
        let mut out = Array1::<T>::zeros(self.dim);
        if len == 0 {
            return out;
        }
        let gate = p.matrix(&self.g());
        for i in 0..len {
            out += &(&x.row(i) * &gate.row(i));
        }
        out / T::lit(len as f64)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        dy: ArrayView1<T>,
        grads: &mut ParamStore<T>,
    ) -> Array2<T> {
        let len = x.nrows();
        let mut dx = Array2::<T>::zeros(x.raw_dim());
        if len == 0 {
            return dx;
        }
        let scale = T::lit(1.0 / len as f64);
        let gate = p.matrix(&self.g());
        let mut dgate = Array2::<T>::zeros((self.max_len, self.dim));
        for i in 0..len {
            dx.row_mut(i).assign(&(&dy * &gate.row(i) * scale));
            dgate.row_mut(i).assign(&(&dy * &x.row(i) * scale));
        }
        add_to(grads, &self.g(), dgate.into_dyn());
        dx
    }
}

/// Softmax-weighted pooling over fixed-size groups of rows. Row `r` of the
/// input belongs to group `r / group`; each row gets the score `x . w + b`
/// plus an optional externally computed logit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionPool {
    pub name: String,
    pub dim: usize,
    pub group: usize,
}

/// Cached attention weights, one row per group.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache<T> {
    pub weights: Array2<T>,
}

impl AttentionPool {
    pub fn new(name: impl Into<String>, dim: usize, group: usize) -> Self {
        AttentionPool {
            name: name.into(),
            dim,
            group,
        }
    }

    fn w(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn b(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Zero scores, so pooling starts as the plain mean.
    pub fn init_zero<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.insert(self.w(), ArrayD::zeros(IxDyn(&[self.dim])))?;
        store.insert(self.b(), ArrayD::zeros(IxDyn(&[1])))
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        extra: Option<ArrayView1<T>>,
    ) -> (Array2<T>, AttentionCache<T>) {
        let n = x.nrows() / self.group;
        let mut scores = x.dot(&p.vector(&self.w())) + p.vector(&self.b())[0];
        if let Some(e) = extra {
            scores += &e;
        }
        let scores = scores
            .into_shape_with_order((n, self.group))
            .expect("whole groups");
        let mut weights = Array2::<T>::zeros((n, self.group));
        for (mut wr, sr) in weights.rows_mut().into_iter().zip(scores.rows()) {
            wr.assign(&super::softmax(sr));
        }
        let mut out = Array2::<T>::zeros((n, self.dim));
        for b in 0..n {
            let rows = x.slice(ndarray::s![b * self.group..(b + 1) * self.group, ..]);
            out.row_mut(b).assign(&weights.row(b).dot(&rows));
        }
        (out, AttentionCache { weights })
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        cache: &AttentionCache<T>,
        dy: ArrayView2<T>,
        grads: &mut ParamStore<T>,
    ) -> (Array2<T>, Array1<T>) {
        let w = p.vector(&self.w());
        let mut dx = Array2::<T>::zeros(x.raw_dim());
        let mut d_scores = Array1::<T>::zeros(x.nrows());
        let mut dw = Array1::<T>::zeros(self.dim);
        let mut db = T::zero();
        for b in 0..dy.nrows() {
            let range = b * self.group..(b + 1) * self.group;
            let rows = x.slice(ndarray::s![range.clone(), ..]);
            let a = cache.weights.row(b);
            let da = rows.dot(&dy.row(b));
            let mean = a.dot(&da);
            let ds = &a * &(&da - mean);
            d_scores.slice_mut(ndarray::s![range.clone()]).assign(&ds);
            let mut dxb = dx.slice_mut(ndarray::s![range, ..]);
            for (k, mut row) in dxb.rows_mut().into_iter().enumerate() {
                row.assign(&(&dy.row(b) * a[k] + &w * ds[k]));
            }
            dw += &ds.dot(&rows);
            db += ds.sum();
        }
        add_to(grads, &self.w(), dw.into_dyn());
        add_to(grads, &self.b(), Array1::from_elem(1, db).into_dyn());
        (dx, d_scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_forward_matches_hand_computation() {
        let mut p = ParamStore::<f64>::new();
        p.insert("d.weight", array![[1.0, 2.0], [3.0, 4.0]].into_dyn())
            .unwrap();
        p.insert("d.bias", array![0.5, -0.5].into_dyn()).unwrap();
        let d = Dense::new("d", 2, 2);
        let y = d.forward(&p, array![[1.0, 1.0]].view());
        assert_eq!(y, array![[4.5, 5.5]]);
    }

    #[test]
    fn patchify_conv_equals_dense_per_patch() {
        // A kernel == stride convolution is a dense layer on each patch.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new("c", 2, 3, 2, 2, 0);
        let mut p = ParamStore::<f64>::new();
        conv.init(&mut p, &mut rng).unwrap();
        let data = Array2::from_shape_fn((16, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let x = FeatureMap::new(1, 4, 4, data.clone());
        let (y, _) = conv.forward(&p, &x);
        assert_eq!((y.h, y.w), (2, 2));
        // Output cell (1, 0) covers input rows (2,0),(2,1),(3,0),(3,1).
        let patch: Vec<f64> = [(2, 0), (2, 1), (3, 0), (3, 1)]
            .iter()
            .flat_map(|&(r, c)| data.row(r * 4 + c).to_vec())
            .collect();
        let patch = Array1::from(patch);
        let expect = patch.dot(&p.matrix("c.weight")) + p.vector("c.bias");
        for k in 0..3 {
            assert!((y.data[[2, k]] - expect[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_temporal_adapter_is_silent() {
        let t = DepthwiseTemporal::new("t", 3, 2);
        let mut p = ParamStore::<f64>::new();
        t.init_zero(&mut p).unwrap();
        let frames = vec![
            Array2::from_elem((2, 3), 1.0),
            Array2::from_elem((2, 3), 2.0),
        ];
        let y = t.forward(&p, &frames);
        assert!(y.iter().all(|f| f.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_sum_temporal_conv_ignores_static_input() {
        let t = DepthwiseTemporal::new("t", 2, 2).with_zero_sum();
        let mut p = ParamStore::<f64>::new();
        p.insert("t.weight", array![[0.3, 2.0], [1.1, -0.5]].into_dyn())
            .unwrap();
        p.insert("t.bias", array![0.7, -0.2].into_dyn()).unwrap();
        let x = array![[1.5, -2.0], [0.25, 4.0]];
        let y = t.forward(&p, &[x.clone(), x]);
        assert!(y[1].iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn temporal_conv_is_causal() {
        let t = DepthwiseTemporal::new("t", 1, 2);
        let mut p = ParamStore::<f64>::new();
        p.insert("t.weight", array![[-1.0], [1.0]].into_dyn())
            .unwrap();
        p.insert("t.bias", array![0.0].into_dyn()).unwrap();
        let frames = vec![array![[2.0]], array![[5.0]]];
        let y = t.forward(&p, &frames);
        assert_eq!(y[0], array![[2.0]]);
        assert_eq!(y[1], array![[3.0]]);
    }

    #[test]
    fn attention_pool_starts_as_mean_and_checks_out() {
        let pool = AttentionPool::new("a", 3, 4);
        let mut p = ParamStore::<f64>::new();
        pool.init_zero(&mut p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_simple_fn((8, 3), || rng.gen_range(-1.0..1.0));
        let (y, _) = pool.forward(&p, x.view(), None);
        let mean = x.slice(ndarray::s![..4, ..]).mean_axis(Axis(0)).unwrap();
        assert!((&y.row(0) - &mean).iter().all(|v| v.abs() < 1e-12));

        p.get_mut("a.weight")
            .mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let target = Array2::from_shape_simple_fn((2, 3), || rng.gen_range(-1.0..1.0));
        let mut store = p.clone();
        store.insert("x", x.into_dyn()).unwrap();
        store
            .insert(
                "e",
                ArrayD::from_shape_simple_fn(IxDyn(&[8]), || rng.gen_range(-1.0..1.0)),
            )
            .unwrap();
        let err = crate::learn::grad_check(
            |q| {
                let xv = q.matrix("x");
                let (y, cache) = pool.forward(q, xv.view(), Some(q.vector("e")));
                let loss = (&y * &target).sum();
                let mut g = q.zeros_like();
                let (dx, de) = pool.backward(q, xv.view(), &cache, target.view(), &mut g);
                *g.get_mut("x") = dx.into_dyn();
                *g.get_mut("e") = de.into_dyn();
                Ok((loss, g))
            },
            &store,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn l2_rows_have_unit_norm() {
        let y = L2Normalize::forward(array![[3.0f64, 4.0], [0.1, -0.2]].view());
        for r in y.rows() {
            assert!((r.dot(&r).sqrt() - 1.0f64).abs() < 1e-9);
        }
    }
}
