//! Contrastive transition-to-instruction relabeler.
//!
//! The visual side runs a per-frame convolution backbone over the start and
//! end frames, fuses the two frames (by default with residual depth-wise
//! temporal adapters placed after each convolution stage), applies a per-cell
//! MLP, attention-pools over cells and projects to a unit-norm embedding. The text
//! side embeds, pools and projects the instruction to the same space.

mod data;
mod retrieval;
mod train;

pub use data::{caption_dataset, transition_dataset, Caption, LabeledTransition};
pub use retrieval::{
    calibrate_threshold, evaluate_retrieval, retrieve, select, Calibration, CandidateSet,
    RelabelResult, RetrievalEval, MIN_CORRECT_FOR_CALIBRATION,
};
pub use train::{
    train_relabeler, HeadScope, PhaseConfig, RelabelerTrainConfig, RelabelerTrainOutcome,
};

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Vocabulary, MAX_TOKENS};
use crate::learn::{
    nce_loss, Activation, AttentionCache, AttentionPool, Conv2d, Dense, DepthwiseTemporal,
    Embedding, FeatureMap, L2Normalize, ParamStore, PositionalPool, Real,
};
use crate::policy::observation_batch;
use crate::world::{Observation, CELL_PX};

/// Scale of the change share in the attention logits. A single scalar keeps
/// the gate blind to what changed, only to where.
const GATE: &str = "adapter.gate.weight";
const CHANGE_EPS: f64 = 1e-6;

fn add_to_grad<T: Real>(grads: &mut ParamStore<T>, name: &str, delta: ndarray::Array1<T>) {
    *grads.entry_zeros(name, delta.shape()) += &delta.into_dyn();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// A depth-wise temporal convolution over both frames' cell features;
    /// where it responds, attention pooling looks.
    TemporalAdapter,
    /// Per-cell features of both frames concatenated and mixed by a dense
    /// layer that starts as "take the end frame".
    ChannelConcat,
    /// Fixed `2 * end - start` feature fusion; no fusion parameters.
    FrameDifference,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::TemporalAdapter => "temporal-adapter",
            FusionMode::ChannelConcat => "channel-concat",
            FusionMode::FrameDifference => "frame-difference",
        })
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal-adapter" => Ok(FusionMode::TemporalAdapter),
            "channel-concat" => Ok(FusionMode::ChannelConcat),
            "frame-difference" => Ok(FusionMode::FrameDifference),
            other => Err(Error::Config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelabelerConfig {
    pub rows: usize,
    pub cols: usize,
    pub conv_channels: usize,
    pub cell_channels: usize,
    pub cell_hidden: usize,
    pub embed_dim: usize,
    pub text_dim: usize,
    pub text_hidden: usize,
    pub tau: f64,
    pub fusion: FusionMode,
    pub adapter_kernel: usize,
    /// Residual temporal adapters after both convolution stages, in addition
    /// to the cell-level change gate.
    pub stage_adapters: bool,
    /// Initial attention-logit weight of the change share.
    pub change_gate: f64,
    pub activation: Activation,
    /// Average the text-to-visual direction into the NCE loss.
    pub symmetric: bool,
}

impl Default for RelabelerConfig {
    fn default() -> Self {
        RelabelerConfig {
            rows: 6,
            cols: 6,
            conv_channels: 16,
            cell_channels: 32,
            cell_hidden: 64,
            embed_dim: 64,
            text_dim: 32,
            text_hidden: 64,
            tau: 0.05,
            fusion: FusionMode::TemporalAdapter,
            adapter_kernel: 2,
            stage_adapters: false,
            change_gate: 10.0,
            activation: Activation::Silu,
            symmetric: false,
        }
    }
}

/// First-stage activations of one batch of frames. The unfolded input and
/// pre-activation are only kept when the first stage is trained.
#[derive(Debug, Clone)]
pub struct Stem<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    /// `[n * h * w, conv_channels]`
    pub out: Array2<T>,
    cols: Option<Array2<T>>,
    pre: Option<Array2<T>>,
}

impl<T: Real> Stem<T> {
    /// Rows of the given examples, in order.
    pub fn select(&self, idx: &[usize]) -> Stem<T> {
        let per = self.h * self.w;
        let views: Vec<_> = idx
            .iter()
            .map(|&i| self.out.slice(s![i * per..(i + 1) * per, ..]))
            .collect();
        Stem {
            n: idx.len(),
            h: self.h,
            w: self.w,
            out: concatenate(Axis(0), &views).expect("equal widths"),
            cols: None,
            pre: None,
        }
    }
}

struct TrunkCache<T> {
    cols2: Vec<Array2<T>>,
    pre2: Vec<Array2<T>>,
    h2: Vec<Array2<T>>,
    cell_in: Vec<Array2<T>>,
    cell_pre: Vec<Array2<T>>,
    cells: Vec<Array2<T>>,
    /// Temporal response of the cell adapter at the end frame.
    change: Option<Array2<T>>,
    attn: AttentionCache<T>,
    pooled: Array2<T>,
    z: Array2<T>,
}

struct TextCache<T> {
    embedded: Vec<Array2<T>>,
    pooled: Array2<T>,
    pre: Array2<T>,
    hidden: Array2<T>,
    z: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelabelerModel<T> {
    pub config: RelabelerConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> RelabelerModel<T> {
    pub fn new<R: Rng + ?Sized>(config: RelabelerConfig, rng: &mut R) -> Result<Self> {
        if config.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        let mut model = RelabelerModel {
            config,
            params: ParamStore::new(),
        };
        let mut p = ParamStore::new();
        let (conv1, conv2) = model.convs();
        conv1.init(&mut p, rng)?;
        conv2.init(&mut p, rng)?;
        model.cell().init(&mut p, rng)?;
        model.attention().init_zero(&mut p)?;
        model.visual_head().init(&mut p, rng)?;
        if model.config.stage_adapters {
            let (a1, a2) = model.adapters();
            a1.init_zero(&mut p)?;
            a2.init_zero(&mut p)?;
        }
        model.cell_adapter().init_difference(&mut p)?;
        p.insert(
            GATE,
            ndarray::ArrayD::from_elem(ndarray::IxDyn(&[1]), T::lit(model.config.change_gate)),
        )?;
        let concat = model.concat();
        concat.init(&mut p, rng)?;
        // Start as the identity on the end frame.
        let c = model.config.cell_channels;
        let mut w = p.matrix_mut("fusion.concat.weight");
        w.fill(T::zero());
        for i in 0..c {
            w[[c + i, i]] = T::one();
        }
        let (emb, pool, t1, t2) = model.text_layers();
        emb.init(&mut p, rng)?;
        pool.init(&mut p, rng)?;
        t1.init(&mut p, rng)?;
        t2.init(&mut p, rng)?;
        model.params = p;
        Ok(model)
    }

    fn act(&self) -> Activation {
        self.config.activation
    }

    fn convs(&self) -> (Conv2d, Conv2d) {
        let c = &self.config;
        (
            Conv2d::new(
                "backbone.conv1",
                3,
                c.conv_channels,
                CELL_PX / 2,
                CELL_PX / 2,
                0,
            ),
            Conv2d::new("backbone.conv2", c.conv_channels, c.cell_channels, 2, 2, 0),
        )
    }

    fn cell(&self) -> Dense {
        Dense::new(
            "visual.cell",
            self.config.cell_channels,
            self.config.cell_hidden,
        )
    }

    fn attention(&self) -> AttentionPool {
        AttentionPool::new(
            "visual.attn",
            self.config.cell_hidden,
            self.config.rows * self.config.cols,
        )
    }

    fn visual_head(&self) -> Dense {
        Dense::new(
            "visual.head",
            self.config.cell_hidden,
            self.config.embed_dim,
        )
    }

    fn adapters(&self) -> (DepthwiseTemporal, DepthwiseTemporal) {
        let c = &self.config;
        (
            DepthwiseTemporal::new("adapter.stage1", c.conv_channels, c.adapter_kernel),
            DepthwiseTemporal::new("adapter.stage2", c.cell_channels, c.adapter_kernel),
        )
    }

    fn cell_adapter(&self) -> DepthwiseTemporal {
        DepthwiseTemporal::new(
            "adapter.cell",
            self.config.cell_hidden,
            self.config.adapter_kernel,
        )
        .with_zero_sum()
    }

    fn concat(&self) -> Dense {
        let c = self.config.cell_channels;
        Dense::new("fusion.concat", 2 * c, c)
    }

    fn text_layers(&self) -> (Embedding, PositionalPool, Dense, Dense) {
        let c = &self.config;
        (
            Embedding::new("text.embed", Vocabulary::standard().len(), c.text_dim),
            PositionalPool::new("text.pool", MAX_TOKENS, c.text_dim),
            Dense::new("text.hidden", c.text_dim, c.text_hidden),
            Dense::new("text.out", c.text_hidden, c.embed_dim),
        )
    }

    fn names_with(&self, prefixes: &[&str]) -> Vec<String> {
        self.params
            .names()
            .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
            .map(str::to_string)
            .collect()
    }

    /// The pretrained per-frame backbone.
    pub fn backbone_names(&self) -> Vec<String> {
        self.names_with(&["backbone."])
    }

    pub fn text_names(&self) -> Vec<String> {
        self.names_with(&["text."])
    }

    /// Parameters of the active fusion mode (empty for frame difference).
    pub fn fusion_names(&self) -> Vec<String> {
        match self.config.fusion {
            FusionMode::TemporalAdapter => self.names_with(&["adapter."]),
            FusionMode::ChannelConcat => self.names_with(&["fusion."]),
            FusionMode::FrameDifference => Vec::new(),
        }
    }

    /// Everything between the fused features and the embedding.
    pub fn head_names(&self) -> Vec<String> {
        self.names_with(&["visual."])
    }

    pub fn projection_names(&self) -> Vec<String> {
        self.names_with(&["visual.head."])
    }

    fn check_frames(&self, images: &FeatureMap<T>) -> Result<()> {
        let c = &self.config;
        if images.h != c.rows * CELL_PX || images.w != c.cols * CELL_PX {
            return Err(Error::Contract(format!(
                "observation is {}x{}, relabeler expects a {}x{} grid",
                images.h, images.w, c.rows, c.cols
            )));
        }
        Ok(())
    }

    /// First convolution stage of a batch of frames.
    pub fn stem(&self, images: &FeatureMap<T>, keep_cache: bool) -> Result<Stem<T>> {
        self.check_frames(images)?;
        let (conv1, _) = self.convs();
        let (a1, cols) = conv1.forward(&self.params, images);
        let out = self.act().forward(&a1.data);
        Ok(Stem {
            n: a1.n,
            h: a1.h,
            w: a1.w,
            out,
            cols: keep_cache.then_some(cols),
            pre: keep_cache.then_some(a1.data),
        })
    }

    fn trunk(&self, frames: &[&Stem<T>]) -> (Array2<T>, TrunkCache<T>) {
        let (_, conv2) = self.convs();
        let (a1, a2) = self.adapters();
        let two = frames.len() == 2;
        let temporal = two && self.config.fusion == FusionMode::TemporalAdapter;
        let staged = temporal && self.config.stage_adapters;
        let mut stage1: Vec<Array2<T>> = frames.iter().map(|f| f.out.clone()).collect();
        if staged {
            let delta = a1.forward(&self.params, &stage1);
            for (x, d) in stage1.iter_mut().zip(delta) {
                *x += &d;
            }
        }
        let (n, h, w) = (frames[0].n, frames[0].h, frames[0].w);
        let mut cols2 = Vec::new();
        let mut pre2 = Vec::new();
        let mut h2 = Vec::new();
        for x in &stage1 {
            let (y, cols) = conv2.forward(&self.params, &FeatureMap::new(n, h, w, x.clone()));
            h2.push(self.act().forward(&y.data));
            cols2.push(cols);
            pre2.push(y.data);
        }
        // Per-cell inputs of the cell MLP; the last one carries the content.
        let cell_in: Vec<Array2<T>> = if !two {
            vec![h2[0].clone()]
        } else {
            match self.config.fusion {
                FusionMode::TemporalAdapter if self.config.stage_adapters => {
                    let delta = a2.forward(&self.params, &h2);
                    h2.iter().zip(delta).map(|(x, d)| x + &d).collect()
                }
                FusionMode::TemporalAdapter => h2.clone(),
                FusionMode::ChannelConcat => {
                    let cat =
                        concatenate(Axis(1), &[h2[0].view(), h2[1].view()]).expect("same rows");
                    vec![self.concat().forward(&self.params, cat.view())]
                }
                FusionMode::FrameDifference => vec![&h2[1] * T::lit(2.0) - &h2[0]],
            }
        };
        let mut cell_pre = Vec::with_capacity(cell_in.len());
        let mut cells = Vec::with_capacity(cell_in.len());
        for x in &cell_in {
            let pre = self.cell().forward(&self.params, x.view());
            cells.push(self.act().forward(&pre));
            cell_pre.push(pre);
        }
        // The change gate: squared temporal response of each cell, weighted
        // into the attention logits.
        let change = temporal.then(|| {
            let mut r = self
                .cell_adapter()
                .forward(&self.params, &cells)
                .pop()
                .expect("two frames");
            // Only growth counts: a cell that gained something, not one that lost it.
            r.mapv_inplace(|v| v.max(T::zero()));
            let logits = self.change_logits(&r);
            (r, logits)
        });
        let values = cells.last().expect("one frame at least");
        let (pooled, attn) = self.attention().forward(
            &self.params,
            values.view(),
            change.as_ref().map(|(_, l)| l.view()),
        );
        let z = self.visual_head().forward(&self.params, pooled.view());
        let v = L2Normalize::forward(z.view());
        (
            v,
            TrunkCache {
                cols2,
                pre2,
                h2,
                cell_in,
                cell_pre,
                cells,
                change: change.map(|(r, _)| r),
                attn,
                pooled,
                z,
            },
        )
    }

    /// Per-cell mean squared response `e` and the denominator of its share,
    /// `e + mean(e) + eps` over the example's cells. The share saturates, so
    /// every clearly changed cell passes the gate and static cells do not.
    fn change_energy(&self, r: &Array2<T>) -> (ndarray::Array1<T>, ndarray::Array1<T>) {
        let energy = (r * r).sum_axis(Axis(1)) / T::lit(r.ncols() as f64);
        let per = self.config.rows * self.config.cols;
        let mut denom = energy.clone();
        for (mut d, e) in denom
            .exact_chunks_mut(per)
            .into_iter()
            .zip(energy.exact_chunks(per))
        {
            let m = e.sum() / T::lit(per as f64) + T::lit(CHANGE_EPS);
            d.mapv_inplace(|v| v + m);
        }
        (energy, denom)
    }

    /// Gate times each cell's change share.
    fn change_logits(&self, r: &Array2<T>) -> ndarray::Array1<T> {
        let (energy, denom) = self.change_energy(r);
        energy / &denom * self.params.vector(GATE)[0]
    }

    fn change_backward(
        &self,
        r: &Array2<T>,
        d_logits: &ndarray::Array1<T>,
        grads: &mut ParamStore<T>,
    ) -> Array2<T> {
        let gate = self.params.vector(GATE)[0];
        let (energy, denom) = self.change_energy(r);
        let share = &energy / &denom;
        add_to_grad(
            grads,
            GATE,
            ndarray::Array1::from_elem(1, share.dot(d_logits)),
        );
        let d_share = d_logits * gate;
        let mut d_energy = &d_share * &(&denom - &energy) / &denom / &denom;
        let per = self.config.rows * self.config.cols;
        for b in 0..energy.len() / per {
            let range = b * per..(b + 1) * per;
            let coupled = (&d_share.slice(s![range.clone()]) * &share.slice(s![range.clone()])
                / denom.slice(s![range.clone()]))
            .sum()
                / T::lit(per as f64);
            d_energy.slice_mut(s![range]).mapv_inplace(|v| v - coupled);
        }
        let scale = T::lit(2.0 / r.ncols() as f64);
        r * &d_energy.insert_axis(Axis(1)) * scale
    }

    /// Backward through the visual trunk. `stems` must carry their caches
    /// when `into_stem` is set.
    fn trunk_backward(
        &self,
        frames: &[&Stem<T>],
        cache: &TrunkCache<T>,
        d_v: &Array2<T>,
        into_stem: bool,
        grads: &mut ParamStore<T>,
    ) {
        let p = &self.params;
        let (conv1, conv2) = self.convs();
        let (a1, a2) = self.adapters();
        let two = frames.len() == 2;
        let temporal = two && self.config.fusion == FusionMode::TemporalAdapter;
        let staged = temporal && self.config.stage_adapters;
        let (n, h, w) = (frames[0].n, frames[0].h, frames[0].w);

        let d_z = L2Normalize::backward(cache.z.view(), d_v.view());
        let d_pooled = self
            .visual_head()
            .backward(p, cache.pooled.view(), d_z.view(), grads);
        let last = cache.cells.len() - 1;
        let (d_values, d_logits) = self.attention().backward(
            p,
            cache.cells[last].view(),
            &cache.attn,
            d_pooled.view(),
            grads,
        );
        let mut d_cells: Vec<Array2<T>> = cache
            .cells
            .iter()
            .map(|c| Array2::zeros(c.raw_dim()))
            .collect();
        d_cells[last] += &d_values;
        if let Some(r) = &cache.change {
            let d_r = self.change_backward(r, &d_logits, grads);
            let dy = vec![Array2::zeros(d_r.raw_dim()), d_r];
            for (d, x) in
                d_cells
                    .iter_mut()
                    .zip(self.cell_adapter().backward(p, &cache.cells, &dy, grads))
            {
                *d += &x;
            }
        }
        let d_in: Vec<Array2<T>> = d_cells
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let d_pre = self.act().backward(&cache.cell_pre[i], d);
                self.cell()
                    .backward(p, cache.cell_in[i].view(), d_pre.view(), grads)
            })
            .collect();

        let d_h2: Vec<Array2<T>> = if !two {
            d_in
        } else {
            match self.config.fusion {
                FusionMode::TemporalAdapter if self.config.stage_adapters => {
                    let mut dx = a2.backward(p, &cache.h2, &d_in, grads);
                    for (x, d) in dx.iter_mut().zip(&d_in) {
                        *x += d;
                    }
                    dx
                }
                FusionMode::TemporalAdapter => d_in,
                FusionMode::ChannelConcat => {
                    let cat = concatenate(Axis(1), &[cache.h2[0].view(), cache.h2[1].view()])
                        .expect("same rows");
                    let d_cat = self.concat().backward(p, cat.view(), d_in[0].view(), grads);
                    let c = self.config.cell_channels;
                    vec![
                        d_cat.slice(s![.., ..c]).to_owned(),
                        d_cat.slice(s![.., c..]).to_owned(),
                    ]
                }
                FusionMode::FrameDifference => {
                    vec![&d_in[0] * T::lit(-1.0), &d_in[0] * T::lit(2.0)]
                }
            }
        };

        if !into_stem && !staged {
            return;
        }
        let d_stage1: Vec<Array2<T>> = d_h2
            .iter()
            .enumerate()
            .map(|(t, d)| {
                let d_pre = self.act().backward(&cache.pre2[t], d);
                conv2.backward(p, &cache.cols2[t], (n, h, w), d_pre.view(), grads)
            })
            .collect();
        let d_stem = if staged {
            let outs: Vec<Array2<T>> = frames.iter().map(|f| f.out.clone()).collect();
            let mut dx = a1.backward(p, &outs, &d_stage1, grads);
            for (x, d) in dx.iter_mut().zip(&d_stage1) {
                *x += d;
            }
            dx
        } else {
            d_stage1
        };
        if into_stem {
            for (f, d) in frames.iter().zip(&d_stem) {
                let (Some(cols), Some(pre)) = (&f.cols, &f.pre) else {
                    continue;
                };
                let d_pre = self.act().backward(pre, d);
                conv1.backward_params(cols, d_pre.view(), grads);
            }
        }
    }

    fn text_forward(&self, tokens: &[&[u32]]) -> (Array2<T>, TextCache<T>) {
        let (emb, pool, t1, t2) = self.text_layers();
        let mut pooled = Array2::<T>::zeros((tokens.len(), self.config.text_dim));
        let mut embedded = Vec::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            let e = emb.forward(&self.params, t);
            pooled
                .row_mut(i)
                .assign(&pool.forward(&self.params, e.view()));
            embedded.push(e);
        }
        let pre = t1.forward(&self.params, pooled.view());
        let hidden = self.act().forward(&pre);
        let z = t2.forward(&self.params, hidden.view());
        let y = L2Normalize::forward(z.view());
        (
            y,
            TextCache {
                embedded,
                pooled,
                pre,
                hidden,
                z,
            },
        )
    }

    fn text_backward(
        &self,
        tokens: &[&[u32]],
        cache: &TextCache<T>,
        d_y: &Array2<T>,
        grads: &mut ParamStore<T>,
    ) {
        let p = &self.params;
        let (emb, pool, t1, t2) = self.text_layers();
        let d_z = L2Normalize::backward(cache.z.view(), d_y.view());
        let d_hidden = t2.backward(p, cache.hidden.view(), d_z.view(), grads);
        let d_pre = self.act().backward(&cache.pre, &d_hidden);
        let d_pooled = t1.backward(p, cache.pooled.view(), d_pre.view(), grads);
        for (i, t) in tokens.iter().enumerate() {
            let d_e = pool.backward(p, cache.embedded[i].view(), d_pooled.row(i), grads);
            emb.backward(t, d_e.view(), grads);
        }
    }

    /// Unit-norm instruction embeddings, `[n, embed_dim]`.
    pub fn embed_texts(&self, tokens: &[&[u32]]) -> Result<Array2<T>> {
        if let Some(t) = tokens.iter().find(|t| t.len() > MAX_TOKENS) {
            return Err(Error::Contract(format!(
                "instruction of {} tokens",
                t.len()
            )));
        }
        Ok(self.text_forward(tokens).0)
    }

    /// Unit-norm embeddings of transitions given their first-stage outputs.
    pub fn embed_stems(&self, start: &Stem<T>, end: &Stem<T>) -> Array2<T> {
        self.trunk(&[start, end]).0
    }

    /// Unit-norm transition embeddings, `[n, embed_dim]`.
    pub fn embed_transitions(
        &self,
        starts: &[&Observation],
        ends: &[&Observation],
    ) -> Result<Array2<T>> {
        if starts.len() != ends.len() || starts.is_empty() {
            return Err(Error::Contract(
                "need matching, non-empty frame lists".into(),
            ));
        }
        if starts
            .iter()
            .zip(ends)
            .any(|(a, b)| (a.height, a.width) != (b.height, b.width))
        {
            return Err(Error::Contract(
                "start and end frames differ in size".into(),
            ));
        }
        let s0 = self.stem(&observation_batch(starts), false)?;
        let s1 = self.stem(&observation_batch(ends), false)?;
        Ok(self.embed_stems(&s0, &s1))
    }

    pub fn embed_transition(
        &self,
        start: &Observation,
        end: &Observation,
    ) -> Result<ndarray::Array1<T>> {
        Ok(self.embed_transitions(&[start], &[end])?.row(0).to_owned())
    }

    /// Where the model looks for one transition: each cell's attention
    /// weight in row-major order, and its change share (all
    /// zero outside the temporal-adapter mode).
    pub fn attention_map(
        &self,
        start: &Observation,
        end: &Observation,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let s0 = self.stem(&observation_batch(&[start]), false)?;
        let s1 = self.stem(&observation_batch(&[end]), false)?;
        let (_, cache) = self.trunk(&[&s0, &s1]);
        let weights = cache.attn.weights.iter().map(|w| w.as_f64()).collect();
        let shares = match &cache.change {
            Some(r) => {
                let (energy, denom) = self.change_energy(r);
                (energy / denom).iter().map(|s| s.as_f64()).collect()
            }
            None => vec![0.0; self.config.rows * self.config.cols],
        };
        Ok((weights, shares))
    }

    /// Unit-norm embeddings of single frames (the pretraining view).
    pub fn embed_frames(&self, frames: &[&Observation]) -> Result<Array2<T>> {
        let s = self.stem(&observation_batch(frames), false)?;
        Ok(self.trunk(&[&s]).0)
    }

    /// NCE loss of matched (visual, instruction) pairs and its gradients.
    /// `frames` holds one stem (single-frame view) or two (start, end).
    /// Gradients reach the first stage only when its caches are present and
    /// `train_stem` is set; text gradients only with `train_text`.
    pub fn nce_step(
        &self,
        frames: &[&Stem<T>],
        tokens: &[&[u32]],
        train_stem: bool,
        train_text: bool,
    ) -> Result<(T, ParamStore<T>)> {
        if frames.is_empty() || frames.len() > 2 || frames[0].n != tokens.len() {
            return Err(Error::Contract(
                "nce step needs one or two stems matching the tokens".into(),
            ));
        }
        let (v, tcache) = self.trunk(frames);
        let (y, xcache) = self.text_forward(tokens);
        let out = nce_loss(v.view(), y.view(), self.config.tau, self.config.symmetric)?;
        let mut grads = self.params.zeros_like();
        self.trunk_backward(frames, &tcache, &out.d_queries, train_stem, &mut grads);
        if train_text {
            self.text_backward(tokens, &xcache, &out.d_keys, &mut grads);
        }
        Ok((out.loss, grads))
    }

    pub fn cast<U: Real>(&self) -> RelabelerModel<U> {
        RelabelerModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{Family, Instruction};
    use crate::learn::gradcheck::grad_check_report;
    use crate::policy::scripted_expert;
    use crate::world::{new_scene, render, step, SceneSpec, WorldSplits};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(fusion: FusionMode) -> RelabelerConfig {
        RelabelerConfig {
            rows: 2,
            cols: 2,
            conv_channels: 3,
            cell_channels: 4,
            cell_hidden: 5,
            embed_dim: 4,
            text_dim: 3,
            text_hidden: 4,
            fusion,
            tau: 0.5,
            ..Default::default()
        }
    }

    fn transitions(n: usize) -> (Vec<Observation>, Vec<Observation>, Vec<Instruction>) {
        let spec = SceneSpec::for_family(Family::PutBlocksInBowls)
            .with_grid(2, 2)
            .with_objects(2)
            .with_bowls(2);
        let (mut a, mut b, mut l) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..n as u64 {
            let scene = new_scene(seed, &spec, &WorldSplits::default()).unwrap();
            let instr = Instruction::put_block(
                scene.objects[0].color,
                scene.containers[(seed % 2) as usize].color,
            );
            let (next, _) = step(&scene, scripted_expert(&scene, &instr).unwrap()).unwrap();
            a.push(render(&scene, (seed % 4) as u8).unwrap());
            b.push(render(&next, (seed % 4) as u8).unwrap());
            l.push(instr);
        }
        (a, b, l)
    }

    fn randomize_fusion(model: &mut RelabelerModel<f64>, rng: &mut ChaCha8Rng) {
        for name in model.fusion_names() {
            model
                .params
                .get_mut(&name)
                .mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
    }

    #[test]
    fn full_nce_loss_passes_grad_check_for_every_fusion() {
        let (a, b, l) = transitions(4);
        let tokens: Vec<&[u32]> = l.iter().map(|i| i.tokens.as_slice()).collect();
        let cases = [
            (FusionMode::TemporalAdapter, false),
            (FusionMode::TemporalAdapter, true),
            (FusionMode::ChannelConcat, false),
            (FusionMode::FrameDifference, false),
        ];
        for (fusion, stage_adapters) in cases {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let config = RelabelerConfig {
                stage_adapters,
                ..small(fusion)
            };
            let mut model = RelabelerModel::<f64>::new(config, &mut rng).unwrap();
            randomize_fusion(&mut model, &mut rng);
            // Default-scale token embeddings leave the text vector almost at
            // the origin, where normalization is too curved for differences.
            model
                .params
                .get_mut("text.embed.weight")
                .mapv_inplace(|_| rng.gen_range(-1.0..1.0));
            let ra: Vec<&Observation> = a.iter().collect();
            let rb: Vec<&Observation> = b.iter().collect();
            let err = grad_check_report(
                |p| {
                    let m = RelabelerModel {
                        config: model.config.clone(),
                        params: p.clone(),
                    };
                    let s0 = m.stem(&observation_batch(&ra), true)?;
                    let s1 = m.stem(&observation_batch(&rb), true)?;
                    m.nce_step(&[&s0, &s1], &tokens, true, true)
                },
                &model.params,
                1e-3,
            )
            .unwrap();
            assert!(err.max_rel_error < 1e-4, "{fusion}: {err:?}");
        }
    }

    #[test]
    fn embeddings_are_unit_norm_and_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = RelabelerModel::<f64>::new(RelabelerConfig::default(), &mut rng).unwrap();
        randomize_fusion(&mut model, &mut rng);
        let scene = new_scene(
            1,
            &SceneSpec::for_family(Family::PutShapesInBowls),
            &WorldSplits::default(),
        )
        .unwrap();
        let instr = Instruction::put_shape(scene.objects[0].shape, scene.containers[0].color);
        let (next, _) = step(&scene, scripted_expert(&scene, &instr).unwrap()).unwrap();
        let (o0, o1) = (render(&scene, 0).unwrap(), render(&next, 0).unwrap());
        let fwd = model.embed_transition(&o0, &o1).unwrap();
        let back = model.embed_transition(&o1, &o0).unwrap();
        assert!((fwd.dot(&fwd).sqrt() - 1.0).abs() < 1e-6);
        assert_eq!(fwd, model.embed_transition(&o0, &o1).unwrap());
        assert!((&fwd - &back).mapv(f64::abs).sum() > 1e-6);
        let t = model.embed_texts(&[&instr.tokens]).unwrap();
        assert!((t.row(0).dot(&t.row(0)).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fresh_fusion_is_identity_on_repeated_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for fusion in [
            FusionMode::TemporalAdapter,
            FusionMode::ChannelConcat,
            FusionMode::FrameDifference,
        ] {
            let model = RelabelerModel::<f64>::new(
                RelabelerConfig {
                    fusion,
                    ..Default::default()
                },
                &mut rng,
            )
            .unwrap();
            let scene = new_scene(
                2,
                &SceneSpec::for_family(Family::PackShapes),
                &WorldSplits::default(),
            )
            .unwrap();
            let o = render(&scene, 1).unwrap();
            let single = model.embed_frames(&[&o]).unwrap();
            let pair = model.embed_transitions(&[&o], &[&o]).unwrap();
            assert!((&single - &pair).mapv(f64::abs).sum() < 1e-12, "{fusion}");
        }
    }
}
