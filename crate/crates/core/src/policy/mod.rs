//! Language-conditioned pick-and-place affordance policy.
//!
//! A strided convolution stack turns the image into one feature vector per
//! grid cell. The instruction is embedded, pooled and projected, then
//! broadcast onto every cell. Two per-cell MLP heads score pick and place
//! cells; the place head also sees a one-hot plane marking the pick cell.

mod expert;
mod train;

pub use expert::{scripted_expert, unload};
pub use train::{
    generate_demos, load_demos, save_demos, train_policy, DemoRecord, PolicyTrainConfig,
    TrainOutcome, DEMO_SCHEMA_VERSION,
};

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Instruction, Vocabulary, MAX_TOKENS};
use crate::learn::{
    softmax_xent, Activation, Conv2d, Dense, Embedding, FeatureMap, ParamStore, PositionalPool,
    Real,
};
use crate::world::{Cell, Observation, PickPlaceAction, CELL_PX};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub rows: usize,
    pub cols: usize,
    pub conv_channels: usize,
    pub cell_channels: usize,
    pub text_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            rows: 6,
            cols: 6,
            conv_channels: 16,
            cell_channels: 32,
            text_dim: 32,
            hidden: 64,
            activation: Activation::Silu,
        }
    }
}

impl PolicyConfig {
    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Converts observations into the network's input map, intensities in [0, 1].
pub fn observation_batch<T: Real>(observations: &[&Observation]) -> FeatureMap<T> {
    let (h, w) = (observations[0].height, observations[0].width);
    let scale = T::lit(1.0 / 255.0);
    let mut data = Array2::<T>::zeros((observations.len() * h * w, 3));
    let dst = data.as_slice_mut().expect("fresh array");
    let mut i = 0;
    for obs in observations {
        debug_assert_eq!((obs.height, obs.width), (h, w));
        for &b in &obs.pixels {
            dst[i] = T::lit(f64::from(b)) * scale;
            i += 1;
        }
    }
    FeatureMap::new(observations.len(), h, w, data)
}

/// Index of the first maximum, so ties resolve to the lowest row-major cell.
pub fn argmax_first<T: Real>(values: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct VisionCache<T> {
    n: usize,
    cols1: Array2<T>,
    pre1: Array2<T>,
    map1: (usize, usize),
    cols2: Array2<T>,
    pre2: Array2<T>,
}

struct TextCache<T> {
    embedded: Vec<Array2<T>>,
    pooled: Array2<T>,
    pre: Array2<T>,
}

struct HeadCache<T> {
    input: Array2<T>,
    pre: Array2<T>,
    hidden: Array2<T>,
}

/// Shared encoder outputs for a batch.
pub struct Encoded<T> {
    /// `[n * cells, cell_channels]`
    pub cells: Array2<T>,
    /// `[n, text_dim]`
    pub text: Array2<T>,
    vision: VisionCache<T>,
    text_cache: TextCache<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel<T> {
    pub config: PolicyConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> PolicyModel<T> {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Result<Self> {
        let mut model = PolicyModel {
            config,
            params: ParamStore::new(),
        };
        let mut p = ParamStore::new();
        let (conv1, conv2) = model.convs();
        conv1.init(&mut p, rng)?;
        conv2.init(&mut p, rng)?;
        model.embedding().init(&mut p, rng)?;
        model.pool().init(&mut p, rng)?;
        model.text_proj().init(&mut p, rng)?;
        for (hidden, out) in [model.head("pick", 0), model.head("place", 1)] {
            hidden.init(&mut p, rng)?;
            out.init(&mut p, rng)?;
        }
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
                "vision.conv1",
                3,
                c.conv_channels,
                CELL_PX / 2,
                CELL_PX / 2,
                0,
            ),
            Conv2d::new("vision.conv2", c.conv_channels, c.cell_channels, 2, 2, 0),
        )
    }

    fn embedding(&self) -> Embedding {
        Embedding::new(
            "text.embed",
            Vocabulary::standard().len(),
            self.config.text_dim,
        )
    }

    fn pool(&self) -> PositionalPool {
        PositionalPool::new("text.pool", MAX_TOKENS, self.config.text_dim)
    }

    fn text_proj(&self) -> Dense {
        Dense::new("text.proj", self.config.text_dim, self.config.text_dim)
    }

    fn head(&self, name: &str, extra: usize) -> (Dense, Dense) {
        let c = &self.config;
        (
            Dense::new(
                format!("{name}.hidden"),
                c.cell_channels + c.text_dim + extra,
                c.hidden,
            ),
            Dense::new(format!("{name}.out"), c.hidden, 1),
        )
    }

    fn check_input(&self, images: &FeatureMap<T>) -> Result<()> {
        let c = &self.config;
        if images.h != c.rows * CELL_PX || images.w != c.cols * CELL_PX {
            return Err(Error::Contract(format!(
                "observation is {}x{}, policy expects a {}x{} grid",
                images.h, images.w, c.rows, c.cols
            )));
        }
        Ok(())
    }

    fn vision_forward(&self, x: &FeatureMap<T>) -> (Array2<T>, VisionCache<T>) {
        let (conv1, conv2) = self.convs();
        let (a1, cols1) = conv1.forward(&self.params, x);
        let h1 = a1.with_data(self.act().forward(&a1.data));
        let (a2, cols2) = conv2.forward(&self.params, &h1);
        let out = self.act().forward(&a2.data);
        let cache = VisionCache {
            n: x.n,
            cols1,
            pre1: a1.data,
            map1: (a1.h, a1.w),
            cols2,
            pre2: a2.data,
        };
        (out, cache)
    }

    fn vision_backward(
        &self,
        cache: &VisionCache<T>,
        d_out: &Array2<T>,
        grads: &mut ParamStore<T>,
    ) {
        let (conv1, conv2) = self.convs();
        let d_pre2 = self.act().backward(&cache.pre2, d_out);
        let (h, w) = cache.map1;
        let d_h1 = conv2.backward(
            &self.params,
            &cache.cols2,
            (cache.n, h, w),
            d_pre2.view(),
            grads,
        );
        let d_pre1 = self.act().backward(&cache.pre1, &d_h1);
        conv1.backward_params(&cache.cols1, d_pre1.view(), grads);
    }

    fn text_forward(&self, tokens: &[&[u32]]) -> (Array2<T>, TextCache<T>) {
        let emb = self.embedding();
        let pool = self.pool();
        let mut pooled = Array2::<T>::zeros((tokens.len(), self.config.text_dim));
        let mut embedded = Vec::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            let e = emb.forward(&self.params, t);
            pooled
                .row_mut(i)
                .assign(&pool.forward(&self.params, e.view()));
            embedded.push(e);
        }
        let pre = self.text_proj().forward(&self.params, pooled.view());
        let out = self.act().forward(&pre);
        (
            out,
            TextCache {
                embedded,
                pooled,
                pre,
            },
        )
    }

    fn text_backward(
        &self,
        tokens: &[&[u32]],
        cache: &TextCache<T>,
        d_out: &Array2<T>,
        grads: &mut ParamStore<T>,
    ) {
        let d_pre = self.act().backward(&cache.pre, d_out);
        let d_pooled =
            self.text_proj()
                .backward(&self.params, cache.pooled.view(), d_pre.view(), grads);
        let emb = self.embedding();
        let pool = self.pool();
        for (i, t) in tokens.iter().enumerate() {
            let d_e = pool.backward(
                &self.params,
                cache.embedded[i].view(),
                d_pooled.row(i),
                grads,
            );
            emb.backward(t, d_e.view(), grads);
        }
    }

    /// Runs the vision and language encoders.
    pub fn encode(&self, images: &FeatureMap<T>, tokens: &[&[u32]]) -> Result<Encoded<T>> {
        self.check_input(images)?;
        if tokens.len() != images.n {
            return Err(Error::Contract("one instruction per observation".into()));
        }
        if let Some(t) = tokens.iter().find(|t| t.len() > MAX_TOKENS) {
            return Err(Error::Contract(format!(
                "instruction of {} tokens",
                t.len()
            )));
        }
        let (cells, vision) = self.vision_forward(images);
        let (text, text_cache) = self.text_forward(tokens);
        Ok(Encoded {
            cells,
            text,
            vision,
            text_cache,
        })
    }

    fn head_input(&self, enc: &Encoded<T>, picks: Option<&[usize]>) -> Array2<T> {
        let cells = self.config.n_cells();
        let (cc, td) = (self.config.cell_channels, self.config.text_dim);
        let extra = usize::from(picks.is_some());
        let n = enc.text.nrows();
        let mut z = Array2::<T>::zeros((n * cells, cc + td + extra));
        z.slice_mut(s![.., ..cc]).assign(&enc.cells);
        for b in 0..n {
            let mut block = z.slice_mut(s![b * cells..(b + 1) * cells, cc..cc + td]);
            block += &enc.text.row(b);
            if let Some(picks) = picks {
                z[[b * cells + picks[b], cc + td]] = T::one();
            }
        }
        z
    }

    fn head_forward(&self, enc: &Encoded<T>, picks: Option<&[usize]>) -> (Array2<T>, HeadCache<T>) {
        let (hidden, out) = match picks {
            None => self.head("pick", 0),
            Some(_) => self.head("place", 1),
        };
        let input = self.head_input(enc, picks);
        let pre = hidden.forward(&self.params, input.view());
        let h = self.act().forward(&pre);
        let logits = out.forward(&self.params, h.view());
        let n = enc.text.nrows();
        let logits = logits
            .into_shape_with_order((n, self.config.n_cells()))
            .expect("one logit per cell");
        (
            logits,
            HeadCache {
                input,
                pre,
                hidden: h,
            },
        )
    }

    /// Backpropagates head logit gradients; returns `(d_cells, d_text)`.
    fn head_backward(
        &self,
        place: bool,
        cache: &HeadCache<T>,
        d_logits: &Array2<T>,
        grads: &mut ParamStore<T>,
    ) -> (Array2<T>, Array2<T>) {
        let (hidden, out) = if place {
            self.head("place", 1)
        } else {
            self.head("pick", 0)
        };
        let cells = self.config.n_cells();
        let (cc, td) = (self.config.cell_channels, self.config.text_dim);
        let n = d_logits.nrows();
        let d_flat = d_logits
            .to_owned()
            .into_shape_with_order((n * cells, 1))
            .expect("flatten");
        let d_h = out.backward(&self.params, cache.hidden.view(), d_flat.view(), grads);
        let d_pre = self.act().backward(&cache.pre, &d_h);
        let d_in = hidden.backward(&self.params, cache.input.view(), d_pre.view(), grads);
        let d_cells = d_in.slice(s![.., ..cc]).to_owned();
        let mut d_text = Array2::<T>::zeros((n, td));
        for b in 0..n {
            let block = d_in.slice(s![b * cells..(b + 1) * cells, cc..cc + td]);
            d_text.row_mut(b).assign(&block.sum_axis(Axis(0)));
        }
        (d_cells, d_text)
    }

    /// Pick logits, `[n, cells]`.
    pub fn pick_logits(&self, enc: &Encoded<T>) -> Array2<T> {
        self.head_forward(enc, None).0
    }

    /// Place logits conditioned on the given pick cells, `[n, cells]`.
    pub fn place_logits(&self, enc: &Encoded<T>, picks: &[usize]) -> Array2<T> {
        self.head_forward(enc, Some(picks)).0
    }

    /// Greedy actions for a batch: argmax pick, then argmax place given it.
    pub fn predict_batch(
        &self,
        observations: &[&Observation],
        instructions: &[&Instruction],
    ) -> Result<Vec<PickPlaceAction>> {
        if observations.is_empty() {
            return Ok(Vec::new());
        }
        let images = observation_batch::<T>(observations);
        let tokens: Vec<&[u32]> = instructions.iter().map(|i| i.tokens.as_slice()).collect();
        let enc = self.encode(&images, &tokens)?;
        let pick_logits = self.pick_logits(&enc);
        let picks: Vec<usize> = pick_logits.rows().into_iter().map(argmax_first).collect();
        let place_logits = self.place_logits(&enc, &picks);
        let cols = self.config.cols;
        Ok(picks
            .iter()
            .zip(place_logits.rows())
            .map(|(&pick, row)| {
                PickPlaceAction::new(
                    Cell::from_index(pick, cols),
                    Cell::from_index(argmax_first(row), cols),
                )
            })
            .collect())
    }

    pub fn predict_action(
        &self,
        observation: &Observation,
        instruction: &Instruction,
    ) -> Result<PickPlaceAction> {
        Ok(self.predict_batch(&[observation], &[instruction])?[0])
    }

    /// Mean over the batch of `CE(pick) + CE(place | expert pick)`, with
    /// gradients for every parameter.
    pub fn loss_and_grad(
        &self,
        images: &FeatureMap<T>,
        tokens: &[&[u32]],
        actions: &[PickPlaceAction],
    ) -> Result<(T, ParamStore<T>)> {
        let cols = self.config.cols;
        let n = images.n;
        if actions.len() != n {
            return Err(Error::Contract("one expert action per observation".into()));
        }
        let picks: Vec<usize> = actions.iter().map(|a| a.pick.index(cols)).collect();
        let places: Vec<usize> = actions.iter().map(|a| a.place.index(cols)).collect();
        if picks
            .iter()
            .chain(&places)
            .any(|&i| i >= self.config.n_cells())
        {
            return Err(Error::Contract("expert action outside the grid".into()));
        }
        let enc = self.encode(images, tokens)?;
        let (pick_logits, pick_cache) = self.head_forward(&enc, None);
        let (place_logits, place_cache) = self.head_forward(&enc, Some(&picks));

        let scale = T::lit(1.0 / n as f64);
        let mut loss = T::zero();
        let mut d_pick = Array2::<T>::zeros(pick_logits.raw_dim());
        let mut d_place = Array2::<T>::zeros(place_logits.raw_dim());
        for b in 0..n {
            let (l1, g1) = softmax_xent(pick_logits.row(b), picks[b]);
            let (l2, g2) = softmax_xent(place_logits.row(b), places[b]);
            loss += (l1 + l2) * scale;
            d_pick.row_mut(b).assign(&(g1 * scale));
            d_place.row_mut(b).assign(&(g2 * scale));
        }

        let mut grads = self.params.zeros_like();
        let (dc1, dt1) = self.head_backward(false, &pick_cache, &d_pick, &mut grads);
        let (dc2, dt2) = self.head_backward(true, &place_cache, &d_place, &mut grads);
        self.vision_backward(&enc.vision, &(dc1 + dc2), &mut grads);
        self.text_backward(tokens, &enc.text_cache, &(dt1 + dt2), &mut grads);
        Ok((loss, grads))
    }

    /// Imitation loss of one example.
    pub fn imitation_loss(
        &self,
        observation: &Observation,
        instruction: &Instruction,
        expert: PickPlaceAction,
    ) -> Result<T> {
        let images = observation_batch::<T>(&[observation]);
        Ok(self
            .loss_and_grad(&images, &[&instruction.tokens], &[expert])?
            .0)
    }

    /// Pick and place probabilities for diagnostics.
    pub fn distributions(
        &self,
        observation: &Observation,
        instruction: &Instruction,
    ) -> Result<(Array1<T>, Array1<T>)> {
        let images = observation_batch::<T>(&[observation]);
        let enc = self.encode(&images, &[&instruction.tokens])?;
        let pick = self.pick_logits(&enc);
        let p = argmax_first(pick.row(0));
        let place = self.place_logits(&enc, &[p]);
        Ok((
            crate::learn::softmax(pick.row(0)),
            crate::learn::softmax(place.row(0)),
        ))
    }

    pub fn cast<U: Real>(&self) -> PolicyModel<U> {
        PolicyModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}
