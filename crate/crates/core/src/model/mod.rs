//! Encoder-decoder cloud segmentation network.
//!
//! The contracting arm is a stack of shortcut blocks: two 3x3 convolutions
//! (ReLU after each) whose result is added to the block input repeated along
//! depth up to the target depth, followed by ReLU and 2x2 max pooling. A
//! bottleneck block of the same kind (without pooling) doubles the depth
//! once more. Each expanding block upsamples with a 2x2 stride-2 transposed
//! convolution, concatenates the mirror-level contracting features, applies
//! two 3x3 convolutions and adds the upsampled features back before a final
//! ReLU. A 1x1 convolution and a sigmoid produce the probability map.

pub mod checkpoint;
pub mod layers;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tiling::{CHANNELS, MODEL_INPUT_SIDE};

pub use checkpoint::Checkpoint;
pub use layers::{FeatureMap, Gradients, ParamTensor, Parameters};

use layers::{
    add_in_place, concat_depth, max_pool2, max_pool2_backward, relu_backward_in_place,
    relu_in_place, repeat_depth, repeat_depth_backward, split_depth, Conv2d, ConvTranspose2x2,
};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("depth error: {0}")]
    Depth(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint does not match: {0}")]
    CheckpointMismatch(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_side: usize,
    pub input_channels: usize,
    /// Feature depth of every contracting level, each double the previous.
    pub depth_schedule: Vec<usize>,
    pub bottleneck_depth: usize,
    pub kernel_size: usize,
    pub output_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_side: MODEL_INPUT_SIDE,
            input_channels: CHANNELS,
            depth_schedule: vec![16, 32, 64, 128, 256],
            bottleneck_depth: 512,
            kernel_size: 3,
            output_channels: 1,
        }
    }
}

impl NetworkConfig {
    /// Doubling schedule with `levels` contracting levels starting at `first`.
    pub fn with_levels(input_side: usize, first: usize, levels: usize) -> Self {
        let depth_schedule: Vec<usize> = (0..levels).map(|i| first << i).collect();
        Self {
            input_side,
            bottleneck_depth: first << levels,
            depth_schedule,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.depth_schedule.len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.input_channels != CHANNELS {
            return err(format!("input_channels must be {CHANNELS}, got {}", self.input_channels));
        }
        if self.output_channels != 1 {
            return err(format!("output_channels must be 1, got {}", self.output_channels));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return err(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        let Some(&first) = self.depth_schedule.first() else {
            return err("depth_schedule is empty".into());
        };
        if first == 0 || first % self.input_channels != 0 {
            return err(format!(
                "first depth {first} is not a multiple of {} input channels",
                self.input_channels
            ));
        }
        for pair in self.depth_schedule.windows(2) {
            if pair[1] != 2 * pair[0] {
                return err(format!("depth {} is not double {}", pair[1], pair[0]));
            }
        }
        let last = *self.depth_schedule.last().unwrap();
        if self.bottleneck_depth != 2 * last {
            return err(format!(
                "bottleneck depth {} is not double {last}",
                self.bottleneck_depth
            ));
        }
        let levels = self.levels() as u32;
        if levels >= usize::BITS || self.input_side == 0 || !self.input_side.is_multiple_of(1usize << levels) {
            return err(format!(
                "input side {} is not divisible by 2^{levels}",
                self.input_side
            ));
        }
        Ok(())
    }
}

/// Parameter initialisation scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightInit {
    /// Every weight and bias i.i.d. uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Weights uniform on `±sqrt(6 / fan_in)`, biases zero.
    HeUniform,
    /// Weights uniform on `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    GlorotUniform,
}

impl Default for WeightInit {
    fn default() -> Self {
        WeightInit::Uniform {
            low: -1.0,
            high: 1.0,
        }
    }
}

/// Contracting (or bottleneck) shortcut block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShortcutBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub in_depth: usize,
    pub out_depth: usize,
    pub pool: bool,
}

struct ShortcutTrace<T> {
    input: FeatureMap<T>,
    r1: FeatureMap<T>,
    r2: FeatureMap<T>,
    out: FeatureMap<T>,
    pool_arg: Option<Vec<u8>>,
}

impl ShortcutBlock {
    pub fn register<T: Scalar>(
        params: &mut Parameters<T>,
        prefix: &str,
        in_depth: usize,
        out_depth: usize,
        kernel: usize,
        pool: bool,
    ) -> Result<Self> {
        if in_depth == 0 || !out_depth.is_multiple_of(in_depth) {
            return Err(ModelError::Depth(format!(
                "target depth {out_depth} is not a multiple of input depth {in_depth}"
            )));
        }
        Ok(Self {
            conv1: Conv2d::register(params, &format!("{prefix}.conv1"), in_depth, out_depth, kernel),
            conv2: Conv2d::register(params, &format!("{prefix}.conv2"), out_depth, out_depth, kernel),
            in_depth,
            out_depth,
            pool,
        })
    }

    /// Returns `(block output, pooled output)`; the pooled map is `None` for
    /// the bottleneck.
    pub fn forward<T: Scalar>(
        &self,
        params: &Parameters<T>,
        x: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, Option<FeatureMap<T>>)> {
        let t = self.trace(params, x.clone())?;
        let pooled = self.pool.then(|| max_pool2(&t.out).0);
        Ok((t.out, pooled))
    }

    fn trace<T: Scalar>(&self, params: &Parameters<T>, x: FeatureMap<T>) -> Result<ShortcutTrace<T>> {
        if x.depth != self.in_depth {
            return Err(ModelError::Depth(format!(
                "block expects depth {}, got {}",
                self.in_depth, x.depth
            )));
        }
        if self.pool && !x.side.is_multiple_of(2) {
            return Err(ModelError::ShapeMismatch(format!("odd side {} before pooling", x.side)));
        }
        let mut r1 = self.conv1.forward(params, &x);
        relu_in_place(&mut r1);
        let mut r2 = self.conv2.forward(params, &r1);
        relu_in_place(&mut r2);
        let mut out = repeat_depth(&x, self.out_depth / self.in_depth);
        add_in_place(&mut out, &r2);
        relu_in_place(&mut out);
        Ok(ShortcutTrace {
            input: x,
            r1,
            r2,
            out,
            pool_arg: None,
        })
    }

    /// `d_out` is the gradient reaching the (pre-pool) block output.
    fn backward<T: Scalar>(
        &self,
        params: &Parameters<T>,
        t: &ShortcutTrace<T>,
        mut d_out: FeatureMap<T>,
        grads: &mut Gradients<T>,
    ) -> FeatureMap<T> {
        relu_backward_in_place(&t.out, &mut d_out);
        let mut dx = repeat_depth_backward(&d_out, self.out_depth / self.in_depth);
        let mut d2 = d_out;
        relu_backward_in_place(&t.r2, &mut d2);
        let mut d1 = self.conv2.backward(params, &t.r1, &d2, grads);
        relu_backward_in_place(&t.r1, &mut d1);
        let d_in = self.conv1.backward(params, &t.input, &d1, grads);
        add_in_place(&mut dx, &d_in);
        dx
    }
}

/// Expanding block fusing upsampled features with a mirror-level skip map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandingBlock {
    pub up: ConvTranspose2x2,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub below_depth: usize,
}

struct ExpandTrace<T> {
    below: FeatureMap<T>,
    cat: FeatureMap<T>,
    r1: FeatureMap<T>,
    r2: FeatureMap<T>,
    out: FeatureMap<T>,
}

impl ExpandingBlock {
    pub fn register<T: Scalar>(
        params: &mut Parameters<T>,
        prefix: &str,
        below_depth: usize,
        kernel: usize,
    ) -> Self {
        let half = below_depth / 2;
        Self {
            up: ConvTranspose2x2::register(params, &format!("{prefix}.up"), below_depth, half),
            conv1: Conv2d::register(params, &format!("{prefix}.conv1"), below_depth, half, kernel),
            conv2: Conv2d::register(params, &format!("{prefix}.conv2"), half, half, kernel),
            below_depth,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &Parameters<T>,
        below: &FeatureMap<T>,
        skip: &FeatureMap<T>,
    ) -> Result<FeatureMap<T>> {
        Ok(self.trace(params, below.clone(), skip)?.out)
    }

    fn trace<T: Scalar>(
        &self,
        params: &Parameters<T>,
        below: FeatureMap<T>,
        skip: &FeatureMap<T>,
    ) -> Result<ExpandTrace<T>> {
        if below.depth != self.below_depth {
            return Err(ModelError::ShapeMismatch(format!(
                "expanding block expects depth {}, got {}",
                self.below_depth, below.depth
            )));
        }
        if skip.side != 2 * below.side || 2 * skip.depth != below.depth {
            return Err(ModelError::ShapeMismatch(format!(
                "skip {}x{}x{} does not pair with {}x{}x{}",
                skip.side, skip.side, skip.depth, below.side, below.side, below.depth
            )));
        }
        let u = self.up.forward(params, &below);
        let cat = concat_depth(&u, skip);
        let mut r1 = self.conv1.forward(params, &cat);
        relu_in_place(&mut r1);
        let mut r2 = self.conv2.forward(params, &r1);
        relu_in_place(&mut r2);
        let mut out = u;
        add_in_place(&mut out, &r2);
        relu_in_place(&mut out);
        Ok(ExpandTrace {
            below,
            cat,
            r1,
            r2,
            out,
        })
    }

    /// Returns `(∂L/∂below, ∂L/∂skip)`.
    fn backward<T: Scalar>(
        &self,
        params: &Parameters<T>,
        t: &ExpandTrace<T>,
        mut d_out: FeatureMap<T>,
        grads: &mut Gradients<T>,
    ) -> (FeatureMap<T>, FeatureMap<T>) {
        relu_backward_in_place(&t.out, &mut d_out);
        let mut du = d_out.clone();
        let mut d2 = d_out;
        relu_backward_in_place(&t.r2, &mut d2);
        let mut d1 = self.conv2.backward(params, &t.r1, &d2, grads);
        relu_backward_in_place(&t.r1, &mut d1);
        let d_cat = self.conv1.backward(params, &t.cat, &d1, grads);
        let (du_cat, d_skip) = split_depth(d_cat, self.below_depth / 2);
        add_in_place(&mut du, &du_cat);
        let d_below = self.up.backward(params, &t.below, &du, grads);
        (d_below, d_skip)
    }
}

/// Cached activations of one forward pass, consumed by [`Network::backward`].
pub struct Trace<T> {
    contract: Vec<ShortcutTrace<T>>,
    bottleneck: ShortcutTrace<T>,
    expand: Vec<ExpandTrace<T>>,
    head_in: FeatureMap<T>,
    output: FeatureMap<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &FeatureMap<T> {
        &self.output
    }

    /// `(name, side, depth)` for every block output in execution order.
    pub fn shapes(&self) -> Vec<(String, usize, usize)> {
        let mut v = vec![("input".to_string(), self.contract[0].input.side, self.contract[0].input.depth)];
        for (i, c) in self.contract.iter().enumerate() {
            v.push((format!("contract{i}"), c.out.side, c.out.depth));
        }
        v.push(("bottleneck".into(), self.bottleneck.out.side, self.bottleneck.out.depth));
        for (i, e) in self.expand.iter().enumerate() {
            v.push((format!("expand{i}"), e.out.side, e.out.depth));
        }
        v.push(("output".into(), self.output.side, self.output.depth));
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    params: Parameters<T>,
    contract: Vec<ShortcutBlock>,
    bottleneck: ShortcutBlock,
    expand: Vec<ExpandingBlock>,
    head: Conv2d,
}

impl<T: Scalar> Network<T> {
    /// Builds the layer graph with all parameters set to zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let mut params = Parameters::new();
        let mut contract = Vec::with_capacity(config.levels());
        let mut depth = config.input_channels;
        for (i, &d) in config.depth_schedule.iter().enumerate() {
            contract.push(ShortcutBlock::register(&mut params, &format!("contract{i}"), depth, d, k, true)?);
            depth = d;
        }
        let bottleneck = ShortcutBlock::register(&mut params, "bottleneck", depth, config.bottleneck_depth, k, false)?;
        let mut expand = Vec::with_capacity(config.levels());
        let mut below = config.bottleneck_depth;
        for i in 0..config.levels() {
            expand.push(ExpandingBlock::register(&mut params, &format!("expand{i}"), below, k));
            below /= 2;
        }
        let head = Conv2d::register(&mut params, "head", below, config.output_channels, 1);
        Ok(Self {
            config,
            params,
            contract,
            bottleneck,
            expand,
            head,
        })
    }

    /// Builds a network and draws its parameters from `init` with `seed`.
    pub fn build(config: NetworkConfig, init: WeightInit, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in net.params.tensors_mut() {
            let is_bias = t.shape.len() == 1;
            match init {
                WeightInit::Uniform { low, high } => {
                    if low.partial_cmp(&high).is_none_or(|o| o.is_gt()) {
                        return Err(ModelError::Config(format!("empty init range [{low}, {high}]")));
                    }
                    let dist = Uniform::new_inclusive(low, high).expect("finite range");
                    t.values.iter_mut().for_each(|v| *v = T::lit(dist.sample(&mut rng)));
                }
                WeightInit::HeUniform | WeightInit::GlorotUniform if is_bias => {}
                WeightInit::HeUniform | WeightInit::GlorotUniform => {
                    // Conv weights are [out, in, k, k], transposed ones [in, out, 2, 2].
                    let area: usize = t.shape[2..].iter().product();
                    let (fan_in, fan_out) = if t.name.ends_with(".up.weight") {
                        (t.shape[0], t.shape[1] * area)
                    } else {
                        (t.shape[1] * area, t.shape[0] * area)
                    };
                    let bound = match init {
                        WeightInit::HeUniform => (6.0 / fan_in as f64).sqrt(),
                        _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                    };
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite range");
                    t.values.iter_mut().for_each(|v| *v = T::lit(dist.sample(&mut rng)));
                }
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        &mut self.params
    }

    pub fn contracting_blocks(&self) -> &[ShortcutBlock] {
        &self.contract
    }

    pub fn bottleneck_block(&self) -> &ShortcutBlock {
        &self.bottleneck
    }

    pub fn expanding_blocks(&self) -> &[ExpandingBlock] {
        &self.expand
    }

    fn check_input(&self, x: &FeatureMap<T>) -> Result<()> {
        if x.depth != self.config.input_channels || x.side != self.config.input_side {
            return Err(ModelError::ShapeMismatch(format!(
                "network expects {s}x{s}x{c}, got {}x{}x{}",
                x.side,
                x.side,
                x.depth,
                s = self.config.input_side,
                c = self.config.input_channels
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate needed for backpropagation.
    pub fn forward_trace(&self, x: &FeatureMap<T>) -> Result<Trace<T>> {
        self.check_input(x)?;
        let p = &self.params;
        let mut contract = Vec::with_capacity(self.contract.len());
        let mut cur = x.clone();
        for block in &self.contract {
            let mut t = block.trace(p, cur)?;
            let (pooled, arg) = max_pool2(&t.out);
            t.pool_arg = Some(arg);
            contract.push(t);
            cur = pooled;
        }
        let bottleneck = self.bottleneck.trace(p, cur)?;
        let mut below = bottleneck.out.clone();
        let mut expand = Vec::with_capacity(self.expand.len());
        for (block, skip) in self.expand.iter().zip(contract.iter().rev()) {
            let t = block.trace(p, below, &skip.out)?;
            below = t.out.clone();
            expand.push(t);
        }
        let mut output = self.head.forward(p, &below);
        let lo = T::epsilon();
        let hi = T::one() - T::epsilon();
        for v in &mut output.data {
            *v = (T::one() / (T::one() + (-*v).exp())).max(lo).min(hi);
        }
        Ok(Trace {
            contract,
            bottleneck,
            expand,
            head_in: below,
            output,
        })
    }

    /// Probability map for one `side x side x 4` input.
    pub fn forward_one(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        Ok(self.forward_trace(x)?.output)
    }

    /// Batched forward pass; samples are evaluated in parallel.
    pub fn forward(&self, batch: &[FeatureMap<T>]) -> Result<Vec<FeatureMap<T>>> {
        batch.par_iter().map(|x| self.forward_one(x)).collect()
    }

    /// Backpropagates `d_output = ∂L/∂y` (gradient w.r.t. the sigmoid
    /// output) and returns gradients for every parameter.
    pub fn backward(&self, trace: &Trace<T>, d_output: &[T]) -> Result<Gradients<T>> {
        if d_output.len() != trace.output.data.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "output gradient has {} values, output has {}",
                d_output.len(),
                trace.output.data.len()
            )));
        }
        let p = &self.params;
        let mut grads = Gradients::zeros_like(p);
        let d_logit: Vec<T> = trace
            .output
            .data
            .iter()
            .zip(d_output)
            .map(|(&y, &g)| g * y * (T::one() - y))
            .collect();
        let d_logit = FeatureMap::new(trace.output.depth, trace.output.side, d_logit);
        let mut d_below = self.head.backward(p, &trace.head_in, &d_logit, &mut grads);

        let levels = self.contract.len();
        let mut d_skips: Vec<Option<FeatureMap<T>>> = (0..levels).map(|_| None).collect();
        for (i, (block, t)) in self.expand.iter().zip(&trace.expand).enumerate().rev() {
            let (db, ds) = block.backward(p, t, d_below, &mut grads);
            d_below = db;
            d_skips[levels - 1 - i] = Some(ds);
        }
        let mut d_pooled = self.bottleneck.backward(p, &trace.bottleneck, d_below, &mut grads);
        for (i, (block, t)) in self.contract.iter().zip(&trace.contract).enumerate().rev() {
            let mut d_out = d_skips[i].take().expect("every level has a skip gradient");
            max_pool2_backward(&d_pooled, t.pool_arg.as_ref().expect("pooled"), &mut d_out);
            d_pooled = block.backward(p, t, d_out, &mut grads);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn input(side: usize, seed: u64) -> FeatureMap<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Uniform::new(0.0f32, 1.0).unwrap();
        FeatureMap::new(4, side, (0..4 * side * side).map(|_| d.sample(&mut rng)).collect())
    }

    #[test]
    fn default_init_is_bounded_and_reproducible() {
        let cfg = NetworkConfig::default();
        let a = Network::<f32>::build(cfg.clone(), WeightInit::default(), 7).unwrap();
        let b = Network::<f32>::build(cfg, WeightInit::default(), 7).unwrap();
        assert!(a
            .params()
            .tensors()
            .iter()
            .flat_map(|t| &t.values)
            .all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a.params(), b.params());
        let c = Network::<f32>::build(NetworkConfig::default(), WeightInit::default(), 8).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn config_errors() {
        let bad = NetworkConfig {
            depth_schedule: vec![16, 48],
            bottleneck_depth: 96,
            ..NetworkConfig::default()
        };
        assert!(matches!(bad.validate(), Err(ModelError::Config(_))));
        let odd = NetworkConfig {
            input_side: 100,
            ..NetworkConfig::default()
        };
        assert!(matches!(odd.validate(), Err(ModelError::Config(_))));
        let not_multiple = NetworkConfig {
            depth_schedule: vec![6, 12],
            bottleneck_depth: 24,
            input_side: 16,
            ..NetworkConfig::default()
        };
        assert!(not_multiple.validate().is_err());
        assert!(Network::<f32>::build(bad, WeightInit::default(), 0).is_err());
    }

    #[test]
    fn contracting_block_shapes() {
        let mut p = Parameters::<f32>::new();
        let b0 = ShortcutBlock::register(&mut p, "c0", 4, 16, 3, true).unwrap();
        let b1 = ShortcutBlock::register(&mut p, "c1", 16, 32, 3, true).unwrap();
        let (f, pooled) = b0.forward(&p, &FeatureMap::zeros(4, 192)).unwrap();
        assert_eq!((f.side, f.depth), (192, 16));
        let pooled = pooled.unwrap();
        assert_eq!((pooled.side, pooled.depth), (96, 16));
        let (f, pooled) = b1.forward(&p, &FeatureMap::zeros(16, 96)).unwrap();
        assert_eq!((f.side, f.depth), (96, 32));
        assert_eq!(pooled.unwrap().shape(), (48, 32));
        assert!(matches!(
            ShortcutBlock::register(&mut p, "bad", 16, 24, 3, true),
            Err(ModelError::Depth(_))
        ));
        assert!(matches!(b1.forward(&p, &FeatureMap::zeros(8, 96)), Err(ModelError::Depth(_))));
    }

    #[test]
    fn zero_input_gives_zero_block_output() {
        let cfg = NetworkConfig::with_levels(16, 4, 2);
        let mut net = Network::<f64>::build(cfg, WeightInit::default(), 3).unwrap();
        for t in net.params_mut().tensors_mut() {
            if t.shape.len() == 1 {
                t.values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (f, pooled) = net.contracting_blocks()[0]
            .forward(net.params(), &FeatureMap::zeros(4, 16))
            .unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
        assert!(pooled.unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn expanding_block_shapes() {
        let mut p = Parameters::<f32>::new();
        let e = ExpandingBlock::register(&mut p, "e", 512, 3);
        let out = e
            .forward(&p, &FeatureMap::zeros(512, 12), &FeatureMap::zeros(256, 24))
            .unwrap();
        assert_eq!(out.shape(), (24, 256));
        assert!(matches!(
            e.forward(&p, &FeatureMap::zeros(512, 12), &FeatureMap::zeros(256, 20)),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn default_shape_trace() {
        let net = Network::<f32>::build(NetworkConfig::default(), WeightInit::HeUniform, 1).unwrap();
        let trace = net.forward_trace(&input(192, 0)).unwrap();
        let shapes: Vec<(usize, usize)> = trace.shapes().iter().map(|(_, s, d)| (*s, *d)).collect();
        assert_eq!(
            shapes,
            vec![
                (192, 4),
                (192, 16),
                (96, 32),
                (48, 64),
                (24, 128),
                (12, 256),
                (6, 512),
                (12, 256),
                (24, 128),
                (48, 64),
                (96, 32),
                (192, 16),
                (192, 1),
            ]
        );
        // Pooled sides along the contracting arm: 192 -> 96 -> 48 -> 24 -> 12 -> 6.
        assert_eq!(trace.bottleneck.input.side, 6);
        assert_eq!(trace.bottleneck.input.depth, 256);
    }

    #[test]
    fn batch_of_two_in_open_unit_interval() {
        let net = Network::<f32>::build(NetworkConfig::default(), WeightInit::default(), 11).unwrap();
        let out = net.forward(&[input(192, 1), input(192, 2)]).unwrap();
        assert_eq!(out.len(), 2);
        for m in &out {
            assert_eq!(m.shape(), (192, 1));
            assert!(m.data.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_head_kernel_gives_constant_sigmoid_of_bias() {
        let mut net = Network::<f64>::build(NetworkConfig::with_levels(16, 4, 2), WeightInit::default(), 5).unwrap();
        net.params_mut().get_mut("head.weight").unwrap().values.fill(0.0);
        net.params_mut().get_mut("head.bias").unwrap().values[0] = 0.75;
        let out = net.forward_one(&FeatureMap::new(4, 16, vec![0.3; 1024])).unwrap();
        let expected = 1.0 / (1.0 + (-0.75f64).exp());
        assert!(out.data.iter().all(|&v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = Network::<f32>::build(NetworkConfig::with_levels(16, 4, 2), WeightInit::default(), 0).unwrap();
        assert!(matches!(net.forward_one(&input(32, 0)), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = NetworkConfig::with_levels(32, 8, 3);
        let a = Network::<f32>::build(cfg.clone(), WeightInit::HeUniform, 9).unwrap();
        let b = Network::<f32>::build(cfg, WeightInit::HeUniform, 9).unwrap();
        let x = input(32, 4);
        assert_eq!(a.forward_one(&x).unwrap(), b.forward_one(&x).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn output_matches_input_side(levels in 1usize..=3, mult in 1usize..=3, first_mult in 1usize..=2, seed in any::<u64>()) {
            let side = mult << levels;
            let cfg = NetworkConfig::with_levels(side, 4 * first_mult, levels);
            let net = Network::<f32>::build(cfg, WeightInit::HeUniform, seed).unwrap();
            let out = net.forward_one(&input(side, seed)).unwrap();
            prop_assert_eq!(out.shape(), (side, 1));
            prop_assert!(out.data.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
