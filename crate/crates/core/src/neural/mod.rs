//! Dense numerical kernel for the meta parameters.
//!
//! The complementary expert is a gated mixture of inner experts:
//!
//! ```text
//! e          = relu(Embed x)
//! depth_t,0  = e
//! depth_t,i  = relu(Proj_t,i depth_t,i-1)            i = 1..L
//! inner_t    = Σ_i depth_t,i                          i = 0..L
//! v          = Σ_t softmax(Gate x)_t · inner_t
//! h_alt(x)   = softmax(Tower v)
//! ```
//!
//! The combination network maps the concept part of a row to a softmax
//! weighting over `T + 1` candidates: the complementary expert first, then
//! the `T` heterogeneous expert blocks. Gradients are derived by hand for
//! this fixed architecture; expert blocks are constants.

mod adam;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::ProbVector;
use crate::seed;

pub use adam::{adam_step, AdamConfig, AdamState};

/// Cross-entropy clamp.
pub const CE_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("label {0} out of range")]
    LabelOutOfRange(usize),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("shape mismatch in tensor `{0}`")]
    ShapeMismatch(String),
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, NeuralError>;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> ProbVector {
    let mut out = vec![0.0; v.len()];
    crate::experts::softmax_into(v, &mut out);
    ProbVector::from_simplex(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Relu => f64::from(u8::from(z > 0.0)),
            Self::Identity => 1.0,
        }
    }
}

/// `activation(W x + b)` with `W` stored `out x in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, scheme: InitScheme, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        if scheme == InitScheme::FanIn {
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-limit..limit);
            }
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Writes pre-activations and activations.
    fn forward(&self, x: &[f64], pre: &mut [f64], out: &mut [f64]) {
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let z = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            pre[o] = z;
            out[o] = self.activation.apply(z);
        }
    }

    /// Given `d_out` (gradient w.r.t. the activation output), accumulates the
    /// parameter gradient into `grad` and, if requested, writes the input
    /// gradient into `d_in` (added, not overwritten).
    fn backward(&self, x: &[f64], pre: &[f64], d_out: &[f64], grad: &mut DenseLayer, d_in: Option<&mut [f64]>) {
        let mut d_pre = vec![0.0; self.out_dim];
        for o in 0..self.out_dim {
            d_pre[o] = d_out[o] * self.activation.derivative(pre[o]);
        }
        for o in 0..self.out_dim {
            let dz = d_pre[o];
            if dz == 0.0 {
                continue;
            }
            grad.bias[o] += dz;
            for (g, v) in grad.weight[o * self.in_dim..(o + 1) * self.in_dim].iter_mut().zip(x) {
                *g += dz * v;
            }
        }
        if let Some(d_in) = d_in {
            for o in 0..self.out_dim {
                let dz = d_pre[o];
                if dz == 0.0 {
                    continue;
                }
                for (d, w) in d_in
                    .iter_mut()
                    .zip(&self.weight[o * self.in_dim..(o + 1) * self.in_dim])
                {
                    *d += dz * w;
                }
            }
        }
    }
}

/// Layer chain; hidden layers use relu, the last layer is linear.
fn mlp(dims: &[usize], scheme: InitScheme, rng: &mut impl Rng) -> Vec<DenseLayer> {
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            DenseLayer::init(w[0], w[1], act, scheme, rng)
        })
        .collect()
}

#[derive(Debug, Default, Clone)]
struct ChainCache {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

fn chain_forward(layers: &[DenseLayer], x: &[f64], cache: &mut ChainCache) {
    cache.pre.resize(layers.len(), Vec::new());
    cache.post.resize(layers.len(), Vec::new());
    for (i, layer) in layers.iter().enumerate() {
        cache.pre[i].resize(layer.out_dim, 0.0);
        let (done, rest) = cache.post.split_at_mut(i);
        let out = &mut rest[0];
        out.resize(layer.out_dim, 0.0);
        let input: &[f64] = if i == 0 { x } else { &done[i - 1] };
        layer.forward(input, &mut cache.pre[i], out);
    }
}

fn chain_backward(layers: &[DenseLayer], x: &[f64], cache: &ChainCache, d_out: &[f64], grads: &mut [DenseLayer]) {
    let mut d = d_out.to_vec();
    for i in (0..layers.len()).rev() {
        let input: &[f64] = if i == 0 { x } else { &cache.post[i - 1] };
        if i == 0 {
            layers[i].backward(input, &cache.pre[i], &d, &mut grads[i], None);
        } else {
            let mut d_in = vec![0.0; layers[i].in_dim];
            layers[i].backward(input, &cache.pre[i], &d, &mut grads[i], Some(&mut d_in));
            d = d_in;
        }
    }
}

/// Softmax Jacobian-vector product: `p ⊙ (d − <p, d>)`.
fn softmax_backward(p: &[f64], d: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
    p.iter().zip(d).map(|(pi, di)| pi * (di - dot)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    #[default]
    FanIn,
    /// Every parameter zero: uniform outputs everywhere.
    Zero,
}

fn default_inner_experts() -> usize {
    3
}
fn default_depth() -> usize {
    3
}
fn default_width() -> usize {
    32
}
fn default_gate_hidden() -> Vec<usize> {
    vec![32]
}
fn default_comb_hidden() -> Vec<usize> {
    vec![32, 32]
}

/// Architecture of the complementary expert and the combination network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralConfig {
    /// Number of inner experts `E`.
    #[serde(default = "default_inner_experts")]
    pub inner_experts: usize,
    /// Projection layers per inner expert `L`.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Shared width of the embedding and every projection.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Hidden widths of the gate (`|C| -> hidden.. -> E`).
    #[serde(default = "default_gate_hidden")]
    pub gate_hidden: Vec<usize>,
    /// Hidden widths of the combination network (`|C| -> hidden.. -> T+1`).
    #[serde(default = "default_comb_hidden")]
    pub comb_hidden: Vec<usize>,
    #[serde(default)]
    pub init: InitScheme,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            inner_experts: default_inner_experts(),
            depth: default_depth(),
            width: default_width(),
            gate_hidden: default_gate_hidden(),
            comb_hidden: default_comb_hidden(),
            init: InitScheme::FanIn,
        }
    }
}

/// Everything that fixes tensor shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaStructure {
    /// `|C|`, the concept-vector width.
    pub concept_width: usize,
    pub num_classes: usize,
    /// `T`, heterogeneous expert blocks visible to the combination network.
    pub num_blocks: usize,
    /// Expert depth `K` and fold count `V` the parameters were trained with.
    pub levels: usize,
    pub folds: usize,
    pub neural: NeuralConfig,
}

impl MetaStructure {
    pub fn validate(&self) -> Result<()> {
        let n = &self.neural;
        let bad = |m: &str| Err(NeuralError::InvalidStructure(m.to_string()));
        if self.concept_width == 0 {
            return bad("concept width must be positive");
        }
        if self.num_classes < 2 {
            return bad("need at least 2 classes");
        }
        if n.inner_experts == 0 {
            return bad("need at least one inner expert");
        }
        if n.width == 0 || n.gate_hidden.contains(&0) || n.comb_hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    /// Candidates mixed by the combination network: `T + 1`.
    pub fn num_candidates(&self) -> usize {
        self.num_blocks + 1
    }

    /// Width of an augmented row: `|C| + T |Y|`.
    pub fn row_width(&self) -> usize {
        self.concept_width + self.num_blocks * self.num_classes
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let n = &self.neural;
        let (c, w, y) = (self.concept_width, n.width, self.num_classes);
        let chain = |dims: &[usize]| dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum::<usize>();
        let gate_dims: Vec<usize> = std::iter::once(c)
            .chain(n.gate_hidden.iter().copied())
            .chain(std::iter::once(n.inner_experts))
            .collect();
        let comb_dims: Vec<usize> = std::iter::once(c)
            .chain(n.comb_hidden.iter().copied())
            .chain(std::iter::once(self.num_candidates()))
            .collect();
        (c * w + w) + n.inner_experts * n.depth * (w * w + w) + chain(&gate_dims) + (w * y + y) + chain(&comb_dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryExpert {
    pub embed: DenseLayer,
    /// `E` stacks of `L` projections.
    pub inner: Vec<Vec<DenseLayer>>,
    pub gate: Vec<DenseLayer>,
    pub tower: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombNetwork {
    pub layers: Vec<DenseLayer>,
}

/// Meta parameters: complementary expert plus combination network.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams {
    pub structure: MetaStructure,
    pub comp: ComplementaryExpert,
    pub comb: CombNetwork,
}

/// Borrowed view of one named tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Owned named tensor, as stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(with = "crate::hexfloat::vec")]
    pub data: Vec<f64>,
}

impl MetaParams {
    /// Seeded initialization per `structure.neural.init`.
    pub fn init(structure: MetaStructure, seed: u64) -> Result<Self> {
        structure.validate()?;
        let n = structure.neural.clone();
        let scheme = n.init;
        let mut rng = seed::rng(seed, &[0xAE7A]);
        let c = structure.concept_width;
        let embed = DenseLayer::init(c, n.width, Activation::Relu, scheme, &mut rng);
        let inner = (0..n.inner_experts)
            .map(|_| {
                (0..n.depth)
                    .map(|_| DenseLayer::init(n.width, n.width, Activation::Relu, scheme, &mut rng))
                    .collect()
            })
            .collect();
        let gate_dims: Vec<usize> = std::iter::once(c)
            .chain(n.gate_hidden.iter().copied())
            .chain(std::iter::once(n.inner_experts))
            .collect();
        let gate = mlp(&gate_dims, scheme, &mut rng);
        let tower = DenseLayer::init(n.width, structure.num_classes, Activation::Identity, scheme, &mut rng);
        let comb_dims: Vec<usize> = std::iter::once(c)
            .chain(n.comb_hidden.iter().copied())
            .chain(std::iter::once(structure.num_candidates()))
            .collect();
        let comb = CombNetwork {
            layers: mlp(&comb_dims, scheme, &mut rng),
        };
        Ok(Self {
            structure,
            comp: ComplementaryExpert {
                embed,
                inner,
                gate,
                tower,
            },
            comb,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut out = vec![("comp.embed".to_string(), &self.comp.embed)];
        for (t, stack) in self.comp.inner.iter().enumerate() {
            for (i, l) in stack.iter().enumerate() {
                out.push((format!("comp.inner{t}.proj{}", i + 1), l));
            }
        }
        for (i, l) in self.comp.gate.iter().enumerate() {
            out.push((format!("comp.gate.layer{i}"), l));
        }
        out.push(("comp.tower".to_string(), &self.comp.tower));
        for (i, l) in self.comb.layers.iter().enumerate() {
            out.push((format!("comb.layer{i}"), l));
        }
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut out = vec![&mut self.comp.embed];
        for stack in &mut self.comp.inner {
            out.extend(stack.iter_mut());
        }
        out.extend(self.comp.gate.iter_mut());
        out.push(&mut self.comp.tower);
        out.extend(self.comb.layers.iter_mut());
        out
    }

    /// Every tensor in canonical order: per layer, `weight` then `bias`.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.layers()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    TensorRef {
                        name: format!("{name}.weight"),
                        shape: vec![l.out_dim, l.in_dim],
                        data: &l.weight,
                    },
                    TensorRef {
                        name: format!("{name}.bias"),
                        shape: vec![l.out_dim],
                        data: &l.bias,
                    },
                ]
            })
            .collect()
    }

    /// Mutable tensors in the order of [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn to_named_arrays(&self) -> Vec<NamedArray> {
        self.tensors()
            .into_iter()
            .map(|t| NamedArray {
                name: t.name,
                shape: t.shape,
                data: t.data.to_vec(),
            })
            .collect()
    }

    /// Rebuilds from stored arrays; names, order and shapes must match the
    /// structure exactly.
    pub fn from_named_arrays(structure: MetaStructure, arrays: &[NamedArray]) -> Result<Self> {
        let mut p = Self::init(
            MetaStructure {
                neural: NeuralConfig {
                    init: InitScheme::Zero,
                    ..structure.neural.clone()
                },
                ..structure.clone()
            },
            0,
        )?;
        p.structure = structure;
        let expected: Vec<(String, Vec<usize>)> = p.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if expected.len() != arrays.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                arrays.len()
            )));
        }
        for ((name, shape), a) in expected.iter().zip(arrays) {
            if *name != a.name || *shape != a.shape || a.data.len() != shape.iter().product::<usize>() {
                return Err(NeuralError::ShapeMismatch(a.name.clone()));
            }
        }
        for (dst, a) in p.tensors_mut().into_iter().zip(arrays) {
            dst.copy_from_slice(&a.data);
        }
        Ok(p)
    }

    /// Combination weights `softmax(Comb(x))` over the `T + 1` candidates.
    pub fn forward_comb(&self, x: &[f64]) -> Result<ProbVector> {
        self.check_concepts(x)?;
        let mut cache = ChainCache::default();
        chain_forward(&self.comb.layers, x, &mut cache);
        Ok(softmax(cache.post.last().expect("comb has layers")))
    }

    /// Complementary expert prediction `h_alt(x)`.
    pub fn forward_complementary(&self, x: &[f64]) -> Result<ProbVector> {
        self.check_concepts(x)?;
        let mut cache = CompCache::default();
        Ok(ProbVector::from_simplex(self.comp_forward(x, &mut cache).to_vec()))
    }

    fn check_concepts(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.structure.concept_width {
            return Err(NeuralError::WidthMismatch {
                expected: self.structure.concept_width,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn comp_forward<'c>(&self, x: &[f64], cache: &'c mut CompCache) -> &'c [f64] {
        let comp = &self.comp;
        let w = comp.embed.out_dim;
        cache.e_pre.resize(w, 0.0);
        cache.e.resize(w, 0.0);
        comp.embed.forward(x, &mut cache.e_pre, &mut cache.e);

        let e_count = comp.inner.len();
        cache.depth_pre.resize(e_count, Vec::new());
        cache.depth.resize(e_count, Vec::new());
        cache.inner.resize(e_count, Vec::new());
        for (t, stack) in comp.inner.iter().enumerate() {
            let pre = &mut cache.depth_pre[t];
            let out = &mut cache.depth[t];
            pre.resize(stack.len(), Vec::new());
            out.resize(stack.len(), Vec::new());
            let mut sum = cache.e.clone();
            for (i, layer) in stack.iter().enumerate() {
                let mut p = vec![0.0; w];
                let mut q = vec![0.0; w];
                let input: &[f64] = if i == 0 { &cache.e } else { &out[i - 1] };
                layer.forward(input, &mut p, &mut q);
                for (s, v) in sum.iter_mut().zip(&q) {
                    *s += v;
                }
                pre[i] = p;
                out[i] = q;
            }
            cache.inner[t] = sum;
        }

        chain_forward(&comp.gate, x, &mut cache.gate);
        cache.g = softmax(cache.gate.post.last().expect("gate has layers")).into_vec();

        cache.v = vec![0.0; w];
        for t in 0..e_count {
            let g = cache.g[t];
            for (v, s) in cache.v.iter_mut().zip(&cache.inner[t]) {
                *v += g * s;
            }
        }
        let y = comp.tower.out_dim;
        cache.tower_pre.resize(y, 0.0);
        let mut logits = vec![0.0; y];
        comp.tower.forward(&cache.v, &mut cache.tower_pre, &mut logits);
        cache.h = softmax(&logits).into_vec();
        &cache.h
    }

    fn comp_backward(&self, x: &[f64], cache: &CompCache, d_h: &[f64], grad: &mut MetaParams) {
        let comp = &self.comp;
        let w = comp.embed.out_dim;
        let d_logits = softmax_backward(&cache.h, d_h);
        let mut d_v = vec![0.0; w];
        comp.tower.backward(
            &cache.v,
            &cache.tower_pre,
            &d_logits,
            &mut grad.comp.tower,
            Some(&mut d_v),
        );

        let d_g: Vec<f64> = cache
            .inner
            .iter()
            .map(|inner| inner.iter().zip(&d_v).map(|(a, b)| a * b).sum())
            .collect();
        let d_gate_logits = softmax_backward(&cache.g, &d_g);
        chain_backward(&comp.gate, x, &cache.gate, &d_gate_logits, &mut grad.comp.gate);

        let mut d_e = vec![0.0; w];
        for (t, stack) in comp.inner.iter().enumerate() {
            let g = cache.g[t];
            let d_inner: Vec<f64> = d_v.iter().map(|d| g * d).collect();
            // gradient arriving at depth_{t,i} from the layer above it
            let mut from_above = vec![0.0; w];
            for i in (0..stack.len()).rev() {
                let d_out: Vec<f64> = d_inner.iter().zip(&from_above).map(|(a, b)| a + b).collect();
                let input: &[f64] = if i == 0 { &cache.e } else { &cache.depth[t][i - 1] };
                let mut d_in = vec![0.0; w];
                stack[i].backward(
                    input,
                    &cache.depth_pre[t][i],
                    &d_out,
                    &mut grad.comp.inner[t][i],
                    Some(&mut d_in),
                );
                from_above = d_in;
            }
            for ((de, a), b) in d_e.iter_mut().zip(&d_inner).zip(&from_above) {
                *de += a + b;
            }
        }
        comp.embed.backward(x, &cache.e_pre, &d_e, &mut grad.comp.embed, None);
    }

    /// Mixture prediction for a row split into its concept part and its
    /// expert blocks (already valid simplex points). Returns the mixture and
    /// the combination weights.
    pub fn mixture(&self, concepts: &[f64], blocks: &[&[f64]]) -> Result<(ProbVector, ProbVector)> {
        self.check_concepts(concepts)?;
        if blocks.len() != self.structure.num_blocks {
            return Err(NeuralError::WidthMismatch {
                expected: self.structure.num_blocks,
                got: blocks.len(),
            });
        }
        let mut s = RowScratch::default();
        let out = self.mixture_into(concepts, blocks, &mut s);
        Ok((ProbVector::from_simplex(out), ProbVector::from_simplex(s.weights)))
    }

    /// Mean clamped cross-entropy of the mixture over a batch and its
    /// gradient with respect to every meta parameter. `rows` are augmented
    /// rows `[concepts | block_1 | ... | block_T]` with blocks renormalized
    /// onto the simplex.
    pub fn loss_and_gradients<R: AsRef<[f64]>>(&self, rows: &[R], labels: &[usize]) -> Result<(f64, MetaParams)> {
        if rows.is_empty() {
            return Err(NeuralError::EmptyBatch);
        }
        let width = self.structure.row_width();
        let (c, y) = (self.structure.concept_width, self.structure.num_classes);
        let mut grad = self.zeros_like();
        let mut total = 0.0;
        let mut s = RowScratch::default();
        let inv_n = 1.0 / rows.len() as f64;
        for (row, &label) in rows.iter().zip(labels) {
            let row = row.as_ref();
            if row.len() != width {
                return Err(NeuralError::WidthMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            if label >= y {
                return Err(NeuralError::LabelOutOfRange(label));
            }
            let concepts = &row[..c];
            let blocks: Vec<&[f64]> = row[c..].chunks_exact(y).collect();
            let out = self.mixture_into(concepts, &blocks, &mut s);
            let p = out[label];
            let clamped = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
            total -= clamped.ln();
            if clamped != p {
                continue;
            }
            let d_p = -inv_n / p;
            // candidates: index 0 is h_alt, then the blocks
            let mut d_w = vec![d_p * s.comp.h[label]; blocks.len() + 1];
            for (t, b) in blocks.iter().enumerate() {
                d_w[t + 1] = d_p * b[label];
            }
            let d_comb = softmax_backward(&s.weights, &d_w);
            chain_backward(&self.comb.layers, concepts, &s.comb, &d_comb, &mut grad.comb.layers);
            let mut d_h = vec![0.0; y];
            d_h[label] = d_p * s.weights[0];
            self.comp_backward(concepts, &s.comp, &d_h, &mut grad);
        }
        let loss = total * inv_n;
        if !loss.is_finite() {
            return Err(NeuralError::NonFiniteLoss(loss));
        }
        Ok((loss, grad))
    }

    /// Mean clamped cross-entropy without gradients.
    pub fn loss<R: AsRef<[f64]>>(&self, rows: &[R], labels: &[usize]) -> Result<f64> {
        if rows.is_empty() {
            return Err(NeuralError::EmptyBatch);
        }
        let width = self.structure.row_width();
        let (c, y) = (self.structure.concept_width, self.structure.num_classes);
        let mut s = RowScratch::default();
        let mut total = 0.0;
        for (row, &label) in rows.iter().zip(labels) {
            let row = row.as_ref();
            if row.len() != width {
                return Err(NeuralError::WidthMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            if label >= y {
                return Err(NeuralError::LabelOutOfRange(label));
            }
            let blocks: Vec<&[f64]> = row[c..].chunks_exact(y).collect();
            let out = self.mixture_into(&row[..c], &blocks, &mut s);
            total -= out[label].clamp(CE_CLAMP, 1.0 - CE_CLAMP).ln();
        }
        let loss = total / rows.len() as f64;
        if !loss.is_finite() {
            return Err(NeuralError::NonFiniteLoss(loss));
        }
        Ok(loss)
    }

    fn mixture_into(&self, concepts: &[f64], blocks: &[&[f64]], s: &mut RowScratch) -> Vec<f64> {
        chain_forward(&self.comb.layers, concepts, &mut s.comb);
        s.weights = softmax(s.comb.post.last().expect("comb has layers")).into_vec();
        self.comp_forward(concepts, &mut s.comp);
        combine(&s.weights, &s.comp.h, blocks)
    }
}

/// `w_0 h_alt + Σ_t w_{t+1} block_t`. A convex combination of simplex
/// points, so no renormalization (which the gradient would not model).
pub fn combine(weights: &[f64], h_alt: &[f64], blocks: &[&[f64]]) -> Vec<f64> {
    let mut out: Vec<f64> = h_alt.iter().map(|h| weights[0] * h).collect();
    for (b, &w) in blocks.iter().zip(&weights[1..]) {
        out.iter_mut().zip(b.iter()).for_each(|(o, p)| *o += w * p);
    }
    out
}

#[derive(Debug, Default, Clone)]
struct CompCache {
    e_pre: Vec<f64>,
    e: Vec<f64>,
    depth_pre: Vec<Vec<Vec<f64>>>,
    depth: Vec<Vec<Vec<f64>>>,
    inner: Vec<Vec<f64>>,
    gate: ChainCache,
    g: Vec<f64>,
    v: Vec<f64>,
    tower_pre: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
struct RowScratch {
    comb: ChainCache,
    weights: Vec<f64>,
    comp: CompCache,
}
