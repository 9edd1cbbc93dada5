use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{StateObservation, DECILE_LEN, P_LEN, TAU_LEN};

pub const DEFAULT_FILTERS: usize = 128;
pub const DEFAULT_KERNEL: usize = 4;
pub const DEFAULT_HIDDEN_LAYERS: usize = 3;
pub const DEFAULT_HIDDEN_UNITS: usize = 128;
/// The output layer starts near zero so the initial policy is close to
/// uniform and initial values are close to 0.
const HEAD_INIT_GAIN: f64 = 0.01;
/// He-uniform bound is `sqrt(HE_UNIFORM / fan_in)`.
const HE_UNIFORM: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Actor { actions: usize },
    Critic,
}

impl Head {
    pub fn outputs(&self) -> usize {
        match self {
            Head::Actor { actions } => *actions,
            Head::Critic => 1,
        }
    }
}

/// Network shape. Every vector input goes through its own 1D conv
/// (`filters` channels, kernel `min(kernel, len)`, stride 1, ReLU), the
/// scalar inputs through one dense ReLU layer; the flattened results are
/// concatenated and fed through `hidden_layers` dense ReLU layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub head: Head,
    pub vector_lens: Vec<usize>,
    pub filters: usize,
    pub kernel: usize,
    pub scalar_inputs: usize,
    pub scalar_units: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
}

impl Topology {
    /// Shape matching [`StateObservation`] with `levels` frame-rate levels.
    pub fn for_state(head: Head, levels: usize, hidden_layers: usize, hidden_units: usize) -> Self {
        Self {
            head,
            vector_lens: vec![TAU_LEN, P_LEN, DECILE_LEN, DECILE_LEN, levels],
            filters: DEFAULT_FILTERS,
            kernel: DEFAULT_KERNEL,
            scalar_inputs: 2,
            scalar_units: DEFAULT_FILTERS,
            hidden_layers,
            hidden_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTopology(m.to_string()));
        if self.hidden_layers == 0 {
            return bad("need at least one hidden layer");
        }
        if self.hidden_units == 0 || self.filters == 0 || self.kernel == 0 {
            return bad("units, filters and kernel must be >= 1");
        }
        if self.scalar_inputs == 0 || self.scalar_units == 0 {
            return bad("scalar branch needs at least one input and one unit");
        }
        if self.vector_lens.contains(&0) {
            return bad("vector inputs must be non-empty");
        }
        if let Head::Actor { actions } = self.head {
            if actions < 2 {
                return bad("actor needs at least two actions");
            }
        }
        Ok(())
    }

    pub fn kernel_for(&self, len: usize) -> usize {
        self.kernel.min(len)
    }

    pub fn conv_out_len(&self, len: usize) -> usize {
        len - self.kernel_for(len) + 1
    }

    pub fn concat_dim(&self) -> usize {
        self.vector_lens
            .iter()
            .map(|&l| self.conv_out_len(l) * self.filters)
            .sum::<usize>()
            + self.scalar_units
    }

    /// `(rows, cols)` of each weight block in storage order; each block also
    /// owns a bias of length `rows`.
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes: Vec<(usize, usize)> = self
            .vector_lens
            .iter()
            .map(|&l| (self.filters, self.kernel_for(l)))
            .collect();
        shapes.push((self.scalar_units, self.scalar_inputs));
        shapes.push((self.hidden_units, self.concat_dim()));
        for _ in 1..self.hidden_layers {
            shapes.push((self.hidden_units, self.hidden_units));
        }
        shapes.push((self.head.outputs(), self.hidden_units));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.block_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    fn scalar_block(&self) -> usize {
        self.vector_lens.len()
    }

    fn hidden_block(&self, i: usize) -> usize {
        self.vector_lens.len() + 1 + i
    }

    fn head_block(&self) -> usize {
        self.vector_lens.len() + 1 + self.hidden_layers
    }
}

/// One affine layer. Weights are stored at unit scale and multiplied by the
/// He-uniform bound of their fan-in when used, so the effective weights are
/// He-uniform while a plain SGD step moves every layer's pre-activations by
/// a comparable amount regardless of its width.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Block {
    /// Multiplier applied to the stored weights: `sqrt(6 / fan_in)`.
    pub fn weight_scale(&self) -> f64 {
        (HE_UNIFORM / self.weight.ncols() as f64).sqrt()
    }

    /// The weights as the layer applies them.
    pub fn effective_weight(&self) -> Array2<f64> {
        &self.weight * self.weight_scale()
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: Array2::zeros((rows, cols)),
            bias: Array1::zeros(rows),
        }
    }

    fn same_shape(&self, other: &Block) -> bool {
        self.weight.dim() == other.weight.dim() && self.bias.len() == other.bias.len()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }

    fn is_finite(&self) -> bool {
        match (self.weight.as_slice(), self.bias.as_slice()) {
            (Some(w), Some(b)) => all_finite(w) && all_finite(b),
            _ => self.values().all(|v| v.is_finite()),
        }
    }
}

/// Branch-free scan: `v * 0.0` is zero for finite `v` and NaN otherwise.
fn all_finite(xs: &[f64]) -> bool {
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v * 0.0;
        }
    }
    acc.iter().sum::<f64>() + rest.iter().map(|v| v * 0.0).sum::<f64>() == 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    topology: Topology,
    blocks: Vec<Block>,
}

/// Gradient blocks shaped like a [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

impl NetworkParams {
    /// Stored weights uniform on [-1, 1] (effective weights He-uniform),
    /// zero biases.
    pub fn init(topology: Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = topology.head_block();
        let blocks = topology
            .block_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (rows, cols))| {
                let limit = if i == head { HEAD_INIT_GAIN } else { 1.0 };
                let weight =
                    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit));
                Block {
                    weight,
                    bias: Array1::zeros(rows),
                }
            })
            .collect();
        Ok(Self { topology, blocks })
    }

    /// Rebuilds parameters from a flat value list in storage order.
    pub fn from_flat(topology: Topology, values: &[f64]) -> Result<Self> {
        topology.validate()?;
        if values.len() != topology.parameter_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                topology.parameter_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        let mut rest = values;
        let blocks = topology
            .block_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let (w, tail) = rest.split_at(rows * cols);
                let (b, tail) = tail.split_at(rows);
                rest = tail;
                Block {
                    weight: Array2::from_shape_vec((rows, cols), w.to_vec()).expect("sized"),
                    bias: Array1::from_vec(b.to_vec()),
                }
            })
            .collect();
        Ok(Self { topology, blocks })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn parameter_count(&self) -> usize {
        self.topology.parameter_count()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn head_mut(&mut self) -> &mut Block {
        let i = self.topology.head_block();
        &mut self.blocks[i]
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.blocks.iter().flat_map(Block::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.blocks.iter_mut().flat_map(Block::values_mut)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Block::is_finite)
    }
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            blocks: params
                .blocks
                .iter()
                .map(|b| Block::zeros(b.weight.nrows(), b.weight.ncols()))
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.blocks.iter().flat_map(Block::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.blocks.iter_mut().flat_map(Block::values_mut)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Block::is_finite)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        check_shapes(&self.blocks, &other.blocks)?;
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        Ok(())
    }
}

fn check_shapes(a: &[Block], b: &[Block]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| !x.same_shape(y)) {
        return Err(Error::ShapeMismatch(
            "gradient blocks do not match parameter blocks".into(),
        ));
    }
    Ok(())
}

/// `params += rate * grads` (ascent) or `params -= rate * grads` (descent).
/// Parameters are untouched when an error is returned.
pub fn apply_gradients(
    params: &mut NetworkParams,
    grads: &Gradients,
    rate: f64,
    direction: Direction,
) -> Result<()> {
    check_shapes(&params.blocks, &grads.blocks)?;
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient { iteration: None });
    }
    let step = match direction {
        Direction::Ascent => rate,
        Direction::Descent => -rate,
    };
    for (p, g) in params.blocks.iter_mut().zip(&grads.blocks) {
        p.weight.scaled_add(step, &g.weight);
        p.bias.scaled_add(step, &g.bias);
    }
    Ok(())
}

/// One network input: vector inputs followed by scalar inputs.
#[derive(Debug, Clone)]
pub struct NetInput<'a> {
    pub vectors: Vec<&'a [f64]>,
    pub scalars: Vec<f64>,
}

impl<'a> From<&'a StateObservation> for NetInput<'a> {
    fn from(obs: &'a StateObservation) -> Self {
        NetInput {
            vectors: obs.vectors().to_vec(),
            scalars: obs.scalars().to_vec(),
        }
    }
}

/// Activations cached by a forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    patches: Vec<Array2<f64>>,
    conv_acts: Vec<Array2<f64>>,
    scalar_in: Array2<f64>,
    scalar_act: Array2<f64>,
    concat: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    output: Array2<f64>,
    probs: Option<Array2<f64>>,
    topology: Topology,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Raw head outputs (logits for the actor, values for the critic), `[batch, outputs]`.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Softmax probabilities for an actor trace.
    pub fn probs(&self) -> Option<&Array2<f64>> {
        self.probs.as_ref()
    }

    pub fn values(&self) -> Vec<f64> {
        self.output.column(0).to_vec()
    }
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn relu_backward(grad: &mut Array2<f64>, act: &Array2<f64>) {
    Zip::from(grad).and(act).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

/// `s · x · Wᵀ + b`
fn affine(x: &Array2<f64>, block: &Block) -> Array2<f64> {
    let mut out = x.dot(&block.weight.t());
    out *= block.weight_scale();
    out += &block.bias;
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Shannon entropy in nats with `0 · ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

fn check_input(topology: &Topology, input: &NetInput<'_>) -> Result<()> {
    if input.vectors.len() != topology.vector_lens.len()
        || input
            .vectors
            .iter()
            .zip(&topology.vector_lens)
            .any(|(v, &l)| v.len() != l)
    {
        return Err(Error::ShapeMismatch(format!(
            "vector inputs {:?} do not match topology {:?}",
            input.vectors.iter().map(|v| v.len()).collect::<Vec<_>>(),
            topology.vector_lens
        )));
    }
    if input.scalars.len() != topology.scalar_inputs {
        return Err(Error::ShapeMismatch(format!(
            "expected {} scalars, got {}",
            topology.scalar_inputs,
            input.scalars.len()
        )));
    }
    Ok(())
}

struct VectorBranches {
    concat: Array2<f64>,
    patches: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    /// Start of the scalar slot in `concat`.
    offset: usize,
}

/// Runs every conv branch and lays the flattened activations out in a
/// `[batch, concat_dim]` matrix whose scalar slot is left at zero.
fn vector_branches(params: &NetworkParams, inputs: &[NetInput<'_>]) -> VectorBranches {
    let topo = &params.topology;
    let batch = inputs.len();
    let mut concat = Array2::zeros((batch, topo.concat_dim()));
    let mut patches_all = Vec::with_capacity(topo.vector_lens.len());
    let mut acts_all = Vec::with_capacity(topo.vector_lens.len());
    let mut offset = 0;

    for (j, &len) in topo.vector_lens.iter().enumerate() {
        let k = topo.kernel_for(len);
        let out_len = len - k + 1;
        let mut patches = Array2::zeros((batch * out_len, k));
        for (s, input) in inputs.iter().enumerate() {
            let x = input.vectors[j];
            for t in 0..out_len {
                patches
                    .row_mut(s * out_len + t)
                    .assign(&ndarray::ArrayView1::from(&x[t..t + k]));
            }
        }
        let mut act = affine(&patches, &params.blocks[j]);
        relu_inplace(&mut act);
        let width = out_len * topo.filters;
        for s in 0..batch {
            let rows = act.slice(s![s * out_len..(s + 1) * out_len, ..]);
            let mut dst = concat.slice_mut(s![s, offset..offset + width]);
            for (d, v) in dst.iter_mut().zip(rows.iter()) {
                *d = *v;
            }
        }
        offset += width;
        patches_all.push(patches);
        acts_all.push(act);
    }
    VectorBranches {
        concat,
        patches: patches_all,
        acts: acts_all,
        offset,
    }
}

pub fn forward(params: &NetworkParams, inputs: &[NetInput<'_>]) -> Result<ForwardTrace> {
    let topo = &params.topology;
    if inputs.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    for input in inputs {
        check_input(topo, input)?;
    }
    let batch = inputs.len();
    let VectorBranches {
        mut concat,
        patches: patches_all,
        acts: acts_all,
        offset,
    } = vector_branches(params, inputs);

    let scalar_in =
        Array2::from_shape_fn((batch, topo.scalar_inputs), |(s, i)| inputs[s].scalars[i]);
    let mut scalar_act = affine(&scalar_in, &params.blocks[topo.scalar_block()]);
    relu_inplace(&mut scalar_act);
    concat.slice_mut(s![.., offset..]).assign(&scalar_act);

    let mut hidden = Vec::with_capacity(topo.hidden_layers);
    for i in 0..topo.hidden_layers {
        let x = if i == 0 { &concat } else { &hidden[i - 1] };
        let mut h = affine(x, &params.blocks[topo.hidden_block(i)]);
        relu_inplace(&mut h);
        hidden.push(h);
    }
    let output = affine(
        hidden.last().expect("hidden_layers >= 1"),
        &params.blocks[topo.head_block()],
    );
    let probs = match topo.head {
        Head::Actor { .. } => {
            let mut p = output.clone();
            for mut row in p.rows_mut() {
                let sm = softmax(row.as_slice().expect("row-major"));
                row.assign(&Array1::from_vec(sm));
            }
            Some(p)
        }
        Head::Critic => None,
    };

    Ok(ForwardTrace {
        batch,
        patches: patches_all,
        conv_acts: acts_all,
        scalar_in,
        scalar_act,
        concat,
        hidden,
        output,
        probs,
        topology: topo.clone(),
    })
}

/// Vector-branch contribution to the first hidden layer's pre-activation,
/// one row per input. Rollouts know every upcoming state except its scalar
/// inputs, so the wide first layer can run as one batched product and each
/// step only pays for the narrow remainder of the network.
#[derive(Debug, Clone)]
pub struct VectorPrefix {
    pre: Array2<f64>,
    topology: Topology,
}

impl VectorPrefix {
    pub fn len(&self) -> usize {
        self.pre.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.nrows() == 0
    }
}

pub fn vector_prefix(params: &NetworkParams, inputs: &[NetInput<'_>]) -> Result<VectorPrefix> {
    let topo = &params.topology;
    for input in inputs {
        check_input(topo, input)?;
    }
    if inputs.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let branches = vector_branches(params, inputs);
    let first = &params.blocks[topo.hidden_block(0)];
    let w = first.weight.slice(s![.., ..branches.offset]);
    let mut pre = branches.concat.slice(s![.., ..branches.offset]).dot(&w.t());
    pre *= first.weight_scale();
    pre += &first.bias;
    Ok(VectorPrefix {
        pre,
        topology: topo.clone(),
    })
}

/// Finishes the forward pass for prefix row `row` with the given scalar
/// inputs. Returns probabilities for an actor and `[value]` for a critic.
pub fn forward_from_prefix(
    params: &NetworkParams,
    prefix: &VectorPrefix,
    row: usize,
    scalars: &[f64],
) -> Result<Vec<f64>> {
    let topo = &params.topology;
    if prefix.topology != *topo {
        return Err(Error::ShapeMismatch(
            "prefix was produced by a different topology".into(),
        ));
    }
    if row >= prefix.len() {
        return Err(Error::IndexOutOfRange {
            index: row,
            len: prefix.len(),
        });
    }
    if scalars.len() != topo.scalar_inputs {
        return Err(Error::ShapeMismatch(format!(
            "expected {} scalars, got {}",
            topo.scalar_inputs,
            scalars.len()
        )));
    }
    let dense = |block: &Block, x: &[f64], relu: bool| -> Vec<f64> {
        let scale = block.weight_scale();
        block
            .weight
            .rows()
            .into_iter()
            .zip(block.bias.iter())
            .map(|(w, b)| {
                let v = scale * w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
                if relu {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect()
    };
    let scalar_act = dense(&params.blocks[topo.scalar_block()], scalars, true);
    let first = &params.blocks[topo.hidden_block(0)];
    let offset = topo.concat_dim() - topo.scalar_units;
    let scale = first.weight_scale();
    let mut h: Vec<f64> = prefix
        .pre
        .row(row)
        .iter()
        .zip(first.weight.rows())
        .map(|(p, w)| {
            let tail = w.slice(s![offset..]);
            (p + scale
                * tail
                    .iter()
                    .zip(&scalar_act)
                    .map(|(a, c)| a * c)
                    .sum::<f64>())
            .max(0.0)
        })
        .collect();
    for i in 1..topo.hidden_layers {
        h = dense(&params.blocks[topo.hidden_block(i)], &h, true);
    }
    let out = dense(&params.blocks[topo.head_block()], &h, false);
    Ok(match topo.head {
        Head::Actor { .. } => softmax(&out),
        Head::Critic => out,
    })
}

/// Gradient of `Σ_b Σ_o d_out[b, o] · output[b, o]` with respect to every parameter.
pub fn backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    d_out: &Array2<f64>,
) -> Result<Gradients> {
    let topo = &params.topology;
    if trace.topology != *topo {
        return Err(Error::ShapeMismatch(
            "trace was produced by a different topology".into(),
        ));
    }
    if d_out.dim() != trace.output.dim() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?} vs output {:?}",
            d_out.dim(),
            trace.output.dim()
        )));
    }
    let mut grads = Gradients::zeros_like(params);

    let head = topo.head_block();
    let last = trace.hidden.last().expect("hidden_layers >= 1");
    let hs = params.blocks[head].weight_scale();
    grads.blocks[head].weight = d_out.t().dot(last) * hs;
    grads.blocks[head].bias = d_out.sum_axis(Axis(0));
    let mut dh = d_out.dot(&params.blocks[head].weight) * hs;

    for i in (0..topo.hidden_layers).rev() {
        relu_backward(&mut dh, &trace.hidden[i]);
        let x = if i == 0 {
            &trace.concat
        } else {
            &trace.hidden[i - 1]
        };
        let bi = topo.hidden_block(i);
        let scale = params.blocks[bi].weight_scale();
        grads.blocks[bi].weight = dh.t().dot(x) * scale;
        grads.blocks[bi].bias = dh.sum_axis(Axis(0));
        dh = dh.dot(&params.blocks[bi].weight) * scale;
    }
    let d_concat = dh;

    let mut offset = 0;
    for (j, &len) in topo.vector_lens.iter().enumerate() {
        let out_len = topo.conv_out_len(len);
        let width = out_len * topo.filters;
        let mut d_act = Array2::zeros((trace.batch * out_len, topo.filters));
        for s in 0..trace.batch {
            let src = d_concat.slice(s![s, offset..offset + width]);
            let mut dst = d_act.slice_mut(s![s * out_len..(s + 1) * out_len, ..]);
            for (d, v) in dst.iter_mut().zip(src.iter()) {
                *d = *v;
            }
        }
        relu_backward(&mut d_act, &trace.conv_acts[j]);
        grads.blocks[j].weight = d_act.t().dot(&trace.patches[j]) * params.blocks[j].weight_scale();
        grads.blocks[j].bias = d_act.sum_axis(Axis(0));
        offset += width;
    }

    let mut d_scalar = d_concat.slice(s![.., offset..]).to_owned();
    relu_backward(&mut d_scalar, &trace.scalar_act);
    let sb = topo.scalar_block();
    grads.blocks[sb].weight = d_scalar.t().dot(&trace.scalar_in) * params.blocks[sb].weight_scale();
    grads.blocks[sb].bias = d_scalar.sum_axis(Axis(0));

    Ok(grads)
}

/// Output gradient of `Σ_b [A_b · ln π(a_b | s_b) + β · H(π(· | s_b))]`
/// with respect to the logits. Actions are 1-based.
pub fn actor_output_grad(
    trace: &ForwardTrace,
    actions: &[usize],
    advantages: &[f64],
    beta: f64,
) -> Result<Array2<f64>> {
    let probs = trace
        .probs
        .as_ref()
        .ok_or_else(|| Error::ShapeMismatch("actor gradient needs an actor trace".into()))?;
    let (batch, n) = probs.dim();
    if actions.len() != batch || advantages.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "batch {batch} vs {} actions / {} advantages",
            actions.len(),
            advantages.len()
        )));
    }
    let mut d = Array2::zeros((batch, n));
    for b in 0..batch {
        let a = actions[b];
        if a == 0 || a > n {
            return Err(Error::LevelOutOfRange { level: a, max: n });
        }
        let row = probs.row(b);
        let h = entropy(row.as_slice().expect("row-major"));
        for j in 0..n {
            let p = row[j];
            let indicator = if j + 1 == a { 1.0 } else { 0.0 };
            let log_term = advantages[b] * (indicator - p);
            let ent_term = if p > 0.0 { -p * (p.ln() + h) } else { 0.0 };
            d[[b, j]] = log_term + beta * ent_term;
        }
    }
    Ok(d)
}

/// Output gradient of `Σ_b (target_b − V(s_b))²` with respect to the values.
pub fn critic_output_grad(trace: &ForwardTrace, targets: &[f64]) -> Result<Array2<f64>> {
    if trace.probs.is_some() || trace.output.ncols() != 1 {
        return Err(Error::ShapeMismatch(
            "critic gradient needs a critic trace".into(),
        ));
    }
    if targets.len() != trace.batch {
        return Err(Error::ShapeMismatch(format!(
            "batch {} vs {} targets",
            trace.batch,
            targets.len()
        )));
    }
    Ok(Array2::from_shape_fn((trace.batch, 1), |(b, _)| {
        -2.0 * (targets[b] - trace.output[[b, 0]])
    }))
}

pub fn build_network(
    head: Head,
    levels: usize,
    hidden_layers: usize,
    hidden_units: usize,
    seed: u64,
) -> Result<NetworkParams> {
    NetworkParams::init(
        Topology::for_state(head, levels, hidden_layers, hidden_units),
        seed,
    )
}

pub fn forward_actor(
    params: &NetworkParams,
    obs: &StateObservation,
) -> Result<(Vec<f64>, ForwardTrace)> {
    if !matches!(params.topology.head, Head::Actor { .. }) {
        return Err(Error::ShapeMismatch("not an actor network".into()));
    }
    let trace = forward(params, &[NetInput::from(obs)])?;
    let probs = trace.probs.as_ref().expect("actor trace").row(0).to_vec();
    Ok((probs, trace))
}

pub fn forward_critic(
    params: &NetworkParams,
    obs: &StateObservation,
) -> Result<(f64, ForwardTrace)> {
    if params.topology.head != Head::Critic {
        return Err(Error::ShapeMismatch("not a critic network".into()));
    }
    let trace = forward(params, &[NetInput::from(obs)])?;
    Ok((trace.output[[0, 0]], trace))
}

/// Ascent-direction gradient of `A · ln π(a|s) + β · H(π(s))`.
pub fn backward_actor(
    params: &NetworkParams,
    trace: &ForwardTrace,
    action: usize,
    advantage: f64,
    beta: f64,
) -> Result<Gradients> {
    if trace.batch != 1 {
        return Err(Error::ShapeMismatch("single-sample trace expected".into()));
    }
    let d = actor_output_grad(trace, &[action], &[advantage], beta)?;
    backward(params, trace, &d)
}

/// Descent-direction gradient of `(td_target − V(s))²`.
pub fn backward_critic(
    params: &NetworkParams,
    trace: &ForwardTrace,
    td_target: f64,
) -> Result<Gradients> {
    if trace.batch != 1 {
        return Err(Error::ShapeMismatch("single-sample trace expected".into()));
    }
    let d = critic_output_grad(trace, &[td_target])?;
    backward(params, trace, &d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{assemble_state, compute_norm_stats};
    use crate::trace::{generate_synthetic, MotionProfile};

    fn sample_obs() -> StateObservation {
        let t = generate_synthetic(MotionProfile::Hybrid { switch_period: 1 }, 3, 8).unwrap();
        let norm = compute_norm_stats(std::slice::from_ref(&t)).unwrap();
        assemble_state(&t, 1, 3, &norm).unwrap()
    }

    fn count_by_formula(hidden_layers: usize, hidden_units: usize, out: usize) -> usize {
        // conv blocks: kernel 4 except tau (len 2 -> kernel 2)
        let f = 128;
        let conv_params = f * 2 + f + 4 * (f * 4 + f);
        let conv_out = (1 + 117 + 9 + 9 + 2) * f;
        let scalar = 128 * 2 + 128;
        let concat = conv_out + 128;
        let first = hidden_units * concat + hidden_units;
        let rest = (hidden_layers - 1) * (hidden_units * hidden_units + hidden_units);
        let head = out * hidden_units + out;
        conv_params + scalar + first + rest + head
    }

    #[test]
    fn default_parameter_count() {
        let actor = build_network(Head::Actor { actions: 5 }, 5, 3, 128, 1).unwrap();
        assert_eq!(actor.parameter_count(), count_by_formula(3, 128, 5));
        assert_eq!(actor.values().count(), actor.parameter_count());
        let critic = build_network(Head::Critic, 5, 3, 128, 1).unwrap();
        assert_eq!(critic.parameter_count(), count_by_formula(3, 128, 1));
    }

    #[test]
    fn init_is_seeded() {
        let a = build_network(Head::Critic, 5, 1, 16, 7).unwrap();
        let b = build_network(Head::Critic, 5, 1, 16, 7).unwrap();
        assert!(a
            .values()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = build_network(Head::Critic, 5, 1, 16, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_hidden_layers_rejected() {
        assert!(matches!(
            build_network(Head::Actor { actions: 5 }, 5, 0, 128, 1),
            Err(Error::InvalidTopology(_))
        ));
        assert!(matches!(
            build_network(Head::Actor { actions: 1 }, 5, 1, 8, 1),
            Err(Error::InvalidTopology(_))
        ));
    }

    #[test]
    fn actor_probs_sum_to_one() {
        let net = build_network(Head::Actor { actions: 5 }, 5, 2, 32, 3).unwrap();
        let (probs, _) = forward_actor(&net, &sample_obs()).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|&p| p >= 0.0));
        let (again, _) = forward_actor(&net, &sample_obs()).unwrap();
        assert_eq!(probs, again);
    }

    #[test]
    fn zeroed_head_gives_uniform_and_zero_value() {
        let mut net = build_network(Head::Actor { actions: 5 }, 5, 1, 16, 3).unwrap();
        net.head_mut().weight.fill(0.0);
        net.head_mut().bias.fill(0.0);
        let (probs, _) = forward_actor(&net, &sample_obs()).unwrap();
        assert_eq!(probs, vec![0.2; 5]);

        let mut critic = build_network(Head::Critic, 5, 1, 16, 3).unwrap();
        critic.head_mut().weight.fill(0.0);
        critic.head_mut().bias.fill(0.0);
        assert_eq!(forward_critic(&critic, &sample_obs()).unwrap().0, 0.0);
    }

    #[test]
    fn shape_mismatch_detected() {
        let net = build_network(Head::Actor { actions: 5 }, 5, 1, 8, 3).unwrap();
        let mut obs = sample_obs();
        obs.p.pop();
        assert!(matches!(
            forward_actor(&net, &obs),
            Err(Error::ShapeMismatch(_))
        ));
        let critic = build_network(Head::Critic, 5, 1, 8, 3).unwrap();
        assert!(forward_actor(&critic, &sample_obs()).is_err());
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, -1000.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[0], 1.0);
        let p = softmax(&[-1000.0, -1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn entropy_cases() {
        assert!((entropy(&[0.2; 5]) - 5f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.2; 5]) - 1.60944).abs() < 1e-5);
        assert_eq!(entropy(&[0.0, 1.0, 0.0, 0.0, 0.0]), 0.0);
        assert!((entropy(&[0.5, 0.5, 0.0, 0.0, 0.0]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_zero_beta_gives_zero_gradient() {
        let net = build_network(Head::Actor { actions: 5 }, 5, 1, 8, 3).unwrap();
        let (_, trace) = forward_actor(&net, &sample_obs()).unwrap();
        let g = backward_actor(&net, &trace, 2, 0.0, 0.0).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn critic_target_equal_value_gives_zero_gradient() {
        let net = build_network(Head::Critic, 5, 2, 8, 3).unwrap();
        let (v, trace) = forward_critic(&net, &sample_obs()).unwrap();
        let g = backward_critic(&net, &trace, v).unwrap();
        assert!(g.values().all(|&x| x == 0.0));
    }

    #[test]
    fn critic_gradient_scales_with_error() {
        let net = build_network(Head::Critic, 5, 2, 8, 3).unwrap();
        let (v, trace) = forward_critic(&net, &sample_obs()).unwrap();
        let g1 = backward_critic(&net, &trace, v + 1.5).unwrap();
        let g2 = backward_critic(&net, &trace, v + 3.0).unwrap();
        assert!((g2.l2_norm() - 2.0 * g1.l2_norm()).abs() < 1e-9 * g2.l2_norm().max(1.0));
    }

    #[test]
    fn apply_gradients_rules() {
        let mut net = build_network(Head::Critic, 5, 1, 8, 3).unwrap();
        let before = net.clone();
        let mut g = Gradients::zeros_like(&net);
        g.values_mut().for_each(|v| *v = 1.0);
        apply_gradients(&mut net, &g, 0.0, Direction::Descent).unwrap();
        assert_eq!(net, before);

        apply_gradients(&mut net, &g, 0.5, Direction::Ascent).unwrap();
        assert!(net
            .values()
            .zip(before.values())
            .all(|(a, b)| (a - b - 0.5).abs() < 1e-15));

        let snapshot = net.clone();
        *g.values_mut().next().unwrap() = f64::NAN;
        assert!(matches!(
            apply_gradients(&mut net, &g, 0.1, Direction::Descent),
            Err(Error::NonFiniteGradient { .. })
        ));
        assert_eq!(net, snapshot);

        let other = build_network(Head::Critic, 5, 2, 8, 3).unwrap();
        assert!(matches!(
            apply_gradients(
                &mut net,
                &Gradients::zeros_like(&other),
                0.1,
                Direction::Descent
            ),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn flat_round_trip() {
        let net = build_network(Head::Actor { actions: 5 }, 5, 2, 8, 3).unwrap();
        let back = NetworkParams::from_flat(net.topology().clone(), &net.to_flat()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = build_network(Head::Actor { actions: 5 }, 5, 2, 16, 5).unwrap();
        let t = generate_synthetic(MotionProfile::Hybrid { switch_period: 1 }, 4, 2).unwrap();
        let norm = compute_norm_stats(std::slice::from_ref(&t)).unwrap();
        let obs: Vec<_> = (0..4)
            .map(|i| assemble_state(&t, i, 1 + i, &norm).unwrap())
            .collect();
        let inputs: Vec<NetInput> = obs.iter().map(NetInput::from).collect();
        let batch = forward(&net, &inputs).unwrap();
        for (i, o) in obs.iter().enumerate() {
            let (p, _) = forward_actor(&net, o).unwrap();
            for (j, pj) in p.iter().enumerate() {
                assert!((batch.probs().unwrap()[[i, j]] - pj).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prefix_forward_matches_full_forward() {
        let params = build_network(Head::Actor { actions: 5 }, 5, 2, 16, 4).unwrap();
        let critic = build_network(Head::Critic, 5, 2, 16, 5).unwrap();
        let t = generate_synthetic(MotionProfile::Hybrid { switch_period: 1 }, 4, 9).unwrap();
        let norm = compute_norm_stats(std::slice::from_ref(&t)).unwrap();
        let obs: Vec<StateObservation> = (0..3)
            .map(|i| assemble_state(&t, i, i + 1, &norm).unwrap())
            .collect();
        let inputs: Vec<NetInput<'_>> = obs.iter().map(NetInput::from).collect();
        for net in [&params, &critic] {
            let prefix = vector_prefix(net, &inputs).unwrap();
            let full = forward(net, &inputs).unwrap();
            for (row, o) in obs.iter().enumerate() {
                let got = forward_from_prefix(net, &prefix, row, &o.scalars()).unwrap();
                let want: Vec<f64> = match full.probs() {
                    Some(p) => p.row(row).to_vec(),
                    None => full.output().row(row).to_vec(),
                };
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
            assert!(matches!(
                forward_from_prefix(net, &prefix, 3, &[0.0, 0.0]),
                Err(Error::IndexOutOfRange { .. })
            ));
        }
    }
}
