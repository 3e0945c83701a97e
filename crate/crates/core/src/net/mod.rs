//! Four-head network: policy, value, regret value and ranking score over a
//! shared torso, with a hand-written reverse pass and SGD.
//!
//! Parameters live in one flat vector. The torso comes first, followed by the
//! policy, value, regret-value and ranking heads, each occupying a contiguous
//! range (see [`Network::head_range`]).

mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod sgd;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, Range, SubAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::games::{Variant, INPUT_PLANES};
use layers::{conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, silu, silu_grad, softplus};

pub use checkpoint::{model_hash, Checkpoint, CHECKPOINT_VERSION};
pub(crate) use checkpoint::hex_digest;
pub use loss::{LossWeights, Losses, TrainBatch};
pub use sgd::Sgd;

/// Floating-point type the network can run in.
pub trait Real:
    num_traits::Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite {head} loss")]
    NonFiniteLoss { head: &'static str },
    #[error("non-finite parameter after optimizer step at index {index}")]
    NonFiniteParam { index: usize },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Torso {
    /// Fully connected layers over the flattened input planes.
    Mlp { hidden: usize, layers: usize },
    /// A 3x3 stem followed by residual blocks of two 3x3 convolutions.
    Conv { filters: usize, blocks: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub torso: Torso,
    /// Width of the hidden layer in the value, regret-value and ranking heads.
    pub head_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            torso: Torso::Conv {
                filters: 32,
                blocks: 1,
            },
            head_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Policy,
    Value,
    RegretValue,
    Ranking,
}

/// Network evaluation of one position.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    /// Softmax over the full action space; illegal actions are not masked.
    pub policy: Vec<f32>,
    /// In [-1, 1], from the mover's perspective.
    pub value: f32,
    /// Non-negative regret estimate.
    pub regret_value: f32,
    /// Unnormalized ranking score.
    pub gamma: f32,
}

#[derive(Debug, Clone, Copy)]
struct DenseLayer {
    w: usize,
    b: usize,
    inputs: usize,
    outputs: usize,
}

impl DenseLayer {
    fn alloc(next: &mut usize, inputs: usize, outputs: usize) -> Self {
        let w = *next;
        let b = w + inputs * outputs;
        *next = b + outputs;
        DenseLayer {
            w,
            b,
            inputs,
            outputs,
        }
    }

    fn w_range(&self) -> Range<usize> {
        self.w..self.b
    }

    fn b_range(&self) -> Range<usize> {
        self.b..self.b + self.outputs
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
}

impl ConvLayer {
    fn alloc(next: &mut usize, cin: usize, cout: usize) -> Self {
        let w = *next;
        let b = w + 9 * cin * cout;
        *next = b + cout;
        ConvLayer { w, b, cin, cout }
    }

    fn w_range(&self) -> Range<usize> {
        self.w..self.b
    }

    fn b_range(&self) -> Range<usize> {
        self.b..self.b + self.cout
    }
}

#[derive(Debug, Clone)]
enum TorsoLayout {
    Mlp(Vec<DenseLayer>),
    Conv {
        stem: ConvLayer,
        blocks: Vec<(ConvLayer, ConvLayer)>,
    },
}

#[derive(Debug, Clone, Copy)]
struct ScalarHead {
    hidden: DenseLayer,
    out: DenseLayer,
}

#[derive(Debug, Clone)]
struct Layout {
    torso: TorsoLayout,
    policy: DenseLayer,
    value: ScalarHead,
    regret: ScalarHead,
    rank: ScalarHead,
    features: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetConfig, variant: Variant) -> Self {
        let cells = variant.cells();
        let mut next = 0;
        let (torso, features) = match cfg.torso {
            Torso::Mlp { hidden, layers } => {
                let mut dense = vec![DenseLayer::alloc(&mut next, INPUT_PLANES * cells, hidden)];
                for _ in 1..layers.max(1) {
                    dense.push(DenseLayer::alloc(&mut next, hidden, hidden));
                }
                (TorsoLayout::Mlp(dense), hidden)
            }
            Torso::Conv { filters, blocks } => {
                let stem = ConvLayer::alloc(&mut next, INPUT_PLANES, filters);
                let blocks = (0..blocks)
                    .map(|_| {
                        (
                            ConvLayer::alloc(&mut next, filters, filters),
                            ConvLayer::alloc(&mut next, filters, filters),
                        )
                    })
                    .collect();
                (TorsoLayout::Conv { stem, blocks }, filters * cells)
            }
        };
        let policy = DenseLayer::alloc(&mut next, features, variant.action_space());
        let mut scalar = || ScalarHead {
            hidden: DenseLayer::alloc(&mut next, features, cfg.head_hidden),
            out: DenseLayer::alloc(&mut next, cfg.head_hidden, 1),
        };
        let (value, regret, rank) = (scalar(), scalar(), scalar());
        Layout {
            torso,
            policy,
            value,
            regret,
            rank,
            features,
            total: next,
        }
    }

    fn scalar_head(&self, head: Head) -> &ScalarHead {
        match head {
            Head::Value => &self.value,
            Head::RegretValue => &self.regret,
            Head::Ranking => &self.rank,
            Head::Policy => unreachable!("policy head is not scalar"),
        }
    }
}

/// Activations recorded by a forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    input: Vec<T>,
    /// Alternating pre-activation / activation buffers for each torso layer.
    torso: Vec<Vec<T>>,
    logits: Vec<T>,
    /// (hidden pre-activation, hidden activation, output pre-activation)
    scalars: [(Vec<T>, Vec<T>, T); 3],
}

impl<T: Real> Trace<T> {
    fn features(&self) -> &[T] {
        self.torso.last().expect("forward pass recorded")
    }
}

const SCALAR_HEADS: [Head; 3] = [Head::Value, Head::RegretValue, Head::Ranking];

#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetConfig,
    variant: Variant,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Real> Network<T> {
    /// Network with every parameter set to zero.
    pub fn zeros(config: NetConfig, variant: Variant) -> Self {
        let layout = Layout::new(&config, variant);
        let params = vec![T::zero(); layout.total];
        Network {
            config,
            variant,
            layout,
            params,
        }
    }

    /// LeCun-uniform weights, zero biases.
    pub fn random(config: NetConfig, variant: Variant, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(config, variant);
        let mut fill = |range: Range<usize>, fan_in: usize, params: &mut [T]| {
            let bound = (3.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = T::from(rng.random_range(-bound..bound)).unwrap();
            }
        };
        let layout = net.layout.clone();
        match &layout.torso {
            TorsoLayout::Mlp(layers) => {
                for l in layers {
                    fill(l.w_range(), l.inputs, &mut net.params);
                }
            }
            TorsoLayout::Conv { stem, blocks } => {
                fill(stem.w_range(), 9 * stem.cin, &mut net.params);
                for (a, b) in blocks {
                    fill(a.w_range(), 9 * a.cin, &mut net.params);
                    fill(b.w_range(), 9 * b.cin, &mut net.params);
                }
            }
        }
        fill(layout.policy.w_range(), layout.policy.inputs, &mut net.params);
        for h in [layout.value, layout.regret, layout.rank] {
            fill(h.hidden.w_range(), h.hidden.inputs, &mut net.params);
            fill(h.out.w_range(), h.out.inputs, &mut net.params);
        }
        net
    }

    pub fn from_params(config: NetConfig, variant: Variant, params: Vec<T>) -> Result<Self, NetError> {
        let mut net = Self::zeros(config, variant);
        if params.len() != net.params.len() {
            return Err(NetError::Shape {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter indices owned by one head.
    pub fn head_range(&self, head: Head) -> Range<usize> {
        let l = &self.layout;
        match head {
            Head::Policy => l.policy.w..l.policy.b + l.policy.outputs,
            _ => {
                let h = l.scalar_head(head);
                h.hidden.w..h.out.b + 1
            }
        }
    }

    /// Copy of this network in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config,
            variant: self.variant,
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::from(*p).unwrap()).collect(),
        }
    }

    pub fn input_len(&self) -> usize {
        INPUT_PLANES * self.variant.cells()
    }

    /// Evaluates one encoded position (channel-major planes).
    pub fn forward(&self, input: &[f32]) -> Result<NetOutput, NetError> {
        let mut trace = Trace::default();
        self.forward_with(input, &mut trace)
    }

    /// Like [`Network::forward`], reusing `trace` as scratch space.
    pub fn forward_with(&self, input: &[f32], trace: &mut Trace<T>) -> Result<NetOutput, NetError> {
        self.run(input, trace)?;
        Ok(self.output(trace))
    }

    pub fn forward_batch(&self, inputs: &[Vec<f32>]) -> Result<Vec<NetOutput>, NetError> {
        let mut trace = Trace::default();
        inputs.iter().map(|x| self.forward_with(x, &mut trace)).collect()
    }

    fn output(&self, trace: &Trace<T>) -> NetOutput {
        let max = trace.logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = trace.logits.iter().map(|l| (*l - max).exp()).collect();
        let total = exps.iter().copied().fold(T::zero(), |a, b| a + b);
        let policy = exps.iter().map(|e| (*e / total).to_f32().unwrap()).collect();
        NetOutput {
            policy,
            value: trace.scalars[0].2.tanh().to_f32().unwrap(),
            regret_value: softplus(trace.scalars[1].2).to_f32().unwrap(),
            gamma: trace.scalars[2].2.to_f32().unwrap(),
        }
    }

    fn run(&self, input: &[f32], trace: &mut Trace<T>) -> Result<(), NetError> {
        let expected = self.input_len();
        if input.len() != expected {
            return Err(NetError::Shape {
                expected,
                got: input.len(),
            });
        }
        let p = &self.params;
        let cells = self.variant.cells();
        trace.input.clear();
        match &self.layout.torso {
            TorsoLayout::Mlp(_) => trace.input.extend(input.iter().map(|v| T::from(*v).unwrap())),
            TorsoLayout::Conv { .. } => {
                // channel-major planes -> cell-major activations
                trace.input.resize(expected, T::zero());
                for (ch, plane) in input.chunks_exact(cells).enumerate() {
                    for (cell, v) in plane.iter().enumerate() {
                        trace.input[cell * INPUT_PLANES + ch] = T::from(*v).unwrap();
                    }
                }
            }
        }
        let act = |z: &[T]| -> Vec<T> { z.iter().map(|v| silu(*v)).collect() };
        let mut torso: Vec<Vec<T>> = Vec::new();
        match &self.layout.torso {
            TorsoLayout::Mlp(layers) => {
                for l in layers {
                    let mut z = vec![T::zero(); l.outputs];
                    let x = torso.last().unwrap_or(&trace.input);
                    dense_forward(x, &p[l.w_range()], &p[l.b_range()], &mut z);
                    let a = act(&z);
                    torso.push(z);
                    torso.push(a);
                }
            }
            TorsoLayout::Conv { stem, blocks } => {
                let n = self.variant.size();
                let mut z = vec![T::zero(); cells * stem.cout];
                conv3x3_forward(&trace.input, n, stem.cin, &p[stem.w_range()], &p[stem.b_range()], &mut z);
                let a = act(&z);
                torso.push(z);
                torso.push(a);
                for (c1, c2) in blocks {
                    let x = torso.last().expect("stem recorded");
                    let mut z1 = vec![T::zero(); cells * c1.cout];
                    conv3x3_forward(x, n, c1.cin, &p[c1.w_range()], &p[c1.b_range()], &mut z1);
                    let h1 = act(&z1);
                    let mut z2 = vec![T::zero(); cells * c2.cout];
                    conv3x3_forward(&h1, n, c2.cin, &p[c2.w_range()], &p[c2.b_range()], &mut z2);
                    for (o, skip) in z2.iter_mut().zip(x) {
                        *o += *skip;
                    }
                    let a2 = act(&z2);
                    torso.extend([z1, h1, z2, a2]);
                }
            }
        }
        trace.torso = torso;

        let l = &self.layout;
        let features = trace.torso.last().expect("torso has at least one layer");
        trace.logits.resize(l.policy.outputs, T::zero());
        dense_forward(features, &p[l.policy.w_range()], &p[l.policy.b_range()], &mut trace.logits);
        for (i, head) in SCALAR_HEADS.iter().enumerate() {
            let h = l.scalar_head(*head);
            let (pre, act, out) = &mut trace.scalars[i];
            pre.resize(h.hidden.outputs, T::zero());
            dense_forward(features, &p[h.hidden.w_range()], &p[h.hidden.b_range()], pre);
            act.clear();
            act.extend(pre.iter().map(|v| silu(*v)));
            let mut o = [T::zero()];
            dense_forward(act, &p[h.out.w_range()], &p[h.out.b_range()], &mut o);
            *out = o[0];
        }
        Ok(())
    }

    /// Accumulates parameter gradients for one traced item given gradients
    /// with respect to the policy logits and the three scalar pre-activations.
    fn backward(&self, trace: &Trace<T>, dlogits: &[T], dscalars: [T; 3], grad: &mut [T]) {
        let l = &self.layout;
        let p = &self.params;
        let features = trace.features();
        let mut dfeat = vec![T::zero(); l.features];

        {
            let (dw, db) = split_wb(grad, l.policy.w_range(), l.policy.b_range());
            dense_backward(features, &p[l.policy.w_range()], dlogits, dw, db, Some(&mut dfeat));
        }
        for (i, head) in SCALAR_HEADS.iter().enumerate() {
            if dscalars[i] == T::zero() {
                continue;
            }
            let h = l.scalar_head(*head);
            let (pre, act, _) = &trace.scalars[i];
            let mut dact = vec![T::zero(); h.hidden.outputs];
            {
                let (dw, db) = split_wb(grad, h.out.w_range(), h.out.b_range());
                dense_backward(act, &p[h.out.w_range()], &[dscalars[i]], dw, db, Some(&mut dact));
            }
            let dpre: Vec<T> = dact.iter().zip(pre).map(|(d, z)| *d * silu_grad(*z)).collect();
            let (dw, db) = split_wb(grad, h.hidden.w_range(), h.hidden.b_range());
            dense_backward(features, &p[h.hidden.w_range()], &dpre, dw, db, Some(&mut dfeat));
        }

        match &l.torso {
            TorsoLayout::Mlp(layers) => {
                let mut dact = dfeat;
                for (k, layer) in layers.iter().enumerate().rev() {
                    let z = &trace.torso[2 * k];
                    let dz: Vec<T> = dact.iter().zip(z).map(|(d, z)| *d * silu_grad(*z)).collect();
                    let x = if k == 0 { &trace.input } else { &trace.torso[2 * k - 1] };
                    let mut dx = vec![T::zero(); layer.inputs];
                    let (dw, db) = split_wb(grad, layer.w_range(), layer.b_range());
                    dense_backward(x, &p[layer.w_range()], &dz, dw, db, (k > 0).then_some(&mut dx[..]));
                    dact = dx;
                }
            }
            TorsoLayout::Conv { stem, blocks } => {
                let n = self.variant.size();
                let mut dact = dfeat;
                for (b, (c1, c2)) in blocks.iter().enumerate().rev() {
                    let base = 2 + 4 * b;
                    let (x, z1, h1, z2) = (
                        &trace.torso[base - 1],
                        &trace.torso[base],
                        &trace.torso[base + 1],
                        &trace.torso[base + 2],
                    );
                    let dz2: Vec<T> = dact.iter().zip(z2).map(|(d, z)| *d * silu_grad(*z)).collect();
                    let mut dh1 = vec![T::zero(); h1.len()];
                    {
                        let (dw, db) = split_wb(grad, c2.w_range(), c2.b_range());
                        conv3x3_backward(h1, n, c2.cin, &p[c2.w_range()], &dz2, dw, db, Some(&mut dh1));
                    }
                    let dz1: Vec<T> = dh1.iter().zip(z1).map(|(d, z)| *d * silu_grad(*z)).collect();
                    let mut dx = dz2;
                    let (dw, db) = split_wb(grad, c1.w_range(), c1.b_range());
                    conv3x3_backward(x, n, c1.cin, &p[c1.w_range()], &dz1, dw, db, Some(&mut dx));
                    dact = dx;
                }
                let z0 = &trace.torso[0];
                let dz0: Vec<T> = dact.iter().zip(z0).map(|(d, z)| *d * silu_grad(*z)).collect();
                let (dw, db) = split_wb(grad, stem.w_range(), stem.b_range());
                conv3x3_backward(&trace.input, n, stem.cin, &p[stem.w_range()], &dz0, dw, db, None);
            }
        }
    }
}

/// Disjoint mutable views of a layer's weight and bias gradients.
fn split_wb<T>(grad: &mut [T], w: Range<usize>, b: Range<usize>) -> (&mut [T], &mut [T]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad[w.start..b.end].split_at_mut(w.end - w.start);
    (head, tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn small_conv() -> NetConfig {
        NetConfig {
            torso: Torso::Conv {
                filters: 4,
                blocks: 1,
            },
            head_hidden: 5,
        }
    }

    #[test]
    fn zero_network_is_uniform_and_neutral() {
        for cfg in [NetConfig::default(), NetConfig { torso: Torso::Mlp { hidden: 8, layers: 2 }, head_hidden: 4 }] {
            let net = Network::<f32>::zeros(cfg, Variant::Hex(5));
            let x = Variant::Hex(5).initial_state().apply(7).unwrap().encode();
            let out = net.forward(&x).unwrap();
            assert!(out.policy.iter().all(|p| (p - 1.0 / 25.0).abs() < 1e-7));
            assert_eq!(out.value, 0.0);
            assert_eq!(out.gamma, 0.0);
            assert!((out.regret_value - 2f32.ln()).abs() < 1e-7);
        }
    }

    #[test]
    fn forward_is_deterministic_and_well_formed() {
        let mut rng = StdRng::seed_from_u64(1);
        let net = Network::<f32>::random(NetConfig::default(), Variant::Othello(6), &mut rng);
        let x = Variant::Othello(6).initial_state().encode();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.policy.len(), 37);
        assert!((a.policy.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(a.policy.iter().all(|p| *p >= 0.0));
        assert!((-1.0..=1.0).contains(&a.value));
        assert!(a.regret_value >= 0.0);
    }

    #[test]
    fn batch_matches_single_items() {
        let mut rng = StdRng::seed_from_u64(2);
        let net = Network::<f32>::random(small_conv(), Variant::Hex(4), &mut rng);
        let mut s = Variant::Hex(4).initial_state();
        let mut inputs = Vec::new();
        for a in [5, 0, 10, 3] {
            inputs.push(s.encode());
            s = s.apply(a).unwrap();
        }
        let batch = net.forward_batch(&inputs).unwrap();
        for (x, out) in inputs.iter().zip(&batch) {
            let single = net.forward(x).unwrap();
            for (p, q) in single.policy.iter().zip(&out.policy) {
                assert!((p - q).abs() < 1e-6);
            }
            assert!((single.value - out.value).abs() < 1e-6);
            assert!((single.gamma - out.gamma).abs() < 1e-6);
            assert!((single.regret_value - out.regret_value).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = Network::<f32>::zeros(small_conv(), Variant::Hex(4));
        assert!(matches!(net.forward(&[0.0; 3]), Err(NetError::Shape { .. })));
    }

    #[test]
    fn head_ranges_tile_the_tail_of_the_parameter_vector() {
        let net = Network::<f32>::zeros(NetConfig::default(), Variant::Hex(5));
        let p = net.head_range(Head::Policy);
        let v = net.head_range(Head::Value);
        let r = net.head_range(Head::RegretValue);
        let k = net.head_range(Head::Ranking);
        assert_eq!(p.end, v.start);
        assert_eq!(v.end, r.start);
        assert_eq!(r.end, k.start);
        assert_eq!(k.end, net.param_count());
        // stem 4*9*32+32, block 2*(32*9*32+32), policy 800*25+25, heads 3*(800*32+32+33)
        assert_eq!(net.param_count(), 1184 + 18496 + 20025 + 3 * 25665);
    }
}
