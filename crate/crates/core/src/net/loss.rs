//! Training losses and their gradients.

use serde::{Deserialize, Serialize};

use super::layers::sigmoid;
use super::{NetError, Network, Real, Trace};
use crate::regret::{ranking_loss, ranking_loss_grad};

/// One optimization batch. `groups` index into the batch and must be disjoint.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub inputs: Vec<Vec<f32>>,
    pub policy_targets: Vec<Vec<f32>>,
    pub value_targets: Vec<f32>,
    pub regret_targets: Vec<f32>,
    pub groups: Vec<Vec<usize>>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub policy: f64,
    pub value: f64,
    pub regret: f64,
    pub rank: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            policy: 1.0,
            value: 1.0,
            regret: 1.0,
            rank: 1.0,
        }
    }
}

/// Unweighted per-head losses and the weighted total. The first three are
/// batch means, `rank` is the mean over ranking groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub policy: f64,
    pub value: f64,
    pub regret: f64,
    pub rank: f64,
    pub total: f64,
}

impl Losses {
    pub fn head(&self, name: &str) -> Option<f64> {
        match name {
            "policy" => Some(self.policy),
            "value" => Some(self.value),
            "regret" => Some(self.regret),
            "rank" => Some(self.rank),
            "total" => Some(self.total),
            _ => None,
        }
    }
}

struct Evaluated<T> {
    traces: Vec<Trace<T>>,
    losses: Losses,
}

impl<T: Real> Network<T> {
    fn evaluate(&self, batch: &TrainBatch, weights: &LossWeights) -> Result<Evaluated<T>, NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut traces = Vec::with_capacity(batch.len());
        let (mut policy, mut value, mut regret) = (0.0, 0.0, 0.0);
        for (i, x) in batch.inputs.iter().enumerate() {
            let mut trace = Trace::default();
            self.run(x, &mut trace)?;
            let logp = log_softmax(&trace.logits);
            policy -= batch.policy_targets[i]
                .iter()
                .zip(&logp)
                .map(|(t, l)| if *t == 0.0 { 0.0 } else { *t as f64 * l })
                .sum::<f64>();
            let v = trace.scalars[0].2.to_f64().unwrap().tanh();
            value += (v - batch.value_targets[i] as f64).powi(2);
            let r = super::layers::softplus(trace.scalars[1].2).to_f64().unwrap();
            regret += (r - batch.regret_targets[i] as f64).powi(2);
            traces.push(trace);
        }
        let mut rank = 0.0;
        for g in &batch.groups {
            let (scores, regrets) = group_inputs(&traces, batch, g);
            rank += ranking_loss(&scores, &regrets);
        }
        let losses = Losses {
            policy: policy / n,
            value: value / n,
            regret: regret / n,
            rank: rank / batch.groups.len().max(1) as f64,
            total: 0.0,
        };
        for (head, v) in [
            ("policy", losses.policy),
            ("value", losses.value),
            ("regret", losses.regret),
            ("rank", losses.rank),
        ] {
            if !v.is_finite() {
                return Err(NetError::NonFiniteLoss { head });
            }
        }
        let total = weights.policy * losses.policy
            + weights.value * losses.value
            + weights.regret * losses.regret
            + weights.rank * losses.rank;
        Ok(Evaluated {
            traces,
            losses: Losses { total, ..losses },
        })
    }

    /// Losses without gradients.
    pub fn losses(&self, batch: &TrainBatch, weights: &LossWeights) -> Result<Losses, NetError> {
        Ok(self.evaluate(batch, weights)?.losses)
    }

    /// Losses and the gradient of the weighted total with respect to every
    /// parameter.
    pub fn loss_and_grads(&self, batch: &TrainBatch, weights: &LossWeights) -> Result<(Losses, Vec<T>), NetError> {
        let Evaluated { traces, losses } = self.evaluate(batch, weights)?;
        let n = batch.len() as f64;
        let mut dgamma = vec![0.0f64; batch.len()];
        if weights.rank != 0.0 {
            let groups = batch.groups.len() as f64;
            for g in &batch.groups {
                let (scores, regrets) = group_inputs(&traces, batch, g);
                for (i, d) in g.iter().zip(ranking_loss_grad(&scores, &regrets)) {
                    dgamma[*i] += weights.rank * d / groups;
                }
            }
        }
        let cast = |v: f64| T::from(v).unwrap();
        let mut grad = vec![T::zero(); self.param_count()];
        for (i, trace) in traces.iter().enumerate() {
            let target = &batch.policy_targets[i];
            let mass: f64 = target.iter().map(|t| *t as f64).sum();
            let p = softmax(&trace.logits);
            let dlogits: Vec<T> = p
                .iter()
                .zip(target)
                .map(|(p, t)| cast(weights.policy * (p * mass - *t as f64) / n))
                .collect();
            let u = trace.scalars[0].2.to_f64().unwrap();
            let v = u.tanh();
            let dv = weights.value * 2.0 * (v - batch.value_targets[i] as f64) * (1.0 - v * v) / n;
            let u = trace.scalars[1].2;
            let r = super::layers::softplus(u).to_f64().unwrap();
            let dr = weights.regret * 2.0 * (r - batch.regret_targets[i] as f64)
                * sigmoid(u).to_f64().unwrap()
                / n;
            self.backward(trace, &dlogits, [cast(dv), cast(dr), cast(dgamma[i])], &mut grad);
        }
        Ok((losses, grad))
    }
}

fn group_inputs<T: Real>(traces: &[Trace<T>], batch: &TrainBatch, group: &[usize]) -> (Vec<f64>, Vec<f64>) {
    group
        .iter()
        .map(|i| {
            (
                traces[*i].scalars[2].2.to_f64().unwrap(),
                batch.regret_targets[*i] as f64,
            )
        })
        .unzip()
}

fn log_softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|l| l.to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|l| (l.to_f64().unwrap() - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|l| l.to_f64().unwrap() - lse).collect()
}

fn softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::Variant;
    use crate::net::{NetConfig, Torso};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn mlp() -> NetConfig {
        NetConfig {
            torso: Torso::Mlp { hidden: 6, layers: 1 },
            head_hidden: 4,
        }
    }

    fn one_item(net: &Network<f64>, target: Vec<f32>, z: f32) -> TrainBatch {
        let x = net.variant().initial_state().encode();
        TrainBatch {
            inputs: vec![x],
            policy_targets: vec![target],
            value_targets: vec![z],
            regret_targets: vec![0.5],
            groups: vec![],
        }
    }

    #[test]
    fn cross_entropy_at_own_policy_is_entropy_with_flat_logit_gradient() {
        let mut rng = StdRng::seed_from_u64(3);
        let net = Network::<f64>::random(mlp(), Variant::Hex(3), &mut rng);
        let x = Variant::Hex(3).initial_state().encode();
        let out = net.forward(&x).unwrap();
        let batch = one_item(&net, out.policy.clone(), 0.0);
        let losses = net.losses(&batch, &LossWeights::default()).unwrap();
        let entropy: f64 = out.policy.iter().map(|p| -(*p as f64) * (*p as f64).ln()).sum();
        assert!((losses.policy - entropy).abs() < 1e-6);

        let policy_only = LossWeights { policy: 1.0, value: 0.0, regret: 0.0, rank: 0.0 };
        let (_, grad) = net.loss_and_grads(&batch, &policy_only).unwrap();
        let bias = net.head_range(crate::net::Head::Policy).end - 9..net.head_range(crate::net::Head::Policy).end;
        // f32 rounding of the target is the only residual
        assert!(grad[bias].iter().all(|g| g.abs() < 1e-6));
    }

    #[test]
    fn value_loss_vanishes_at_target() {
        let net = Network::<f64>::zeros(mlp(), Variant::Hex(3));
        let batch = one_item(&net, vec![1.0 / 9.0; 9], 0.0);
        assert_eq!(net.losses(&batch, &LossWeights::default()).unwrap().value, 0.0);
    }

    #[test]
    fn rank_loss_is_shift_invariant_through_the_network() {
        // shifting the ranking head's output bias shifts every gamma by the same constant
        let mut rng = StdRng::seed_from_u64(4);
        let mut net = Network::<f64>::random(mlp(), Variant::Hex(3), &mut rng);
        let mut s = Variant::Hex(3).initial_state();
        let mut batch = TrainBatch::default();
        for (i, a) in [4, 0, 8].into_iter().enumerate() {
            batch.inputs.push(s.encode());
            batch.policy_targets.push(vec![1.0 / 9.0; 9]);
            batch.value_targets.push(1.0);
            batch.regret_targets.push(i as f32);
            s = s.apply(a).unwrap();
        }
        batch.groups = vec![vec![0, 1, 2]];
        let before = net.losses(&batch, &LossWeights::default()).unwrap().rank;
        let last = net.param_count() - 1;
        net.params_mut()[last] += 7.25;
        let after = net.losses(&batch, &LossWeights::default()).unwrap().rank;
        assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = Network::<f64>::zeros(mlp(), Variant::Hex(3));
        assert!(matches!(
            net.loss_and_grads(&TrainBatch::default(), &LossWeights::default()),
            Err(NetError::EmptyBatch)
        ));
    }

    #[test]
    fn nan_loss_names_the_head() {
        let net = Network::<f64>::zeros(mlp(), Variant::Hex(3));
        let mut batch = one_item(&net, vec![1.0 / 9.0; 9], 0.0);
        batch.value_targets[0] = f32::NAN;
        match net.losses(&batch, &LossWeights::default()) {
            Err(NetError::NonFiniteLoss { head }) => assert_eq!(head, "value"),
            other => panic!("{other:?}"),
        }
    }
}
