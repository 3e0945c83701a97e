//! Momentum SGD with weight decay folded into the gradient.

use serde::{Deserialize, Serialize};

use super::{NetError, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for Sgd {
    fn default() -> Self {
        Sgd {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl Sgd {
    /// `v <- momentum * v + (g + wd * w)`, `w <- w - lr * v`.
    pub fn step<T: Real>(&self, params: &mut [T], velocity: &mut [T], grad: &[T]) -> Result<(), NetError> {
        let (lr, mu, wd) = (
            T::from(self.lr).unwrap(),
            T::from(self.momentum).unwrap(),
            T::from(self.weight_decay).unwrap(),
        );
        for (i, ((w, v), g)) in params.iter_mut().zip(velocity.iter_mut()).zip(grad).enumerate() {
            *v = mu * *v + *g + wd * *w;
            *w -= lr * *v;
            if !w.is_finite() {
                return Err(NetError::NonFiniteParam { index: i });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let sgd = Sgd { lr: 0.5, momentum: 0.9, weight_decay: 0.0 };
        let mut w = vec![1.5f64, -2.0];
        let mut v = vec![0.0; 2];
        sgd.step(&mut w, &mut v, &[0.0, 0.0]).unwrap();
        assert_eq!(w, vec![1.5, -2.0]);
    }

    #[test]
    fn quadratic_step_by_hand() {
        let sgd = Sgd { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        let mut w = vec![1.0f64];
        let mut v = vec![0.0];
        let g = 2.0 * w[0];
        sgd.step(&mut w, &mut v, &[g]).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_second_displacement_is_one_point_nine_times_the_first() {
        let sgd = Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        let mut w = vec![0.0f64];
        let mut v = vec![0.0];
        sgd.step(&mut w, &mut v, &[1.0]).unwrap();
        let first = -w[0];
        sgd.step(&mut w, &mut v, &[1.0]).unwrap();
        let second = -w[0] - first;
        assert!((second / first - 1.9).abs() < 1e-12);
    }

    #[test]
    fn overflow_is_reported() {
        let sgd = Sgd { lr: 1.0, momentum: 0.0, weight_decay: 0.0 };
        let mut w = vec![0.0f32, 0.0];
        let mut v = vec![0.0; 2];
        let err = sgd.step(&mut w, &mut v, &[0.0, f32::INFINITY]).unwrap_err();
        assert!(matches!(err, NetError::NonFiniteParam { index: 1 }));
    }
}
