use super::net::{DenseNet, Gradients};
use super::real::Real;
use crate::error::{Error, Result};

/// Plain gradient descent: `w ← w − lr·g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd(Sgd { lr })
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam(Adam::new(lr))
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd(s) => s.lr,
            Optimizer::Adam(a) => a.lr,
        }
    }

    /// Applies one update to `net`. Refuses (leaving `net` untouched) if any
    /// gradient entry is non-finite.
    pub fn step<T: Real>(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) -> Result<()> {
        if !(self.learning_rate() > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !grads.congruent(net) {
            return Err(Error::DimensionMismatch {
                context: "gradient shapes",
                expected: net.layers().len(),
                got: grads.layers.len(),
            });
        }
        if let Some(layer) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient { layer });
        }
        match self {
            Optimizer::Sgd(sgd) => {
                let lr = T::of_f64(sgd.lr);
                net.update_params(grads, |_, _, w, g| *w -= lr * g);
            }
            Optimizer::Adam(adam) => {
                if adam.first.is_empty() {
                    let slots = net.param_slots();
                    adam.first = slots.iter().map(|&n| vec![0.0; n]).collect();
                    adam.second = slots.iter().map(|&n| vec![0.0; n]).collect();
                }
                adam.step += 1;
                let t = adam.step as i32;
                let (b1, b2, eps, lr) = (adam.beta1, adam.beta2, adam.eps, adam.lr);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let (first, second) = (&mut adam.first, &mut adam.second);
                net.update_params(grads, |slot, i, w, g| {
                    let g = g.as_f64();
                    let m = &mut first[slot][i];
                    let v = &mut second[slot][i];
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= T::of_f64(lr * m_hat / (v_hat.sqrt() + eps));
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, Layer, LayerGrad};

    fn scalar_net(w: f64) -> DenseNet<f64> {
        DenseNet::new(vec![Layer::new(vec![w], vec![0.0], 1, Activation::Linear).unwrap()]).unwrap()
    }

    fn scalar_grad(gw: f64, gb: f64) -> Gradients<f64> {
        Gradients {
            layers: vec![LayerGrad {
                weight: vec![gw],
                bias: vec![gb],
            }],
        }
    }

    #[test]
    fn sgd_single_step() {
        let mut net = scalar_net(1.0);
        Optimizer::sgd(0.1).step(&mut net, &scalar_grad(2.0, 0.0)).unwrap();
        assert!((net.layers()[0].weight[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut net = scalar_net(0.37);
        let before = net.clone();
        Optimizer::sgd(0.5).step(&mut net, &scalar_grad(0.0, 0.0)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // step 1: m̂ = g, v̂ = g², so Δ = lr·g/(|g|+eps) ≈ lr for any g > 0
        for g in [1.0, 1e-3, 250.0] {
            let mut net = scalar_net(0.0);
            let mut opt = Optimizer::adam(0.01);
            opt.step(&mut net, &scalar_grad(g, g)).unwrap();
            let expected = -0.01 * g / (g + 1e-8);
            assert!((net.layers()[0].weight[0] - expected).abs() < 1e-12);
            assert!((net.layers()[0].bias[0] + 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut net = scalar_net(1.0);
        let before = net.clone();
        let err = Optimizer::sgd(0.1)
            .step(&mut net, &scalar_grad(f64::NAN, 0.0))
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 0 }));
        assert_eq!(net, before);
    }

    #[test]
    fn non_positive_learning_rate_rejected() {
        let mut net = scalar_net(1.0);
        assert!(Optimizer::sgd(0.0).step(&mut net, &scalar_grad(1.0, 1.0)).is_err());
    }
}
