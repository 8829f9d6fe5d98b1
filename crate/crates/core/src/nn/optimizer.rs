use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::net::{DenseNet, GradientSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adam,
}

/// Update-rule settings shared by every model in a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Heavy-ball coefficient for `sgd_momentum`.
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::Config("momentum must be in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(CoreError::Config("adam betas must be in [0,1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(CoreError::Config("adam_epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerState {
    w_m: Array2<f64>,
    w_v: Array2<f64>,
    b_m: Array1<f64>,
    b_v: Array1<f64>,
}

/// Optimizer bound to one network's shape. The step count increases once per
/// `apply_update`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    state: Vec<LayerState>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, net: &DenseNet) -> Result<Self> {
        cfg.validate()?;
        let state = net
            .layers()
            .iter()
            .map(|l| LayerState {
                w_m: Array2::zeros(l.weights.raw_dim()),
                w_v: Array2::zeros(l.weights.raw_dim()),
                b_m: Array1::zeros(l.bias.raw_dim()),
                b_v: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Ok(Optimizer { cfg, step: 0, state })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update with this optimizer's rule. Fails on any shape
    /// mismatch and if the update produces non-finite parameters.
    pub fn apply_update(&mut self, net: &mut DenseNet, grads: &GradientSet) -> Result<()> {
        if grads.layers.len() != self.state.len() || net.layers().len() != self.state.len() {
            return Err(CoreError::Shape(
                "gradient set does not match optimizer layout".into(),
            ));
        }
        for (i, layer) in net.layers().iter().enumerate() {
            let g = &grads.layers[i];
            if g.weights.raw_dim() != layer.weights.raw_dim()
                || g.bias.raw_dim() != layer.bias.raw_dim()
            {
                return Err(CoreError::Shape(format!(
                    "layer {i}: gradient shape does not match parameters"
                )));
            }
        }
        self.step += 1;
        let lr = self.cfg.learning_rate;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                    layer.weights.zip_mut_with(&g.weights, |p, &gv| *p -= lr * gv);
                    layer.bias.zip_mut_with(&g.bias, |p, &gv| *p -= lr * gv);
                }
            }
            OptimizerKind::SgdMomentum => {
                let beta = self.cfg.momentum;
                for ((layer, g), st) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.state)
                {
                    st.w_m.zip_mut_with(&g.weights, |m, &gv| *m = beta * *m + gv);
                    st.b_m.zip_mut_with(&g.bias, |m, &gv| *m = beta * *m + gv);
                    layer.weights.zip_mut_with(&st.w_m, |p, &m| *p -= lr * m);
                    layer.bias.zip_mut_with(&st.b_m, |p, &m| *p -= lr * m);
                }
            }
            OptimizerKind::Adam => {
                let b1 = self.cfg.adam_beta1;
                let b2 = self.cfg.adam_beta2;
                let eps = self.cfg.adam_epsilon;
                let t = self.step as i32;
                let m_corr = 1.0 / (1.0 - b1.powi(t));
                let v_corr = 1.0 / (1.0 - b2.powi(t));
                for ((layer, g), st) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.state)
                {
                    st.w_m.zip_mut_with(&g.weights, |m, &gv| {
                        *m = b1 * *m + (1.0 - b1) * gv;
                    });
                    st.w_v.zip_mut_with(&g.weights, |v, &gv| {
                        *v = b2 * *v + (1.0 - b2) * gv * gv;
                    });
                    st.b_m.zip_mut_with(&g.bias, |m, &gv| {
                        *m = b1 * *m + (1.0 - b1) * gv;
                    });
                    st.b_v.zip_mut_with(&g.bias, |v, &gv| {
                        *v = b2 * *v + (1.0 - b2) * gv * gv;
                    });
                    for ((p, m), v) in layer
                        .weights
                        .iter_mut()
                        .zip(st.w_m.iter())
                        .zip(st.w_v.iter())
                    {
                        *p -= lr * (m * m_corr) / ((v * v_corr).sqrt() + eps);
                    }
                    for ((p, m), v) in
                        layer.bias.iter_mut().zip(st.b_m.iter()).zip(st.b_v.iter())
                    {
                        *p -= lr * (m * m_corr) / ((v * v_corr).sqrt() + eps);
                    }
                }
            }
        }
        net.clear_cache();
        if !net.all_finite() {
            return Err(CoreError::Numeric(
                "parameters became non-finite after update".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::seeds;
    use ndarray::array;

    fn one_layer_net(w: f64) -> DenseNet {
        DenseNet::from_layers(vec![(
            array![[w]],
            Array1::zeros(1),
            Activation::Identity,
        )])
        .unwrap()
    }

    fn unit_grads(net: &DenseNet, g: f64) -> GradientSet {
        let mut grads = GradientSet::zeros_like(net);
        grads.layers[0].weights[[0, 0]] = g;
        grads
    }

    #[test]
    fn sgd_moves_exactly_lr_times_gradient() {
        let mut net = one_layer_net(1.0);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.1,
            ..OptimizerConfig::default()
        };
        let mut opt = Optimizer::new(cfg, &net).unwrap();
        let grads = unit_grads(&net, 0.5);
        opt.apply_update(&mut net, &grads).unwrap();
        assert_eq!(net.serialize_params()[0], 1.0 - 0.1 * 0.5);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_sgd_params_unchanged() {
        let mut net = one_layer_net(0.7);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.1,
            ..OptimizerConfig::default()
        };
        let mut opt = Optimizer::new(cfg, &net).unwrap();
        let before = net.serialize_params();
        let grads = GradientSet::zeros_like(&net);
        opt.apply_update(&mut net, &grads).unwrap();
        assert_eq!(net.serialize_params(), before);
    }

    /// Scalar Adam trace computed by hand, compared step by step.
    #[test]
    fn adam_matches_hand_rolled_scalar_trace() {
        let lr = 1e-3;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut net = one_layer_net(0.0);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: lr,
            adam_beta1: b1,
            adam_beta2: b2,
            adam_epsilon: eps,
            ..OptimizerConfig::default()
        };
        let mut opt = Optimizer::new(cfg, &net).unwrap();

        let mut p = 0.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for t in 1..=5 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            p -= lr * mhat / (vhat.sqrt() + eps);

            let grads = unit_grads(&net, g);
            opt.apply_update(&mut net, &grads).unwrap();
            assert_eq!(net.serialize_params()[0], p, "step {t}");
        }
        // Constant unit gradient: first-step magnitude is lr/(1+eps), i.e. ~lr.
        assert!((p / 5.0 + lr).abs() < 1e-6);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut net = one_layer_net(0.0);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: 0.1,
            momentum: 0.5,
            ..OptimizerConfig::default()
        };
        let mut opt = Optimizer::new(cfg, &net).unwrap();
        let grads = unit_grads(&net, 1.0);
        opt.apply_update(&mut net, &grads).unwrap();
        // v = 1, p = -0.1
        assert_eq!(net.serialize_params()[0], -0.1);
        opt.apply_update(&mut net, &grads).unwrap();
        // v = 1.5, p = -0.1 - 0.15
        assert!((net.serialize_params()[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut net = one_layer_net(0.0);
        let other = DenseNet::mlp(2, &[3], 1, &mut seeds::rng(0, "opt")).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default(), &net).unwrap();
        let grads = GradientSet::zeros_like(&other);
        let err = opt.apply_update(&mut net, &grads).unwrap_err();
        assert!(matches!(err, CoreError::Shape(_)));
    }
}
