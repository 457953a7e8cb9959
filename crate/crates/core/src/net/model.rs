use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward, relu_forward, BatchNormLayer, ConvLayer, Mode};
use super::Tensor4;
use crate::error::{Error, Result};
use crate::raster::{BANDS_10M, BANDS_20M};

/// Ablation switches for the network input stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    /// Feed the 10 m guide bands.
    pub use_z: bool,
    /// High-pass the inputs before they enter the network.
    pub use_hpf: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_z: true,
            use_hpf: true,
        }
    }
}

impl AblationFlags {
    pub fn input_channels(&self) -> usize {
        BANDS_20M.len() + if self.use_z { BANDS_10M.len() } else { 0 }
    }

    /// Row label used in comparison tables.
    pub fn label(&self) -> &'static str {
        match (self.use_z, self.use_hpf) {
            (true, true) => "proposed",
            (false, true) => "proposed (without z)",
            (true, false) => "proposed (no HPF)",
            (false, false) => "proposed (without z, no HPF)",
        }
    }
}

/// Hidden widths and kernel size of the three-layer CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden: [usize; 2],
    pub kernel: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: [48, 32],
            kernel: 3,
        }
    }
}

/// Input batch norm followed by conv-ReLU-conv-ReLU-conv, predicting the
/// detail that is added to the upsampled bands.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub bn: BatchNormLayer,
    pub layers: [ConvLayer; 3],
    pub flags: AblationFlags,
}

/// Activations kept by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    normalized: Tensor4,
    pre1: Tensor4,
    act1: Tensor4,
    pre2: Tensor4,
    act2: Tensor4,
    pub detail: Tensor4,
}

/// Gradients of every trainable parameter, in the model's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub weights: [Vec<f64>; 3],
    pub biases: [Vec<f64>; 3],
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.bn_gamma, &self.bn_beta];
        for i in 0..3 {
            v.push(&self.weights[i]);
            v.push(&self.biases[i]);
        }
        v
    }

    pub fn zeros_like(model: &FusionModel) -> Self {
        Self {
            bn_gamma: vec![0.0; model.bn.channels()],
            bn_beta: vec![0.0; model.bn.channels()],
            weights: model.layers.clone().map(|l| vec![0.0; l.weights.len()]),
            biases: model.layers.clone().map(|l| vec![0.0; l.bias.len()]),
        }
    }
}

impl FusionModel {
    /// Model with all convolution parameters zero and identity batch norm.
    pub fn zeroed(flags: AblationFlags, arch: Architecture) -> Result<Self> {
        let cin = flags.input_channels();
        let [h1, h2] = arch.hidden;
        Ok(Self {
            bn: BatchNormLayer::new(cin),
            layers: [
                ConvLayer::zeros(cin, h1, arch.kernel)?,
                ConvLayer::zeros(h1, h2, arch.kernel)?,
                ConvLayer::zeros(h2, BANDS_20M.len(), arch.kernel)?,
            ],
            flags,
        })
    }

    /// He-normal initialization. The output layer starts 100x smaller so the
    /// untrained network is close to the residual identity.
    pub fn initialized(flags: AblationFlags, arch: Architecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(flags, arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let fan_in = (layer.in_ch * layer.k * layer.k) as f64;
            let mut std = (2.0 / fan_in).sqrt();
            if li == 2 {
                std *= 0.01;
            }
            for w in layer.weights.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = z * std;
            }
        }
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: [self.layers[0].out_ch, self.layers[1].out_ch],
            kernel: self.layers[0].k,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    /// Checks the channel chain and the ablation contract.
    pub fn validate(&self) -> Result<()> {
        let cin = self.flags.input_channels();
        if self.bn.channels() != cin || self.layers[0].in_ch != cin {
            return Err(Error::FlagMismatch(format!(
                "flags {:?} need {} input channels, model has {}",
                self.flags,
                cin,
                self.layers[0].in_ch
            )));
        }
        if self.layers[1].in_ch != self.layers[0].out_ch
            || self.layers[2].in_ch != self.layers[1].out_ch
            || self.layers[2].out_ch != BANDS_20M.len()
        {
            return Err(Error::ShapeMismatch("inconsistent layer channel chain".into()));
        }
        for l in &self.layers {
            if l.k % 2 == 0 || l.weights.len() != l.weight_len() || l.bias.len() != l.out_ch {
                return Err(Error::ShapeMismatch("malformed conv layer".into()));
            }
        }
        let params_finite = self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()));
        if !params_finite || self.bn.running_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::ShapeMismatch("non-finite or negative parameters".into()));
        }
        Ok(())
    }

    /// Rejects models whose ablation flags differ from `expected`.
    pub fn check_flags(&self, expected: AblationFlags) -> Result<()> {
        if self.flags != expected {
            return Err(Error::FlagMismatch(format!(
                "model trained with {:?} ({} input channels), pipeline expects {:?} ({} channels)",
                self.flags,
                self.flags.input_channels(),
                expected,
                expected.input_channels()
            )));
        }
        Ok(())
    }

    /// Inference-mode detail prediction from an input stack.
    pub fn predict_detail(&self, input: &Tensor4) -> Result<Tensor4> {
        let h = self.bn.forward_infer(input)?;
        self.cnn_forward(h)
    }

    fn cnn_forward(&self, h: Tensor4) -> Result<Tensor4> {
        let a1 = relu_forward(&self.layers[0].forward(&h)?);
        let a2 = relu_forward(&self.layers[1].forward(&a1)?);
        self.layers[2].forward(&a2)
    }

    /// Train-mode forward pass; updates batch-norm running statistics.
    pub fn forward_train(&mut self, input: &Tensor4) -> Result<ForwardCache> {
        let normalized = self.bn.forward(input, Mode::Train)?;
        let pre1 = self.layers[0].forward(&normalized)?;
        let act1 = relu_forward(&pre1);
        let pre2 = self.layers[1].forward(&act1)?;
        let act2 = relu_forward(&pre2);
        let detail = self.layers[2].forward(&act2)?;
        Ok(ForwardCache {
            normalized,
            pre1,
            act1,
            pre2,
            act2,
            detail,
        })
    }

    pub fn backward(&self, cache: &ForwardCache, grad_detail: &Tensor4) -> Result<ModelGrads> {
        let g3 = self.layers[2].backward(&cache.act2, grad_detail)?;
        let d2 = relu_backward(&cache.pre2, &g3.grad_x)?;
        let g2 = self.layers[1].backward(&cache.act1, &d2)?;
        let d1 = relu_backward(&cache.pre1, &g2.grad_x)?;
        let g1 = self.layers[0].backward(&cache.normalized, &d1)?;
        let gbn = self.bn.backward(&g1.grad_x)?;
        Ok(ModelGrads {
            bn_gamma: gbn.gamma,
            bn_beta: gbn.beta,
            weights: [g1.weights, g2.weights, g3.weights],
            biases: [g1.bias, g2.bias, g3.bias],
        })
    }

    /// Trainable parameters in canonical order: BN gamma, BN beta, then
    /// weights and bias of each conv layer.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.bn.gamma, &self.bn.beta];
        for l in &self.layers {
            v.push(&l.weights);
            v.push(&l.bias);
        }
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.bn.gamma, &mut self.bn.beta];
        for l in self.layers.iter_mut() {
            v.push(&mut l.weights);
            v.push(&mut l.bias);
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Sets every conv weight and bias to zero.
    pub fn zero_convs(&mut self) {
        for l in self.layers.iter_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

/// SGD with classical momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum_coeff: f64,
    pub velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &FusionModel, learning_rate: f64, momentum_coeff: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", learning_rate)));
        }
        if !(0.0..1.0).contains(&momentum_coeff) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                momentum_coeff
            )));
        }
        Ok(Self {
            learning_rate,
            momentum_coeff,
            velocity: model.param_slices().iter().map(|s| vec![0.0; s.len()]).collect(),
        })
    }

    pub fn matches(&self, model: &FusionModel) -> bool {
        let shapes = model.param_slices();
        self.velocity.len() == shapes.len()
            && self.velocity.iter().zip(shapes).all(|(v, p)| v.len() == p.len())
    }
}

/// `v <- momentum * v - lr * g; p <- p + v` for every parameter.
pub fn sgd_step(model: &mut FusionModel, grads: &ModelGrads, opt: &mut OptimizerState) -> Result<()> {
    let g = grads.slices();
    if !opt.matches(model) || g.len() != opt.velocity.len() {
        return Err(Error::ShapeMismatch("optimizer state does not match model".into()));
    }
    for (gs, vs) in g.iter().zip(&opt.velocity) {
        if gs.len() != vs.len() {
            return Err(Error::ShapeMismatch("gradient does not match parameter".into()));
        }
    }
    let (lr, mu) = (opt.learning_rate, opt.momentum_coeff);
    for ((p, gs), vs) in model
        .param_slices_mut()
        .into_iter()
        .zip(g)
        .zip(opt.velocity.iter_mut())
    {
        for ((pv, gv), vv) in p.iter_mut().zip(gs).zip(vs.iter_mut()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}
