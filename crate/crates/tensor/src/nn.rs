//! Parameters and the pre-activation convolution block.

use parking_lot::RwLock;
use rand::Rng;

use crate::error::{Result, TensorError};
use crate::ops;
use crate::real::Real;
use crate::tensor::Tensor;

/// How a forward pass treats parameters and batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Batch statistics (and running-estimate updates) instead of running
    /// estimates.
    pub train: bool,
    /// Attach parameters to the gradient graph.
    pub grad: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode { train: true, grad: true };
    pub const EVAL: Mode = Mode { train: false, grad: false };
}

/// A named, persistent array. Trainable parameters are gradient leaves;
/// the rest (running statistics) are plain buffers.
pub struct Param<T: Real = f32> {
    name: String,
    trainable: bool,
    value: RwLock<Tensor<T>>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let value = if trainable { value.into_leaf() } else { value.detach() };
        Self {
            name: name.into(),
            trainable,
            value: RwLock::new(value),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value.read().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value.read().numel()
    }

    /// Current value; attached to the graph when `mode.grad` is set.
    pub fn get(&self, mode: Mode) -> Tensor<T> {
        let v = self.value.read();
        if mode.grad && self.trainable {
            v.clone()
        } else {
            v.detach()
        }
    }

    /// The graph leaf that gradients are reported against.
    pub fn leaf(&self) -> Tensor<T> {
        self.value.read().clone()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.value.read().to_vec()
    }

    /// Replaces the values, keeping the shape. Trainable parameters become
    /// a fresh leaf.
    pub fn set(&self, data: Vec<T>) -> Result<()> {
        let mut v = self.value.write();
        let t = Tensor::new(data, v.shape())?;
        *v = if self.trainable { t.into_leaf() } else { t };
        Ok(())
    }
}

impl<T: Real> std::fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Param")
            .field("name", &self.name)
            .field("shape", &self.shape())
            .field("trainable", &self.trainable)
            .finish()
    }
}

/// Anything that owns parameters, listed in construction order.
pub trait Module<T: Real> {
    fn params(&self) -> Vec<&Param<T>>;

    fn trainable_params(&self) -> Vec<&Param<T>> {
        self.params().into_iter().filter(|p| p.trainable()).collect()
    }

    fn num_trainable(&self) -> usize {
        self.trainable_params().iter().map(|p| p.numel()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvDims {
    Two,
    Three,
}

/// One "conv" layer: optional batch normalization, optional ReLU, then a
/// bias-free convolution with `kernel / 2` zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dims: ConvDims,
    pub batchnorm: bool,
    pub relu: bool,
}

impl ConvSpec {
    /// 3×3 2-D conv preceded by BN and ReLU.
    pub fn conv2d(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            dims: ConvDims::Two,
            batchnorm: true,
            relu: true,
        }
    }

    /// 3×3×3 3-D conv preceded by BN and ReLU.
    pub fn conv3d(in_channels: usize, out_channels: usize) -> Self {
        Self {
            dims: ConvDims::Three,
            ..Self::conv2d(in_channels, out_channels)
        }
    }

    pub fn stride(self, stride: usize) -> Self {
        Self { stride, ..self }
    }

    /// Drops the BN/ReLU prefix (for layers reading raw inputs).
    pub fn plain(self) -> Self {
        Self {
            batchnorm: false,
            relu: false,
            ..self
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels, self.kernel, self.kernel];
        if self.dims == ConvDims::Three {
            s.push(self.kernel);
        }
        s
    }

    fn fan_in(&self) -> usize {
        self.weight_shape()[1..].iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::Invalid {
                op: "conv spec",
                msg: format!("{self:?}"),
            });
        }
        if self.dims == ConvDims::Three && self.stride != 1 {
            return Err(TensorError::Invalid {
                op: "conv spec",
                msg: "3-D convolutions are stride 1".into(),
            });
        }
        Ok(())
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

pub struct BatchNorm<T: Real = f32> {
    gamma: Param<T>,
    beta: Param<T>,
    running_mean: Param<T>,
    running_var: Param<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::full(&[channels], T::one()), true),
            beta: Param::new(format!("{prefix}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: Param::new(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: Param::new(format!("{prefix}.running_var"), Tensor::full(&[channels], T::one()), false),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let gamma = self.gamma.get(mode);
        let beta = self.beta.get(mode);
        let eps = T::lit(BN_EPS);
        if mode.train {
            let (y, stats) = ops::batch_norm_train(x, &gamma, &beta, eps)?;
            let m = T::lit(BN_MOMENTUM);
            let blend = |old: Vec<T>, new: &[T]| -> Vec<T> {
                old.iter().zip(new).map(|(o, n)| (T::one() - m) * *o + m * *n).collect()
            };
            self.running_mean.set(blend(self.running_mean.to_vec(), &stats.mean))?;
            self.running_var.set(blend(self.running_var.to_vec(), &stats.var))?;
            Ok(y)
        } else {
            ops::batch_norm_eval(
                x,
                &gamma,
                &beta,
                &self.running_mean.to_vec(),
                &self.running_var.to_vec(),
                eps,
            )
        }
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }
}

/// Convolution layer built from a [`ConvSpec`].
pub struct Conv<T: Real = f32> {
    spec: ConvSpec,
    bn: Option<BatchNorm<T>>,
    weight: Param<T>,
}

impl<T: Real> Conv<T> {
    /// Kaiming-uniform (fan-in) weights, unit BN scale, zero BN shift.
    pub fn new(name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        let shape = spec.weight_shape();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
        Self::with_weight(name, spec, Tensor::new(data, &shape)?)
    }

    pub fn zeroed(name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        Self::with_weight(name, spec, Tensor::zeros(&spec.weight_shape()))
    }

    fn with_weight(name: &str, spec: ConvSpec, weight: Tensor<T>) -> Result<Self> {
        Ok(Self {
            spec,
            bn: spec.batchnorm.then(|| BatchNorm::new(&format!("{name}.bn"), spec.in_channels)),
            weight: Param::new(format!("{name}.weight"), weight, true),
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = match &self.bn {
            Some(bn) => bn.forward(x, mode)?,
            None => x.clone(),
        };
        if self.spec.relu {
            h = ops::relu(&h);
        }
        let w = self.weight.get(mode);
        match self.spec.dims {
            ConvDims::Two => ops::conv2d(&h, &w, self.spec.stride),
            ConvDims::Three => ops::conv3d(&h, &w),
        }
    }
}

impl<T: Real> Module<T> for Conv<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = vec![&self.weight];
        if let Some(bn) = &self.bn {
            p.extend(bn.params());
        }
        p
    }
}
