//! The block mechanisms the architectures are composed from: double
//! convolution, inception, squeeze-excitation gating, residual wrapping,
//! and aggregated (multi-branch) transforms — plus parameter accounting.
//!
//! Blocks never change spatial extents; downsampling happens only through
//! explicit pooling in the model graph.

use std::sync::RwLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::ops::{self, BatchNormState, Mode, Padding};
use crate::tensor::{Element, Result, Tensor, TensorError};

/// A named, trainable tensor. The handle inside is replaced wholesale by
/// optimizer steps; gradients live on the tensor used during the forward
/// pass.
pub struct Param<T: Element> {
    name: String,
    value: RwLock<Tensor<T>>,
}

impl<T: Element> Param<T> {
    fn new(name: String, tensor: Tensor<T>) -> Self {
        Param {
            name,
            value: RwLock::new(tensor),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self) -> Tensor<T> {
        self.value.read().unwrap().clone()
    }

    pub fn set(&self, tensor: Tensor<T>) {
        let mut guard = self.value.write().unwrap();
        assert_eq!(guard.shape(), tensor.shape(), "param {} shape changed", self.name);
        *guard = tensor;
    }

    pub fn numel(&self) -> usize {
        self.value.read().unwrap().numel()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value.read().unwrap().shape().to_vec()
    }
}

/// Deterministic He-style initializer: weights are fan-in-scaled normals
/// drawn from a seeded stream in construction order; biases start at zero,
/// batchnorm at gamma 1 / beta 0.
pub struct ParamInit<T: Element> {
    rng: ChaCha8Rng,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> ParamInit<T> {
    pub fn new(seed: u64) -> Self {
        ParamInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
            _marker: std::marker::PhantomData,
        }
    }

    fn he_normal(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let numel: usize = shape.iter().product();
        let data: Vec<T> = (0..numel)
            .map(|_| T::from_f64(dist.sample(&mut self.rng)))
            .collect();
        Tensor::from_vec(shape, data, true)
    }

    fn conv_weight(&mut self, name: String, cout: usize, cin: usize, k: usize) -> Param<T> {
        let t = self.he_normal(vec![cout, cin, k, k, k], cin * k * k * k);
        Param::new(name, t)
    }

    fn dense_weight(&mut self, name: String, fin: usize, fout: usize) -> Param<T> {
        let t = self.he_normal(vec![fin, fout], fin);
        Param::new(name, t)
    }

    fn zeros(&mut self, name: String, shape: Vec<usize>) -> Param<T> {
        let numel: usize = shape.iter().product();
        Param::new(name, Tensor::from_vec(shape, vec![T::zero(); numel], true))
    }

    fn ones(&mut self, name: String, shape: Vec<usize>) -> Param<T> {
        let numel: usize = shape.iter().product();
        Param::new(name, Tensor::from_vec(shape, vec![T::one(); numel], true))
    }
}

/// Role of a layer in the summary tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Conv,
    ConvProjection,
    ConvClassifier,
    TransposedConv,
    MaxPool,
    Upsample,
    BatchNorm,
    Dense,
}

/// One line of a model/block summary.
#[derive(Debug, Clone, Serialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: RowKind,
    pub out_channels: usize,
    pub params: usize,
}

pub(crate) struct Conv3dLayer<T: Element> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: Padding,
    pub kind: RowKind,
}

impl<T: Element> Conv3dLayer<T> {
    pub fn new(
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        kind: RowKind,
        init: &mut ParamInit<T>,
    ) -> Self {
        Conv3dLayer {
            weight: init.conv_weight(format!("{prefix}.weight"), cout, cin, k),
            bias: init.zeros(format!("{prefix}.bias"), vec![cout]),
            stride: 1,
            padding: Padding::Same,
            kind,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv3d(x, &self.weight.get(), &self.bias.get(), self.stride, self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn params(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn describe(&self, rows: &mut Vec<LayerRow>) {
        rows.push(LayerRow {
            name: self.weight.name().trim_end_matches(".weight").to_string(),
            kind: self.kind,
            out_channels: self.out_channels(),
            params: self.params(),
        });
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
}

pub(crate) struct BatchNorm3dLayer<T: Element> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub state: BatchNormState<T>,
    pub name: String,
}

impl<T: Element> BatchNorm3dLayer<T> {
    pub fn new(prefix: &str, channels: usize, init: &mut ParamInit<T>) -> Self {
        BatchNorm3dLayer {
            gamma: init.ones(format!("{prefix}.gamma"), vec![channels]),
            beta: init.zeros(format!("{prefix}.beta"), vec![channels]),
            state: BatchNormState::new(channels),
            name: prefix.to_string(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        ops::batchnorm3d(x, &self.gamma.get(), &self.beta.get(), &self.state, mode)
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }

    pub fn describe(&self, rows: &mut Vec<LayerRow>) {
        rows.push(LayerRow {
            name: self.name.clone(),
            kind: RowKind::BatchNorm,
            out_channels: self.channels(),
            params: self.gamma.numel() + self.beta.numel(),
        });
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
}

pub(crate) struct TConv3dLayer<T: Element> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
}

impl<T: Element> TConv3dLayer<T> {
    pub fn new(
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        init: &mut ParamInit<T>,
    ) -> Self {
        let weight = Param::new(
            format!("{prefix}.weight"),
            init.he_normal(vec![cout, cin, k, k, k], cin * k * k * k),
        );
        TConv3dLayer {
            weight,
            bias: init.zeros(format!("{prefix}.bias"), vec![cout]),
            stride,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::transposed_conv3d(x, &self.weight.get(), &self.bias.get(), self.stride)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn params(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn describe(&self, rows: &mut Vec<LayerRow>) {
        rows.push(LayerRow {
            name: self.weight.name().trim_end_matches(".weight").to_string(),
            kind: RowKind::TransposedConv,
            out_channels: self.out_channels(),
            params: self.params(),
        });
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
}

pub(crate) struct DenseLayer<T: Element> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Element> DenseLayer<T> {
    pub fn new(prefix: &str, fin: usize, fout: usize, init: &mut ParamInit<T>) -> Self {
        DenseLayer {
            weight: init.dense_weight(format!("{prefix}.weight"), fin, fout),
            bias: init.zeros(format!("{prefix}.bias"), vec![fout]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::dense(x, &self.weight.get(), &self.bias.get())
    }

    pub fn params(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn describe(&self, rows: &mut Vec<LayerRow>) {
        rows.push(LayerRow {
            name: self.weight.name().trim_end_matches(".weight").to_string(),
            kind: RowKind::Dense,
            out_channels: self.weight.shape()[1],
            params: self.params(),
        });
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
}

/// Block mechanism selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    DoubleConv,
    Inception,
    Se,
    ResidualWrap,
    Aggregated,
}

/// Declarative description of one block.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub se_reduction: usize,
    pub cardinality: usize,
    pub inner: Option<Box<BlockSpec>>,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize) -> Self {
        BlockSpec {
            kind,
            in_channels,
            out_channels,
            kernel: 3,
            se_reduction: 4,
            cardinality: 2,
            inner: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::Invalid(
                "block channels must be positive".into(),
            ));
        }
        if self.kernel % 2 == 0 {
            return Err(TensorError::Invalid(format!(
                "block kernel must be odd for same padding, got {}",
                self.kernel
            )));
        }
        match self.kind {
            BlockKind::Inception => {
                if self.out_channels % 4 != 0 {
                    return Err(TensorError::Indivisible {
                        axis: 1,
                        extent: self.out_channels,
                        divisor: 4,
                        context: "inception block output channels (four equal branches)".into(),
                    });
                }
            }
            BlockKind::Se => {
                if self.out_channels % self.se_reduction != 0 {
                    return Err(TensorError::Indivisible {
                        axis: 1,
                        extent: self.out_channels,
                        divisor: self.se_reduction,
                        context: "squeeze-excitation channels vs reduction".into(),
                    });
                }
            }
            BlockKind::Aggregated => {
                if self.cardinality == 0 {
                    return Err(TensorError::Invalid(
                        "aggregated cardinality must be >= 1".into(),
                    ));
                }
                if let Some(inner) = &self.inner {
                    if inner.kind == BlockKind::Inception && self.out_channels % 4 != 0 {
                        return Err(TensorError::Indivisible {
                            axis: 1,
                            extent: self.out_channels,
                            divisor: 4,
                            context: "aggregated inception branch output channels".into(),
                        });
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

pub(crate) enum AggBranch<T: Element> {
    ConvPath {
        conv1: Conv3dLayer<T>,
        bn1: BatchNorm3dLayer<T>,
        conv2: Conv3dLayer<T>,
    },
    InceptionPath(InceptionCore<T>),
}

/// The six convolutions of one inception unit (no trailing activation).
pub(crate) struct InceptionCore<T: Element> {
    pub b1: Conv3dLayer<T>,
    pub b2a: Conv3dLayer<T>,
    pub b2b: Conv3dLayer<T>,
    pub b3a: Conv3dLayer<T>,
    pub b3b: Conv3dLayer<T>,
    pub b4: Conv3dLayer<T>,
}

impl<T: Element> InceptionCore<T> {
    fn new(prefix: &str, cin: usize, cout: usize, init: &mut ParamInit<T>) -> Self {
        let quarter = cout / 4;
        let bottleneck = ((cout + 7) / 8).max(1);
        InceptionCore {
            b1: Conv3dLayer::new(&format!("{prefix}.b1"), cin, quarter, 1, RowKind::Conv, init),
            b2a: Conv3dLayer::new(&format!("{prefix}.b2a"), cin, bottleneck, 1, RowKind::Conv, init),
            b2b: Conv3dLayer::new(&format!("{prefix}.b2b"), bottleneck, quarter, 3, RowKind::Conv, init),
            b3a: Conv3dLayer::new(&format!("{prefix}.b3a"), cin, bottleneck, 1, RowKind::Conv, init),
            b3b: Conv3dLayer::new(&format!("{prefix}.b3b"), bottleneck, quarter, 5, RowKind::Conv, init),
            b4: Conv3dLayer::new(&format!("{prefix}.b4"), cin, quarter, 1, RowKind::Conv, init),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p1 = self.b1.forward(x)?;
        let p2 = self.b2b.forward(&self.b2a.forward(x)?)?;
        let p3 = self.b3b.forward(&self.b3a.forward(x)?)?;
        let pooled = ops::maxpool3d(x, 3, 1, Padding::Same)?;
        let p4 = self.b4.forward(&pooled.output)?;
        ops::concat_channels(&[&p1, &p2, &p3, &p4])
    }

    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.b1.visit_params(f);
        self.b2a.visit_params(f);
        self.b2b.visit_params(f);
        self.b3a.visit_params(f);
        self.b3b.visit_params(f);
        self.b4.visit_params(f);
    }

    fn describe(&self, rows: &mut Vec<LayerRow>) {
        self.b1.describe(rows);
        self.b2a.describe(rows);
        self.b2b.describe(rows);
        self.b3a.describe(rows);
        self.b3b.describe(rows);
        self.b4.describe(rows);
    }
}

pub(crate) enum BlockNode<T: Element> {
    DoubleConv {
        conv1: Conv3dLayer<T>,
        bn1: BatchNorm3dLayer<T>,
        conv2: Conv3dLayer<T>,
        bn2: BatchNorm3dLayer<T>,
    },
    Inception {
        core: InceptionCore<T>,
        bn: BatchNorm3dLayer<T>,
    },
    Se {
        fc1: DenseLayer<T>,
        fc2: DenseLayer<T>,
    },
    Residual {
        inner: Box<Block<T>>,
        se: Option<Box<Block<T>>>,
        proj: Option<Conv3dLayer<T>>,
    },
    Aggregated {
        branches: Vec<AggBranch<T>>,
        bn: BatchNorm3dLayer<T>,
    },
}

/// A built block: structure plus named parameter tensors.
pub struct Block<T: Element> {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub(crate) node: BlockNode<T>,
}

impl<T: Element> Block<T> {
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match &self.node {
            BlockNode::DoubleConv { conv1, bn1, conv2, bn2 } => {
                let h = bn1.forward(&ops::relu(&conv1.forward(x)?), mode)?;
                bn2.forward(&ops::relu(&conv2.forward(&h)?), mode)
            }
            BlockNode::Inception { core, bn } => {
                bn.forward(&ops::relu(&core.forward(x)?), mode)
            }
            BlockNode::Se { fc1, fc2 } => {
                let squeezed = ops::global_avg_pool(x)?;
                let gate = ops::sigmoid(&fc2.forward(&ops::relu(&fc1.forward(&squeezed)?))?);
                ops::mul_channelwise(x, &gate)
            }
            BlockNode::Residual { inner, se, proj } => {
                let mut h = inner.forward(x, mode)?;
                if let Some(se) = se {
                    h = se.forward(&h, mode)?;
                }
                let shortcut = match proj {
                    Some(p) => p.forward(x)?,
                    None => x.clone(),
                };
                ops::add(&h, &shortcut)
            }
            BlockNode::Aggregated { branches, bn } => {
                let mut sum: Option<Tensor<T>> = None;
                for branch in branches {
                    let out = match branch {
                        AggBranch::ConvPath { conv1, bn1, conv2 } => {
                            let h = bn1.forward(&ops::relu(&conv1.forward(x)?), mode)?;
                            conv2.forward(&h)?
                        }
                        AggBranch::InceptionPath(core) => core.forward(x)?,
                    };
                    sum = Some(match sum {
                        Some(acc) => ops::add(&acc, &out)?,
                        None => out,
                    });
                }
                bn.forward(&ops::relu(&sum.expect("cardinality >= 1")), mode)
            }
        }
    }

    pub fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        match &self.node {
            BlockNode::DoubleConv { conv1, bn1, conv2, bn2 } => {
                conv1.visit_params(f);
                bn1.visit_params(f);
                conv2.visit_params(f);
                bn2.visit_params(f);
            }
            BlockNode::Inception { core, bn } => {
                core.visit_params(f);
                bn.visit_params(f);
            }
            BlockNode::Se { fc1, fc2 } => {
                fc1.visit_params(f);
                fc2.visit_params(f);
            }
            BlockNode::Residual { inner, se, proj } => {
                inner.for_each_param(f);
                if let Some(se) = se {
                    se.for_each_param(f);
                }
                if let Some(p) = proj {
                    p.visit_params(f);
                }
            }
            BlockNode::Aggregated { branches, bn } => {
                for b in branches {
                    match b {
                        AggBranch::ConvPath { conv1, bn1, conv2 } => {
                            conv1.visit_params(f);
                            bn1.visit_params(f);
                            conv2.visit_params(f);
                        }
                        AggBranch::InceptionPath(core) => core.visit_params(f),
                    }
                }
                bn.visit_params(f);
            }
        }
    }

    pub fn for_each_norm_state(&self, f: &mut dyn FnMut(&str, &BatchNormState<T>)) {
        match &self.node {
            BlockNode::DoubleConv { bn1, bn2, .. } => {
                f(&bn1.name, &bn1.state);
                f(&bn2.name, &bn2.state);
            }
            BlockNode::Inception { bn, .. } => f(&bn.name, &bn.state),
            BlockNode::Se { .. } => {}
            BlockNode::Residual { inner, se, .. } => {
                inner.for_each_norm_state(f);
                if let Some(se) = se {
                    se.for_each_norm_state(f);
                }
            }
            BlockNode::Aggregated { branches, bn } => {
                for b in branches {
                    if let AggBranch::ConvPath { bn1, .. } = b {
                        f(&bn1.name, &bn1.state);
                    }
                }
                f(&bn.name, &bn.state);
            }
        }
    }

    pub fn describe(&self, rows: &mut Vec<LayerRow>) {
        match &self.node {
            BlockNode::DoubleConv { conv1, bn1, conv2, bn2 } => {
                conv1.describe(rows);
                bn1.describe(rows);
                conv2.describe(rows);
                bn2.describe(rows);
            }
            BlockNode::Inception { core, bn } => {
                core.describe(rows);
                bn.describe(rows);
            }
            BlockNode::Se { fc1, fc2 } => {
                fc1.describe(rows);
                fc2.describe(rows);
            }
            BlockNode::Residual { inner, se, proj } => {
                inner.describe(rows);
                if let Some(se) = se {
                    se.describe(rows);
                }
                if let Some(p) = proj {
                    p.describe(rows);
                }
            }
            BlockNode::Aggregated { branches, bn } => {
                for b in branches {
                    match b {
                        AggBranch::ConvPath { conv1, bn1, conv2 } => {
                            conv1.describe(rows);
                            bn1.describe(rows);
                            conv2.describe(rows);
                        }
                        AggBranch::InceptionPath(core) => core.describe(rows),
                    }
                }
                bn.describe(rows);
            }
        }
    }
}

/// Total trainable parameter elements (batchnorm running stats excluded).
pub fn param_count<T: Element>(block: &Block<T>) -> usize {
    let mut total = 0usize;
    block.for_each_param(&mut |p| total += p.numel());
    total
}

/// CONV-ReLU-BATCHNORM twice; channel path Cin -> Cout -> Cout.
pub fn double_conv_block<T: Element>(
    spec: &BlockSpec,
    prefix: &str,
    init: &mut ParamInit<T>,
) -> Result<Block<T>> {
    spec.validate()?;
    if spec.kind != BlockKind::DoubleConv {
        return Err(TensorError::Invalid(format!(
            "double_conv_block on spec of kind {:?}",
            spec.kind
        )));
    }
    let (cin, cout, k) = (spec.in_channels, spec.out_channels, spec.kernel);
    Ok(Block {
        kind: BlockKind::DoubleConv,
        in_channels: cin,
        out_channels: cout,
        node: BlockNode::DoubleConv {
            conv1: Conv3dLayer::new(&format!("{prefix}.conv1"), cin, cout, k, RowKind::Conv, init),
            bn1: BatchNorm3dLayer::new(&format!("{prefix}.bn1"), cout, init),
            conv2: Conv3dLayer::new(&format!("{prefix}.conv2"), cout, cout, k, RowKind::Conv, init),
            bn2: BatchNorm3dLayer::new(&format!("{prefix}.bn2"), cout, init),
        },
    })
}

/// Four parallel branches of Cout/4 channels each (1x1x1; 1 -> 3 cubed;
/// 1 -> 5 cubed; same-padded 3-window maxpool -> 1x1x1), concatenated,
/// then relu and batchnorm. Bottleneck width is ceil(Cout/8), minimum 1.
pub fn inception_block_3d<T: Element>(
    spec: &BlockSpec,
    prefix: &str,
    init: &mut ParamInit<T>,
) -> Result<Block<T>> {
    spec.validate()?;
    if spec.kind != BlockKind::Inception {
        return Err(TensorError::Invalid(format!(
            "inception_block_3d on spec of kind {:?}",
            spec.kind
        )));
    }
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    Ok(Block {
        kind: BlockKind::Inception,
        in_channels: cin,
        out_channels: cout,
        node: BlockNode::Inception {
            core: InceptionCore::new(prefix, cin, cout, init),
            bn: BatchNorm3dLayer::new(&format!("{prefix}.bn"), cout, init),
        },
    })
}

/// Global pool -> dense C -> C/r -> relu -> dense C/r -> C -> sigmoid ->
/// per-channel gating of the input.
pub fn se_block<T: Element>(
    channels: usize,
    reduction: usize,
    prefix: &str,
    init: &mut ParamInit<T>,
) -> Result<Block<T>> {
    if reduction == 0 || channels % reduction != 0 {
        return Err(TensorError::Indivisible {
            axis: 1,
            extent: channels,
            divisor: reduction.max(1),
            context: "squeeze-excitation channels vs reduction".into(),
        });
    }
    let hidden = channels / reduction;
    Ok(Block {
        kind: BlockKind::Se,
        in_channels: channels,
        out_channels: channels,
        node: BlockNode::Se {
            fc1: DenseLayer::new(&format!("{prefix}.fc1"), channels, hidden, init),
            fc2: DenseLayer::new(&format!("{prefix}.fc2"), hidden, channels, init),
        },
    })
}

/// output = inner(x) + proj(x), with an optional SE gate applied to the
/// inner path before the add. proj is the identity when channel counts
/// already agree, otherwise a 1x1x1 convolution.
pub fn residual_wrap<T: Element>(
    inner: Block<T>,
    se: Option<Block<T>>,
    prefix: &str,
    init: &mut ParamInit<T>,
) -> Result<Block<T>> {
    let (cin, cout) = (inner.in_channels, inner.out_channels);
    if let Some(se) = &se {
        if se.in_channels != cout {
            return Err(TensorError::ShapeMismatch {
                axis: 1,
                expected: cout,
                got: se.in_channels,
                context: "residual SE gate channels".into(),
            });
        }
    }
    let proj = if cin == cout {
        None
    } else {
        Some(Conv3dLayer::new(
            &format!("{prefix}.proj"),
            cin,
            cout,
            1,
            RowKind::ConvProjection,
            init,
        ))
    };
    Ok(Block {
        kind: BlockKind::ResidualWrap,
        in_channels: cin,
        out_channels: cout,
        node: BlockNode::Residual {
            inner: Box::new(inner),
            se: se.map(Box::new),
            proj,
        },
    })
}

/// `cardinality` independently parameterized branches over the same input,
/// summed elementwise, then relu and batchnorm. Branch shape is the double
/// conv path by default, or an inception path when `spec.inner` selects it.
pub fn aggregated_block<T: Element>(
    spec: &BlockSpec,
    prefix: &str,
    init: &mut ParamInit<T>,
) -> Result<Block<T>> {
    spec.validate()?;
    if spec.kind != BlockKind::Aggregated {
        return Err(TensorError::Invalid(format!(
            "aggregated_block on spec of kind {:?}",
            spec.kind
        )));
    }
    let (cin, cout, k) = (spec.in_channels, spec.out_channels, spec.kernel);
    let inception_branches = spec
        .inner
        .as_deref()
        .map(|s| s.kind == BlockKind::Inception)
        .unwrap_or(false);
    let mut branches = Vec::with_capacity(spec.cardinality);
    for b in 0..spec.cardinality {
        let bp = format!("{prefix}.branch{b}");
        if inception_branches {
            branches.push(AggBranch::InceptionPath(InceptionCore::new(&bp, cin, cout, init)));
        } else {
            branches.push(AggBranch::ConvPath {
                conv1: Conv3dLayer::new(&format!("{bp}.conv1"), cin, cout, k, RowKind::Conv, init),
                bn1: BatchNorm3dLayer::new(&format!("{bp}.bn1"), cout, init),
                conv2: Conv3dLayer::new(&format!("{bp}.conv2"), cout, cout, k, RowKind::Conv, init),
            });
        }
    }
    Ok(Block {
        kind: BlockKind::Aggregated,
        in_channels: cin,
        out_channels: cout,
        node: BlockNode::Aggregated {
            branches,
            bn: BatchNorm3dLayer::new(&format!("{prefix}.bn"), cout, init),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::randn_tensor;

    fn init() -> ParamInit<f32> {
        ParamInit::new(1234)
    }

    #[test]
    fn double_conv_param_count_closed_form() {
        // Cin=4, Cout=8, k=3: (27*4*8+8) + (27*8*8+8) + 2*(2*8) = 2640
        let spec = BlockSpec::new(BlockKind::DoubleConv, 4, 8);
        let block = double_conv_block(&spec, "blk", &mut init()).unwrap();
        assert_eq!(param_count(&block), 2640);
    }

    #[test]
    fn double_conv_preserves_spatial_shape() {
        let spec = BlockSpec::new(BlockKind::DoubleConv, 4, 8);
        let block = double_conv_block(&spec, "blk", &mut init()).unwrap();
        let x: Tensor<f32> = randn_tensor(vec![1, 4, 8, 8, 8], 5, false);
        let y = block.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8, 8, 8]);
    }

    #[test]
    fn inception_contains_exactly_six_convs() {
        let spec = BlockSpec::new(BlockKind::Inception, 4, 8);
        let block = inception_block_3d(&spec, "inc", &mut init()).unwrap();
        let mut rows = Vec::new();
        block.describe(&mut rows);
        let convs = rows.iter().filter(|r| r.kind == RowKind::Conv).count();
        assert_eq!(convs, 6);
    }

    #[test]
    fn inception_forward_shape_and_param_saving() {
        let spec = BlockSpec::new(BlockKind::Inception, 4, 8);
        let block = inception_block_3d(&spec, "inc", &mut init()).unwrap();
        let x: Tensor<f32> = randn_tensor(vec![1, 4, 8, 8, 8], 6, false);
        let y = block.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8, 8, 8]);

        // at Cin=64, Cout=128 the inception block is strictly cheaper than
        // the double conv block
        let dc = double_conv_block(
            &BlockSpec::new(BlockKind::DoubleConv, 64, 128),
            "dc",
            &mut init(),
        )
        .unwrap();
        let inc = inception_block_3d(
            &BlockSpec::new(BlockKind::Inception, 64, 128),
            "inc",
            &mut init(),
        )
        .unwrap();
        assert!(param_count(&inc) < param_count(&dc));
    }

    #[test]
    fn inception_rejects_indivisible_output() {
        let spec = BlockSpec::new(BlockKind::Inception, 4, 6);
        assert!(inception_block_3d(&spec, "inc", &mut init()).is_err());
    }

    #[test]
    fn se_param_count_closed_form() {
        // C=16, r=4: 16*4+4 + 4*16+16 = 148
        let block = se_block::<f32>(16, 4, "se", &mut init()).unwrap();
        assert_eq!(param_count(&block), 148);
    }

    #[test]
    fn se_zero_weights_halve_input() {
        let block = se_block::<f32>(8, 4, "se", &mut init()).unwrap();
        block.for_each_param(&mut |p| {
            p.set(Tensor::from_vec(p.shape(), vec![0.0; p.numel()], true));
        });
        let x: Tensor<f32> = randn_tensor(vec![2, 8, 2, 2, 2], 8, false);
        let y = block.forward(&x, Mode::Eval).unwrap();
        for (xv, yv) in x.data().iter().zip(y.data()) {
            assert!((yv - 0.5 * xv).abs() < 1e-6);
        }
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn residual_projection_param_cost() {
        // Cin=4, Cout=8 projection adds 1*4*8+8 = 40 params
        let mut ini = init();
        let inner = double_conv_block(&BlockSpec::new(BlockKind::DoubleConv, 4, 8), "r", &mut ini)
            .unwrap();
        let inner_params = param_count(&inner);
        let wrapped = residual_wrap(inner, None, "r", &mut ini).unwrap();
        assert_eq!(param_count(&wrapped) - inner_params, 40);
    }

    #[test]
    fn residual_identity_when_inner_is_zero() {
        // zero parameters + eval-mode batchnorm with zero gamma make the
        // inner path vanish; equal channels mean the shortcut is identity
        let mut ini = init();
        let inner = double_conv_block(&BlockSpec::new(BlockKind::DoubleConv, 4, 4), "r", &mut ini)
            .unwrap();
        let wrapped = residual_wrap(inner, None, "r", &mut ini).unwrap();
        wrapped.for_each_param(&mut |p| {
            p.set(Tensor::from_vec(p.shape(), vec![0.0; p.numel()], true));
        });
        let x: Tensor<f32> = randn_tensor(vec![1, 4, 4, 4, 4], 9, false);
        let y = wrapped.forward(&x, Mode::Eval).unwrap();
        for (xv, yv) in x.data().iter().zip(y.data()) {
            assert_eq!(xv, yv);
        }
    }

    #[test]
    fn aggregated_cardinality_param_scaling() {
        let mut spec = BlockSpec::new(BlockKind::Aggregated, 4, 8);
        spec.cardinality = 1;
        let one = aggregated_block(&spec, "agg", &mut init()).unwrap();
        spec.cardinality = 2;
        let two = aggregated_block(&spec, "agg", &mut init()).unwrap();
        let branch_params = |b: &Block<f32>| {
            let mut total = 0;
            b.for_each_param(&mut |p| {
                if p.name().contains(".branch") {
                    total += p.numel();
                }
            });
            total
        };
        assert_eq!(branch_params(&two), 2 * branch_params(&one));
    }

    #[test]
    fn aggregated_tied_branches_double_preactivation() {
        let mut spec = BlockSpec::new(BlockKind::Aggregated, 3, 4);
        spec.cardinality = 2;
        let block = aggregated_block::<f32>(&spec, "agg", &mut init()).unwrap();
        // copy branch0 params onto branch1
        let mut sources: Vec<(String, Tensor<f32>)> = Vec::new();
        block.for_each_param(&mut |p| {
            if p.name().contains(".branch0.") {
                sources.push((p.name().replace(".branch0.", ".branch1."), p.get()));
            }
        });
        block.for_each_param(&mut |p| {
            for (target, t) in &sources {
                if p.name() == target {
                    p.set(t.detached(true));
                }
            }
        });
        spec.cardinality = 1;
        let single = aggregated_block::<f32>(&spec, "agg", &mut init()).unwrap();
        let mut b0: Vec<(String, Tensor<f32>)> = Vec::new();
        block.for_each_param(&mut |p| {
            if p.name().contains(".branch0.") || !p.name().contains(".branch") {
                b0.push((p.name().to_string(), p.get()));
            }
        });
        single.for_each_param(&mut |p| {
            for (name, t) in &b0 {
                if p.name() == *name {
                    p.set(t.detached(true));
                }
            }
        });
        // eval mode with fresh running stats (mean 0, var 1): the shared
        // relu/bn tail is elementwise and homogeneous in the pre-activation
        // scale, so tied branches give exactly 2x the single-branch output.
        let x: Tensor<f32> = randn_tensor(vec![1, 3, 3, 3, 3], 10, false);
        let two_out = block.forward(&x, Mode::Eval).unwrap();
        let one_out = single.forward(&x, Mode::Eval).unwrap();
        for (a, b) in two_out.data().iter().zip(one_out.data()) {
            assert!((a - 2.0 * b).abs() <= 2e-6 * b.abs().max(1.0), "{a} vs 2*{b}");
        }
    }

    #[test]
    fn aggregated_inception_branches() {
        let mut spec = BlockSpec::new(BlockKind::Aggregated, 4, 8);
        spec.cardinality = 2;
        spec.inner = Some(Box::new(BlockSpec::new(BlockKind::Inception, 4, 8)));
        let block = aggregated_block::<f32>(&spec, "agg", &mut init()).unwrap();
        let mut rows = Vec::new();
        block.describe(&mut rows);
        let convs = rows.iter().filter(|r| r.kind == RowKind::Conv).count();
        assert_eq!(convs, 12); // 6 per branch
        let x: Tensor<f32> = randn_tensor(vec![1, 4, 4, 4, 4], 12, false);
        let y = block.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 8, 4, 4, 4]);
    }

    #[test]
    fn param_names_are_unique_and_path_qualified() {
        let mut ini = init();
        let inner =
            double_conv_block(&BlockSpec::new(BlockKind::DoubleConv, 4, 8), "enc1", &mut ini)
                .unwrap();
        let se = se_block(8, 4, "enc1.se", &mut ini).unwrap();
        let wrapped = residual_wrap(inner, Some(se), "enc1", &mut ini).unwrap();
        let mut names = Vec::new();
        wrapped.for_each_param(&mut |p| names.push(p.name().to_string()));
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert!(names.iter().all(|n| n.starts_with("enc1.")));
        assert!(names.iter().any(|n| n.contains(".se.")));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let spec = BlockSpec::new(BlockKind::DoubleConv, 4, 8);
        let a = double_conv_block::<f32>(&spec, "blk", &mut ParamInit::new(7)).unwrap();
        let b = double_conv_block::<f32>(&spec, "blk", &mut ParamInit::new(7)).unwrap();
        let collect = |blk: &Block<f32>| {
            let mut all = Vec::new();
            blk.for_each_param(&mut |p| all.extend(p.get().data().to_vec()));
            all
        };
        assert_eq!(collect(&a), collect(&b));
    }
}
