//! The nine named architectures, built from one shared configuration.
//!
//! All UNet-family models share the encoder/decoder skeleton: `depth`
//! encoder stages (block, then 2x maxpool), a bottleneck block, `depth`
//! decoder stages (2x transposed conv, skip concat, block), and a 1x1x1
//! classifier. Variants swap the stage block mechanism. The baseline is a
//! plain three-stage conv-pool-relu stack with a nearest upsample back to
//! input resolution.

use serde::{Deserialize, Serialize};

use crate::blocks::{
    aggregated_block, double_conv_block, inception_block_3d, residual_wrap, se_block, Block,
    BlockKind, BlockSpec, Conv3dLayer, LayerRow, Param, ParamInit, RowKind, TConv3dLayer,
};
use crate::ops::{self, BatchNormState, Mode, Padding};
use crate::tensor::{Element, Result, Tensor, TensorError};

/// The nine architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ArchId {
    Baseline,
    Unet3d,
    Unet3dInception,
    SeUnet3d,
    SeUnet3dInception,
    Uresnet3d,
    SeUresnet3d,
    Unext3d,
    Unext3dInception,
}

impl ArchId {
    pub const ALL: [ArchId; 9] = [
        ArchId::Baseline,
        ArchId::Unet3d,
        ArchId::Unet3dInception,
        ArchId::SeUnet3d,
        ArchId::SeUnet3dInception,
        ArchId::Uresnet3d,
        ArchId::SeUresnet3d,
        ArchId::Unext3d,
        ArchId::Unext3dInception,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::Baseline => "baseline",
            ArchId::Unet3d => "unet3d",
            ArchId::Unet3dInception => "unet3d_inception",
            ArchId::SeUnet3d => "se_unet3d",
            ArchId::SeUnet3dInception => "se_unet3d_inception",
            ArchId::Uresnet3d => "uresnet3d",
            ArchId::SeUresnet3d => "se_uresnet3d",
            ArchId::Unext3d => "unext3d",
            ArchId::Unext3dInception => "unext3d_inception",
        }
    }

    pub fn parse(s: &str) -> Result<ArchId> {
        ArchId::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                TensorError::Invalid(format!(
                    "unknown arch id {s:?}; expected one of: {}",
                    ArchId::ALL.map(|a| a.as_str()).join(", ")
                ))
            })
    }

    /// Aggregated-transform variants run at half width per branch.
    pub fn halves_filters(&self) -> bool {
        matches!(self, ArchId::Unext3d | ArchId::Unext3dInception)
    }
}

impl std::fmt::Display for ArchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shared model configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchId,
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_filters: usize,
    pub depth: usize,
    pub cardinality: usize,
    pub se_reduction: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: ArchId) -> Self {
        ModelConfig {
            arch,
            in_channels: 4,
            num_classes: 2,
            base_filters: 8,
            depth: 4,
            cardinality: 2,
            se_reduction: 4,
            seed: 0,
        }
    }

    /// Effective widest-to-narrowest stage widths, bottleneck last.
    fn stage_filters(&self) -> Vec<usize> {
        let base = if self.arch.halves_filters() {
            self.base_filters / 2
        } else {
            self.base_filters
        };
        (0..=self.depth).map(|i| base << i).collect()
    }

    /// Spatial divisibility the forward pass requires.
    pub fn required_divisor(&self) -> usize {
        match self.arch {
            ArchId::Baseline => 8, // three pooling stages
            _ => 1 << self.depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.num_classes < 2 || self.base_filters == 0 {
            return Err(TensorError::Invalid(format!(
                "model config needs in_channels >= 1, num_classes >= 2, base_filters >= 1; \
                 got {} / {} / {}",
                self.in_channels, self.num_classes, self.base_filters
            )));
        }
        if self.arch != ArchId::Baseline && self.depth == 0 {
            return Err(TensorError::Invalid("depth must be >= 1".into()));
        }
        if self.arch.halves_filters() && self.base_filters % 2 != 0 {
            return Err(TensorError::Invalid(format!(
                "{} halves the filter count; base_filters {} is odd",
                self.arch, self.base_filters
            )));
        }
        let filters = self.stage_filters();
        let needs_div4 = matches!(
            self.arch,
            ArchId::Unet3dInception | ArchId::SeUnet3dInception | ArchId::Unext3dInception
        );
        if needs_div4 {
            for &f in &filters {
                if f % 4 != 0 {
                    return Err(TensorError::Indivisible {
                        axis: 1,
                        extent: f,
                        divisor: 4,
                        context: format!("{} stage width (inception branches)", self.arch),
                    });
                }
            }
        }
        let has_se = matches!(
            self.arch,
            ArchId::SeUnet3d | ArchId::SeUnet3dInception | ArchId::SeUresnet3d
        );
        if has_se {
            for &f in &filters {
                if f % self.se_reduction != 0 {
                    return Err(TensorError::Indivisible {
                        axis: 1,
                        extent: f,
                        divisor: self.se_reduction,
                        context: format!("{} stage width (SE reduction)", self.arch),
                    });
                }
            }
        }
        if matches!(self.arch, ArchId::Unext3d | ArchId::Unext3dInception) && self.cardinality == 0
        {
            return Err(TensorError::Invalid("cardinality must be >= 1".into()));
        }
        Ok(())
    }
}

/// One encoder/decoder stage: the mechanism block plus an optional SE gate
/// applied after the block output (plain and inception variants; residual
/// variants carry their SE inside the block, before the add).
struct Stage<T: Element> {
    block: Block<T>,
    se: Option<Block<T>>,
}

impl<T: Element> Stage<T> {
    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.block.forward(x, mode)?;
        match &self.se {
            Some(se) => se.forward(&h, mode),
            None => Ok(h),
        }
    }

    fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.block.for_each_param(f);
        if let Some(se) = &self.se {
            se.for_each_param(f);
        }
    }

    fn for_each_norm_state(&self, f: &mut dyn FnMut(&str, &BatchNormState<T>)) {
        self.block.for_each_norm_state(f);
    }

    fn describe(&self, rows: &mut Vec<LayerRow>) {
        self.block.describe(rows);
        if let Some(se) = &self.se {
            se.describe(rows);
        }
    }
}

enum ModelGraph<T: Element> {
    Baseline {
        convs: Vec<Conv3dLayer<T>>,
        classifier: Conv3dLayer<T>,
    },
    Unet {
        encoders: Vec<Stage<T>>,
        bottleneck: Stage<T>,
        upconvs: Vec<TConv3dLayer<T>>,
        decoders: Vec<Stage<T>>,
        classifier: Conv3dLayer<T>,
    },
}

/// A built architecture with named parameters.
pub struct Model<T: Element> {
    pub config: ModelConfig,
    graph: ModelGraph<T>,
}

fn build_stage<T: Element>(
    config: &ModelConfig,
    cin: usize,
    cout: usize,
    prefix: &str,
    init: &mut ParamInit<T>,
) -> Result<Stage<T>> {
    let spec = |kind: BlockKind| {
        let mut s = BlockSpec::new(kind, cin, cout);
        s.se_reduction = config.se_reduction;
        s.cardinality = config.cardinality;
        s
    };
    let stage = match config.arch {
        ArchId::Baseline => unreachable!("baseline has no stages"),
        ArchId::Unet3d => Stage {
            block: double_conv_block(&spec(BlockKind::DoubleConv), prefix, init)?,
            se: None,
        },
        ArchId::Unet3dInception => Stage {
            block: inception_block_3d(&spec(BlockKind::Inception), prefix, init)?,
            se: None,
        },
        ArchId::SeUnet3d => Stage {
            block: double_conv_block(&spec(BlockKind::DoubleConv), prefix, init)?,
            se: Some(se_block(cout, config.se_reduction, &format!("{prefix}.se"), init)?),
        },
        ArchId::SeUnet3dInception => Stage {
            block: inception_block_3d(&spec(BlockKind::Inception), prefix, init)?,
            se: Some(se_block(cout, config.se_reduction, &format!("{prefix}.se"), init)?),
        },
        ArchId::Uresnet3d => {
            let inner = double_conv_block(&spec(BlockKind::DoubleConv), prefix, init)?;
            Stage {
                block: residual_wrap(inner, None, prefix, init)?,
                se: None,
            }
        }
        ArchId::SeUresnet3d => {
            let inner = double_conv_block(&spec(BlockKind::DoubleConv), prefix, init)?;
            let se = se_block(cout, config.se_reduction, &format!("{prefix}.se"), init)?;
            Stage {
                block: residual_wrap(inner, Some(se), prefix, init)?,
                se: None,
            }
        }
        ArchId::Unext3d => Stage {
            block: aggregated_block(&spec(BlockKind::Aggregated), prefix, init)?,
            se: None,
        },
        ArchId::Unext3dInception => {
            let mut s = spec(BlockKind::Aggregated);
            s.inner = Some(Box::new(BlockSpec::new(BlockKind::Inception, cin, cout)));
            Stage {
                block: aggregated_block(&s, prefix, init)?,
                se: None,
            }
        }
    };
    Ok(stage)
}

/// Deterministically construct a model from its config: same seed, same
/// parameter bytes.
pub fn build_model<T: Element>(config: &ModelConfig) -> Result<Model<T>> {
    config.validate()?;
    let mut init = ParamInit::<T>::new(config.seed);
    let graph = match config.arch {
        ArchId::Baseline => {
            // 3x (conv k3 same -> maxpool -> relu), widths bf, 2bf, 4bf,
            // nearest upsample back to input extents, 1x1x1 classifier.
            let widths = [
                config.base_filters,
                config.base_filters * 2,
                config.base_filters * 4,
            ];
            let mut convs = Vec::new();
            let mut cin = config.in_channels;
            for (i, &w) in widths.iter().enumerate() {
                convs.push(Conv3dLayer::new(
                    &format!("stage{}.conv", i + 1),
                    cin,
                    w,
                    3,
                    RowKind::Conv,
                    &mut init,
                ));
                cin = w;
            }
            let classifier = Conv3dLayer::new(
                "classifier",
                cin,
                config.num_classes,
                1,
                RowKind::ConvClassifier,
                &mut init,
            );
            ModelGraph::Baseline { convs, classifier }
        }
        _ => {
            let filters = config.stage_filters();
            let mut encoders = Vec::new();
            let mut cin = config.in_channels;
            for (i, &w) in filters[..config.depth].iter().enumerate() {
                encoders.push(build_stage(config, cin, w, &format!("enc{}", i + 1), &mut init)?);
                cin = w;
            }
            let bottleneck =
                build_stage(config, cin, filters[config.depth], "bottleneck", &mut init)?;
            let mut upconvs = Vec::new();
            let mut decoders = Vec::new();
            for i in (0..config.depth).rev() {
                let up_in = filters[i + 1];
                let skip = filters[i];
                upconvs.push(TConv3dLayer::new(
                    &format!("dec{}.up", i + 1),
                    up_in,
                    skip,
                    2,
                    2,
                    &mut init,
                ));
                decoders.push(build_stage(
                    config,
                    skip * 2,
                    skip,
                    &format!("dec{}", i + 1),
                    &mut init,
                )?);
            }
            let classifier = Conv3dLayer::new(
                "classifier",
                filters[0],
                config.num_classes,
                1,
                RowKind::ConvClassifier,
                &mut init,
            );
            ModelGraph::Unet {
                encoders,
                bottleneck,
                upconvs,
                decoders,
                classifier,
            }
        }
    };
    Ok(Model {
        config: config.clone(),
        graph,
    })
}

impl<T: Element> Model<T> {
    /// Forward pass to per-voxel class logits [N, num_classes, D, H, W].
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.shape().len() != 5 {
            return Err(TensorError::RankMismatch {
                expected: 5,
                got: x.shape().len(),
                context: "model input".into(),
            });
        }
        if x.shape()[1] != self.config.in_channels {
            return Err(TensorError::ShapeMismatch {
                axis: 1,
                expected: self.config.in_channels,
                got: x.shape()[1],
                context: "model input channels".into(),
            });
        }
        let div = self.config.required_divisor();
        for axis in 2..5 {
            if x.shape()[axis] % div != 0 {
                return Err(TensorError::Indivisible {
                    axis,
                    extent: x.shape()[axis],
                    divisor: div,
                    context: format!(
                        "{} input extents must be multiples of {div}",
                        self.config.arch
                    ),
                });
            }
        }
        match &self.graph {
            ModelGraph::Baseline { convs, classifier } => {
                let mut h = x.clone();
                for conv in convs {
                    let pooled = ops::maxpool3d(&conv.forward(&h)?, 2, 2, Padding::Same)?;
                    h = ops::relu(&pooled.output);
                }
                let factor = 1usize << convs.len();
                let up = ops::upsample_nearest(&h, [factor, factor, factor])?;
                classifier.forward(&up)
            }
            ModelGraph::Unet {
                encoders,
                bottleneck,
                upconvs,
                decoders,
                classifier,
            } => {
                let mut skips: Vec<Tensor<T>> = Vec::with_capacity(encoders.len());
                let mut h = x.clone();
                for stage in encoders {
                    let out = stage.forward(&h, mode)?;
                    let pooled = ops::maxpool3d(&out, 2, 2, Padding::Same)?;
                    skips.push(out);
                    h = pooled.output;
                }
                h = bottleneck.forward(&h, mode)?;
                for (up, dec) in upconvs.iter().zip(decoders) {
                    let skip = skips.pop().expect("one skip per decoder stage");
                    let upsampled = up.forward(&h)?;
                    let joined = ops::concat_channels(&[&skip, &upsampled])?;
                    h = dec.forward(&joined, mode)?;
                }
                classifier.forward(&h)
            }
        }
    }

    pub fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        match &self.graph {
            ModelGraph::Baseline { convs, classifier } => {
                for c in convs {
                    c.visit_params(f);
                }
                classifier.visit_params(f);
            }
            ModelGraph::Unet {
                encoders,
                bottleneck,
                upconvs,
                decoders,
                classifier,
            } => {
                for s in encoders {
                    s.for_each_param(f);
                }
                bottleneck.for_each_param(f);
                for (u, d) in upconvs.iter().zip(decoders) {
                    u.visit_params(f);
                    d.for_each_param(f);
                }
                classifier.visit_params(f);
            }
        }
    }

    pub fn for_each_norm_state(&self, f: &mut dyn FnMut(&str, &BatchNormState<T>)) {
        if let ModelGraph::Unet {
            encoders,
            bottleneck,
            decoders,
            ..
        } = &self.graph
        {
            for s in encoders {
                s.for_each_norm_state(f);
            }
            bottleneck.for_each_norm_state(f);
            for d in decoders {
                d.for_each_norm_state(f);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0usize;
        self.for_each_param(&mut |p| total += p.numel());
        total
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |p| names.push(p.name().to_string()));
        names
    }

    pub fn zero_grads(&self) {
        self.for_each_param(&mut |p| p.get().zero_grad());
    }

    /// Ordered layer table plus tallies.
    pub fn summarize(&self) -> ModelSummary {
        let mut rows = Vec::new();
        match &self.graph {
            ModelGraph::Baseline { convs, classifier } => {
                for (i, c) in convs.iter().enumerate() {
                    c.describe(&mut rows);
                    rows.push(LayerRow {
                        name: format!("stage{}.pool", i + 1),
                        kind: RowKind::MaxPool,
                        out_channels: c.out_channels(),
                        params: 0,
                    });
                }
                rows.push(LayerRow {
                    name: "upsample".into(),
                    kind: RowKind::Upsample,
                    out_channels: convs.last().map(|c| c.out_channels()).unwrap_or(0),
                    params: 0,
                });
                classifier.describe(&mut rows);
            }
            ModelGraph::Unet {
                encoders,
                bottleneck,
                upconvs,
                decoders,
                classifier,
            } => {
                for (i, s) in encoders.iter().enumerate() {
                    s.describe(&mut rows);
                    rows.push(LayerRow {
                        name: format!("enc{}.pool", i + 1),
                        kind: RowKind::MaxPool,
                        out_channels: s.block.out_channels,
                        params: 0,
                    });
                }
                bottleneck.describe(&mut rows);
                for (u, d) in upconvs.iter().zip(decoders) {
                    u.describe(&mut rows);
                    d.describe(&mut rows);
                }
                classifier.describe(&mut rows);
            }
        }
        let total_params: usize = rows.iter().map(|r| r.params).sum();
        debug_assert_eq!(total_params, self.param_count());
        let count = |kind: RowKind| rows.iter().filter(|r| r.kind == kind).count();
        let standard_convs = count(RowKind::Conv) + count(RowKind::ConvProjection);
        let projection_convs = count(RowKind::ConvProjection);
        let classifier_convs = count(RowKind::ConvClassifier);
        let transposed_convs = count(RowKind::TransposedConv);
        let maxpools = count(RowKind::MaxPool);
        let dense_layers = count(RowKind::Dense);
        ModelSummary {
            arch: self.config.arch,
            rows,
            total_params,
            standard_convs,
            projection_convs,
            classifier_convs,
            transposed_convs,
            maxpools,
            dense_layers,
        }
    }
}

/// Layer table with per-kind tallies. Convolutions are reported by role
/// (standard including 1x1x1 projections, transposed, classifier) rather
/// than folded into one disputed "layer" total.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub arch: ArchId,
    pub rows: Vec<LayerRow>,
    pub total_params: usize,
    pub standard_convs: usize,
    pub projection_convs: usize,
    pub classifier_convs: usize,
    pub transposed_convs: usize,
    pub maxpools: usize,
    pub dense_layers: usize,
}

impl ModelSummary {
    /// Total convolution count of any role.
    pub fn conv_tally(&self) -> usize {
        self.standard_convs + self.classifier_convs + self.transposed_convs
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut name_w = "layer".len();
        for r in &self.rows {
            name_w = name_w.max(r.name.len());
        }
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_w$}  {:<12}  {:>8}  {:>10}\n",
            "layer", "kind", "channels", "params"
        ));
        for r in &self.rows {
            let kind = match r.kind {
                RowKind::Conv => "conv",
                RowKind::ConvProjection => "conv(proj)",
                RowKind::ConvClassifier => "conv(cls)",
                RowKind::TransposedConv => "tconv",
                RowKind::MaxPool => "maxpool",
                RowKind::Upsample => "upsample",
                RowKind::BatchNorm => "batchnorm",
                RowKind::Dense => "dense",
            };
            out.push_str(&format!(
                "{:<name_w$}  {:<12}  {:>8}  {:>10}\n",
                r.name, kind, r.out_channels, r.params
            ));
        }
        out.push_str(&format!(
            "total params {} | convs {} (proj {}) + {} transposed + {} classifier | {} maxpools | {} dense\n",
            self.total_params,
            self.standard_convs,
            self.projection_convs,
            self.transposed_convs,
            self.classifier_convs,
            self.maxpools,
            self.dense_layers
        ));
        out
    }
}

/// Convenience wrapper matching the block-level counter.
pub fn param_count<T: Element>(model: &Model<T>) -> usize {
    model.param_count()
}
