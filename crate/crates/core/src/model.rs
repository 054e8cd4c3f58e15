//! The footprint-guided bounding-box regression network.
//!
//! A SAR patch and its footprint mask are stacked into a 2-channel input.
//! Plain convolutional stages (each `convs_per_stage` 3x3 convs + relu, then
//! a 2x2 max pool) extract a feature map; the footprint bounding box, mapped
//! through the cumulative stride, pools a fixed grid via RoI-align; a final
//! conv stage, global average pooling, and a 4-way fully connected layer emit
//! the regression delta. Decoding the delta against the footprint box yields
//! the predicted building box, scored with the CIoU loss.
//!
//! The RoI is the footprint bounding box exactly as given — one proposal per
//! building, no anchors, no scoring. Backbone depth and widths are free
//! parameters; the defaults fit desk-scale CPU training rather than a
//! pretrained large backbone.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::{ciou_loss, decode, BBox, BboxError, CIoUValue, Delta};
use crate::dataset::{Sample, Split};
use crate::nn::{
    channel_concat, conv2d_backward, conv2d_forward, fc_backward,
    fc_forward, global_average_pool, global_average_pool_backward, max_pool2d_backward,
    max_pool2d_forward, relu, relu_backward, roi_align_backward, roi_align_forward, NnError,
    PlateauSchedule, RoiAlignCfg, SgdState, Tensor3,
};
use crate::raster::{Dims, Grid32};
use crate::seedmix;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("duplicate building id in prediction set: {0}")]
    IdCollision(String),
    #[error("weights file: {0}")]
    Weights(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Bbox(#[from] BboxError),
}

/// Architecture of the regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channel widths of the backbone stages; each stage ends in a 2x2 max
    /// pool, so the cumulative stride is `2^len`.
    pub stage_channels: Vec<usize>,
    /// Channel width of the post-RoI conv stage.
    pub head_channels: usize,
    /// 3x3 convs per stage (backbone and head alike).
    pub convs_per_stage: usize,
    /// RoI-align output grid and sampling density.
    pub roi_size: usize,
    pub roi_samples: usize,
    /// Spatial size the network consumes; patches of a different size are
    /// rescaled to this before entering the network.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![16, 32, 64],
            head_channels: 128,
            convs_per_stage: 2,
            roi_size: 7,
            roi_samples: 2,
            input_size: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stage_channels.is_empty() {
            return Err(ModelError::Config("need at least one backbone stage".into()));
        }
        if self.stage_channels.iter().any(|&c| c == 0) || self.head_channels == 0 {
            return Err(ModelError::Config("zero-width stage".into()));
        }
        if self.convs_per_stage == 0 {
            return Err(ModelError::Config("convs_per_stage must be >= 1".into()));
        }
        if self.roi_size == 0 || self.roi_samples == 0 {
            return Err(ModelError::Config("roi output config".into()));
        }
        let stride = self.stride();
        if self.input_size == 0 || self.input_size % stride != 0 {
            return Err(ModelError::Config(format!(
                "input size {} must be divisible by the cumulative stride {stride}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Cumulative backbone stride in front of RoI-align.
    pub fn stride(&self) -> usize {
        1 << self.stage_channels.len()
    }

    fn roi_cfg(&self) -> RoiAlignCfg {
        RoiAlignCfg {
            out_size: self.roi_size,
            samples_per_bin: self.roi_samples,
        }
    }
}

/// Training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            plateau_factor: 0.1,
            plateau_patience: 3,
            plateau_min_delta: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    ci: usize,
    co: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    fn init(ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Self {
        // Variance-preserving (He) init: a plain relu CNN trained from
        // scratch attenuates signal exponentially with depth under a fixed
        // sigma = 0.01, leaving the output equal to the final bias. The
        // fixed small sigma is reserved for the output layer, which then
        // starts near the identity delta.
        let normal = Normal::new(0.0, (2.0 / (ci * 9) as f64).sqrt()).unwrap();
        Self {
            ci,
            co,
            weight: (0..co * ci * 9).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; co],
        }
    }
}

/// The assembled network.
#[derive(Debug, Clone)]
pub struct BbrModel {
    pub cfg: ModelConfig,
    stages: Vec<Vec<ConvLayer>>,
    head: Vec<ConvLayer>,
    fc_weight: Vec<f64>,
    fc_bias: Vec<f64>,
}

/// Per-parameter gradients, aligned with [`BbrModel::param_names`] order.
pub type GradVec = Vec<Vec<f64>>;

struct StageCache {
    conv_inputs: Vec<Tensor3>,
    pre_relu: Vec<Tensor3>,
    pool_in_shape: (usize, usize, usize),
    pool_argmax: Vec<u32>,
}

struct ForwardCache {
    stages: Vec<StageCache>,
    feat_shape: (usize, usize, usize),
    roi: BBox,
    head_inputs: Vec<Tensor3>,
    head_pre_relu: Vec<Tensor3>,
    gap_in_shape: (usize, usize, usize),
    fc_input: Vec<f64>,
}

/// One sample prepared for the network: stacked input tensor, RoI and target
/// boxes in network coordinates, and the patch -> network scale factors.
pub struct ModelInput {
    pub tensor: Tensor3,
    pub roi: BBox,
    pub gt: Option<BBox>,
    /// `(scale_x, scale_y)` from patch-local to network coordinates.
    pub scale: (f64, f64),
}

/// Bilinear rescale of a raster to new dims (used when dataset patches are
/// smaller than the network input, the stripmap-style runs).
fn bilinear_resize(src: &Grid32, dims: Dims) -> Grid32 {
    if src.dims == dims {
        return src.clone();
    }
    let sy = src.dims.rows as f64 / dims.rows as f64;
    let sx = src.dims.cols as f64 / dims.cols as f64;
    let mut out = Grid32::filled(dims, 0.0);
    for r in 0..dims.rows {
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.dims.rows - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src.dims.rows - 1);
        let ty = fy - y0 as f64;
        for c in 0..dims.cols {
            let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.dims.cols - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src.dims.cols - 1);
            let tx = fx - x0 as f64;
            let v = (1.0 - ty) * (1.0 - tx) * src.at(y0, x0) as f64
                + (1.0 - ty) * tx * src.at(y0, x1) as f64
                + ty * (1.0 - tx) * src.at(y1, x0) as f64
                + ty * tx * src.at(y1, x1) as f64;
            out.set(r, c, v as f32);
        }
    }
    out
}

/// Nearest-neighbor rescale followed by re-thresholding at 0.5, for masks.
fn nearest_resize_mask(src: &Grid32, dims: Dims) -> Grid32 {
    if src.dims == dims {
        return src.clone();
    }
    let sy = src.dims.rows as f64 / dims.rows as f64;
    let sx = src.dims.cols as f64 / dims.cols as f64;
    let mut out = Grid32::filled(dims, 0.0);
    for r in 0..dims.rows {
        let y = (((r as f64 + 0.5) * sy) as usize).min(src.dims.rows - 1);
        for c in 0..dims.cols {
            let x = (((c as f64 + 0.5) * sx) as usize).min(src.dims.cols - 1);
            out.set(r, c, if src.at(y, x) >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    out
}

fn scale_box(b: &BBox, sx: f64, sy: f64) -> BBox {
    BBox {
        cx: b.cx * sx,
        cy: b.cy * sy,
        w: b.w * sx,
        h: b.h * sy,
    }
}

/// Stack patch and mask into the 2-channel network input, rescaling to the
/// network's input size when they differ.
pub fn prepare_input(sample: &Sample, input_size: usize) -> Result<ModelInput, ModelError> {
    let dims = Dims::new(input_size, input_size);
    let sx = input_size as f64 / sample.patch.dims.cols as f64;
    let sy = input_size as f64 / sample.patch.dims.rows as f64;
    let patch = bilinear_resize(&sample.patch, dims);
    let mask = nearest_resize_mask(&sample.mask, dims);
    let to_tensor = |g: &Grid32| {
        Tensor3::from_vec(
            1,
            dims.rows,
            dims.cols,
            g.data.iter().map(|&v| v as f64).collect(),
        )
    };
    let tensor = channel_concat(&to_tensor(&patch), &to_tensor(&mask))?;
    Ok(ModelInput {
        tensor,
        roi: scale_box(&sample.footprint_box, sx, sy),
        gt: Some(scale_box(&sample.gt_box, sx, sy)),
        scale: (sx, sy),
    })
}

impl BbrModel {
    /// Initialize with weights drawn from N(0, 0.01^2), biases zero.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seedmix::mix(seed, 0x6d6f64656c));
        let mut stages = Vec::new();
        let mut ci = 2usize;
        for &co in &cfg.stage_channels {
            let mut convs = Vec::new();
            for _ in 0..cfg.convs_per_stage {
                convs.push(ConvLayer::init(ci, co, &mut rng));
                ci = co;
            }
            stages.push(convs);
        }
        let mut head = Vec::new();
        for _ in 0..cfg.convs_per_stage {
            head.push(ConvLayer::init(ci, cfg.head_channels, &mut rng));
            ci = cfg.head_channels;
        }
        let normal = Normal::new(0.0, 0.01).unwrap();
        let fc_weight = (0..4 * cfg.head_channels)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(Self {
            cfg,
            stages,
            head,
            fc_weight,
            fc_bias: vec![0.0; 4],
        })
    }

    /// Parameter slot names in serialization/update order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for j in 0..stage.len() {
                names.push(format!("stage{i}.conv{j}.weight"));
                names.push(format!("stage{i}.conv{j}.bias"));
            }
        }
        for j in 0..self.head.len() {
            names.push(format!("head.conv{j}.weight"));
            names.push(format!("head.conv{j}.bias"));
        }
        names.push("fc.weight".to_string());
        names.push("fc.bias".to_string());
        names
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for stage in &self.stages {
            for conv in stage {
                shapes.push(vec![conv.co, conv.ci, 3, 3]);
                shapes.push(vec![conv.co]);
            }
        }
        for conv in &self.head {
            shapes.push(vec![conv.co, conv.ci, 3, 3]);
            shapes.push(vec![conv.co]);
        }
        shapes.push(vec![4, self.cfg.head_channels]);
        shapes.push(vec![4]);
        shapes
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for stage in &self.stages {
            for conv in stage {
                out.push(&conv.weight);
                out.push(&conv.bias);
            }
        }
        for conv in &self.head {
            out.push(&conv.weight);
            out.push(&conv.bias);
        }
        out.push(&self.fc_weight);
        out.push(&self.fc_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for stage in &mut self.stages {
            for conv in stage {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
            }
        }
        for conv in &mut self.head {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Zero the head output so the network starts by predicting the identity
    /// delta; used by tests that pin the decoded box to the footprint box.
    pub fn zero_fc(&mut self) {
        self.fc_weight.iter_mut().for_each(|w| *w = 0.0);
        self.fc_bias.iter_mut().for_each(|b| *b = 0.0);
    }

    fn forward_cached(&self, input: &Tensor3, roi: &BBox) -> Result<(Delta, ForwardCache), ModelError> {
        if input.h != self.cfg.input_size || input.w != self.cfg.input_size || input.c != 2 {
            return Err(ModelError::Config(format!(
                "input tensor is {}x{}x{}, expected 2x{s}x{s}",
                input.c,
                input.h,
                input.w,
                s = self.cfg.input_size
            )));
        }
        let mut x = input.clone();
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let mut conv_inputs = Vec::with_capacity(stage.len());
            let mut pre_relu = Vec::with_capacity(stage.len());
            for conv in stage {
                let z = conv2d_forward(&x, &conv.weight, conv.co, 3, &conv.bias, 1, 1)?;
                conv_inputs.push(std::mem::replace(&mut x, relu(&z)));
                pre_relu.push(z);
            }
            let pool_in_shape = (x.c, x.h, x.w);
            let (pooled, argmax) = max_pool2d_forward(&x)?;
            x = pooled;
            stage_caches.push(StageCache {
                conv_inputs,
                pre_relu,
                pool_in_shape,
                pool_argmax: argmax,
            });
        }

        let feat_shape = (x.c, x.h, x.w);
        let spatial_scale = 1.0 / self.cfg.stride() as f64;
        let mut y = roi_align_forward(&x, roi, spatial_scale, self.cfg.roi_cfg())?;

        let mut head_inputs = Vec::with_capacity(self.head.len());
        let mut head_pre_relu = Vec::with_capacity(self.head.len());
        for conv in &self.head {
            let z = conv2d_forward(&y, &conv.weight, conv.co, 3, &conv.bias, 1, 1)?;
            head_inputs.push(std::mem::replace(&mut y, relu(&z)));
            head_pre_relu.push(z);
        }
        let gap_in_shape = (y.c, y.h, y.w);
        let fc_input = global_average_pool(&y);
        let out = fc_forward(&fc_input, &self.fc_weight, &self.fc_bias)?;

        Ok((
            Delta::from_array([out[0], out[1], out[2], out[3]]),
            ForwardCache {
                stages: stage_caches,
                feat_shape,
                roi: *roi,
                head_inputs,
                head_pre_relu,
                gap_in_shape,
                fc_input,
            },
        ))
    }

    /// Forward pass only: the regression delta for a prepared input.
    pub fn forward(&self, input: &ModelInput) -> Result<Delta, ModelError> {
        Ok(self.forward_cached(&input.tensor, &input.roi)?.0)
    }

    fn zero_grads(&self) -> GradVec {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Reverse pass from a delta gradient; returns per-parameter gradients in
    /// `param_names` order.
    fn backward(&self, cache: &ForwardCache, d_delta: [f64; 4]) -> Result<GradVec, ModelError> {
        let mut grads = self.zero_grads();
        let n_stage_slots: usize = self.stages.iter().map(|s| 2 * s.len()).sum();

        // FC and GAP.
        let (d_gap, d_fc_w, d_fc_b) = fc_backward(&cache.fc_input, &self.fc_weight, &d_delta)?;
        let n = grads.len();
        grads[n - 2] = d_fc_w;
        grads[n - 1] = d_fc_b;
        let mut dy = global_average_pool_backward(cache.gap_in_shape, &d_gap)?;

        // Head convs in reverse.
        for (j, conv) in self.head.iter().enumerate().rev() {
            let dz = relu_backward(&cache.head_pre_relu[j], &dy)?;
            let g = conv2d_backward(&cache.head_inputs[j], &conv.weight, conv.co, 3, 1, 1, &dz)?;
            let slot = n_stage_slots + 2 * j;
            grads[slot] = g.dkernel;
            grads[slot + 1] = g.dbias;
            dy = g.dinput;
        }

        // RoI-align back into the feature map.
        let spatial_scale = 1.0 / self.cfg.stride() as f64;
        let mut dx = roi_align_backward(
            cache.feat_shape,
            &cache.roi,
            spatial_scale,
            self.cfg.roi_cfg(),
            &dy,
        )?;

        // Backbone stages in reverse.
        let mut slot = n_stage_slots;
        for (stage, cache_s) in self.stages.iter().zip(&cache.stages).rev() {
            dx = max_pool2d_backward(cache_s.pool_in_shape, &cache_s.pool_argmax, &dx)?;
            slot -= 2 * stage.len();
            for (j, conv) in stage.iter().enumerate().rev() {
                let dz = relu_backward(&cache_s.pre_relu[j], &dx)?;
                let g =
                    conv2d_backward(&cache_s.conv_inputs[j], &conv.weight, conv.co, 3, 1, 1, &dz)?;
                grads[slot + 2 * j] = g.dkernel;
                grads[slot + 2 * j + 1] = g.dbias;
                dx = g.dinput;
            }
        }
        Ok(grads)
    }

    /// Loss of one prepared sample plus the full parameter gradient.
    ///
    /// The predicted box is `decode(roi, delta)`; the loss is the CIoU loss
    /// against the ground-truth box, with gradients flowing through the
    /// decode parameterization and the whole network.
    pub fn loss(&self, input: &ModelInput) -> Result<SampleLoss, ModelError> {
        let gt = input
            .gt
            .ok_or_else(|| ModelError::Config("loss needs a ground-truth box".into()))?;
        let (delta, cache) = self.forward_cached(&input.tensor, &input.roi)?;
        let pred = decode(&input.roi, &delta)?;
        let value = ciou_loss(&pred, &gt);
        // Chain rule through decode: cx = roi.cx + dx*roi.w, w = roi.w*e^dw.
        let g = value.gradient;
        let d_delta = [
            g[0] * input.roi.w,
            g[1] * input.roi.h,
            g[2] * pred.w,
            g[3] * pred.h,
        ];
        let grads = self.backward(&cache, d_delta)?;
        Ok(SampleLoss {
            value,
            pred_box: pred,
            grads,
        })
    }

    /// Forward-only variant of [`Self::loss`] evaluating the frozen-alpha
    /// objective; the finite-difference model gradcheck differences this.
    pub fn loss_value_alpha_frozen(&self, input: &ModelInput, alpha: f64) -> Result<f64, ModelError> {
        let gt = input
            .gt
            .ok_or_else(|| ModelError::Config("loss needs a ground-truth box".into()))?;
        let (delta, _) = self.forward_cached(&input.tensor, &input.roi)?;
        let pred = decode(&input.roi, &delta)?;
        Ok(crate::bbox::ciou_loss_alpha_frozen(&pred, &gt, alpha))
    }

    /// Flatten all parameters into one vector (gradcheck plumbing).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in self.params() {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.num_params() {
            return Err(ModelError::Config(format!(
                "expected {} params, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Loss output for one sample.
pub struct SampleLoss {
    pub value: CIoUValue,
    pub pred_box: BBox,
    pub grads: GradVec,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
}

/// Train on the train-split samples with SGD + momentum + weight decay and
/// the reduce-on-plateau schedule. Samples are reshuffled every epoch with a
/// seeded generator; gradients of a mini-batch are averaged in sample order,
/// so the run is reproducible bit for bit.
pub fn train(
    samples: &[Sample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(BbrModel, Vec<EpochLog>), ModelError> {
    let train_idx: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].split == Split::Train)
        .collect();
    if train_idx.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    let mut model = BbrModel::init(model_cfg.clone(), train_cfg.seed)?;
    let inputs: Vec<ModelInput> = train_idx
        .iter()
        .map(|&i| prepare_input(&samples[i], model_cfg.input_size))
        .collect::<Result<_, _>>()?;

    let mut sgd = SgdState::new(train_cfg.lr, train_cfg.momentum, train_cfg.weight_decay)?;
    let mut plateau = PlateauSchedule::new(
        train_cfg.plateau_factor,
        train_cfg.plateau_patience,
        train_cfg.plateau_min_delta,
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seedmix::mix(train_cfg.seed, 0x73687566));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut log = Vec::with_capacity(train_cfg.epochs);
    let mut lr = train_cfg.lr;

    for epoch in 1..=train_cfg.epochs {
        shuffle(&mut order, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in order.chunks(train_cfg.batch_size.max(1)).enumerate() {
            let mut batch_grads: Option<GradVec> = None;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let s = model.loss(&inputs[i])?;
                batch_loss += s.value.loss;
                match batch_grads.as_mut() {
                    None => batch_grads = Some(s.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&s.grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += *y;
                            }
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = batch_grads.expect("non-empty batch");
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            sgd.lr = lr;
            for (slot, (param, grad)) in model.params_mut().into_iter().zip(&grads).enumerate() {
                sgd.step(slot, param, grad)?;
            }
        }
        let mean_loss = epoch_loss / inputs.len() as f64;
        log.push(EpochLog {
            epoch,
            mean_loss,
            lr,
        });
        lr = plateau.update(mean_loss, lr)?;
    }
    Ok((model, log))
}

/// Fisher-Yates with the training RNG.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Predicted box for every sample of the given split, mapped back to scene
/// coordinates. Ids must be unique within the split (the dataset builder
/// already deduplicates the test split).
pub fn predict(
    model: &BbrModel,
    samples: &[Sample],
    split: Split,
) -> Result<Vec<(String, BBox)>, ModelError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for s in samples.iter().filter(|s| s.split == split) {
        if !seen.insert(s.building_id.clone()) {
            return Err(ModelError::IdCollision(s.building_id.clone()));
        }
        let input = prepare_input(s, model.cfg.input_size)?;
        let delta = model.forward(&input)?;
        let pred_model = decode(&input.roi, &delta)?;
        // Back to patch-local, then to scene coordinates.
        let (sx, sy) = input.scale;
        let patch_local = scale_box(&pred_model, 1.0 / sx, 1.0 / sy);
        let scene_box = patch_local.translated(s.patch_origin.1 as f64, s.patch_origin.0 as f64);
        out.push((s.building_id.clone(), scene_box));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Weights serialization: magic "BBRW", version u32, count u32, then named
// sections (name length u16, name bytes, shape rank u8, dims u32 each,
// float32 little-endian data).
// ---------------------------------------------------------------------------

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BBRW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights(path: &Path, model: &BbrModel) -> Result<(), ModelError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let names = model.param_names();
    let shapes = model.param_shapes();
    let params = model.params();
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for ((name, shape), data) in names.iter().zip(&shapes).zip(&params) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_weights(path: &Path, cfg: &ModelConfig) -> Result<BbrModel, ModelError> {
    let bytes = std::fs::read(path)?;
    let fail = |msg: &str| ModelError::Weights(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[0..4] != WEIGHTS_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;

    let mut model = BbrModel::init(cfg.clone(), 0)?;
    let names = model.param_names();
    let shapes = model.param_shapes();
    if count != names.len() {
        return Err(fail(&format!(
            "has {count} sections, config expects {}",
            names.len()
        )));
    }
    let mut offset = 12usize;
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(count);
    for (name, shape) in names.iter().zip(&shapes) {
        let need = |n: usize, offset: usize| -> Result<(), ModelError> {
            if offset + n > bytes.len() {
                Err(ModelError::Weights(format!(
                    "{}: truncated section {name}",
                    path.display()
                )))
            } else {
                Ok(())
            }
        };
        need(2, offset)?;
        let name_len = u16::from_le_bytes(bytes[offset..offset + 2].try_into().unwrap()) as usize;
        offset += 2;
        need(name_len, offset)?;
        let got_name = std::str::from_utf8(&bytes[offset..offset + name_len])
            .map_err(|_| fail("section name is not utf-8"))?;
        if got_name != name {
            return Err(fail(&format!("section {got_name:?}, expected {name:?}")));
        }
        offset += name_len;
        need(1, offset)?;
        let rank = bytes[offset] as usize;
        offset += 1;
        need(4 * rank, offset)?;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize);
            offset += 4;
        }
        if &dims != shape {
            return Err(fail(&format!(
                "section {name}: shape {dims:?}, config expects {shape:?}"
            )));
        }
        let n: usize = dims.iter().product();
        need(4 * n, offset)?;
        let data = bytes[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        offset += 4 * n;
        values.push(data);
    }
    if offset != bytes.len() {
        return Err(fail("trailing bytes after the last section"));
    }
    for (param, value) in model.params_mut().into_iter().zip(values) {
        *param = value;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            stage_channels: vec![2],
            head_channels: 3,
            convs_per_stage: 1,
            roi_size: 3,
            roi_samples: 1,
            input_size: 16,
        }
    }

    fn toy_sample(patch_size: usize) -> Sample {
        let dims = Dims::new(patch_size, patch_size);
        let mut patch = Grid32::filled(dims, 0.1);
        let mut mask = Grid32::filled(dims, 0.0);
        for r in 4..10 {
            for c in 5..9 {
                patch.set(r, c, 0.8);
                mask.set(r, c, 1.0);
            }
        }
        Sample {
            building_id: "toy".into(),
            patch_origin: (0, 0),
            split: Split::Train,
            footprint_box: BBox::new(7.0, 7.0, 4.0, 6.0).unwrap(),
            // Box edges keep a clear margin from the footprint box edges so
            // finite differences stay away from the IoU min/max kinks.
            gt_box: BBox::new(5.5, 6.0, 6.0, 7.0).unwrap(),
            true_height: 5.0,
            patch,
            mask,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = ModelConfig::default();
        c.stage_channels.clear();
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.input_size = 250; // not divisible by the stride 8
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_head_predicts_identity_delta() {
        let mut model = BbrModel::init(tiny_cfg(), 3).unwrap();
        model.zero_fc();
        let sample = toy_sample(16);
        let input = prepare_input(&sample, 16).unwrap();
        let delta = model.forward(&input).unwrap();
        assert_eq!(delta.as_array(), [0.0; 4]);
        let decoded = decode(&input.roi, &delta).unwrap();
        assert_eq!(decoded, input.roi);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = BbrModel::init(tiny_cfg(), 3).unwrap();
        let input = prepare_input(&toy_sample(16), 16).unwrap();
        let a = model.forward(&input).unwrap();
        let b = model.forward(&input).unwrap();
        assert_eq!(a, b);
        let model2 = BbrModel::init(tiny_cfg(), 3).unwrap();
        assert_eq!(model2.forward(&input).unwrap(), a);
    }

    #[test]
    fn zero_head_loss_equals_footprint_vs_gt_ciou() {
        let mut model = BbrModel::init(tiny_cfg(), 3).unwrap();
        model.zero_fc();
        let sample = toy_sample(16);
        let input = prepare_input(&sample, 16).unwrap();
        let s = model.loss(&input).unwrap();
        let direct = ciou_loss(&input.roi, &input.gt.unwrap());
        assert!((s.value.loss - direct.loss).abs() < 1e-12);
    }

    #[test]
    fn full_model_gradcheck() {
        // Every parameter of a sub-500-parameter model against central
        // differences of the frozen-alpha objective.
        let model = BbrModel::init(tiny_cfg(), 11).unwrap();
        assert!(model.num_params() <= 500, "{} params", model.num_params());
        let sample = toy_sample(16);
        let input = prepare_input(&sample, 16).unwrap();
        let s = model.loss(&input).unwrap();
        let alpha = s.value.alpha;
        let mut analytic = Vec::new();
        for g in &s.grads {
            analytic.extend_from_slice(g);
        }
        let point = model.flatten_params();
        let mut probe = model.clone();
        let err = gradcheck(
            move |p| {
                probe.load_flat_params(p).unwrap();
                probe.loss_value_alpha_frozen(&input, alpha).unwrap()
            },
            &point,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-3, "model gradcheck rel err {err}");
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        // Four distinct samples; loss after a few epochs must drop and two
        // runs with the same seed must match exactly.
        let mut samples = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..4 {
            let mut s = toy_sample(16);
            s.building_id = format!("b{k}");
            for v in &mut s.patch.data {
                *v += rng.gen_range(-0.02..0.02);
            }
            let shift = k as f64 * 0.4;
            s.gt_box = BBox::new(6.0 - shift, 7.0, 6.0 + shift, 6.0).unwrap();
            samples.push(s);
        }
        let cfg = tiny_cfg();
        let tcfg = TrainConfig {
            epochs: 30,
            batch_size: 2,
            lr: 0.01,
            plateau_patience: 30,
            seed: 9,
            ..TrainConfig::default()
        };
        let (_, log1) = train(&samples, &cfg, &tcfg).unwrap();
        let (_, log2) = train(&samples, &cfg, &tcfg).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(log1.len(), 30);
        assert!(
            log1.last().unwrap().mean_loss < 0.7 * log1[0].mean_loss,
            "loss did not drop: {} -> {}",
            log1[0].mean_loss,
            log1.last().unwrap().mean_loss
        );
    }

    #[test]
    fn small_lr_overfit_is_monotone_after_warmup() {
        // Four fixed samples, 200 epochs at a small learning rate: the epoch
        // loss must be non-increasing (up to the schedule's min_delta) once
        // past the first ten epochs.
        let mut samples = Vec::new();
        for k in 0..4 {
            let mut s = toy_sample(16);
            s.building_id = format!("b{k}");
            let shift = k as f64 * 0.3;
            s.gt_box = BBox::new(5.5 - shift, 6.0, 6.0 + shift, 7.0).unwrap();
            samples.push(s);
        }
        let tcfg = TrainConfig {
            epochs: 200,
            batch_size: 4,
            lr: 2e-5,
            plateau_patience: 201,
            seed: 2,
            ..TrainConfig::default()
        };
        let (_, log) = train(&samples, &tiny_cfg(), &tcfg).unwrap();
        let min_delta = tcfg.plateau_min_delta;
        for w in log.windows(2).skip(10) {
            assert!(
                w[1].mean_loss <= w[0].mean_loss + min_delta,
                "loss rose at epoch {}: {} -> {}",
                w[1].epoch,
                w[0].mean_loss,
                w[1].mean_loss
            );
        }
        assert!(log.last().unwrap().mean_loss < log[0].mean_loss);
    }

    #[test]
    fn last_batch_may_be_smaller() {
        let mut samples: Vec<Sample> = (0..3)
            .map(|k| {
                let mut s = toy_sample(16);
                s.building_id = format!("b{k}");
                s
            })
            .collect();
        samples[1].split = Split::Train;
        let cfg = tiny_cfg();
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        // 3 samples, batch 4: a single batch of 3.
        let (_, log) = train(&samples, &cfg, &tcfg).unwrap();
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn empty_train_split_rejected() {
        let mut s = toy_sample(16);
        s.split = Split::Test;
        assert!(matches!(
            train(&[s], &tiny_cfg(), &TrainConfig::default()),
            Err(ModelError::EmptyTrainSet)
        ));
    }

    #[test]
    fn predict_zero_head_returns_footprint_boxes_in_scene_coords() {
        let mut model = BbrModel::init(tiny_cfg(), 3).unwrap();
        model.zero_fc();
        let mut s = toy_sample(16);
        s.split = Split::Test;
        s.patch_origin = (32, 48);
        let preds = predict(&model, &[s.clone()], Split::Test).unwrap();
        assert_eq!(preds.len(), 1);
        let (id, bx) = &preds[0];
        assert_eq!(id, "toy");
        assert!((bx.cx - (s.footprint_box.cx + 48.0)).abs() < 1e-9);
        assert!((bx.cy - (s.footprint_box.cy + 32.0)).abs() < 1e-9);
        assert!((bx.w - s.footprint_box.w).abs() < 1e-9);
    }

    #[test]
    fn predict_rejects_duplicate_ids() {
        let model = BbrModel::init(tiny_cfg(), 3).unwrap();
        let mut a = toy_sample(16);
        a.split = Split::Test;
        let b = a.clone();
        assert!(matches!(
            predict(&model, &[a, b], Split::Test),
            Err(ModelError::IdCollision(_))
        ));
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("model.bin");
        let model = BbrModel::init(tiny_cfg(), 21).unwrap();
        write_weights(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"BBRW");
        let back = read_weights(&path, &tiny_cfg()).unwrap();
        // Values survive up to the f32 storage rounding.
        for (a, b) in model.params().iter().zip(back.params().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= (*x as f32).abs() as f64 * 1e-6 + 1e-12);
            }
        }
        // Mismatched config is rejected.
        let mut other = tiny_cfg();
        other.head_channels = 4;
        assert!(matches!(
            read_weights(&path, &other),
            Err(ModelError::Weights(_))
        ));
    }

    #[test]
    fn resize_maps_boxes_consistently() {
        // A 16-px patch upsampled into a 32-px network input: the roi scales
        // by 2 and a zero-head prediction maps back to the original box.
        let mut model = BbrModel::init(
            ModelConfig {
                input_size: 32,
                ..tiny_cfg()
            },
            3,
        )
        .unwrap();
        model.zero_fc();
        let mut s = toy_sample(16);
        s.split = Split::Test;
        let input = prepare_input(&s, 32).unwrap();
        assert_eq!(input.scale, (2.0, 2.0));
        assert_eq!(input.tensor.h, 32);
        assert!((input.roi.w - 2.0 * s.footprint_box.w).abs() < 1e-12);
        // Mask stays binary after the nearest-neighbor rescale.
        let mask_ch = &input.tensor.data[32 * 32..];
        assert!(mask_ch.iter().all(|&v| v == 0.0 || v == 1.0));
        let preds = predict(&model, &[s.clone()], Split::Test).unwrap();
        assert!((preds[0].1.w - s.footprint_box.w).abs() < 1e-9);
    }
}
