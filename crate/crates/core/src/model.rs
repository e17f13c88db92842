//! The two adversarially trained parties: a convolutional feature extractor
//! producing (H, W, C) maps and an identity classifier (global pooling,
//! per-channel normalization, bias-free linear projection). The pooled,
//! normalized vector — not the logits — is the retrieval embedding.
//!
//! Two backbone presets share an overall output stride of 16:
//!
//! * `paper`: a ResNet-50-style bottleneck backbone with the final stage at
//!   stride 1, C = 2048, for 256x128 inputs (16x8 maps).
//! * `desk`: a small stem plus four plain conv stages (strides 2, 2, 2, 1),
//!   C configurable, CPU-trainable in minutes; 64x32 inputs give 4x2 maps.

use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, Conv2d, GlobalPool, Linear, MaxPool2d, ParamVisitor, PoolKind, Relu, TensorVisitor,
};
use crate::perturb::FeatureBatch;
use crate::region::GridShape;
use ndarray::{Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Overall downsampling factor of both presets.
pub const OUTPUT_STRIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (expected desk|paper)"
            ))),
        }
    }
}

/// Architecture description; enough to rebuild the model from a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Channel widths of the desk preset: stem plus four stages.
    pub desk_channels: Vec<usize>,
    pub num_classes: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub pooling: PoolKind,
}

impl ModelConfig {
    pub fn desk(num_classes: usize) -> Self {
        Self {
            preset: Preset::Desk,
            desk_channels: vec![16, 32, 48, 64, 64],
            num_classes,
            image_h: 64,
            image_w: 32,
            pooling: PoolKind::Avg,
        }
    }

    pub fn paper(num_classes: usize) -> Self {
        Self {
            preset: Preset::Paper,
            desk_channels: vec![],
            num_classes,
            image_h: 256,
            image_w: 128,
            pooling: PoolKind::Avg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if self.image_h % OUTPUT_STRIDE != 0 || self.image_w % OUTPUT_STRIDE != 0 {
            return Err(Error::InvalidConfig(format!(
                "image size {}x{} must be divisible by the output stride {OUTPUT_STRIDE}",
                self.image_h, self.image_w
            )));
        }
        if self.preset == Preset::Desk && self.desk_channels.len() != 5 {
            return Err(Error::InvalidConfig(
                "desk preset needs 5 channel widths (stem + 4 stages)".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_grid(&self) -> GridShape {
        GridShape::new(self.image_h / OUTPUT_STRIDE, self.image_w / OUTPUT_STRIDE)
    }

    pub fn feature_channels(&self) -> usize {
        match self.preset {
            Preset::Desk => *self.desk_channels.last().unwrap(),
            Preset::Paper => 2048,
        }
    }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm,
    relu: Relu,
}

impl ConvBnRelu {
    fn new(k: usize, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(k, k, cin, cout, stride, k / 2, rng),
            bn: BatchNorm::new(cout),
            relu: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let y = self.conv.forward(x, train);
        let y = self.bn.forward_nhwc(&y, train);
        self.relu.forward(&y, train)
    }

    fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let g = self.relu.backward(gy);
        let g = self.bn.backward_nhwc(&g, true);
        self.conv.backward(&g, true)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.conv.visit_params(&format!("{prefix}/conv"), f);
        self.bn.visit_params(&format!("{prefix}/bn"), f);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        self.conv.visit_tensors(&format!("{prefix}/conv"), f);
        self.bn.visit_tensors(&format!("{prefix}/bn"), f);
    }
}

/// ResNet bottleneck: 1x1 reduce, 3x3 (carries the stride), 1x1 expand,
/// residual add, ReLU.
#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm,
    relu2: Relu,
    conv3: Conv2d,
    bn3: BatchNorm,
    down: Option<(Conv2d, BatchNorm)>,
    relu_out: Relu,
}

impl Bottleneck {
    fn new(cin: usize, mid: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let down = if stride != 1 || cin != cout {
            Some((
                Conv2d::new(1, 1, cin, cout, stride, 0, rng),
                BatchNorm::new(cout),
            ))
        } else {
            None
        };
        Self {
            conv1: Conv2d::new(1, 1, cin, mid, 1, 0, rng),
            bn1: BatchNorm::new(mid),
            relu1: Relu::default(),
            conv2: Conv2d::new(3, 3, mid, mid, stride, 1, rng),
            bn2: BatchNorm::new(mid),
            relu2: Relu::default(),
            conv3: Conv2d::new(1, 1, mid, cout, 1, 0, rng),
            bn3: BatchNorm::new(cout),
            down,
            relu_out: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let mut y = self.conv1.forward(x, train);
        y = self.bn1.forward_nhwc(&y, train);
        y = self.relu1.forward(&y, train);
        y = self.conv2.forward(&y, train);
        y = self.bn2.forward_nhwc(&y, train);
        y = self.relu2.forward(&y, train);
        y = self.conv3.forward(&y, train);
        y = self.bn3.forward_nhwc(&y, train);
        let shortcut = match &mut self.down {
            Some((conv, bn)) => {
                let s = conv.forward(x, train);
                bn.forward_nhwc(&s, train)
            }
            None => x.clone(),
        };
        self.relu_out.forward(&(&y + &shortcut), train)
    }

    fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let g = self.relu_out.backward(gy);
        let mut gm = self.bn3.backward_nhwc(&g, true);
        gm = self.conv3.backward(&gm, true);
        gm = self.relu2.backward(&gm);
        gm = self.bn2.backward_nhwc(&gm, true);
        gm = self.conv2.backward(&gm, true);
        gm = self.relu1.backward(&gm);
        gm = self.bn1.backward_nhwc(&gm, true);
        gm = self.conv1.backward(&gm, true);
        let gs = match &mut self.down {
            Some((conv, bn)) => {
                let g2 = bn.backward_nhwc(&g, true);
                conv.backward(&g2, true)
            }
            None => g,
        };
        gm + gs
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.conv1.visit_params(&format!("{prefix}/conv1"), f);
        self.bn1.visit_params(&format!("{prefix}/bn1"), f);
        self.conv2.visit_params(&format!("{prefix}/conv2"), f);
        self.bn2.visit_params(&format!("{prefix}/bn2"), f);
        self.conv3.visit_params(&format!("{prefix}/conv3"), f);
        self.bn3.visit_params(&format!("{prefix}/bn3"), f);
        if let Some((conv, bn)) = &mut self.down {
            conv.visit_params(&format!("{prefix}/down_conv"), f);
            bn.visit_params(&format!("{prefix}/down_bn"), f);
        }
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        self.conv1.visit_tensors(&format!("{prefix}/conv1"), f);
        self.bn1.visit_tensors(&format!("{prefix}/bn1"), f);
        self.conv2.visit_tensors(&format!("{prefix}/conv2"), f);
        self.bn2.visit_tensors(&format!("{prefix}/bn2"), f);
        self.conv3.visit_tensors(&format!("{prefix}/conv3"), f);
        self.bn3.visit_tensors(&format!("{prefix}/bn3"), f);
        if let Some((conv, bn)) = &mut self.down {
            conv.visit_tensors(&format!("{prefix}/down_conv"), f);
            bn.visit_tensors(&format!("{prefix}/down_bn"), f);
        }
    }
}

// ---------------------------------------------------------------------------
// Extractor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Backbone {
    Desk {
        blocks: Vec<ConvBnRelu>,
    },
    Paper {
        stem: ConvBnRelu,
        pool: MaxPool2d,
        layers: Vec<Bottleneck>,
    },
}

/// Convolutional feature extractor.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub image_h: usize,
    pub image_w: usize,
    channels: usize,
    backbone: Backbone,
}

impl Extractor {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let backbone = match cfg.preset {
            Preset::Desk => {
                // 3x3 kernels early, 1x1 late: the receptive field of one
                // output cell stays local (~15 px), so each cell describes
                // its own patch of the image rather than the whole frame
                let strides = [2usize, 2, 2, 2, 1];
                let kernels = [3usize, 3, 3, 1, 1];
                let mut blocks = Vec::with_capacity(5);
                let mut cin = 3;
                for ((&cout, &stride), &k) in cfg
                    .desk_channels
                    .iter()
                    .zip(strides.iter())
                    .zip(kernels.iter())
                {
                    blocks.push(ConvBnRelu::new(k, cin, cout, stride, rng));
                    cin = cout;
                }
                Backbone::Desk { blocks }
            }
            Preset::Paper => {
                // stem downsamples 4x, then stages at 2x, 2x and a final
                // stage kept at stride 1: 256x128 inputs come out 16x8
                let stem = ConvBnRelu {
                    conv: Conv2d::new(7, 7, 3, 64, 2, 3, rng),
                    bn: BatchNorm::new(64),
                    relu: Relu::default(),
                };
                let pool = MaxPool2d::new(3, 2, 1);
                let spec: [(usize, usize, usize, usize); 4] = [
                    (64, 256, 3, 1),
                    (128, 512, 4, 2),
                    (256, 1024, 6, 2),
                    (512, 2048, 3, 1),
                ];
                let mut layers = Vec::new();
                let mut cin = 64;
                for &(mid, cout, blocks, stride) in &spec {
                    for b in 0..blocks {
                        let s = if b == 0 { stride } else { 1 };
                        layers.push(Bottleneck::new(cin, mid, cout, s, rng));
                        cin = cout;
                    }
                }
                Backbone::Paper { stem, pool, layers }
            }
        };
        Ok(Self {
            image_h: cfg.image_h,
            image_w: cfg.image_w,
            channels: cfg.feature_channels(),
            backbone,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.channels
    }

    pub fn feature_grid(&self) -> GridShape {
        GridShape::new(self.image_h / OUTPUT_STRIDE, self.image_w / OUTPUT_STRIDE)
    }

    /// Forward pass from an image batch `(B, image_h, image_w, 3)` to
    /// feature maps `(B, H, W, C)`.
    pub fn forward(&mut self, images: &Array4<f64>, train: bool) -> Result<FeatureBatch> {
        let (_, h, w, c) = images.dim();
        if (h, w, c) != (self.image_h, self.image_w, 3) {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{}x3 images, got {h}x{w}x{c}",
                self.image_h, self.image_w
            )));
        }
        let out = match &mut self.backbone {
            Backbone::Desk { blocks } => {
                let mut y = images.clone();
                for b in blocks.iter_mut() {
                    y = b.forward(&y, train);
                }
                y
            }
            Backbone::Paper { stem, pool, layers } => {
                let mut y = stem.forward(images, train);
                y = pool.forward(&y, train);
                for l in layers.iter_mut() {
                    y = l.forward(&y, train);
                }
                y
            }
        };
        Ok(out)
    }

    /// Backward pass; accumulates parameter gradients.
    pub fn backward(&mut self, grad_maps: &FeatureBatch) -> Array4<f64> {
        match &mut self.backbone {
            Backbone::Desk { blocks } => {
                let mut g = grad_maps.clone();
                for b in blocks.iter_mut().rev() {
                    g = b.backward(&g);
                }
                g
            }
            Backbone::Paper { stem, pool, layers } => {
                let mut g = grad_maps.clone();
                for l in layers.iter_mut().rev() {
                    g = l.backward(&g);
                }
                g = pool.backward(&g);
                stem.backward(&g)
            }
        }
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        match &mut self.backbone {
            Backbone::Desk { blocks } => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_params(&format!("{prefix}/block{i}"), f);
                }
            }
            Backbone::Paper { stem, layers, .. } => {
                stem.visit_params(&format!("{prefix}/stem"), f);
                for (i, l) in layers.iter_mut().enumerate() {
                    l.visit_params(&format!("{prefix}/layer{i}"), f);
                }
            }
        }
    }

    pub fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        match &mut self.backbone {
            Backbone::Desk { blocks } => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_tensors(&format!("{prefix}/block{i}"), f);
                }
            }
            Backbone::Paper { stem, layers, .. } => {
                stem.visit_tensors(&format!("{prefix}/stem"), f);
                for (i, l) in layers.iter_mut().enumerate() {
                    l.visit_tensors(&format!("{prefix}/layer{i}"), f);
                }
            }
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("e", &mut |_, p| n += p.len());
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit_params("e", &mut |_, p| p.zero_grad());
    }
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

/// Identity classifier: global pooling, per-channel normalization, bias-free
/// linear projection to one logit per training identity.
#[derive(Debug, Clone)]
pub struct Classifier {
    pool: GlobalPool,
    bn: BatchNorm,
    fc: Linear,
}

impl Classifier {
    pub fn new(channels: usize, num_classes: usize, pooling: PoolKind, rng: &mut impl Rng) -> Self {
        Self {
            pool: GlobalPool::new(pooling),
            bn: BatchNorm::new(channels),
            fc: Linear::new(channels, num_classes, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.bn.channels()
    }

    pub fn num_classes(&self) -> usize {
        self.fc.out_dim()
    }

    fn check_maps(&self, maps: &FeatureBatch) -> Result<()> {
        let c = maps.dim().3;
        if c != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "classifier expects {} channels, got {c}",
                self.channels()
            )));
        }
        Ok(())
    }

    /// Feature maps to logits.
    pub fn forward(&mut self, maps: &FeatureBatch, train: bool) -> Result<Array2<f64>> {
        self.check_maps(maps)?;
        let pooled = self.pool.forward(maps, train);
        let normed = self.bn.forward_flat(&pooled, train);
        Ok(self.fc.forward(&normed, train))
    }

    /// Gradient from logits back to feature maps. With `accumulate` false the
    /// parameters receive no gradient; only the input gradient is produced.
    pub fn backward(&mut self, grad_logits: &Array2<f64>, accumulate: bool) -> FeatureBatch {
        let g = self.fc.backward(grad_logits, accumulate);
        let g = self.bn.backward_flat(&g, accumulate);
        self.pool.backward(&g)
    }

    /// Retrieval embedding: pooled then normalized with running statistics.
    pub fn embed(&mut self, maps: &FeatureBatch) -> Result<Array2<f64>> {
        self.check_maps(maps)?;
        let pooled = self.pool.forward(maps, false);
        Ok(self.bn.forward_flat(&pooled, false))
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.bn.visit_params(&format!("{prefix}/bn"), f);
        self.fc.visit_params(&format!("{prefix}/fc"), f);
    }

    pub fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        self.bn.visit_tensors(&format!("{prefix}/bn"), f);
        self.fc.visit_tensors(&format!("{prefix}/fc"), f);
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("c", &mut |_, p| n += p.len());
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit_params("c", &mut |_, p| p.zero_grad());
    }
}

/// Embed a batch of images with a frozen model (eval mode throughout).
pub fn embed_images(
    extractor: &mut Extractor,
    classifier: &mut Classifier,
    images: &Array4<f64>,
) -> Result<Array2<f64>> {
    let maps = extractor.forward(images, false)?;
    classifier.embed(&maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, stream};
    use ndarray::Array4;

    #[test]
    fn desk_preset_shapes() {
        let cfg = ModelConfig::desk(10);
        let mut rng = derive_rng(0, stream::INIT, 0);
        let mut e = Extractor::new(&cfg, &mut rng).unwrap();
        let images = Array4::from_elem((2, 64, 32, 3), 0.3);
        let maps = e.forward(&images, false).unwrap();
        assert_eq!(maps.dim(), (2, 4, 2, 64));
        assert_eq!(e.feature_grid(), GridShape::new(4, 2));
        let bad = Array4::from_elem((1, 32, 32, 3), 0.0);
        assert!(matches!(
            e.forward(&bad, false),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = ModelConfig::desk(10);
        let mut rng = derive_rng(1, stream::INIT, 0);
        let mut e = Extractor::new(&cfg, &mut rng).unwrap();
        let mut img_rng = derive_rng(2, stream::INIT, 0);
        let images = Array4::from_shape_fn((2, 64, 32, 3), |_| img_rng.random::<f64>());
        let a = e.forward(&images, false).unwrap();
        let b = e.forward(&images, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn classifier_shapes_and_linearity() {
        let mut rng = derive_rng(3, stream::INIT, 0);
        let mut c = Classifier::new(8, 5, PoolKind::Avg, &mut rng);
        let maps = Array4::zeros((4, 3, 2, 8));
        let logits = c.forward(&maps, false).unwrap();
        assert_eq!(logits.dim(), (4, 5));
        // zero maps pool to zero; with zero running mean and zero shift the
        // logits are exactly zero
        assert!(logits.iter().all(|&v| v.abs() < 1e-12));
        let bad = Array4::zeros((1, 3, 2, 7));
        assert!(c.forward(&bad, false).is_err());
        // pooling is linear pre-normalization
        let mut rng2 = derive_rng(4, stream::INIT, 0);
        let m = Array4::from_shape_fn((2, 3, 2, 8), |_| rng2.random::<f64>());
        let mut pool = GlobalPool::new(PoolKind::Avg);
        let p1 = pool.forward(&m, false);
        let p2 = pool.forward(&(&m * 3.0), false);
        assert!(p1
            .iter()
            .zip(p2.iter())
            .all(|(a, b)| (3.0 * a - b).abs() < 1e-12));
    }

    #[test]
    fn pooling_matches_direct_mean() {
        let mut rng = derive_rng(5, stream::INIT, 0);
        let m = Array4::from_shape_fn((3, 4, 2, 6), |_| rng.random::<f64>() * 2.0 - 1.0);
        let mut pool = GlobalPool::new(PoolKind::Avg);
        let p = pool.forward(&m, false);
        for b in 0..3 {
            for c in 0..6 {
                let mut acc = 0.0;
                for y in 0..4 {
                    for x in 0..2 {
                        acc += m[[b, y, x, c]];
                    }
                }
                assert!((p[[b, c]] - acc / 8.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn embeddings_have_feature_dim_and_repeat() {
        let cfg = ModelConfig::desk(6);
        let mut rng = derive_rng(6, stream::INIT, 0);
        let mut e = Extractor::new(&cfg, &mut rng).unwrap();
        let mut c = Classifier::new(64, 6, PoolKind::Avg, &mut rng);
        let mut img_rng = derive_rng(7, stream::INIT, 0);
        let one = Array4::from_shape_fn((1, 64, 32, 3), |_| img_rng.random::<f64>());
        let mut two = Array4::zeros((2, 64, 32, 3));
        two.slice_mut(ndarray::s![0, .., .., ..])
            .assign(&one.slice(ndarray::s![0, .., .., ..]));
        two.slice_mut(ndarray::s![1, .., .., ..])
            .assign(&one.slice(ndarray::s![0, .., .., ..]));
        let emb = embed_images(&mut e, &mut c, &two).unwrap();
        assert_eq!(emb.dim(), (2, 64));
        let d: f64 = (&emb.row(0) - &emb.row(1)).mapv(|v| v * v).sum();
        assert_eq!(d, 0.0); // identical inputs, identical embeddings
    }

    #[test]
    fn desk_backbone_gradcheck_end_to_end() {
        // scalar objective: sum of squared feature-map entries
        let cfg = ModelConfig::desk(4);
        let mut rng = derive_rng(8, stream::INIT, 0);
        let mut e = Extractor::new(&cfg, &mut rng).unwrap();
        let mut img_rng = derive_rng(9, stream::INIT, 0);
        let images = Array4::from_shape_fn((2, 64, 32, 3), |_| img_rng.random::<f64>());
        let maps = e.forward(&images, true).unwrap();
        let gy = maps.mapv(|v| 2.0 * v);
        e.backward(&gy);
        let mut grads = Vec::new();
        e.visit_params("e", &mut |path, p| {
            grads.push((path.to_string(), p.grad.clone().unwrap()));
        });
        let mut probe_rng = derive_rng(10, stream::INIT, 0);
        for _ in 0..12 {
            let gi = probe_rng.random_range(0..grads.len());
            let (ref path, ref g) = grads[gi];
            let ci = probe_rng.random_range(0..g.len());
            let an = g.as_slice().unwrap()[ci];
            let probe = |delta: f64| -> f64 {
                let mut e2 = e.clone();
                e2.visit_params("e", &mut |p2, param| {
                    if p2 == path {
                        param.value.as_slice_mut().unwrap()[ci] += delta;
                    }
                });
                let m = e2.forward(&images, true).unwrap();
                m.mapv(|v| v * v).sum()
            };
            let h = 1e-5;
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                ((fd - an) / denom).abs() < 1e-4,
                "{path}[{ci}]: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn desk_param_count_is_small() {
        let cfg = ModelConfig::desk(50);
        let mut rng = derive_rng(11, stream::INIT, 0);
        let mut e = Extractor::new(&cfg, &mut rng).unwrap();
        let mut c = Classifier::new(64, 50, PoolKind::Avg, &mut rng);
        let total = e.param_count() + c.param_count();
        assert!(total < 200_000, "desk preset should stay tiny, got {total}");
    }
}
