//! A small stride-2 CNN that trains in seconds on the synthetic dataset.
//!
//! Three 3x3/stride-2 conv + ReLU blocks take a 64x64 RGB input to a
//! 32x8x8 feature map; global average pooling and one linear layer give the
//! logits. Activations for a batch are kept channel-major as `(C, B, H, W)`
//! so every convolution is a single matrix product against im2col columns.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BundleMetadata, FeatureExtractor, GapLinearHead, ModelBundle, Preprocess};
use crate::data::{DatasetHandle, Split};
use crate::error::{ensure, Error, Result};
use crate::store::{hash_bytes, hash_values, read_file, write_atomic, FlatArray};
use crate::tensor::{argmax, softmax, FeatureMap};

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyArchitecture {
    pub input_size: usize,
    pub widths: [usize; 3],
    pub classes: usize,
    /// When false the final layer has no bias, which makes the head linear.
    pub head_bias: bool,
}

impl ToyArchitecture {
    pub fn new(classes: usize) -> Self {
        Self {
            input_size: 64,
            widths: [8, 16, 32],
            classes,
            head_bias: true,
        }
    }

    pub fn feature_side(&self) -> usize {
        (0..3).fold(self.input_size, |n, _| conv_out(n))
    }

    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let n = self.feature_side();
        (self.widths[2], n, n)
    }

    pub fn hash(&self) -> String {
        hash_bytes(&serde_json::to_vec(self).expect("architecture serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_head_bias")]
    pub head_bias: bool,
}

fn default_head_bias() -> bool {
    true
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 7,
            head_bias: true,
        }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs > 0, Configuration, "epochs must be positive");
        ensure!(self.batch_size > 0, Configuration, "batch_size must be positive");
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            Configuration,
            "learning_rate must be positive, got {}",
            self.learning_rate
        );
        Ok(())
    }
}

fn conv_out(n: usize) -> usize {
    (n + 2 * PAD - KERNEL) / STRIDE + 1
}

#[derive(Debug, Clone)]
struct Conv {
    /// `out × (in·9)`
    w: Array2<f64>,
    b: Array1<f64>,
}

impl Conv {
    fn init(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (cin * KERNEL * KERNEL) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let w = Array2::from_shape_fn((cout, cin * KERNEL * KERNEL), |_| normal.sample(rng));
        Self {
            w,
            b: Array1::zeros(cout),
        }
    }

    fn cout(&self) -> usize {
        self.w.nrows()
    }
}

/// im2col for a `(C, B, H, W)` batch, producing `(C·9, B·Ho·Wo)` columns.
fn im2col(x: &Array4<f64>) -> Array2<f64> {
    let (c, b, h, w) = x.dim();
    let (ho, wo) = (conv_out(h), conv_out(w));
    let ncol = b * ho * wo;
    let mut cols = Array2::<f64>::zeros((c * KERNEL * KERNEL, ncol));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL * KERNEL + ky * KERNEL + kx) * ncol;
                for bi in 0..b {
                    let src = (ci * b + bi) * h * w;
                    let dst = row + bi * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = src + iy as usize * w;
                        for ox in 0..wo {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cs[dst + oy * wo + ox] = xs[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back to the input.
fn col2im(cols: &Array2<f64>, dims: (usize, usize, usize, usize)) -> Array4<f64> {
    let (c, b, h, w) = dims;
    let (ho, wo) = (conv_out(h), conv_out(w));
    let ncol = b * ho * wo;
    let mut x = Array4::<f64>::zeros(dims);
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL * KERNEL + ky * KERNEL + kx) * ncol;
                for bi in 0..b {
                    let dst = (ci * b + bi) * h * w;
                    let src = row + bi * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = dst + iy as usize * w;
                        for ox in 0..wo {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            xs[dst_row + ix as usize] += cs[src + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

struct LayerCache {
    cols: Array2<f64>,
    input_dims: (usize, usize, usize, usize),
    /// post-ReLU output, `(cout, B·Ho·Wo)`
    out: Array2<f64>,
}

/// Trained toy network. Immutable once built; share through `Arc`.
#[derive(Debug, Clone)]
pub struct ToyNet {
    arch: ToyArchitecture,
    convs: Vec<Conv>,
    head: GapLinearHead,
}

impl ToyNet {
    pub fn init(arch: ToyArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(3);
        let mut cin = 3;
        for &cout in &arch.widths {
            convs.push(Conv::init(cin, cout, &mut rng));
            cin = cout;
        }
        let normal = Normal::new(0.0, (1.0 / cin as f64).sqrt()).expect("valid std");
        let w = Array2::from_shape_fn((arch.classes, cin), |_| normal.sample(&mut rng));
        let head = GapLinearHead::zero_bias(w);
        Self { arch, convs, head }
    }

    /// Rebuilds a network from values in [`ToyNet::parameters`] order.
    pub fn from_parameters(arch: ToyArchitecture, values: &[f64]) -> Result<Self> {
        let mut net = Self::init(arch, 0);
        net.set_parameters(values)?;
        Ok(net)
    }

    pub fn architecture(&self) -> &ToyArchitecture {
        &self.arch
    }

    pub fn head(&self) -> &GapLinearHead {
        &self.head
    }

    /// Parameters in a fixed order: each conv's weights then bias, then the
    /// head's weights then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for conv in &self.convs {
            out.extend(conv.w.iter());
            out.extend(conv.b.iter());
        }
        out.extend(self.head.weights.iter());
        out.extend(self.head.bias.iter());
        out
    }

    fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.parameters().len();
        ensure!(
            values.len() == expected,
            Data,
            "checkpoint has {} parameters, architecture needs {expected}",
            values.len()
        );
        let mut rest = values;
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for d in dst {
                *d = rest[0];
                rest = &rest[1..];
            }
        };
        for conv in &mut self.convs {
            fill(&mut conv.w.iter_mut());
            fill(&mut conv.b.iter_mut());
        }
        fill(&mut self.head.weights.iter_mut());
        fill(&mut self.head.bias.iter_mut());
        Ok(())
    }

    pub fn weights_hash(&self) -> String {
        hash_values(&self.parameters())
    }

    fn trunk(&self, x: Array4<f64>, mut caches: Option<&mut Vec<LayerCache>>) -> Array4<f64> {
        let mut x = x;
        for conv in &self.convs {
            let dims = x.dim();
            let (_, b, h, w) = dims;
            let (ho, wo) = (conv_out(h), conv_out(w));
            let cols = im2col(&x);
            let mut z = conv.w.dot(&cols);
            for (mut row, &bias) in z.outer_iter_mut().zip(conv.b.iter()) {
                row.mapv_inplace(|v| (v + bias).max(0.0));
            }
            x = z
                .clone()
                .into_shape_with_order((conv.cout(), b, ho, wo))
                .expect("conv output reshapes");
            if let Some(c) = caches.as_deref_mut() {
                c.push(LayerCache {
                    cols,
                    input_dims: dims,
                    out: z,
                });
            }
        }
        x
    }

    fn batch_input(inputs: &[&Array3<f64>]) -> Array4<f64> {
        let (c, h, w) = inputs[0].dim();
        let mut x = Array4::zeros((c, inputs.len(), h, w));
        for (bi, input) in inputs.iter().enumerate() {
            x.index_axis_mut(Axis(1), bi).assign(*input);
        }
        x
    }

    /// Feature map for one preprocessed `(3, H, W)` input.
    pub fn features(&self, input: &Array3<f64>) -> Result<FeatureMap> {
        let s = self.arch.input_size;
        ensure!(
            input.dim() == (3, s, s),
            Validation,
            "toy net expects a 3x{s}x{s} input, got {:?}",
            input.dim()
        );
        let out = self.trunk(Self::batch_input(&[input]), None);
        FeatureMap::new(out.index_axis(Axis(1), 0).to_owned())
    }

    /// Unsplit forward pass for a batch of preprocessed inputs; returns
    /// `(classes, B)` logits.
    pub fn batch_logits(&self, inputs: &[&Array3<f64>]) -> Array2<f64> {
        let feats = self.trunk(Self::batch_input(inputs), None);
        let pooled = pool(&feats);
        self.logits_from_pooled(&pooled)
    }

    fn logits_from_pooled(&self, pooled: &Array2<f64>) -> Array2<f64> {
        let mut z = self.head.weights.dot(pooled);
        for (mut row, &bias) in z.outer_iter_mut().zip(self.head.bias.iter()) {
            row += bias;
        }
        z
    }

    /// Wraps the network as a split bundle.
    pub fn into_bundle(
        self,
        model_id: impl Into<String>,
        label_names: Vec<String>,
        preprocess: Preprocess,
        metadata: BundleMetadata,
    ) -> Result<ModelBundle> {
        let s = self.arch.input_size;
        let feature_shape = self.arch.feature_shape();
        let head = Arc::new(self.head.clone());
        let net = Arc::new(self);
        ModelBundle::new(
            model_id,
            Arc::new(ToyTrunk(net)),
            head,
            (s, s),
            feature_shape,
            label_names,
            preprocess,
            metadata,
        )
    }
}

/// `(C, B, n, n)` → `(C, B)` spatial means.
fn pool(feats: &Array4<f64>) -> Array2<f64> {
    let (c, b, h, w) = feats.dim();
    let area = (h * w) as f64;
    Array2::from_shape_fn((c, b), |(ci, bi)| feats.slice(ndarray::s![ci, bi, .., ..]).sum() / area)
}

struct ToyTrunk(Arc<ToyNet>);

impl FeatureExtractor for ToyTrunk {
    fn extract(&self, input: &Array3<f64>) -> Result<FeatureMap> {
        self.0.features(input)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g;
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

impl ToyNet {
    /// One cross-entropy step on a batch; returns the gradient in
    /// [`ToyNet::parameters`] order and the mean loss.
    fn gradient(&self, inputs: &[&Array3<f64>], labels: &[usize]) -> (Vec<f64>, f64) {
        let b = inputs.len();
        let mut caches = Vec::with_capacity(3);
        let feats = self.trunk(Self::batch_input(inputs), Some(&mut caches));
        let (c, _, n, _) = feats.dim();
        let pooled = pool(&feats);
        let logits = self.logits_from_pooled(&pooled);

        let mut dlogits = Array2::<f64>::zeros(logits.dim());
        let mut loss = 0.0;
        for bi in 0..b {
            let col: Vec<f64> = logits.column(bi).to_vec();
            let p = softmax(&col);
            loss -= p[labels[bi]].max(1e-300).ln();
            for k in 0..p.len() {
                let y = if k == labels[bi] { 1.0 } else { 0.0 };
                dlogits[[k, bi]] = (p[k] - y) / b as f64;
            }
        }

        let dhead_w = dlogits.dot(&pooled.t());
        let dhead_b = if self.arch.head_bias {
            dlogits.sum_axis(Axis(1))
        } else {
            Array1::zeros(self.arch.classes)
        };
        let dpooled = self.head.weights.t().dot(&dlogits);

        // spread pooled gradient evenly over each spatial map
        let area = (n * n) as f64;
        let mut dout = Array2::<f64>::zeros((c, b * n * n));
        for ci in 0..c {
            for bi in 0..b {
                let g = dpooled[[ci, bi]] / area;
                dout.slice_mut(ndarray::s![ci, bi * n * n..(bi + 1) * n * n]).fill(g);
            }
        }

        let mut conv_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(3);
        for (li, conv) in self.convs.iter().enumerate().rev() {
            let cache = &caches[li];
            ndarray::Zip::from(&mut dout).and(&cache.out).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
            let dw = dout.dot(&cache.cols.t());
            let db = dout.sum_axis(Axis(1));
            if li > 0 {
                let dcols = conv.w.t().dot(&dout);
                let dx = col2im(&dcols, cache.input_dims);
                let (ci, bb, h, w) = cache.input_dims;
                dout = dx.into_shape_with_order((ci, bb * h * w)).expect("gradient reshapes");
            }
            conv_grads.push((dw, db));
        }
        conv_grads.reverse();

        let mut grad = Vec::new();
        for (dw, db) in &conv_grads {
            grad.extend(dw.iter());
            grad.extend(db.iter());
        }
        grad.extend(dhead_w.iter());
        grad.extend(dhead_b.iter());
        (grad, loss / b as f64)
    }
}

/// Provenance written next to a toy checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMetadata {
    pub model_id: String,
    pub architecture: ToyArchitecture,
    pub architecture_hash: String,
    pub train_config: ToyTrainConfig,
    pub dataset_id: String,
    pub validation_accuracy: f64,
    pub weights_hash: String,
    pub label_names: Vec<String>,
    pub preprocess: Preprocess,
}

/// Trains the toy network on the train split and measures accuracy on val.
pub fn train_toy_model(dataset: &DatasetHandle, cfg: &ToyTrainConfig) -> Result<ModelBundle> {
    Ok(train_toy(dataset, cfg)?.0)
}

pub(crate) fn train_toy(dataset: &DatasetHandle, cfg: &ToyTrainConfig) -> Result<(ModelBundle, ToyNet, ToyMetadata)> {
    cfg.validate()?;
    let classes = dataset.class_names.len();
    ensure!(classes >= 2, Configuration, "need at least 2 classes, got {classes}");
    let train = dataset.samples(Split::Train);
    let mut counts = vec![0usize; classes];
    for s in train {
        counts[s.label] += 1;
    }
    if let Some((k, &n)) = counts.iter().enumerate().find(|(_, &n)| n < 50) {
        return Err(Error::Configuration(format!(
            "class {k} has {n} training samples, need at least 50"
        )));
    }

    let mut arch = ToyArchitecture::new(classes);
    arch.head_bias = cfg.head_bias;
    let preprocess = Preprocess::default();
    let input_size = (arch.input_size, arch.input_size);
    let inputs: Vec<Array3<f64>> = train
        .iter()
        .map(|s| preprocess.apply(&dataset.load_image(s)?, input_size))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();

    let mut net = ToyNet::init(arch.clone(), cfg.seed);
    let mut params = net.parameters();
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed0f0ddba11);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Array3<f64>> = chunk.iter().map(|&k| &inputs[k]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&k| labels[k]).collect();
            let (grad, loss) = net.gradient(&batch, &ys);
            adam.update(&mut params, &grad, cfg.learning_rate);
            net.set_parameters(&params)?;
            epoch_loss += loss;
            batches += 1;
        }
        log::debug!("epoch {epoch}: mean loss {:.4}", epoch_loss / batches as f64);
    }

    let val = dataset.samples(Split::Val);
    let mut correct = 0usize;
    for chunk in val.chunks(64) {
        let xs: Vec<Array3<f64>> = chunk
            .iter()
            .map(|s| preprocess.apply(&dataset.load_image(s)?, input_size))
            .collect::<Result<_>>()?;
        let refs: Vec<&Array3<f64>> = xs.iter().collect();
        let logits = net.batch_logits(&refs);
        for (bi, s) in chunk.iter().enumerate() {
            if argmax(&logits.column(bi).to_vec()) == s.label {
                correct += 1;
            }
        }
    }
    let accuracy = if val.is_empty() {
        0.0
    } else {
        correct as f64 / val.len() as f64
    };

    let weights_hash = net.weights_hash();
    let model_id = format!("toy-{}-s{}-{}", dataset.dataset_id, cfg.seed, &weights_hash[..12]);
    let meta = ToyMetadata {
        model_id: model_id.clone(),
        architecture_hash: arch.hash(),
        architecture: arch,
        train_config: cfg.clone(),
        dataset_id: dataset.dataset_id.clone(),
        validation_accuracy: accuracy,
        weights_hash,
        label_names: dataset.class_names.clone(),
        preprocess: preprocess.clone(),
    };
    let bundle = net
        .clone()
        .into_bundle(model_id, meta.label_names.clone(), preprocess, bundle_metadata(&meta))?;
    Ok((bundle, net, meta))
}

fn bundle_metadata(meta: &ToyMetadata) -> BundleMetadata {
    BundleMetadata {
        validation_accuracy: Some(meta.validation_accuracy),
        weights_hash: Some(meta.weights_hash.clone()),
        seed: Some(meta.train_config.seed),
        architecture_hash: Some(meta.architecture_hash.clone()),
    }
}

pub const WEIGHTS_FILE: &str = "model.bin";
pub const METADATA_FILE: &str = "model.json";

pub fn save_toy_checkpoint(dir: &Path, net: &ToyNet, meta: &ToyMetadata) -> Result<()> {
    let params = net.parameters();
    let arr = FlatArray::new(vec![params.len()], params)?;
    write_atomic(&dir.join(WEIGHTS_FILE), &arr.encode())?;
    let json = serde_json::to_vec_pretty(meta)?;
    write_atomic(&dir.join(METADATA_FILE), &json)
}

/// Loads a checkpoint directory written by [`save_toy_checkpoint`].
pub fn load_toy_checkpoint(dir: &Path) -> Result<(ModelBundle, ToyMetadata)> {
    let meta_path = dir.join(METADATA_FILE);
    let meta: ToyMetadata = serde_json::from_slice(&read_file(&meta_path)?)?;
    let arr = FlatArray::decode(&read_file(&dir.join(WEIGHTS_FILE))?)?;
    let net = ToyNet::from_parameters(meta.architecture.clone(), &arr.data)?;
    ensure!(
        net.weights_hash() == meta.weights_hash,
        Data,
        "weights in {} do not match the recorded hash",
        dir.display()
    );
    let bundle = net.into_bundle(
        meta.model_id.clone(),
        meta.label_names.clone(),
        meta.preprocess.clone(),
        bundle_metadata(&meta),
    )?;
    Ok((bundle, meta))
}
