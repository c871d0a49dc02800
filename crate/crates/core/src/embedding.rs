//! Identity features: soft-binned cell color histograms fed through a small
//! identity-classification head. The head's hidden activation, L2-normalized,
//! is the matching feature used for states, rewards and retrieval.

use crate::environment::{Window, WindowEmbedder};
use crate::error::{Error, Result};
use crate::imaging::{crop_resize, Image, Sample, CANONICAL_HEIGHT, CANONICAL_WIDTH};
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::loss::softmax_cross_entropy;
use crate::numerics::{Activation, DenseNet, Optimizer};
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub cols: usize,
    pub rows: usize,
    pub bins: usize,
    pub hidden: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            cols: 4,
            rows: 8,
            bins: 4,
            hidden: 128,
        }
    }
}

impl EmbedConfig {
    pub fn feature_dim(&self) -> usize {
        self.cols * self.rows * 3 * self.bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.cols == 0 || self.rows == 0 || self.bins < 2 {
            return Err(Error::InvalidConfig("grid needs ≥ 1 cell and ≥ 2 bins".into()));
        }
        if self.cols > CANONICAL_WIDTH || self.rows > CANONICAL_HEIGHT {
            return Err(Error::InvalidConfig("grid finer than the canonical image".into()));
        }
        if self.hidden < 8 {
            return Err(Error::InvalidConfig("hidden width must be ≥ 8".into()));
        }
        Ok(())
    }
}

/// Per-cell, per-channel histograms with linear interpolation between
/// adjacent bins, each cell normalized by its pixel count, then the whole
/// vector L2-normalized. Layout: `((row·cols + col)·3 + channel)·bins + bin`.
pub fn raw_features(img: &Image, cfg: &EmbedConfig) -> Result<Vec<f32>> {
    if img.width() != CANONICAL_WIDTH || img.height() != CANONICAL_HEIGHT {
        return Err(Error::InvalidImage(format!(
            "features need {CANONICAL_WIDTH}×{CANONICAL_HEIGHT}, got {}×{}",
            img.width(),
            img.height()
        )));
    }
    let (w, h, bins) = (img.width(), img.height(), cfg.bins);
    // Bin weights are accumulated in units of 1/255 so sums are exact and
    // independent of pixel order.
    // Four interleaved accumulators, by column modulo 4, so that runs of
    // equal pixels do not serialize on one memory slot; summed exactly below.
    let dim = cfg.feature_dim();
    let mut lanes = vec![0u64; 4 * dim];
    // (low bin, weight of low bin, high bin, weight of high bin) per byte value
    let taps: Vec<(usize, u64, usize, u64)> = (0..=255u64)
        .map(|v| {
            let scaled = v * (bins as u64 - 1);
            let lo = (scaled / 255) as usize;
            let frac = scaled % 255;
            (lo, 255 - frac, (lo + 1).min(bins - 1), frac)
        })
        .collect();
    let col_of: Vec<usize> = (0..w).map(|x| x * cfg.cols / w).collect();
    let row_of: Vec<usize> = (0..h).map(|y| y * cfg.rows / h).collect();
    let span = |of: &[usize], k: usize| of.iter().filter(|&&c| c == k).count() as u64;
    let counts: Vec<u64> = (0..cfg.rows * cfg.cols)
        .map(|cell| span(&row_of, cell / cfg.cols) * span(&col_of, cell % cfg.cols))
        .collect();
    let data = img.data();
    for (y, row_px) in data.chunks_exact(w * 3).enumerate() {
        let row = row_of[y];
        for (x, (&col, px)) in col_of.iter().zip(row_px.chunks_exact(3)).enumerate() {
            let cell = row * cfg.cols + col;
            let lane = &mut lanes[(x & 3) * dim..(x & 3) * dim + dim];
            for (c, &v) in px.iter().enumerate() {
                let (lo, wlo, hi, whi) = taps[v as usize];
                let base = (cell * 3 + c) * bins;
                lane[base + lo] += wlo;
                lane[base + hi] += whi;
            }
        }
    }
    let acc: Vec<u64> = (0..dim).map(|i| (0..4).map(|l| lanes[l * dim + i]).sum()).collect();
    let cell_len = 3 * bins;
    let mut hist: Vec<f32> = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| (a as f64 / (255.0 * counts[i / cell_len].max(1) as f64)) as f32)
        .collect();
    // norm summed in sorted order so permuted cell layouts normalize identically
    let mut squares: Vec<f64> = hist.iter().map(|&v| (v as f64) * (v as f64)).collect();
    squares.sort_by(f64::total_cmp);
    let norm = squares.iter().sum::<f64>().sqrt();
    hist.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
    Ok(hist)
}

pub fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > 1e-12 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    } else {
        let u = (1.0 / v.len() as f64).sqrt() as f32;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Options for training the identity head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadTraining {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of replacing a training image by a random sub-window of
    /// itself in each epoch.
    pub crop_prob: f64,
    /// Largest fraction cut from any one side by the crop augmentation.
    pub crop_max: f64,
}

impl Default for HeadTraining {
    fn default() -> Self {
        HeadTraining {
            epochs: 150,
            batch: 32,
            lr: 0.0002,
            crop_prob: 0.0,
            crop_max: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Multi-class identity discriminator `d → h (relu) → C`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityHead {
    config: EmbedConfig,
    net: DenseNet<f32>,
    /// Identity label of each output class.
    identities: Vec<u32>,
    trained: bool,
}

impl IdentityHead {
    pub fn untrained(config: EmbedConfig, identities: Vec<u32>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, "identity_head/init");
        let net = DenseNet::init(
            &[config.feature_dim(), config.hidden, identities.len()],
            Activation::Relu,
            &mut rng,
        );
        Ok(IdentityHead {
            config,
            net,
            identities,
            trained: false,
        })
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    pub fn net(&self) -> &DenseNet<f32> {
        &self.net
    }

    pub fn classes(&self) -> usize {
        self.identities.len()
    }

    pub fn identities(&self) -> &[u32] {
        &self.identities
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// L2-normalized hidden activation for a canonical-size image.
    pub fn embed(&self, img: &Image) -> Result<Vec<f32>> {
        let raw = raw_features(img, &self.config)?;
        self.embed_raw(&raw)
    }

    pub fn embed_raw(&self, raw: &[f32]) -> Result<Vec<f32>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let mut hidden = self.net.activations_upto(raw, 1, 0)?;
        l2_normalize(&mut hidden);
        Ok(hidden)
    }

    /// Predicted identity label.
    pub fn classify(&self, img: &Image) -> Result<u32> {
        let raw = raw_features(img, &self.config)?;
        let logits = self.net.predict(&raw)?;
        Ok(self.identities[argmax(&logits)])
    }

    pub fn to_checkpoint(&self, ck: &mut Checkpoint) {
        ck.push_net("identity_head", &self.net);
        let c = &self.config;
        ck.push_f64(
            "embed_config",
            vec![c.cols as f64, c.rows as f64, c.bins as f64, c.hidden as f64],
        );
        ck.push_f64(
            "identity_labels",
            self.identities.iter().map(|&i| i as f64).collect(),
        );
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net: DenseNet<f32> = ck.read_net("identity_head")?;
        let cfg = ck.require("embed_config")?.data.as_f64();
        if cfg.len() != 4 {
            return Err(Error::Checkpoint("embed_config needs 4 entries".into()));
        }
        let config = EmbedConfig {
            cols: cfg[0] as usize,
            rows: cfg[1] as usize,
            bins: cfg[2] as usize,
            hidden: cfg[3] as usize,
        };
        config.validate()?;
        let identities: Vec<u32> = ck
            .require("identity_labels")?
            .data
            .as_f64()
            .into_iter()
            .map(|v| v as u32)
            .collect();
        let shape = net.layers().len() == 2
            && net.input_dim() == config.feature_dim()
            && net.layers()[0].outputs == config.hidden
            && net.output_dim() == identities.len();
        if !shape {
            return Err(Error::Checkpoint("identity_head shape disagrees with embed_config".into()));
        }
        Ok(IdentityHead {
            config,
            net,
            identities,
            trained: true,
        })
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains the head with softmax cross-entropy (Adam) on full images, with
/// optional random-crop augmentation. Returns the head and per-epoch stats,
/// where entry 0 is measured before the first update.
pub fn train_identity_head(
    samples: &[Sample],
    config: &EmbedConfig,
    opts: &HeadTraining,
    seed: u64,
) -> Result<(IdentityHead, Vec<HeadEpoch>)> {
    let mut identities: Vec<u32> = samples.iter().map(|s| s.identity).collect();
    identities.sort_unstable();
    identities.dedup();
    if identities.len() < 2 {
        return Err(Error::Dataset(
            "identity head needs at least two training identities".into(),
        ));
    }
    if opts.batch == 0 {
        return Err(Error::InvalidConfig("batch must be ≥ 1".into()));
    }
    let labels: Vec<usize> = samples
        .iter()
        .map(|s| identities.binary_search(&s.identity).expect("present"))
        .collect();
    let mut head = IdentityHead::untrained(config.clone(), identities, seed)?;
    let canonical: Vec<Image> = samples
        .iter()
        .map(|s| crop_resize(&s.image, &Window::FULL, CANONICAL_WIDTH, CANONICAL_HEIGHT))
        .collect::<Result<_>>()?;
    let full: Vec<Vec<f32>> = canonical
        .iter()
        .map(|img| raw_features(img, config))
        .collect::<Result<_>>()?;

    let d = config.feature_dim();
    let classes = head.classes();
    let mut opt = Optimizer::adam(opts.lr);
    let mut rng = seed::rng(seed, "identity_head/train");
    let mut log = vec![evaluate(&head.net, &full, &labels, classes)?];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=opts.epochs {
        let inputs: Vec<Vec<f32>> = (0..samples.len())
            .map(|i| {
                if opts.crop_prob > 0.0 && rng.gen_bool(opts.crop_prob) {
                    let m = opts.crop_max;
                    let w = Window::new(
                        rng.gen_range(0.0..=m),
                        rng.gen_range(0.0..=m),
                        1.0 - rng.gen_range(0.0..=m),
                        1.0 - rng.gen_range(0.0..=m),
                    )?;
                    let crop = crop_resize(&samples[i].image, &w, CANONICAL_WIDTH, CANONICAL_HEIGHT)?;
                    raw_features(&crop, config)
                } else {
                    Ok(full[i].clone())
                }
            })
            .collect::<Result<_>>()?;
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch) {
            let mut x = Vec::with_capacity(chunk.len() * d);
            let mut y = Vec::with_capacity(chunk.len());
            for &i in chunk {
                x.extend_from_slice(&inputs[i]);
                y.push(labels[i]);
            }
            let (logits, cache) = head.net.forward_batch(&x, chunk.len())?;
            let (_, grad) = softmax_cross_entropy(&logits, classes, &y);
            let grads = head.net.backward(&cache, &grad)?;
            opt.step(&mut head.net, &grads)?;
        }
        let mut stat = evaluate(&head.net, &full, &labels, classes)?;
        stat.epoch = epoch;
        log.push(stat);
    }
    head.trained = true;
    Ok((head, log))
}

fn evaluate(net: &DenseNet<f32>, inputs: &[Vec<f32>], labels: &[usize], classes: usize) -> Result<HeadEpoch> {
    let x: Vec<f32> = inputs.iter().flatten().copied().collect();
    let logits = net.predict_batch(&x, inputs.len())?;
    let (loss, _) = softmax_cross_entropy(&logits, classes, labels);
    let correct = logits
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(HeadEpoch {
        epoch: 0,
        loss: loss as f64,
        accuracy: correct as f64 / labels.len().max(1) as f64,
    })
}

/// Crops a window, resizes it to the canonical size and embeds it.
#[derive(Debug, Clone)]
pub struct Embedder {
    head: IdentityHead,
}

impl Embedder {
    pub fn new(head: IdentityHead) -> Result<Self> {
        if !head.is_trained() {
            return Err(Error::Untrained);
        }
        Ok(Embedder { head })
    }

    pub fn head(&self) -> &IdentityHead {
        &self.head
    }

    pub fn embed_image(&self, img: &Image) -> Result<Vec<f32>> {
        self.embed_window(img, &Window::FULL)
    }
}

impl WindowEmbedder for Embedder {
    fn embed_window(&self, image: &Image, window: &Window) -> Result<Vec<f32>> {
        let crop = crop_resize(image, window, CANONICAL_WIDTH, CANONICAL_HEIGHT)?;
        self.head.embed(&crop)
    }

    fn dim(&self) -> usize {
        self.head.config.hidden
    }
}
