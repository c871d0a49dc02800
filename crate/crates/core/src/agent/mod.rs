//! Deep Q-learning over window-cutting episodes: an online value network, a
//! periodically synced target copy, experience replay and masked ε-greedy
//! exploration.

mod replay;
mod train;

pub use replay::{ReplayMemory, Transition};
pub use train::{
    deploy_policy, load_agent, save_agent, train, AgentCheckpoint, Deployment, EpochLog, ReferenceMode,
    TrainingSet,
};

use crate::error::{Error, Result};
use crate::numerics::loss::selected_mse;
use crate::numerics::{Activation, DenseNet, Optimizer};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hyper-parameters of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub gamma: f64,
    /// Target sync period, counted in TD updates.
    pub sync_period: u64,
    pub lr: f64,
    pub batch: usize,
    pub warmup: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    pub gallery_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 10,
            epsilon_start: 1.0,
            epsilon_decay: 0.15,
            epsilon_floor: 0.1,
            gamma: 0.8,
            sync_period: 100,
            lr: 0.00025,
            batch: 64,
            warmup: 1000,
            replay_capacity: 100_000,
            hidden: vec![1024, 1024, 1024],
            gallery_size: crate::rewards::DEFAULT_GALLERY_SIZE,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.epsilon_floor)
            || !(self.epsilon_floor..=1.0).contains(&self.epsilon_start)
        {
            return bad("epsilon bounds must satisfy 0 ≤ floor ≤ start ≤ 1");
        }
        if self.epsilon_decay < 0.0 {
            return bad("epsilon_decay must be ≥ 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.sync_period == 0 {
            return bad("sync_period must be ≥ 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.replay_capacity == 0 || self.gallery_size == 0 {
            return bad("batch, replay_capacity and gallery_size must be ≥ 1");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be ≥ 1");
        }
        Ok(())
    }

    /// Exploration rate for 0-based `epoch`: linear decay clamped at the
    /// floor. Values within 1e-12 of the floor snap to it, so that
    /// `1.0 − 6·0.15` gives exactly 0.1.
    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        let e = self.epsilon_start - self.epsilon_decay * epoch as f64;
        if e <= self.epsilon_floor + 1e-12 {
            self.epsilon_floor
        } else {
            e
        }
    }
}

/// `max(0.1, 1 − 0.15·epoch)` with the default schedule.
pub fn epsilon_at(epoch: usize) -> f64 {
    TrainSchedule::default().epsilon_at(epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Online,
    Target,
}

/// Fixed per-input affine map `(s − shift) · scale` applied before both nets.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub shift: Vec<f32>,
    pub scale: Vec<f32>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        InputNorm {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Standardizes the first `rows[0].len()` inputs to zero mean and unit
    /// variance over `rows`; the remaining inputs of a `dim`-wide state pass
    /// through. Near-constant coordinates get their deviation floored at a
    /// tenth of the mean deviation so they are not blown up into noise.
    pub fn standardize(rows: &[Vec<f32>], dim: usize) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidConfig("no rows to standardize".into()));
        };
        let d = first.len();
        if d > dim || rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                context: "standardized features",
                expected: d.min(dim),
                got: rows.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0f64; d];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v as f64 / n);
        }
        let mut dev = vec![0.0f64; d];
        for r in rows {
            dev.iter_mut()
                .zip(r.iter().zip(&mean))
                .for_each(|(s, (&v, &m))| *s += (v as f64 - m).powi(2) / n);
        }
        dev.iter_mut().for_each(|v| *v = v.sqrt());
        let floor = 0.1 * dev.iter().sum::<f64>() / d as f64;
        let mut norm = Self::identity(dim);
        for k in 0..d {
            norm.shift[k] = mean[k] as f32;
            let sd = dev[k].max(floor);
            norm.scale[k] = if sd > 0.0 { (1.0 / sd) as f32 } else { 1.0 };
        }
        Ok(norm)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, state: &[f32], out: &mut Vec<f32>) {
        out.extend(
            state
                .iter()
                .zip(self.shift.iter().zip(&self.scale))
                .map(|(&v, (&m, &k))| (v - m) * k),
        );
    }
}

/// Online value network plus its frozen target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct QParams {
    online: DenseNet<f32>,
    target: DenseNet<f32>,
    norm: InputNorm,
    /// TD updates applied so far.
    updates: u64,
}

impl QParams {
    pub fn init<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], actions: usize, rng: &mut R) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(actions);
        let online = DenseNet::init(&sizes, Activation::Relu, rng);
        QParams {
            target: online.clone(),
            online,
            norm: InputNorm::identity(state_dim),
            updates: 0,
        }
    }

    /// Initialization used for training: inputs pass through `norm`, and the
    /// output layer starts at zero so the bootstrap max is not biased upward
    /// by initial noise.
    pub fn init_for_training<R: Rng + ?Sized>(
        norm: InputNorm,
        hidden: &[usize],
        actions: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::init(norm.dim(), hidden, actions, rng);
        let last = p.online.layers().len() - 1;
        p.online.layer_mut(last).weight.iter_mut().for_each(|w| *w = 0.0);
        p.target = p.online.clone();
        p.norm = norm;
        p
    }

    pub fn from_nets(online: DenseNet<f32>, target: DenseNet<f32>) -> Result<Self> {
        let shape = |n: &DenseNet<f32>| -> Vec<(usize, usize, Activation)> {
            n.layers().iter().map(|l| (l.inputs, l.outputs, l.activation)).collect()
        };
        if shape(&online) != shape(&target) {
            return Err(Error::InvalidConfig("online and target nets differ in shape".into()));
        }
        let norm = InputNorm::identity(online.input_dim());
        Ok(QParams {
            online,
            target,
            norm,
            updates: 0,
        })
    }

    pub fn with_norm(mut self, norm: InputNorm) -> Result<Self> {
        if norm.dim() != self.state_dim() || norm.scale.len() != norm.dim() {
            return Err(Error::DimensionMismatch {
                context: "input normalization",
                expected: self.state_dim(),
                got: norm.dim(),
            });
        }
        self.norm = norm;
        Ok(self)
    }

    pub fn norm(&self) -> &InputNorm {
        &self.norm
    }

    pub fn online(&self) -> &DenseNet<f32> {
        &self.online
    }

    pub fn target(&self) -> &DenseNet<f32> {
        &self.target
    }

    pub fn online_mut(&mut self) -> &mut DenseNet<f32> {
        &mut self.online
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn state_dim(&self) -> usize {
        self.online.input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.online.output_dim()
    }

    pub fn q_values(&self, state: &[f32], which: Which) -> Result<Vec<f32>> {
        if state.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "q-network input",
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        let mut x = Vec::with_capacity(state.len());
        self.norm.apply(state, &mut x);
        match which {
            Which::Online => self.online.predict(&x),
            Which::Target => self.target.predict(&x),
        }
    }

    /// Copies the online parameters into the target net.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

/// Highest value among valid entries; ties go to the lowest index.
pub fn masked_argmax(values: &[f32], mask: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best.expect("mask has a valid action")
}

/// ε-greedy over the valid actions. One uniform draw decides between
/// exploring and exploiting, so the RNG advances identically in both cases.
pub fn select_action<R: Rng + ?Sized>(
    params: &QParams,
    state: &[f32],
    epsilon: f64,
    mask: &[bool],
    rng: &mut R,
) -> Result<usize> {
    assert!(mask.iter().any(|&m| m), "empty action mask");
    if mask.len() != params.num_actions() {
        return Err(Error::DimensionMismatch {
            context: "action mask",
            expected: params.num_actions(),
            got: mask.len(),
        });
    }
    if rng.gen::<f64>() < epsilon {
        let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        return Ok(valid[rng.gen_range(0..valid.len())]);
    }
    let q = params.q_values(state, Which::Online)?;
    Ok(masked_argmax(&q, mask))
}

/// One gradient step on the online net toward `R + γ·max Q_target(s', ·)`
/// (or `R` for terminal transitions), maximizing over the successor's valid
/// actions. Returns the pre-step mean squared error. Transitions whose
/// target is non-finite are skipped. Syncs the target every `sync_period`
/// updates.
pub fn td_update(
    params: &mut QParams,
    batch: &[&Transition],
    gamma: f64,
    sync_period: u64,
    opt: &mut Optimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty minibatch".into()));
    }
    let dim = params.state_dim();
    let actions = params.num_actions();
    for t in batch {
        let next_len = t.next.as_ref().map_or(dim, |(s, _)| s.len());
        if t.state.len() != dim || next_len != dim {
            return Err(Error::DimensionMismatch {
                context: "stored transition state",
                expected: dim,
                got: if t.state.len() != dim { t.state.len() } else { next_len },
            });
        }
    }
    let successors: Vec<&(Vec<f32>, Vec<bool>)> = batch.iter().filter_map(|t| t.next.as_ref()).collect();
    let mut next_inputs = Vec::with_capacity(successors.len() * dim);
    for (s, _) in &successors {
        params.norm.apply(s, &mut next_inputs);
    }
    let next_q = if successors.is_empty() {
        Vec::new()
    } else {
        params.target.predict_batch(&next_inputs, successors.len())?
    };

    let mut inputs = Vec::with_capacity(batch.len() * dim);
    let mut chosen = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    let mut k = 0;
    for t in batch {
        if t.action >= actions {
            return Err(Error::InvalidAction(format!("stored action {} out of range", t.action)));
        }
        let y = match &t.next {
            None => t.reward,
            Some((_, mask)) => {
                let q = &next_q[k * actions..(k + 1) * actions];
                k += 1;
                t.reward + gamma * q[masked_argmax(q, mask)] as f64
            }
        };
        if !y.is_finite() {
            log::warn!("skipping transition with non-finite target {y}");
            continue;
        }
        params.norm.apply(&t.state, &mut inputs);
        chosen.push(t.action);
        targets.push(y as f32);
    }
    if chosen.is_empty() {
        return Ok(0.0);
    }
    let (preds, cache) = params.online.forward_batch(&inputs, chosen.len())?;
    let (loss, grad) = selected_mse(&preds, actions, &chosen, &targets);
    let grads = params.online.backward(&cache, &grad)?;
    opt.step(&mut params.online, &grads)?;
    params.updates += 1;
    if params.updates % sync_period == 0 {
        params.sync_target();
    }
    Ok(loss as f64)
}
