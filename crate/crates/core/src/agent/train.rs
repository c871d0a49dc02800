use super::{masked_argmax, select_action, td_update, InputNorm, QParams, ReplayMemory, TrainSchedule, Transition, Which};
use crate::environment::{ActionSet, EnvConfig, Episode, Reward, Window, WindowEmbedder};
use crate::error::{Error, Result};
use crate::imaging::{Image, Sample};
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::Optimizer;
use crate::rewards::{context_for, has_references, sample_references, References, RewardKind};
use crate::seed;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

/// Training samples with their precomputed full-window embeddings.
pub struct TrainingSet<'a> {
    samples: &'a [Sample],
    embeddings: Vec<Vec<f32>>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(samples: &'a [Sample], embedder: &dyn WindowEmbedder) -> Result<Self> {
        let embeddings = samples
            .par_iter()
            .map(|s| embedder.embed_window(&s.image, &Window::FULL))
            .collect::<Result<_>>()?;
        Ok(TrainingSet { samples, embeddings })
    }

    pub fn samples(&self) -> &[Sample] {
        self.samples
    }

    pub fn embeddings(&self) -> &[Vec<f32>] {
        &self.embeddings
    }
}

/// How episode references are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceMode {
    /// Fresh references drawn at the start of every episode.
    Resample,
    /// One fixed set per sample, aligned with the training samples.
    Fixed(Vec<References>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean discounted episode return.
    pub mean_return: f64,
    /// Mean TD loss over the epoch's updates (0 before warm-up ends).
    pub mean_loss: f64,
    pub mean_len: f64,
    pub epsilon: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,mean_return,mean_loss,mean_len,epsilon";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.4},{:.4}",
            self.epoch, self.mean_return, self.mean_loss, self.mean_len, self.epsilon
        )
    }
}

/// Runs `schedule.epochs` passes of one episode per eligible sample in
/// shuffled order, storing every step in replay and, once the memory holds
/// `warmup` transitions, performing one TD update per step.
pub fn train(
    schedule: &TrainSchedule,
    env: &EnvConfig,
    set: &TrainingSet<'_>,
    embedder: &dyn WindowEmbedder,
    kind: RewardKind,
    refs: &ReferenceMode,
    seed: u64,
) -> Result<(QParams, Vec<EpochLog>)> {
    schedule.validate()?;
    env.validate()?;
    let train = set.samples;
    let eligible: Vec<usize> = match refs {
        ReferenceMode::Resample => {
            let ok: Vec<usize> = (0..train.len()).filter(|&i| has_references(train, i)).collect();
            if ok.len() < train.len() {
                log::info!(
                    "skipping {} samples without cross-view positive or same-view negative",
                    train.len() - ok.len()
                );
            }
            ok
        }
        ReferenceMode::Fixed(r) if r.len() == train.len() => (0..train.len()).collect(),
        ReferenceMode::Fixed(r) => {
            return Err(Error::InvalidConfig(format!(
                "{} fixed reference sets for {} samples",
                r.len(),
                train.len()
            )))
        }
    };
    if eligible.is_empty() {
        return Err(Error::Dataset(
            "no training sample has both a cross-view positive and a same-view negative".into(),
        ));
    }

    let state_dim = env.state_dim(embedder.dim());
    let norm = InputNorm::standardize(&set.embeddings, state_dim)?;
    let mut params = QParams::init_for_training(
        norm,
        &schedule.hidden,
        env.num_actions(),
        &mut seed::rng(seed, "agent/init"),
    );
    let mut opt = Optimizer::sgd(schedule.lr);
    let mut memory = ReplayMemory::new(schedule.replay_capacity);
    let mut order_rng = seed::rng(seed, "agent/order");
    let mut refs_rng = seed::rng(seed, "agent/references");
    let mut explore_rng = seed::rng(seed, "agent/explore");
    let mut replay_rng = seed::rng(seed, "agent/replay");
    let mut log = Vec::with_capacity(schedule.epochs);

    for epoch in 0..schedule.epochs {
        let epsilon = schedule.epsilon_at(epoch);
        let mut order = eligible.clone();
        order.shuffle(&mut order_rng);
        let (mut ret_sum, mut len_sum, mut loss_sum, mut updates) = (0.0, 0usize, 0.0, 0usize);
        for &i in &order {
            let episode_refs = match refs {
                ReferenceMode::Resample => {
                    sample_references(train, i, schedule.gallery_size, &mut refs_rng)?
                }
                ReferenceMode::Fixed(r) => r[i].clone(),
            };
            let ctx = context_for(kind, &episode_refs, &set.embeddings)?;
            let mut ep = Episode::new(&train[i].image, env, embedder)?;
            let mut state = ep.state()?.to_vec();
            let mut discount = 1.0;
            loop {
                let mask = ep.valid_mask();
                let a = select_action(&params, &state, epsilon, &mask, &mut explore_rng)?;
                let out = ep.step(a, embedder, &ctx)?;
                ret_sum += discount * out.reward;
                discount *= schedule.gamma;
                let next_state = out.state.to_vec();
                let next = (!out.terminal).then(|| (next_state.clone(), ep.valid_mask()));
                memory.push(Transition {
                    state: std::mem::replace(&mut state, next_state),
                    action: a,
                    reward: out.reward,
                    next,
                });
                if memory.len() >= schedule.warmup {
                    let batch = memory.sample(schedule.batch, &mut replay_rng);
                    loss_sum += td_update(
                        &mut params,
                        &batch,
                        schedule.gamma,
                        schedule.sync_period,
                        &mut opt,
                    )?;
                    updates += 1;
                }
                if out.terminal {
                    break;
                }
            }
            len_sum += ep.t();
        }
        let n = order.len() as f64;
        let row = EpochLog {
            epoch: epoch + 1,
            mean_return: ret_sum / n,
            mean_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            mean_len: len_sum as f64 / n,
            epsilon,
        };
        log::info!("{}", row.csv_row());
        log.push(row);
    }
    Ok((params, log))
}

/// Outcome of a greedy rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub window: Window,
    pub embedding: Vec<f32>,
    pub actions: Vec<usize>,
}

struct NoReward;

impl Reward for NoReward {
    fn reward(&self, _: &[f32], _: &[f32], _: bool) -> Result<f64> {
        Ok(0.0)
    }
}

/// Greedy masked rollout from the full window until Terminate or the step cap.
pub fn deploy_policy(
    params: &QParams,
    env: &EnvConfig,
    image: &Image,
    embedder: &dyn WindowEmbedder,
) -> Result<Deployment> {
    let mut ep = Episode::new(image, env, embedder)?;
    while !ep.is_terminated() {
        let state = ep.state()?.to_vec();
        let q = params.q_values(&state, Which::Online)?;
        let a = masked_argmax(&q, &ep.valid_mask());
        ep.step(a, embedder, &NoReward)?;
    }
    Ok(Deployment {
        window: ep.window(),
        embedding: ep.features().to_vec(),
        actions: ep.actions_taken().to_vec(),
    })
}

/// Trained parameters together with the settings needed to deploy them.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentCheckpoint {
    pub params: QParams,
    pub env: EnvConfig,
    pub feature_dim: usize,
    pub epsilon_floor: f64,
    pub gamma: f64,
    pub sync_period: u64,
}

impl AgentCheckpoint {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_net("q_online", self.params.online());
        ck.push_net("q_target", self.params.target());
        let norm = self.params.norm();
        ck.push_f64("q_input_shift", norm.shift.iter().map(|&v| v as f64).collect());
        ck.push_f64("q_input_scale", norm.scale.iter().map(|&v| v as f64).collect());
        ck.push_f64(
            "schedule",
            vec![
                self.epsilon_floor,
                self.gamma,
                self.sync_period as f64,
                self.env.n_step as f64,
                self.feature_dim as f64,
                self.env.history_len() as f64,
            ],
        );
        ck.push_f64("actions", self.env.scales.scales().to_vec());
        ck.push_f64("floor_frac", vec![self.env.floor_frac]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let online = ck.read_net("q_online")?;
        let target = ck.read_net("q_target")?;
        let norm = InputNorm {
            shift: ck.require("q_input_shift")?.data.as_f64().iter().map(|&v| v as f32).collect(),
            scale: ck.require("q_input_scale")?.data.as_f64().iter().map(|&v| v as f32).collect(),
        };
        let params = QParams::from_nets(online, target)?.with_norm(norm)?;
        let s = ck.require("schedule")?.data.as_f64();
        if s.len() != 6 {
            return Err(Error::Checkpoint("schedule needs 6 entries".into()));
        }
        let env = EnvConfig {
            scales: ActionSet::new(ck.require("actions")?.data.as_f64())?,
            floor_frac: ck
                .require("floor_frac")?
                .data
                .as_f64()
                .first()
                .copied()
                .ok_or_else(|| Error::Checkpoint("empty floor_frac".into()))?,
            n_step: s[3] as usize,
        };
        env.validate()?;
        let feature_dim = s[4] as usize;
        if params.state_dim() != env.state_dim(feature_dim)
            || params.num_actions() != env.num_actions()
            || s[5] as usize != env.history_len()
        {
            return Err(Error::Checkpoint(
                "network shape disagrees with the stored action set".into(),
            ));
        }
        Ok(AgentCheckpoint {
            params,
            env,
            feature_dim,
            epsilon_floor: s[0],
            gamma: s[1],
            sync_period: s[2] as u64,
        })
    }
}

pub fn save_agent(agent: &AgentCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    agent.to_checkpoint().write(path)
}

pub fn load_agent(path: impl AsRef<Path>) -> Result<AgentCheckpoint> {
    AgentCheckpoint::from_checkpoint(&Checkpoint::read(path)?)
}
