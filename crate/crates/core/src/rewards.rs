//! Reward functions scoring one window change against fixed references: a
//! cross-view positive, a same-view negative and a cross-view gallery.

use crate::environment::Reward;
use crate::error::{Error, Result};
use crate::imaging::Sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_GALLERY_SIZE: usize = 600;

/// Euclidean distance, accumulated in f64.
pub fn f_match(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "f_match",
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(u
        .iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Relative comparison: how much the action widened the margin between the
/// negative and the positive.
pub fn reward_rc(x: &[f32], xa: &[f32], pos: &[f32], neg: &[f32]) -> Result<f64> {
    Ok((f_match(xa, neg)? - f_match(xa, pos)?) - (f_match(x, neg)? - f_match(x, pos)?))
}

/// Absolute comparison: how much closer the action moved to the positive.
pub fn reward_ac(x: &[f32], xa: &[f32], pos: &[f32]) -> Result<f64> {
    Ok(f_match(x, pos)? - f_match(xa, pos)?)
}

/// 1-based rank of `gallery[target]` when the gallery is sorted by ascending
/// distance to `query`, ties resolved by gallery order.
pub fn rank_of(query: &[f32], gallery: &[Vec<f32>], target: usize) -> Result<usize> {
    let dt = f_match(query, &gallery[target])?;
    let mut rank = 1;
    for (j, g) in gallery.iter().enumerate() {
        let d = f_match(query, g)?;
        if d < dt || (d == dt && j < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// +1 iff the positive's rank strictly improves, else −1.
pub fn reward_rank(x: &[f32], xa: &[f32], gallery: &[Vec<f32>], positive: usize) -> Result<f64> {
    if positive >= gallery.len() {
        return Err(Error::MissingReference("positive is not in the gallery".into()));
    }
    let before = rank_of(x, gallery, positive)?;
    let after = rank_of(xa, gallery, positive)?;
    Ok(if after < before { 1.0 } else { -1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Rc,
    Ac,
    Rank,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [RewardKind::Rc, RewardKind::Ac, RewardKind::Rank];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Rc => "rc",
            RewardKind::Ac => "ac",
            RewardKind::Rank => "rank",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rc" => Ok(RewardKind::Rc),
            "ac" => Ok(RewardKind::Ac),
            "rank" => Ok(RewardKind::Rank),
            other => Err(Error::InvalidConfig(format!(
                "unknown reward {other:?}, expected rc|ac|rank"
            ))),
        }
    }
}

/// Reference embeddings held fixed for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardContext {
    kind: RewardKind,
    positive: Vec<f32>,
    negative: Option<Vec<f32>>,
    gallery: Vec<Vec<f32>>,
    positive_index: Option<usize>,
}

impl RewardContext {
    /// `positive_index` locates the positive inside `gallery`; only the rank
    /// reward needs it, and only the relative reward needs the negative.
    pub fn new(
        kind: RewardKind,
        positive: Vec<f32>,
        negative: Option<Vec<f32>>,
        gallery: Vec<Vec<f32>>,
        positive_index: Option<usize>,
    ) -> Result<Self> {
        match kind {
            RewardKind::Rc if negative.is_none() => {
                return Err(Error::MissingReference("relative reward needs a negative".into()))
            }
            RewardKind::Rank => match positive_index {
                Some(i) if i < gallery.len() && gallery[i] == positive => {}
                _ => {
                    return Err(Error::MissingReference(
                        "ranking reward needs the positive inside the gallery".into(),
                    ))
                }
            },
            _ => {}
        }
        Ok(RewardContext {
            kind,
            positive,
            negative,
            gallery,
            positive_index,
        })
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    pub fn positive(&self) -> &[f32] {
        &self.positive
    }
}

impl Reward for RewardContext {
    fn reward(&self, before: &[f32], after: &[f32], terminate: bool) -> Result<f64> {
        match self.kind {
            RewardKind::Rc if terminate => Ok(0.0),
            RewardKind::Rc => reward_rc(
                before,
                after,
                &self.positive,
                self.negative.as_deref().expect("validated"),
            ),
            RewardKind::Ac => reward_ac(before, after, &self.positive),
            RewardKind::Rank => reward_rank(
                before,
                after,
                &self.gallery,
                self.positive_index.expect("validated"),
            ),
        }
    }
}

/// Indices (into the training split) of one episode's references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct References {
    pub positive: usize,
    pub negative: usize,
    /// Cross-view samples, containing `positive` exactly once.
    pub gallery: Vec<usize>,
    /// Position of `positive` inside `gallery`.
    pub positive_slot: usize,
}

/// Whether `train[index]` has at least one cross-view positive and one
/// same-view negative.
pub fn has_references(train: &[Sample], index: usize) -> bool {
    let s = &train[index];
    let pos = train
        .iter()
        .any(|o| o.identity == s.identity && o.camera != s.camera);
    let neg = train
        .iter()
        .any(|o| o.identity != s.identity && o.camera == s.camera);
    pos && neg
}

/// Draws a uniform positive, a uniform negative and a uniform gallery of
/// `min(gallery_size, available)` cross-view samples containing the positive.
pub fn sample_references<R: Rng + ?Sized>(
    train: &[Sample],
    index: usize,
    gallery_size: usize,
    rng: &mut R,
) -> Result<References> {
    let s = &train[index];
    let positives: Vec<usize> = (0..train.len())
        .filter(|&j| train[j].identity == s.identity && train[j].camera != s.camera)
        .collect();
    let negatives: Vec<usize> = (0..train.len())
        .filter(|&j| train[j].identity != s.identity && train[j].camera == s.camera)
        .collect();
    let (Some(&positive), Some(&negative)) = (positives.choose(rng), negatives.choose(rng)) else {
        return Err(Error::MissingReference(format!(
            "sample {index} (identity {}) lacks a cross-view positive or same-view negative",
            s.identity
        )));
    };
    if gallery_size == 0 {
        return Err(Error::InvalidConfig("gallery size must be ≥ 1".into()));
    }
    let others: Vec<usize> = (0..train.len())
        .filter(|&j| train[j].camera != s.camera && j != positive)
        .collect();
    let take = (gallery_size - 1).min(others.len());
    let mut gallery: Vec<usize> = others.choose_multiple(rng, take).copied().collect();
    gallery.push(positive);
    gallery.shuffle(rng);
    let positive_slot = gallery.iter().position(|&g| g == positive).expect("pushed");
    Ok(References {
        positive,
        negative,
        gallery,
        positive_slot,
    })
}

/// Builds the episode's reward from precomputed full-window embeddings of
/// the training split.
pub fn context_for(
    kind: RewardKind,
    refs: &References,
    train_embeddings: &[Vec<f32>],
) -> Result<RewardContext> {
    let gallery = match kind {
        RewardKind::Rank => refs
            .gallery
            .iter()
            .map(|&g| train_embeddings[g].clone())
            .collect(),
        _ => Vec::new(),
    };
    RewardContext::new(
        kind,
        train_embeddings[refs.positive].clone(),
        Some(train_embeddings[refs.negative].clone()),
        gallery,
        Some(refs.positive_slot),
    )
}
