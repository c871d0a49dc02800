use super::action::{apply_action, valid_actions, Action, ActionSet};
use super::window::Window;
use crate::error::{Error, Result};
use crate::imaging::Image;
use serde::{Deserialize, Serialize};

/// MDP parameters shared by training, deployment and the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub scales: ActionSet,
    pub floor_frac: f64,
    pub n_step: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            scales: ActionSet::default(),
            floor_frac: 0.2,
            n_step: 5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor_frac > 0.0 && self.floor_frac < 1.0) {
            return Err(Error::InvalidConfig("floor_frac must lie in (0, 1)".into()));
        }
        if self.n_step == 0 {
            return Err(Error::InvalidConfig("n_step must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        self.scales.len()
    }

    pub fn history_len(&self) -> usize {
        self.num_actions() * self.n_step
    }

    pub fn state_dim(&self, feature_dim: usize) -> usize {
        feature_dim + self.history_len()
    }

    pub fn valid_mask(&self, w: &Window) -> Vec<bool> {
        valid_actions(w, &self.scales, self.floor_frac)
    }
}

/// Produces the feature vector of a window crop.
pub trait WindowEmbedder: Sync {
    fn embed_window(&self, image: &Image, window: &Window) -> Result<Vec<f32>>;
    fn dim(&self) -> usize;
}

/// Scores one transition from the embedding before to the embedding after.
pub trait Reward {
    fn reward(&self, before: &[f32], after: &[f32], terminate: bool) -> Result<f64>;
}

/// `s_t = [x_t, h_t]`: current window features and the action history.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub features: Vec<f32>,
    /// `n_step` one-hot slots of width |A|; slot `k` holds the action taken at step `k`.
    pub history: Vec<f32>,
}

impl AgentState {
    pub fn dim(&self) -> usize {
        self.features.len() + self.history.len()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.dim());
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut Vec<f32>) {
        out.extend_from_slice(&self.features);
        out.extend_from_slice(&self.history);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: AgentState,
    pub reward: f64,
    pub terminal: bool,
}

/// One refinement trajectory over a single image.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    image: &'a Image,
    config: &'a EnvConfig,
    window: Window,
    taken: Vec<usize>,
    terminated: bool,
    features: Vec<f32>,
}

impl<'a> Episode<'a> {
    pub fn new(image: &'a Image, config: &'a EnvConfig, embedder: &dyn WindowEmbedder) -> Result<Self> {
        let features = embedder.embed_window(image, &Window::FULL)?;
        Ok(Episode {
            image,
            config,
            window: Window::FULL,
            taken: Vec::new(),
            terminated: false,
            features,
        })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn t(&self) -> usize {
        self.taken.len()
    }

    pub fn actions_taken(&self) -> &[usize] {
        &self.taken
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.config.valid_mask(&self.window)
    }

    pub fn state(&self) -> Result<AgentState> {
        if self.terminated {
            return Err(Error::EpisodeTerminated);
        }
        Ok(self.build_state())
    }

    fn build_state(&self) -> AgentState {
        let n = self.config.num_actions();
        let mut history = vec![0.0; self.config.history_len()];
        for (slot, &a) in self.taken.iter().enumerate() {
            history[slot * n + a] = 1.0;
        }
        AgentState {
            features: self.features.clone(),
            history,
        }
    }

    /// Applies action `index`, scores it, and advances the step counter.
    pub fn step(
        &mut self,
        index: usize,
        embedder: &dyn WindowEmbedder,
        reward: &dyn Reward,
    ) -> Result<StepOutcome> {
        if self.terminated {
            return Err(Error::EpisodeTerminated);
        }
        let action = self
            .config
            .scales
            .action(index)
            .ok_or_else(|| Error::InvalidAction(format!("index {index} out of range")))?;
        let (after, terminate) = match action {
            Action::Terminate => (self.features.clone(), true),
            cut => {
                let next = apply_action(&self.window, &cut, self.config.floor_frac)?;
                let features = embedder.embed_window(self.image, &next)?;
                self.window = next;
                (features, false)
            }
        };
        let r = reward.reward(&self.features, &after, terminate)?;
        self.features = after;
        self.taken.push(index);
        let terminal = terminate || self.taken.len() >= self.config.n_step;
        let state = self.build_state();
        self.terminated = terminal;
        Ok(StepOutcome {
            state,
            reward: r,
            terminal,
        })
    }
}

/// Embedder backed by a closure, mainly for tests.
pub struct FnEmbedder<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> WindowEmbedder for FnEmbedder<F>
where
    F: Fn(&Image, &Window) -> Result<Vec<f32>> + Sync,
{
    fn embed_window(&self, image: &Image, window: &Window) -> Result<Vec<f32>> {
        (self.f)(image, window)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;
    impl Reward for Zero {
        fn reward(&self, _: &[f32], _: &[f32], _: bool) -> Result<f64> {
            Ok(0.0)
        }
    }

    fn coords_embedder() -> FnEmbedder<impl Fn(&Image, &Window) -> Result<Vec<f32>> + Sync> {
        FnEmbedder {
            dim: 4,
            f: |_: &Image, w: &Window| Ok(w.coords().iter().map(|&c| c as f32).collect()),
        }
    }

    #[test]
    fn empty_history_at_start() {
        let img = Image::filled(8, 16, [0, 0, 0]);
        let cfg = EnvConfig::default();
        let emb = coords_embedder();
        let ep = Episode::new(&img, &cfg, &emb).unwrap();
        let s = ep.state().unwrap();
        assert_eq!(s.history.len(), 65);
        assert!(s.history.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn one_hot_after_first_action() {
        let img = Image::filled(8, 16, [0, 0, 0]);
        let cfg = EnvConfig::default();
        let emb = coords_embedder();
        let mut ep = Episode::new(&img, &cfg, &emb).unwrap();
        let out = ep.step(4, &emb, &Zero).unwrap();
        assert!(!out.terminal);
        let h = &out.state.history;
        assert_eq!(h[4], 1.0);
        assert_eq!(h.iter().filter(|&&b| b != 0.0).count(), 1);
        assert_eq!(out.state.features, vec![0.0, 0.0, 0.9, 1.0]);
    }

    #[test]
    fn default_state_dimension() {
        assert_eq!(EnvConfig::default().state_dim(128), 193);
    }

    #[test]
    fn terminate_at_start() {
        let img = Image::filled(8, 16, [0, 0, 0]);
        let cfg = EnvConfig::default();
        let emb = coords_embedder();
        let mut ep = Episode::new(&img, &cfg, &emb).unwrap();
        let out = ep.step(12, &emb, &Zero).unwrap();
        assert!(out.terminal);
        assert_eq!(ep.window(), Window::FULL);
        assert!(matches!(ep.step(0, &emb, &Zero), Err(Error::EpisodeTerminated)));
        assert!(matches!(ep.state(), Err(Error::EpisodeTerminated)));
    }

    #[test]
    fn step_cap_terminates() {
        let img = Image::filled(8, 16, [0, 0, 0]);
        let cfg = EnvConfig::default();
        let emb = coords_embedder();
        let mut ep = Episode::new(&img, &cfg, &emb).unwrap();
        for k in 0..5 {
            let out = ep.step(0, &emb, &Zero).unwrap();
            assert_eq!(out.terminal, k == 4);
        }
        assert_eq!(ep.t(), 5);
        assert!(ep.step(12, &emb, &Zero).is_err());
    }

    #[test]
    fn invalid_action_rejected_without_side_effects() {
        let img = Image::filled(8, 16, [0, 0, 0]);
        let cfg = EnvConfig {
            floor_frac: 0.9,
            ..EnvConfig::default()
        };
        let emb = coords_embedder();
        let mut ep = Episode::new(&img, &cfg, &emb).unwrap();
        assert!(ep.step(2, &emb, &Zero).is_err());
        assert_eq!(ep.t(), 0);
        assert!(ep.step(99, &emb, &Zero).is_err());
    }
}
