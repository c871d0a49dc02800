//! The refinement MDP: windows, stripe-cutting actions, states and episodes.

mod action;
mod episode;
mod window;

pub use action::{apply_action, valid_actions, Action, ActionSet, Side};
pub use episode::{
    AgentState, EnvConfig, Episode, FnEmbedder, Reward, StepOutcome, WindowEmbedder,
};
pub use window::Window;
