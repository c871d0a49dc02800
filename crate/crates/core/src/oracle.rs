//! Ground truth for the learner: exhaustive search over cut sequences on one
//! image, and value iteration on small tabular MDPs.

use crate::environment::{apply_action, Action, EnvConfig, Episode, Reward, Window, WindowEmbedder};
use crate::error::{Error, Result};
use crate::imaging::Image;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

/// Deepest search accepted; 12⁶ ≈ 3·10⁶ leaf sequences.
pub const MAX_SEARCH_DEPTH: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    /// Executed action indices, ending in Terminate unless the step cap was hit.
    pub actions: Vec<usize>,
    #[serde(rename = "return")]
    pub ret: f64,
    pub window: Window,
}

fn key(w: &Window) -> [u64; 4] {
    w.coords().map(f64::to_bits)
}

/// Every window reachable in at most `depth` cuts, keyed by exact coordinates.
fn reachable_windows(env: &EnvConfig) -> Vec<Window> {
    let mut seen: HashMap<[u64; 4], ()> = HashMap::new();
    let mut all = vec![Window::FULL];
    seen.insert(key(&Window::FULL), ());
    let mut frontier = vec![Window::FULL];
    for _ in 0..env.n_step {
        let mut next = Vec::new();
        for w in &frontier {
            for a in env.scales.iter() {
                if a == Action::Terminate {
                    continue;
                }
                if let Ok(c) = apply_action(w, &a, env.floor_frac) {
                    if seen.insert(key(&c), ()).is_none() {
                        next.push(c);
                        all.push(c);
                    }
                }
            }
        }
        frontier = next;
    }
    all
}

struct Search<'a> {
    env: &'a EnvConfig,
    reward: &'a dyn Reward,
    gamma: f64,
    embeddings: HashMap<[u64; 4], Vec<f32>>,
    /// Best (return, actions) from a window with a given number of steps left.
    memo: HashMap<([u64; 4], usize), (f64, Vec<usize>)>,
}

/// Whether candidate `(r, seq)` beats the incumbent: higher return, then
/// fewer actions, then lexicographically smaller.
fn better(r: f64, seq: &[usize], best: &Option<(f64, Vec<usize>)>) -> bool {
    match best {
        None => true,
        Some((br, bs)) => r > *br || (r == *br && (seq.len(), seq) < (bs.len(), bs.as_slice())),
    }
}

impl Search<'_> {
    fn best_from(&mut self, w: Window, left: usize) -> Result<(f64, Vec<usize>)> {
        if left == 0 {
            return Ok((0.0, Vec::new()));
        }
        if let Some(hit) = self.memo.get(&(key(&w), left)) {
            return Ok(hit.clone());
        }
        let here = self.embeddings[&key(&w)].clone();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for (i, a) in self.env.scales.iter().enumerate() {
            let cand = match a {
                Action::Terminate => (self.reward.reward(&here, &here, true)?, vec![i]),
                cut => {
                    let Ok(next) = apply_action(&w, &cut, self.env.floor_frac) else {
                        continue;
                    };
                    let r = self.reward.reward(&here, &self.embeddings[&key(&next)], false)?;
                    let (tail, mut seq) = self.best_from(next, left - 1)?;
                    seq.insert(0, i);
                    (r + self.gamma * tail, seq)
                }
            };
            if better(cand.0, &cand.1, &best) {
                best = Some(cand);
            }
        }
        let best = best.expect("terminate is always available");
        self.memo.insert((key(&w), left), best.clone());
        Ok(best)
    }
}

/// Best discounted return over all valid action sequences of at most
/// `env.n_step` actions, with references fixed inside `reward`. Window
/// embeddings are computed once per distinct window.
pub fn exhaustive_best_sequence(
    image: &Image,
    env: &EnvConfig,
    embedder: &dyn WindowEmbedder,
    reward: &dyn Reward,
    gamma: f64,
) -> Result<SearchResult> {
    env.validate()?;
    if env.n_step > MAX_SEARCH_DEPTH {
        return Err(Error::SearchTooDeep(env.n_step));
    }
    let windows = reachable_windows(env);
    let embedded: Vec<Vec<f32>> = windows
        .par_iter()
        .map(|w| embedder.embed_window(image, w))
        .collect::<Result<_>>()?;
    let mut search = Search {
        env,
        reward,
        gamma,
        embeddings: windows.iter().map(key).zip(embedded).collect(),
        memo: HashMap::new(),
    };
    let (_, actions) = search.best_from(Window::FULL, env.n_step)?;
    let ret = sequence_return(image, env, embedder, reward, gamma, &actions)?;
    let mut window = Window::FULL;
    for &a in &actions {
        if let Some(cut @ Action::Cut { .. }) = env.scales.action(a) {
            window = apply_action(&window, &cut, env.floor_frac)?;
        }
    }
    Ok(SearchResult {
        actions,
        ret,
        window,
    })
}

/// Discounted return `Σ γᵗ Rₜ` of executing `actions` from the full window,
/// summed forward.
pub fn sequence_return(
    image: &Image,
    env: &EnvConfig,
    embedder: &dyn WindowEmbedder,
    reward: &dyn Reward,
    gamma: f64,
    actions: &[usize],
) -> Result<f64> {
    let mut ep = Episode::new(image, env, embedder)?;
    let (mut total, mut discount) = (0.0, 1.0);
    for &a in actions {
        total += discount * ep.step(a, embedder, reward)?.reward;
        discount *= gamma;
    }
    Ok(total)
}

/// Finite deterministic MDP. A `None` successor ends the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    /// `next[s][a]`.
    pub next: Vec<Vec<Option<usize>>>,
    /// States flagged terminal must be absorbing: every action loops back
    /// with zero reward.
    pub terminal: Vec<bool>,
    pub gamma: f64,
}

impl ToyMdp {
    pub fn states(&self) -> usize {
        self.rewards.len()
    }

    pub fn actions(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.states(), self.actions());
        let bad = |m: String| Err(Error::ToyMdp(m));
        if n == 0 || m == 0 {
            return bad("needs at least one state and one action".into());
        }
        if self.next.len() != n || self.terminal.len() != n {
            return bad("rewards, next and terminal disagree on the state count".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        for s in 0..n {
            if self.rewards[s].len() != m || self.next[s].len() != m {
                return bad(format!("state {s} has a ragged action row"));
            }
            for a in 0..m {
                if !self.rewards[s][a].is_finite() {
                    return bad(format!("reward ({s}, {a}) is not finite"));
                }
                if let Some(t) = self.next[s][a] {
                    if t >= n {
                        return bad(format!("successor of ({s}, {a}) is out of range"));
                    }
                }
                if self.terminal[s] && (self.next[s][a].map_or(false, |t| t != s) || self.rewards[s][a] != 0.0) {
                    return bad(format!("terminal state {s} is not absorbing"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Largest change in the final sweep.
    pub residual: f64,
}

impl QTable {
    pub fn value(&self, s: usize) -> f64 {
        self.q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Best action in `s`, ties to the lowest index.
    pub fn greedy(&self, s: usize) -> usize {
        let row = &self.q[s];
        (0..row.len()).fold(0, |b, a| if row[a] > row[b] { a } else { b })
    }
}

fn backup(mdp: &ToyMdp, q: &[Vec<f64>], s: usize, a: usize) -> f64 {
    let future = match mdp.next[s][a] {
        Some(t) if !mdp.terminal[t] => q[t].iter().copied().fold(f64::NEG_INFINITY, f64::max),
        _ => 0.0,
    };
    mdp.rewards[s][a] + mdp.gamma * future
}

/// Synchronous value iteration on Q until the largest update is below
/// `tolerance`.
pub fn q_iteration(mdp: &ToyMdp, tolerance: f64) -> Result<QTable> {
    mdp.validate()?;
    const MAX_SWEEPS: usize = 1_000_000;
    let mut q = vec![vec![0.0; mdp.actions()]; mdp.states()];
    for sweep in 1..=MAX_SWEEPS {
        let mut residual: f64 = 0.0;
        let next: Vec<Vec<f64>> = (0..mdp.states())
            .map(|s| (0..mdp.actions()).map(|a| backup(mdp, &q, s, a)).collect())
            .collect();
        for (row, new) in q.iter().zip(&next) {
            for (o, n) in row.iter().zip(new) {
                residual = residual.max((o - n).abs());
            }
        }
        q = next;
        if residual < tolerance {
            return Ok(QTable {
                q,
                iterations: sweep,
                residual,
            });
        }
    }
    Err(Error::ToyMdp(format!("no convergence within {MAX_SWEEPS} sweeps")))
}

/// Largest `|Q(s,a) − backup(s,a)|` over the table.
pub fn bellman_residual(mdp: &ToyMdp, table: &QTable) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..mdp.states() {
        for a in 0..mdp.actions() {
            worst = worst.max((table.q[s][a] - backup(mdp, &table.q, s, a)).abs());
        }
    }
    worst
}

/// Follows the greedy policy from `start` for at most `max_steps`, returning
/// the discounted return (accumulated backward, like a Bellman backup) and
/// the actions taken.
pub fn greedy_rollout(mdp: &ToyMdp, table: &QTable, start: usize, max_steps: usize) -> (f64, Vec<usize>) {
    let mut s = start;
    let mut rewards = Vec::new();
    let mut actions = Vec::new();
    for _ in 0..max_steps {
        if mdp.terminal[s] {
            break;
        }
        let a = table.greedy(s);
        actions.push(a);
        rewards.push(mdp.rewards[s][a]);
        match mdp.next[s][a] {
            Some(t) => s = t,
            None => break,
        }
    }
    let ret = rewards.iter().rev().fold(0.0, |g, &r| r + mdp.gamma * g);
    (ret, actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::FnEmbedder;
    use crate::rewards::{RewardContext, RewardKind};

    struct Zero;
    impl Reward for Zero {
        fn reward(&self, _: &[f32], _: &[f32], _: bool) -> Result<f64> {
            Ok(0.0)
        }
    }

    /// Embedding that depends nonlinearly on the window so rewards vary.
    fn wavy() -> FnEmbedder<impl Fn(&Image, &Window) -> Result<Vec<f32>> + Sync> {
        FnEmbedder {
            dim: 3,
            f: |_: &Image, w: &Window| {
                let [x1, y1, x2, y2] = w.coords();
                Ok(vec![
                    (3.0 * x1 + y2).sin() as f32,
                    (5.0 * y1 - x2).cos() as f32,
                    (x1 * y1 * 7.0 + x2).sin() as f32,
                ])
            },
        }
    }

    fn rc() -> RewardContext {
        RewardContext::new(RewardKind::Rc, vec![0.5, 0.9, -0.2], Some(vec![-0.4, 0.1, 0.8]), vec![], None)
            .unwrap()
    }

    fn img() -> Image {
        Image::filled(8, 16, [0, 0, 0])
    }

    fn env(n_step: usize) -> EnvConfig {
        EnvConfig {
            n_step,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn null_reward_prefers_immediate_stop() {
        let r = exhaustive_best_sequence(&img(), &env(3), &wavy(), &Zero, 0.8).unwrap();
        assert_eq!(r.ret, 0.0);
        assert_eq!(r.actions, vec![12]);
        assert_eq!(r.window, Window::FULL);
    }

    #[test]
    fn depth_one_is_best_single_action() {
        let e = env(1);
        let r = exhaustive_best_sequence(&img(), &e, &wavy(), &rc(), 0.8).unwrap();
        let best = (0..13)
            .map(|a| sequence_return(&img(), &e, &wavy(), &rc(), 0.8, &[a]).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.ret, best);
        assert_eq!(r.actions.len(), 1);
    }

    #[test]
    fn too_deep_rejected() {
        assert!(matches!(
            exhaustive_best_sequence(&img(), &env(7), &wavy(), &Zero, 0.8),
            Err(Error::SearchTooDeep(7))
        ));
    }

    /// Plain enumeration of every sequence, visiting actions in reverse order.
    fn brute_force(e: &EnvConfig, gamma: f64) -> (f64, Vec<usize>) {
        fn go(
            e: &EnvConfig,
            gamma: f64,
            prefix: &mut Vec<usize>,
            best: &mut Option<(f64, Vec<usize>)>,
        ) {
            let mut w = Window::FULL;
            for &a in prefix.iter() {
                w = apply_action(&w, &e.scales.action(a).unwrap(), e.floor_frac).unwrap();
            }
            let mut consider = |seq: Vec<usize>| {
                let r = sequence_return(&img(), e, &wavy(), &rc(), gamma, &seq).unwrap();
                if better(r, &seq, best) {
                    *best = Some((r, seq));
                }
            };
            if prefix.len() == e.n_step {
                consider(prefix.clone());
                return;
            }
            let mut stop = prefix.clone();
            stop.push(12);
            consider(stop);
            for a in (0..12).rev() {
                if apply_action(&w, &e.scales.action(a).unwrap(), e.floor_frac).is_ok() {
                    prefix.push(a);
                    go(e, gamma, prefix, best);
                    prefix.pop();
                }
            }
        }
        let mut best = None;
        go(e, gamma, &mut Vec::new(), &mut best);
        best.unwrap()
    }

    #[test]
    fn matches_independent_enumerator() {
        let e = env(3);
        let r = exhaustive_best_sequence(&img(), &e, &wavy(), &rc(), 0.8).unwrap();
        let (bret, bseq) = brute_force(&e, 0.8);
        assert!((r.ret - bret).abs() < 1e-12, "{} vs {}", r.ret, bret);
        assert_eq!(r.actions, bseq);
    }

    #[test]
    fn beats_random_sequences() {
        use rand::Rng;
        let e = env(4);
        let r = exhaustive_best_sequence(&img(), &e, &wavy(), &rc(), 0.8).unwrap();
        let mut rng = crate::seed::rng(0, "spot");
        for _ in 0..200 {
            let mut w = Window::FULL;
            let mut seq = Vec::new();
            while seq.len() < 4 {
                let a = rng.gen_range(0..13);
                if a == 12 {
                    seq.push(12);
                    break;
                }
                if let Ok(n) = apply_action(&w, &e.scales.action(a).unwrap(), e.floor_frac) {
                    w = n;
                    seq.push(a);
                }
            }
            let got = sequence_return(&img(), &e, &wavy(), &rc(), 0.8, &seq).unwrap();
            assert!(got <= r.ret + 1e-12);
        }
    }

    fn chain(gamma: f64) -> ToyMdp {
        // action 0 advances with reward 1, action 1 stops with reward 0;
        // state 2 leaves the chain on advance
        ToyMdp {
            rewards: vec![vec![1.0, 0.0]; 3],
            next: vec![
                vec![Some(1), None],
                vec![Some(2), None],
                vec![None, None],
            ],
            terminal: vec![false; 3],
            gamma,
        }
    }

    #[test]
    fn one_step_mdp() {
        let mdp = ToyMdp {
            rewards: vec![vec![0.0, 1.0]],
            next: vec![vec![None, None]],
            terminal: vec![false],
            gamma: 0.8,
        };
        let t = q_iteration(&mdp, 1e-10).unwrap();
        assert_eq!(t.q, vec![vec![0.0, 1.0]]);
    }

    #[test]
    fn zero_discount_is_reward_table() {
        let t = q_iteration(&chain(0.0), 1e-10).unwrap();
        assert_eq!(t.q, chain(0.0).rewards);
    }

    #[test]
    fn chain_matches_geometric_sums() {
        let g = 0.8;
        let mdp = chain(g);
        let t = q_iteration(&mdp, 1e-8).unwrap();
        let geo = |n: i32| (1.0 - g.powi(n)) / (1.0 - g);
        for (s, n) in [(0, 3), (1, 2), (2, 1)] {
            assert!((t.q[s][0] - geo(n)).abs() < 1e-12);
            assert_eq!(t.q[s][1], 0.0);
        }
        assert!(bellman_residual(&mdp, &t) < 1e-8);
        let (ret, actions) = greedy_rollout(&mdp, &t, 0, 10);
        assert_eq!(actions, vec![0, 0, 0]);
        assert_eq!(ret, t.value(0));
    }

    #[test]
    fn cyclic_mdp_converges() {
        let mdp = ToyMdp {
            rewards: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            next: vec![vec![Some(1), Some(0)], vec![Some(0), Some(1)]],
            terminal: vec![false, false],
            gamma: 0.5,
        };
        let t = q_iteration(&mdp, 1e-10).unwrap();
        assert!(bellman_residual(&mdp, &t) < 1e-9);
        // staying in state 1 forever yields 2 / (1 − 0.5)
        assert!((t.value(1) - 4.0).abs() < 1e-8);
    }

    #[test]
    fn non_absorbing_terminal_rejected() {
        let mut mdp = chain(0.8);
        mdp.terminal[2] = true;
        assert!(q_iteration(&mdp, 1e-8).is_err());
        mdp.rewards[2] = vec![0.0, 0.0];
        mdp.next[2] = vec![Some(2), None];
        assert!(q_iteration(&mdp, 1e-8).is_ok());
        let mut bad = chain(1.0);
        bad.gamma = 1.0;
        assert!(q_iteration(&bad, 1e-8).is_err());
    }
}
