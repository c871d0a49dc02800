use super::window::Window;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];

    pub fn is_horizontal_cut(self) -> bool {
        matches!(self, Side::Left | Side::Right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Terminate,
    /// Removes a stripe of `scale` times the current extent from `side`.
    Cut { side: Side, scale: f64 },
}

/// Scale set E and the induced indexing of the `4·|E| + 1` actions.
///
/// Index `s·|E| + k` is a cut on side `s` (left, right, top, bottom) at
/// scale `E[k]`; the last index is Terminate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionSet {
    scales: Vec<f64>,
}

impl ActionSet {
    pub const DEFAULT_SCALES: [f64; 3] = [0.05, 0.10, 0.20];

    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidConfig("scale set is empty".into()));
        }
        if scales.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidConfig(format!("scales {scales:?} must lie in (0, 1)")));
        }
        for (i, a) in scales.iter().enumerate() {
            if scales[..i].contains(a) {
                return Err(Error::InvalidConfig(format!("duplicate scale {a}")));
            }
        }
        Ok(ActionSet { scales })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        4 * self.scales.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn terminate_index(&self) -> usize {
        4 * self.scales.len()
    }

    pub fn action(&self, index: usize) -> Option<Action> {
        let n = self.scales.len();
        match index {
            i if i == 4 * n => Some(Action::Terminate),
            i if i < 4 * n => Some(Action::Cut {
                side: Side::ALL[i / n],
                scale: self.scales[i % n],
            }),
            _ => None,
        }
    }

    pub fn index_of(&self, action: &Action) -> Option<usize> {
        match *action {
            Action::Terminate => Some(self.terminate_index()),
            Action::Cut { side, scale } => {
                let s = Side::ALL.iter().position(|&x| x == side)?;
                let k = self.scales.iter().position(|&x| x == scale)?;
                Some(s * self.scales.len() + k)
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        (0..self.len()).map(move |i| self.action(i).expect("in range"))
    }

    /// Tag such as `e5-10-20` naming the scale set in percent.
    pub fn tag(&self) -> String {
        let parts: Vec<String> = self
            .scales
            .iter()
            .map(|a| format!("{}", (a * 100.0).round() as i64))
            .collect();
        format!("e{}", parts.join("-"))
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        ActionSet {
            scales: Self::DEFAULT_SCALES.to_vec(),
        }
    }
}

impl TryFrom<Vec<f64>> for ActionSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ActionSet::new(v)
    }
}

impl From<ActionSet> for Vec<f64> {
    fn from(a: ActionSet) -> Self {
        a.scales
    }
}

/// The window after cutting one stripe. Exactly one coordinate changes.
pub fn apply_action(w: &Window, action: &Action, floor_frac: f64) -> Result<Window> {
    let (side, scale) = match *action {
        Action::Terminate => {
            return Err(Error::InvalidAction("terminate does not move the window".into()))
        }
        Action::Cut { side, scale } => (side, scale),
    };
    let [mut x1, mut y1, mut x2, mut y2] = w.coords();
    let dx = x2 - x1;
    let dy = y2 - y1;
    match side {
        Side::Left => x1 += scale * dx,
        Side::Right => x2 -= scale * dx,
        Side::Top => y1 += scale * dy,
        Side::Bottom => y2 -= scale * dy,
    }
    let next = Window::from_raw(x1, y1, x2, y2);
    if !next.respects_floor(floor_frac) {
        return Err(Error::InvalidAction(format!(
            "{action:?} shrinks {:?} below the {floor_frac} floor",
            w.coords()
        )));
    }
    Ok(next)
}

/// Validity mask over the action set: Terminate always, a cut iff the
/// resulting window keeps both sides at or above `floor_frac`.
pub fn valid_actions(w: &Window, actions: &ActionSet, floor_frac: f64) -> Vec<bool> {
    actions
        .iter()
        .map(|a| match a {
            Action::Terminate => true,
            cut => apply_action(w, &cut, floor_frac).is_ok(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOOR: f64 = 0.2;

    fn cut(side: Side, scale: f64) -> Action {
        Action::Cut { side, scale }
    }

    #[test]
    fn thirteen_actions_with_default_scales() {
        let set = ActionSet::default();
        assert_eq!(set.len(), 13);
        assert_eq!(set.action(12), Some(Action::Terminate));
        assert_eq!(set.action(0), Some(cut(Side::Left, 0.05)));
        assert_eq!(set.action(11), Some(cut(Side::Bottom, 0.20)));
        assert_eq!(set.action(13), None);
        for i in 0..13 {
            assert_eq!(set.index_of(&set.action(i).unwrap()), Some(i));
        }
        assert_eq!(set.tag(), "e5-10-20");
    }

    #[test]
    fn direct_formula() {
        let w = apply_action(&Window::FULL, &cut(Side::Left, 0.05), FLOOR).unwrap();
        assert_eq!(w.coords(), [0.05, 0.0, 1.0, 1.0]);
        let w = apply_action(&Window::FULL, &cut(Side::Bottom, 0.20), FLOOR).unwrap();
        assert_eq!(w.coords(), [0.0, 0.0, 1.0, 0.8]);
        let start = Window::new(0.1, 0.0, 0.9, 1.0).unwrap();
        let w = apply_action(&start, &cut(Side::Left, 0.10), FLOOR).unwrap();
        assert!((w.x1() - 0.18).abs() < 1e-15);
        assert_eq!([w.y1(), w.x2(), w.y2()], [0.0, 0.9, 1.0]);
    }

    #[test]
    fn terminate_is_not_a_cut() {
        assert!(apply_action(&Window::FULL, &Action::Terminate, FLOOR).is_err());
    }

    #[test]
    fn full_window_allows_everything() {
        assert!(valid_actions(&Window::FULL, &ActionSet::default(), FLOOR)
            .iter()
            .all(|&v| v));
    }

    #[test]
    fn floor_width_blocks_horizontal_cuts() {
        let set = ActionSet::default();
        let w = Window::new(0.0, 0.0, 0.2, 1.0).unwrap();
        assert_eq!(w.width(), 0.2);
        let mask = valid_actions(&w, &set, FLOOR);
        for (i, ok) in mask.iter().enumerate() {
            match set.action(i).unwrap() {
                Action::Terminate => assert!(ok),
                Action::Cut { side, .. } => assert_eq!(*ok, !side.is_horizontal_cut()),
            }
        }
    }

    #[test]
    fn width_point_two_four() {
        let set = ActionSet::default();
        let w = Window::new(0.0, 0.0, 0.24, 1.0).unwrap();
        let mask = valid_actions(&w, &set, FLOOR);
        let idx = |a| set.index_of(&a).unwrap();
        assert!(mask[idx(cut(Side::Left, 0.05))]);
        assert!(mask[idx(cut(Side::Right, 0.05))]);
        assert!(!mask[idx(cut(Side::Left, 0.20))]);
        assert!(!mask[idx(cut(Side::Right, 0.20))]);
    }

    #[test]
    fn scale_sets_validated() {
        assert!(ActionSet::new(vec![]).is_err());
        assert!(ActionSet::new(vec![0.1, 1.0]).is_err());
        assert!(ActionSet::new(vec![0.1, 0.1]).is_err());
        assert_eq!(ActionSet::new(vec![0.1, 0.2, 0.5]).unwrap().len(), 13);
    }
}
