//! Synthetic stand-in for auto-detected person boxes.
//!
//! Each identity has a persistent appearance (hair, skin, torso, leg and shoe
//! colors, optional torso stripes) with cues spread over the full body height. Each
//! camera view has its own background texture and illumination. A sample
//! renders the person inside a misaligned detection frame (shifted along each
//! axis, so one side gains a background margin and the other cuts into the
//! body), scatters clutter rectangles over the margins and optionally adds an
//! occluder bar.

use super::image::Image;
use super::manifest::{Sample, Split};
use super::MIN_SIDE;
use crate::environment::Window;
use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub identities: usize,
    pub images_per_view: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Inclusive range of clutter rectangles per image.
    pub clutter: [usize; 2],
    pub occluder_prob: f64,
    /// Range of the detector box shift, as a fraction of each frame side.
    pub jitter: [f64; 2],
    /// Fraction of identities assigned to the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            identities: 50,
            images_per_view: 4,
            frame_width: 64,
            frame_height: 128,
            clutter: [4, 8],
            occluder_prob: 0.0,
            jitter: [0.0, 0.3],
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Smallest person extent the renderer accepts.
const MIN_PERSON_W: usize = 8;
const MIN_PERSON_H: usize = 16;

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.identities < 1 || self.images_per_view < 1 {
            return bad("identity and image counts must be ≥ 1".into());
        }
        if self.clutter[0] > self.clutter[1] {
            return bad(format!("clutter range {:?} is empty", self.clutter));
        }
        let [lo, hi] = self.jitter;
        if !(0.0..=0.3).contains(&lo) || !(0.0..=0.3).contains(&hi) || lo > hi {
            return bad(format!("jitter range {:?} must lie in [0, 0.3]", self.jitter));
        }
        if !(0.0..=1.0).contains(&self.occluder_prob) {
            return bad("occluder probability must lie in [0, 1]".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train fraction must lie in (0, 1]".into());
        }
        if self.frame_width < MIN_SIDE || self.frame_height < MIN_SIDE {
            return bad(format!("frame must be at least {MIN_SIDE}×{MIN_SIDE}"));
        }
        // worst case: full margin on one side, half of it cut on the other
        let visible = 1.0 - 1.5 * hi;
        let min_w = self.frame_width as f64 * visible - 2.0;
        let min_h = self.frame_height as f64 * visible - 2.0;
        if min_w < MIN_PERSON_W as f64 || min_h < MIN_PERSON_H as f64 {
            return bad(format!(
                "frame {}×{} cannot hold a {MIN_PERSON_W}×{MIN_PERSON_H} person at jitter {:?}",
                self.frame_width, self.frame_height, self.jitter
            ));
        }
        Ok(())
    }

    pub fn train_identities(&self) -> usize {
        ((self.identities as f64 * self.train_fraction).round() as usize).clamp(1, self.identities)
    }
}

/// Which pixels of a rendered sample belong to the (visible) person.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonMask {
    pub width: usize,
    pub height: usize,
    pub person: Vec<bool>,
}

/// Fraction of non-person pixels inside `w` (pixel-rounded).
pub fn background_fraction(mask: &PersonMask, w: &Window) -> f64 {
    let x0 = (w.x1() * mask.width as f64).round() as usize;
    let x1 = ((w.x2() * mask.width as f64).round() as usize).min(mask.width);
    let y0 = (w.y1() * mask.height as f64).round() as usize;
    let y1 = ((w.y2() * mask.height as f64).round() as usize).min(mask.height);
    let mut bg = 0usize;
    let mut total = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            total += 1;
            if !mask.person[y * mask.width + x] {
                bg += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        bg as f64 / total as f64
    }
}

pub fn generate_synthetic_dataset(spec: &GenSpec) -> Result<Vec<Sample>> {
    Ok(generate_with_masks(spec)?.into_iter().map(|(s, _)| s).collect())
}

/// Generates samples in identity-major, camera, image order together with
/// their person masks.
pub fn generate_with_masks(spec: &GenSpec) -> Result<Vec<(Sample, PersonMask)>> {
    spec.validate()?;
    let n_train = spec.train_identities();
    let views = [View::new(spec.seed, 0), View::new(spec.seed, 1)];
    let mut out = Vec::with_capacity(spec.identities * 2 * spec.images_per_view);
    for id in 0..spec.identities {
        let look = Appearance::new(spec.seed, id);
        for camera in 0..2u8 {
            for k in 0..spec.images_per_view {
                let mut rng = seed::rng(spec.seed, &format!("sample/{id}/{camera}/{k}"));
                let (image, mask, truth) = render(spec, &look, &views[camera as usize], &mut rng)?;
                let split = match (id < n_train, camera) {
                    (true, _) => Split::Train,
                    (false, 0) => Split::Probe,
                    (false, _) => Split::Gallery,
                };
                out.push((
                    Sample {
                        image,
                        identity: id as u32,
                        camera,
                        split,
                        truth_window: Some(truth),
                    },
                    mask,
                ));
            }
        }
    }
    Ok(out)
}

type Rgb = [f32; 3];

fn hsv(h: f32, s: f32, v: f32) -> Rgb {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

struct Appearance {
    hair: Rgb,
    skin: Rgb,
    torso: Rgb,
    collar: Rgb,
    /// `None` for short sleeves (bare arms).
    sleeves: Option<Rgb>,
    legs: Rgb,
    shoes: Rgb,
    /// Horizontal light stripes across the torso.
    striped: bool,
}

const STRIPE: Rgb = [235.0, 235.0, 230.0];
const HAIR: [Rgb; 6] = [
    [25.0, 20.0, 18.0],
    [95.0, 60.0, 30.0],
    [205.0, 175.0, 95.0],
    [160.0, 160.0, 160.0],
    [190.0, 35.0, 35.0],
    [35.0, 60.0, 170.0],
];
const SKIN: [Rgb; 3] = [[224.0, 172.0, 140.0], [180.0, 130.0, 95.0], [110.0, 75.0, 55.0]];
const LEGS: [Rgb; 6] = [
    [45.0, 45.0, 50.0],
    [85.0, 85.0, 90.0],
    [40.0, 60.0, 120.0],
    [170.0, 150.0, 110.0],
    [80.0, 95.0, 50.0],
    [150.0, 40.0, 40.0],
];
const SHOES: [Rgb; 4] = [
    [30.0, 28.0, 28.0],
    [235.0, 235.0, 230.0],
    [120.0, 70.0, 35.0],
    [180.0, 30.0, 40.0],
];

/// A clothing color some bystander might wear, so margin clutter mimics body parts.
fn bystander_color(rng: &mut rand_chacha::ChaCha8Rng) -> Rgb {
    match rng.gen_range(0..4) {
        0 => HAIR[rng.gen_range(0..HAIR.len())],
        1 => LEGS[rng.gen_range(0..LEGS.len())],
        2 => SHOES[rng.gen_range(0..SHOES.len())],
        _ => hsv(rng.gen_range(0..6) as f32 * 60.0, 0.75, 0.8),
    }
}

impl Appearance {
    fn new(base_seed: u64, id: usize) -> Self {
        let mut rng = seed::rng(base_seed, &format!("identity/{id}"));
        // small per-part palettes: only the combination of parts identifies
        let torso = hsv(rng.gen_range(0..6) as f32 * 60.0, 0.75, 0.8);
        let legs = LEGS[rng.gen_range(0..LEGS.len())];
        let sleeves = [Some(torso), Some([20.0, 20.0, 20.0]), Some([235.0, 235.0, 230.0]), None]
            [rng.gen_range(0..4)];
        let collar = [torso, [20.0, 20.0, 20.0], [230.0, 200.0, 40.0], [200.0, 90.0, 160.0]]
            [rng.gen_range(0..4)];
        Appearance {
            hair: HAIR[rng.gen_range(0..HAIR.len())],
            skin: SKIN[rng.gen_range(0..SKIN.len())],
            torso,
            collar,
            sleeves,
            legs,
            shoes: SHOES[rng.gen_range(0..SHOES.len())],
            striped: rng.gen_range(0..2) == 1,
        }
    }

    /// Color of person-local pixel `(u, v)` in `[0,1)²`, or `None` off-body.
    fn shade(&self, u: f32, v: f32, py: usize, neck: f32, hip: f32) -> Option<Rgb> {
        if v < neck {
            if v < 0.5 * neck {
                return (0.28..0.72).contains(&u).then_some(self.hair);
            }
            return (0.3..0.7).contains(&u).then_some(self.skin);
        }
        if v < hip {
            let t = (v - neck) / (hip - neck);
            if !(0.12..0.88).contains(&u) {
                return Some(self.sleeves.unwrap_or(self.skin));
            }
            if t < 0.2 {
                return Some(self.collar);
            }
            let stripe = self.striped && (py / 3) % 2 == 0;
            return Some(if stripe { STRIPE } else { self.torso });
        }
        let on_leg = (0.06..0.46).contains(&u) || (0.54..0.94).contains(&u);
        if !on_leg {
            return None;
        }
        if v > 0.92 {
            return Some(self.shoes);
        }
        Some(self.legs)
    }
}

struct View {
    base: Rgb,
    alt: Rgb,
    texture: u8,
    gain: Rgb,
    offset: f32,
}

impl View {
    fn new(base_seed: u64, camera: usize) -> Self {
        let mut rng = seed::rng(base_seed, &format!("view/{camera}"));
        let jitter = |rng: &mut rand_chacha::ChaCha8Rng, c: Rgb| {
            c.map(|v| (v + rng.gen_range(-12.0..12.0)).clamp(0.0, 255.0))
        };
        if camera == 0 {
            View {
                base: jitter(&mut rng, [95.0, 125.0, 90.0]),
                alt: jitter(&mut rng, [150.0, 160.0, 140.0]),
                texture: 0,
                gain: [1.0, 1.0, 1.0],
                offset: 0.0,
            }
        } else {
            View {
                base: jitter(&mut rng, [140.0, 105.0, 80.0]),
                alt: jitter(&mut rng, [90.0, 80.0, 95.0]),
                texture: 1,
                gain: [0.88, 0.95, 1.12],
                offset: 8.0,
            }
        }
    }

    fn background(&self, x: usize, y: usize) -> Rgb {
        let alt = match self.texture {
            0 => (y / 5) % 3 == 0,
            _ => ((x + y) / 4) % 2 == 0,
        };
        if alt {
            self.alt
        } else {
            self.base
        }
    }
}

/// Full (possibly off-frame) person span along one axis.
struct Span {
    start: i64,
    len: i64,
}

/// Places the person along an axis of `n` pixels as a misaligned detector
/// would: the box is shifted by a fraction `d` drawn from `jitter`, leaving a
/// margin of `d` on one side and cutting up to `d/2` of the body on the other.
/// Returns the full span and the visible pixel range. Any nonzero jitter keeps
/// at least one pixel of margin.
fn shifted_extent(n: usize, [lo, hi]: [f64; 2], rng: &mut rand_chacha::ChaCha8Rng) -> (Span, usize, usize) {
    // skewed toward small shifts: detectors are usually close, sometimes badly off
    let d = lo + (hi - lo) * rng.gen::<f64>().powi(3);
    let mut margin = (d * n as f64).round() as i64;
    if hi > 0.0 {
        margin = margin.max(1);
    }
    let cut = (d * rng.gen_range(0.0..0.5) * n as f64).round() as i64;
    let n = n as i64;
    let len = n - margin + cut;
    let start = if rng.gen_bool(0.5) { margin } else { -cut };
    let (v0, v1) = (start.max(0), (start + len).min(n));
    (Span { start, len }, v0 as usize, v1 as usize)
}

fn render(
    spec: &GenSpec,
    look: &Appearance,
    view: &View,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Image, PersonMask, Window)> {
    let (fw, fh) = (spec.frame_width, spec.frame_height);
    let (sx, px0, px1) = shifted_extent(fw, spec.jitter, rng);
    let (sy, py0, py1) = shifted_extent(fh, spec.jitter, rng);
    if px1 - px0 < MIN_PERSON_W || py1 - py0 < MIN_PERSON_H {
        return Err(Error::InvalidConfig("person extent below minimum".into()));
    }
    let truth = Window::new(
        px0 as f64 / fw as f64,
        py0 as f64 / fh as f64,
        px1 as f64 / fw as f64,
        py1 as f64 / fh as f64,
    )?;

    let mut canvas: Vec<Rgb> = (0..fw * fh).map(|i| view.background(i % fw, i / fw)).collect();
    let mut person = vec![false; fw * fh];

    // clutter lives strictly outside the person extent
    let n_clutter = rng.gen_range(spec.clutter[0]..=spec.clutter[1]);
    let strips: Vec<(usize, usize, usize, usize)> = [
        (0, 0, px0, fh),
        (px1, 0, fw, fh),
        (px0, 0, px1, py0),
        (px0, py1, px1, fh),
    ]
    .into_iter()
    .filter(|&(x0, y0, x1, y1)| x1 > x0 && y1 > y0)
    .collect();
    for _ in 0..n_clutter {
        if strips.is_empty() {
            break;
        }
        let (sx0, sy0, sx1, sy1) = strips[rng.gen_range(0..strips.len())];
        let w = rng.gen_range(1..=(sx1 - sx0));
        let h = rng.gen_range(1..=(sy1 - sy0));
        let x = rng.gen_range(sx0..=sx1 - w);
        let y = rng.gen_range(sy0..=sy1 - h);
        let color = bystander_color(rng);
        for yy in y..y + h {
            for xx in x..x + w {
                canvas[yy * fw + xx] = color;
            }
        }
    }

    let neck = 0.14 + rng.gen_range(-0.015..0.015);
    let hip = 0.55 + rng.gen_range(-0.03..0.03);
    for py in py0..py1 {
        let ly = py as i64 - sy.start;
        let v = ly as f32 / sy.len as f32;
        for px in px0..px1 {
            let lx = px as i64 - sx.start;
            let u = lx as f32 / sx.len as f32;
            if let Some(c) = look.shade(u, v, ly as usize, neck, hip) {
                canvas[py * fw + px] = c;
                person[py * fw + px] = true;
            }
        }
    }

    if rng.gen_bool(spec.occluder_prob) {
        let h = ((fh as f64) * rng.gen_range(0.08..0.15)).round().max(1.0) as usize;
        let leg_top = (sy.start + (sy.len as f64 * 0.6) as i64).clamp(0, fh as i64 - 1) as usize;
        let y = rng.gen_range(leg_top..py1.max(leg_top + 1)).min(fh - h);
        let color = [
            rng.gen_range(0.0..255.0),
            rng.gen_range(0.0..255.0),
            rng.gen_range(0.0..255.0),
        ];
        for yy in y..y + h {
            for xx in 0..fw {
                canvas[yy * fw + xx] = color;
                person[yy * fw + xx] = false;
            }
        }
    }

    let brightness = rng.gen_range(0.92..1.08);
    let mut data = Vec::with_capacity(fw * fh * 3);
    for px in &canvas {
        for c in 0..3 {
            let v = px[c] * view.gain[c] * brightness + view.offset + rng.gen_range(-6.0..6.0);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok((
        Image::new(fw, fh, data)?,
        PersonMask {
            width: fw,
            height: fh,
            person,
        },
        truth,
    ))
}
