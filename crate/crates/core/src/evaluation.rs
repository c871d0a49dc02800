//! Retrieval evaluation: rank a gallery by L2 distance for each probe and
//! aggregate CMC and mAP, after applying the same window policy to probe and
//! gallery images.

use crate::agent::{deploy_policy, QParams};
use crate::environment::{EnvConfig, Window, WindowEmbedder};
use crate::error::{Error, Result};
use crate::imaging::Sample;
use crate::rewards::f_match;
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const CENTRE_RATIOS: [f64; 5] = [0.95, 0.90, 0.80, 0.70, 0.50];
pub const RANDOM_REPEATS: usize = 10;

/// Gallery indices by ascending distance to `probe`, ties in gallery order.
pub fn rank_gallery(probe: &[f32], gallery: &[Vec<f32>]) -> Result<Vec<usize>> {
    if gallery.is_empty() {
        return Err(Error::Dataset("empty gallery".into()));
    }
    let d: Vec<f64> = gallery.iter().map(|g| f_match(probe, g)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    Ok(order)
}

/// Ranking of one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub order: Vec<usize>,
    /// 1-based ranks of every true match, ascending.
    pub match_ranks: Vec<usize>,
}

impl ProbeResult {
    pub fn new(order: Vec<usize>, is_match: impl Fn(usize) -> bool) -> Self {
        let match_ranks = order
            .iter()
            .enumerate()
            .filter(|(_, &g)| is_match(g))
            .map(|(pos, _)| pos + 1)
            .collect();
        ProbeResult { order, match_ranks }
    }

    /// Mean of precision at each true-match position.
    pub fn average_precision(&self) -> f64 {
        if self.match_ranks.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .match_ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| (i + 1) as f64 / r as f64)
            .sum();
        sum / self.match_ranks.len() as f64
    }
}

fn with_matches(results: &[ProbeResult]) -> Vec<&ProbeResult> {
    let kept: Vec<&ProbeResult> = results.iter().filter(|r| !r.match_ranks.is_empty()).collect();
    if kept.len() < results.len() {
        log::warn!("{} probes have no true match and are excluded", results.len() - kept.len());
    }
    kept
}

/// `CMC(k)` for `k = 1..=max_rank`: fraction of probes whose best true match
/// ranks within the top `k`.
pub fn cmc(results: &[ProbeResult], max_rank: usize) -> Vec<f64> {
    let kept = with_matches(results);
    let mut hits = vec![0usize; max_rank];
    for r in &kept {
        let best = r.match_ranks[0];
        if best <= max_rank {
            hits[best - 1] += 1;
        }
    }
    let n = kept.len().max(1) as f64;
    let mut acc = 0;
    hits.iter()
        .map(|&h| {
            acc += h;
            acc as f64 / n
        })
        .collect()
}

pub fn mean_average_precision(results: &[ProbeResult]) -> f64 {
    let kept = with_matches(results);
    if kept.is_empty() {
        return 0.0;
    }
    kept.iter().map(|r| r.average_precision()).sum::<f64>() / kept.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Single,
    Multi,
}

impl std::str::FromStr for QueryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(QueryMode::Single),
            "multi" => Ok(QueryMode::Multi),
            other => Err(Error::InvalidConfig(format!(
                "unknown query mode {other:?}, expected single|multi"
            ))),
        }
    }
}

/// Window-removal baselines.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    None,
    /// Per image, a ratio drawn uniformly from the set and a uniformly placed
    /// window with that fraction of each side.
    Random(Vec<f64>),
    Centre(f64),
}

fn check_ratio(r: f64) -> Result<()> {
    if CENTRE_RATIOS.contains(&r) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "ratio {r} is not one of {CENTRE_RATIOS:?}"
        )))
    }
}

/// One window per image for a baseline policy.
pub fn baseline_windows(kind: &Baseline, count: usize, seed: u64, stream: &str) -> Result<Vec<Window>> {
    match kind {
        Baseline::None => Ok(vec![Window::FULL; count]),
        Baseline::Centre(r) => {
            check_ratio(*r)?;
            Ok(vec![Window::centred(*r)?; count])
        }
        Baseline::Random(ratios) => {
            if ratios.is_empty() {
                return Err(Error::InvalidConfig("random baseline needs ratios".into()));
            }
            ratios.iter().try_for_each(|&r| check_ratio(r))?;
            let mut rng = seed::rng(seed, stream);
            (0..count)
                .map(|_| {
                    let r = *ratios.choose(&mut rng).expect("non-empty");
                    let x = rng.gen_range(0.0..=1.0 - r);
                    let y = rng.gen_range(0.0..=1.0 - r);
                    Window::new(x, y, (x + r).min(1.0), (y + r).min(1.0))
                })
                .collect()
        }
    }
}

/// Aggregate metrics of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub probes: usize,
}

impl Summary {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[(k.min(self.cmc.len())).max(1) - 1]
    }

    /// Element-wise mean of several runs.
    pub fn mean(runs: &[Summary]) -> Summary {
        let n = runs.len() as f64;
        let len = runs[0].cmc.len();
        Summary {
            cmc: (0..len).map(|k| runs.iter().map(|r| r.cmc[k]).sum::<f64>() / n).collect(),
            map: runs.iter().map(|r| r.map).sum::<f64>() / n,
            probes: runs[0].probes,
        }
    }

    pub fn cmc_csv(&self) -> String {
        let mut s = String::from("rank,accuracy\n");
        for (k, v) in self.cmc.iter().enumerate() {
            writeln!(s, "{},{:.6}", k + 1, v).expect("string write");
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for k in [1, 5, 10, 20] {
            if k <= self.cmc.len() {
                writeln!(s, "rank{k},{:.6}", self.rank(k)).expect("string write");
            }
        }
        writeln!(s, "mAP,{:.6}", self.map).expect("string write");
        writeln!(s, "probes,{}", self.probes).expect("string write");
        s
    }

    /// CMC curve as a standalone SVG polyline.
    pub fn cmc_svg(&self, title: &str) -> String {
        let (w, h, pad) = (480.0, 320.0, 40.0);
        let n = self.cmc.len().max(2) as f64;
        let points: Vec<String> = self
            .cmc
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let x = pad + (w - 2.0 * pad) * k as f64 / (n - 1.0);
                let y = h - pad - (h - 2.0 * pad) * v;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let mut s = String::new();
        writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
        )
        .expect("string write");
        writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").expect("string write");
        writeln!(
            s,
            "<path d=\"M{pad},{pad} V{} H{}\" fill=\"none\" stroke=\"black\"/>",
            h - pad,
            w - pad
        )
        .expect("string write");
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        )
        .expect("string write");
        let title = title.replace('&', "&amp;").replace('<', "&lt;");
        writeln!(s, "<text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>")
            .expect("string write");
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">rank 1..{}</text>",
            w / 2.0 - 30.0,
            h - 12.0,
            self.cmc.len()
        )
        .expect("string write");
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub per_probe: Vec<ProbeResult>,
    pub summary: Summary,
}

/// Embeds probe and gallery crops, groups probes for multi-query, ranks and
/// aggregates. `probe_windows` and `gallery_windows` must come from the same
/// policy.
pub fn evaluate_windows(
    probes: &[Sample],
    gallery: &[Sample],
    probe_windows: &[Window],
    gallery_windows: &[Window],
    embedder: &dyn WindowEmbedder,
    mode: QueryMode,
    max_rank: usize,
) -> Result<RankingResult> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::Dataset("probe and gallery splits must both be non-empty".into()));
    }
    if probe_windows.len() != probes.len() || gallery_windows.len() != gallery.len() {
        return Err(Error::InvalidConfig("one window per probe and gallery image required".into()));
    }
    if max_rank == 0 {
        return Err(Error::InvalidConfig("max rank must be ≥ 1".into()));
    }
    let embed = |samples: &[Sample], windows: &[Window]| -> Result<Vec<Vec<f32>>> {
        samples
            .par_iter()
            .zip(windows)
            .map(|(s, w)| embedder.embed_window(&s.image, w))
            .collect()
    };
    let g_emb = embed(gallery, gallery_windows)?;
    let p_emb = embed(probes, probe_windows)?;
    let (queries, labels): (Vec<Vec<f32>>, Vec<u32>) = match mode {
        QueryMode::Single => (p_emb, probes.iter().map(|s| s.identity).collect()),
        QueryMode::Multi => {
            let mut groups: BTreeMap<(u32, u8), Vec<usize>> = BTreeMap::new();
            for (i, s) in probes.iter().enumerate() {
                groups.entry((s.identity, s.camera)).or_default().push(i);
            }
            groups
                .into_iter()
                .map(|((id, _), members)| {
                    let dim = p_emb[members[0]].len();
                    let mut mean = vec![0f64; dim];
                    for &m in &members {
                        for (acc, &v) in mean.iter_mut().zip(&p_emb[m]) {
                            *acc += v as f64;
                        }
                    }
                    let n = members.len() as f64;
                    (mean.into_iter().map(|v| (v / n) as f32).collect(), id)
                })
                .unzip()
        }
    };
    let g_labels: Vec<u32> = gallery.iter().map(|s| s.identity).collect();
    let per_probe: Vec<ProbeResult> = queries
        .par_iter()
        .zip(&labels)
        .map(|(q, &id)| Ok(ProbeResult::new(rank_gallery(q, &g_emb)?, |g| g_labels[g] == id)))
        .collect::<Result<_>>()?;
    if per_probe.iter().all(|r| r.match_ranks.is_empty()) {
        return Err(Error::Dataset("no probe identity appears in the gallery".into()));
    }
    let summary = Summary {
        cmc: cmc(&per_probe, max_rank),
        map: mean_average_precision(&per_probe),
        probes: per_probe.iter().filter(|r| !r.match_ranks.is_empty()).count(),
    };
    Ok(RankingResult { per_probe, summary })
}

/// Evaluates a baseline; the random baseline is averaged over
/// [`RANDOM_REPEATS`] independently seeded repetitions.
pub fn evaluate_baseline(
    kind: &Baseline,
    probes: &[Sample],
    gallery: &[Sample],
    embedder: &dyn WindowEmbedder,
    mode: QueryMode,
    max_rank: usize,
    seed: u64,
) -> Result<Summary> {
    let reps = if matches!(kind, Baseline::Random(_)) { RANDOM_REPEATS } else { 1 };
    let runs = (0..reps)
        .map(|r| {
            let pw = baseline_windows(kind, probes.len(), seed, &format!("baseline/probe/{r}"))?;
            let gw = baseline_windows(kind, gallery.len(), seed, &format!("baseline/gallery/{r}"))?;
            Ok(evaluate_windows(probes, gallery, &pw, &gw, embedder, mode, max_rank)?.summary)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary::mean(&runs))
}

/// Greedy agent windows for every image, computed in parallel.
pub fn agent_windows(
    params: &QParams,
    env: &EnvConfig,
    samples: &[Sample],
    embedder: &dyn WindowEmbedder,
) -> Result<Vec<Window>> {
    samples
        .par_iter()
        .map(|s| deploy_policy(params, env, &s.image, embedder).map(|d| d.window))
        .collect()
}

/// Evaluates the agent's refinement applied to both probe and gallery.
pub fn evaluate_agent(
    params: &QParams,
    env: &EnvConfig,
    probes: &[Sample],
    gallery: &[Sample],
    embedder: &dyn WindowEmbedder,
    mode: QueryMode,
    max_rank: usize,
) -> Result<Summary> {
    let pw = agent_windows(params, env, probes, embedder)?;
    let gw = agent_windows(params, env, gallery, embedder)?;
    Ok(evaluate_windows(probes, gallery, &pw, &gw, embedder, mode, max_rank)?.summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::FnEmbedder;
    use crate::imaging::{Image, Split};
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn rank_examples() {
        let g = vec![vec![3.0f32], vec![1.0], vec![2.0]];
        assert_eq!(rank_gallery(&[0.0], &g).unwrap(), vec![1, 2, 0]);
        assert_eq!(rank_gallery(&[2.0], &g).unwrap()[0], 2);
        assert_eq!(rank_gallery(&[0.0], &[vec![1.0], vec![-1.0]]).unwrap(), vec![0, 1]);
        assert!(rank_gallery(&[0.0, 1.0], &g).is_err());
        assert!(rank_gallery(&[0.0], &[]).is_err());
    }

    #[test]
    fn rank_matches_naive_sort() {
        let mut rng = seed::rng(0, "naive");
        let g: Vec<Vec<f32>> = (0..100).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let order = rank_gallery(&q, &g).unwrap();
        let mut pairs: Vec<(f64, usize)> = g.iter().enumerate().map(|(i, v)| (f_match(&q, v).unwrap(), i)).collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(order, pairs.into_iter().map(|p| p.1).collect::<Vec<_>>());
    }

    fn result(ranks: &[usize], len: usize) -> ProbeResult {
        ProbeResult {
            order: (0..len).collect(),
            match_ranks: ranks.to_vec(),
        }
    }

    #[test]
    fn cmc_examples() {
        let perfect = vec![result(&[1], 5), result(&[1, 2], 5)];
        assert!(cmc(&perfect, 5).iter().all(|&v| v == 1.0));
        let two = vec![result(&[1], 5), result(&[3], 5)];
        assert_eq!(cmc(&two, 5), vec![0.5, 0.5, 1.0, 1.0, 1.0]);
        let with_missing = vec![result(&[2], 3), result(&[], 3)];
        assert_eq!(cmc(&with_missing, 3), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(mean_average_precision(&[result(&[1, 2, 3], 6)]), 1.0);
        assert_eq!(result(&[2], 4).average_precision(), 0.5);
        // hand table: (1/1+2/3)/2, 1/3, (1/2+2/4+3/5)/3, 1, (1/2+2/3)/2
        let rs = vec![
            result(&[1, 3], 6),
            result(&[3], 6),
            result(&[2, 4, 5], 6),
            result(&[1], 6),
            result(&[2, 3], 6),
        ];
        let table = [
            (1.0 + 2.0 / 3.0) / 2.0,
            1.0 / 3.0,
            (0.5 + 0.5 + 0.6) / 3.0,
            1.0,
            (0.5 + 2.0 / 3.0) / 2.0,
        ];
        for (r, t) in rs.iter().zip(table) {
            assert!((r.average_precision() - t).abs() < 1e-15);
        }
        let m = mean_average_precision(&rs);
        assert!((m - table.iter().sum::<f64>() / 5.0).abs() < 1e-15);
    }

    #[test]
    fn chance_level_rank_one() {
        let mut rng = seed::rng(2, "chance");
        let g = 20;
        let trials = 4000;
        let mut hits = 0;
        for _ in 0..trials {
            let gallery: Vec<Vec<f32>> = (0..g).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let q: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = ProbeResult::new(rank_gallery(&q, &gallery).unwrap(), |i| i == 0);
            hits += (r.match_ranks[0] == 1) as usize;
        }
        let p = 1.0 / g as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits as f64 / trials as f64 - p).abs() < 4.0 * sigma);
    }

    #[test]
    fn baseline_examples() {
        let c = baseline_windows(&Baseline::Centre(0.95), 2, 0, "x").unwrap();
        for (a, b) in c[0].coords().iter().zip([0.025, 0.025, 0.975, 0.975]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(baseline_windows(&Baseline::None, 1, 0, "x").unwrap(), vec![Window::FULL]);
        assert!(baseline_windows(&Baseline::Centre(0.6), 1, 0, "x").is_err());
        let kind = Baseline::Random(CENTRE_RATIOS.to_vec());
        let a = baseline_windows(&kind, 50, 7, "p").unwrap();
        assert_eq!(a, baseline_windows(&kind, 50, 7, "p").unwrap());
        assert_ne!(a, baseline_windows(&kind, 50, 8, "p").unwrap());
        for w in &a {
            let r = w.width();
            assert!(CENTRE_RATIOS.iter().any(|&c| (c - r).abs() < 1e-12));
            assert!((w.height() - r).abs() < 1e-12);
        }
    }

    fn sample(identity: u32, camera: u8, shade: u8) -> Sample {
        Sample {
            image: Image::filled(8, 16, [shade, 0, 0]),
            identity,
            camera,
            split: if camera == 0 { Split::Probe } else { Split::Gallery },
            truth_window: None,
        }
    }

    fn red() -> FnEmbedder<impl Fn(&Image, &Window) -> Result<Vec<f32>> + Sync> {
        FnEmbedder {
            dim: 1,
            f: |img: &Image, _: &Window| Ok(vec![img.pixel(0, 0)[0] as f32]),
        }
    }

    #[test]
    fn evaluation_single_and_multi() {
        let probes = vec![sample(0, 0, 10), sample(0, 0, 12), sample(1, 0, 50)];
        let gallery = vec![sample(1, 1, 48), sample(0, 1, 30), sample(2, 1, 11)];
        let full = |n| vec![Window::FULL; n];
        let single =
            evaluate_windows(&probes, &gallery, &full(3), &full(3), &red(), QueryMode::Single, 3).unwrap();
        // probe 10: order 11(id2), 30(id0), 48 → rank 2; probe 12 → rank 2; probe 50 → rank 1
        assert_eq!(single.summary.cmc, vec![1.0 / 3.0, 1.0, 1.0]);
        let multi =
            evaluate_windows(&probes, &gallery, &full(3), &full(3), &red(), QueryMode::Multi, 3).unwrap();
        assert_eq!(multi.per_probe.len(), 2);
        assert_eq!(multi.summary.cmc, vec![0.5, 1.0, 1.0]);
        let again =
            evaluate_windows(&probes, &gallery, &full(3), &full(3), &red(), QueryMode::Single, 3).unwrap();
        assert_eq!(single, again);
        assert!(evaluate_windows(&probes, &[], &full(3), &[], &red(), QueryMode::Single, 3).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = Summary {
            cmc: vec![0.5, 1.0],
            map: 0.75,
            probes: 2,
        };
        assert_eq!(s.cmc_csv(), "rank,accuracy\n1,0.500000\n2,1.000000\n");
        assert_eq!(s.summary_csv(), "metric,value\nrank1,0.500000\nmAP,0.750000\nprobes,2\n");
        assert!(s.cmc_svg("none").contains("<polyline"));
    }

    proptest! {
        #[test]
        fn cmc_is_monotone(ranks in proptest::collection::vec(1usize..30, 1..40)) {
            let rs: Vec<ProbeResult> = ranks.iter().map(|&r| result(&[r], 30)).collect();
            let c = cmc(&rs, 30);
            prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((c[29] - 1.0).abs() < 1e-15);
            let m = mean_average_precision(&rs);
            let direct = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64;
            prop_assert!((m - direct).abs() < 1e-12);
        }
    }
}
