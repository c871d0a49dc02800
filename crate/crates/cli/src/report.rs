//! Joins the per-policy summaries under `eval/` into comparison tables.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

const METRICS: [&str; 5] = ["rank1", "rank5", "rank10", "rank20", "mAP"];

/// Row order: baselines first, then the centre ladder from the widest
/// window, then agents by reward.
fn order_key(label: &str) -> (u8, String) {
    let (base, multi) = match label.strip_suffix("-multi") {
        Some(b) => (b, true),
        None => (label, false),
    };
    let group = if base == "none" {
        0
    } else if base == "random" {
        1
    } else if let Some(r) = base.strip_prefix("centre-") {
        // descending ratio; ratios are written with two decimals
        let r: f64 = r.parse().unwrap_or(0.0);
        return (2 + 10 * multi as u8, format!("{:04}", 1000 - (r * 100.0).round() as i64));
    } else if base == "truth" {
        3
    } else if base.starts_with("iiprl-rc") {
        4
    } else if base.starts_with("iiprl-ac") {
        5
    } else if base.starts_with("iiprl-rank") {
        6
    } else {
        7
    };
    (group + 10 * multi as u8, base.to_string())
}

fn read_summary(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once(',')
            .with_context(|| format!("{}: malformed line {line:?}", path.display()))?;
        let v: f64 = v
            .parse()
            .with_context(|| format!("{}: malformed value {v:?}", path.display()))?;
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

fn cell(metrics: &BTreeMap<String, f64>, key: &str) -> String {
    metrics.get(key).map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default()
}

/// Writes `report/report.csv` (policies × metrics, in percent) and, when any
/// agent was evaluated, `report/ablation.csv` comparing action scale sets.
pub fn write_report(out: &Path) -> Result<()> {
    let eval = out.join("eval");
    if !eval.is_dir() {
        return Err(crate::MissingArtifact { path: eval, command: "evaluate".into() }.into());
    }
    let mut rows = Vec::new();
    for entry in std::fs::read_dir(&eval)? {
        let path = entry?.path().join("summary.csv");
        if path.is_file() {
            let label = path
                .parent()
                .and_then(|p| p.file_name())
                .and_then(|n| n.to_str())
                .context("non UTF-8 evaluation directory")?
                .to_string();
            rows.push((label, read_summary(&path)?));
        }
    }
    if rows.is_empty() {
        return Err(crate::MissingArtifact { path: eval.join("*/summary.csv"), command: "evaluate".into() }.into());
    }
    rows.sort_by_key(|(label, _)| order_key(label));

    let mut table = format!("policy,{}\n", METRICS.join(","));
    for (label, m) in &rows {
        let cells: Vec<String> = METRICS.iter().map(|k| cell(m, k)).collect();
        writeln!(table, "{label},{}", cells.join(","))?;
    }
    let dir = out.join("report");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("report.csv"), table)?;

    let mut ablation = format!("reward,scales,query,{}\n", METRICS.join(","));
    let mut any = false;
    for (label, m) in &rows {
        let Some(rest) = label.strip_prefix("iiprl-") else { continue };
        let (rest, query) = match rest.strip_suffix("-multi") {
            Some(r) => (r, "multi"),
            None => (rest, "single"),
        };
        let Some((reward, scales)) = rest.split_once("-e") else {
            bail!("agent label {label:?} lacks a scale tag");
        };
        let cells: Vec<String> = METRICS.iter().map(|k| cell(m, k)).collect();
        writeln!(ablation, "{reward},{},{query},{}", scales.replace('-', " "), cells.join(","))?;
        any = true;
    }
    if any {
        std::fs::write(dir.join("ablation.csv"), ablation)?;
    }
    Ok(())
}
