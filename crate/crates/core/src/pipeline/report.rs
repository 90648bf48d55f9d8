//! Table of stored evaluation results, one row per network.

use std::fs;
use std::path::Path;

use super::eval::EvalSummary;
use super::write_atomic;
use crate::error::{Error, Result};

pub const EVAL_PREFIX: &str = "eval_";

fn display_name(network: &str) -> String {
    match network {
        "vcnn1" => "V-CNN I".into(),
        "vcnn1_jitter" => "V-CNN I*".into(),
        "vcnn2" => "V-CNN II".into(),
        "mvnet" => "MV-net".into(),
        "fusionnet" => "FusionNet".into(),
        other => other.into(),
    }
}

fn rank(network: &str) -> usize {
    ["mvnet", "vcnn1", "vcnn1_jitter", "vcnn2"]
        .iter()
        .position(|n| *n == network)
        .unwrap_or(if network == "fusionnet" { 9 } else { 5 })
}

pub fn save_summary(dir: &Path, summary: &EvalSummary) -> Result<()> {
    let path = dir.join(format!("{EVAL_PREFIX}{}.json", summary.network));
    write_atomic(&path, (serde_json::to_string_pretty(summary)? + "\n").as_bytes())
}

/// All `eval_*.json` summaries in `dir`.
pub fn load_summaries(dir: &Path) -> Result<Vec<EvalSummary>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with(EVAL_PREFIX) && name.ends_with(".json") {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            out.push(serde_json::from_str(&text)?);
        }
    }
    if out.is_empty() {
        return Err(Error::NotFound(format!("no evaluation results in {}", dir.display())));
    }
    Ok(out)
}

/// Markdown table: network, views used, average per-class accuracy (%).
pub fn render_table(summaries: &[EvalSummary]) -> String {
    let mut rows: Vec<&EvalSummary> = summaries.iter().collect();
    rows.sort_by(|a, b| (rank(&a.network), &a.network).cmp(&(rank(&b.network), &b.network)));
    let mut out = String::from("| Network | Views | Accuracy (%) |\n|---|---|---|\n");
    for s in rows {
        let views = s.views.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
        out += &format!("| {} | {} | {:.2} |\n", display_name(&s.network), views, 100.0 * s.metric);
    }
    out
}
