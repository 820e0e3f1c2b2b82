//! Per-stage reports and the funnel summary built from them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Stage;

/// What one stage did, plus the exact configuration it ran under. The
/// `config` field is the raw text of the config file, byte for byte, so a
/// report is always auditable against its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub input_count: usize,
    pub output_count: usize,
    pub rejected_count: usize,
    pub detail: Value,
    pub env_overrides: BTreeMap<String, String>,
    pub config: String,
}

/// Reads whichever stage reports exist under `run_root`, in chain order.
pub fn load_stage_reports(run_root: &Path) -> Vec<StageReport> {
    Stage::ALL
        .into_iter()
        .filter_map(|stage| {
            let path = run_root.join("reports").join(format!("{}.json", stage.name()));
            let raw = std::fs::read_to_string(path).ok()?;
            serde_json::from_str(&raw).ok()
        })
        .collect()
}

/// Plain-text funnel table: one row per stage, counts right-aligned.
pub fn render_funnel(reports: &[StageReport]) -> String {
    let mut out = String::from("stage        input   output  rejected\n");
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:>7} {:>8} {:>9}\n",
            r.stage, r.input_count, r.output_count, r.rejected_count
        ));
    }
    out
}

/// One-line extras for the non-manifest artifacts, drawn from report details.
pub fn render_extras(reports: &[StageReport]) -> String {
    let mut out = String::new();
    for r in reports {
        match r.stage.as_str() {
            "plan" => {
                if let Some(targets) = r.detail.get("track_targets") {
                    out.push_str(&format!("plan: track targets {targets}\n"));
                }
            }
            "pack" => {
                let util = r.detail.get("mean_utilization");
                let mixed = r.detail.get("mixed_fraction");
                let packs = r.detail.get("packs");
                if let (Some(p), Some(u), Some(m)) = (packs, util, mixed) {
                    out.push_str(&format!(
                        "pack: {p} packs, mean utilization {u}, mixed fraction {m}\n"
                    ));
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn report(stage: &str, input: usize, output: usize) -> StageReport {
        StageReport {
            stage: stage.into(),
            input_count: input,
            output_count: output,
            rejected_count: input - output,
            detail: json!({}),
            env_overrides: BTreeMap::new(),
            config: String::new(),
        }
    }

    #[test]
    fn funnel_lists_stages_in_given_order() {
        let table = render_funnel(&[report("ingest", 10, 10), report("filter", 10, 7)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("ingest"));
        assert!(lines[2].starts_with("filter"));
        assert!(lines[2].contains('3'));
    }

    #[test]
    fn report_round_trips_through_json() {
        let r = report("score", 5, 4);
        let s = serde_json::to_string(&r).unwrap();
        let back: StageReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
