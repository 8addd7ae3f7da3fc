//! Optional human-readable table rendering (the JSON output is primary).

use claimlens_core::eval::percent;
use claimlens_core::graph::GraphStats;
use claimlens_core::pipeline::MetricsRow;

pub fn render_stats(stats: &GraphStats) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "entities            {}\nrelationships       {}\navg total degree    {:.2}\n\
         avg shortest path   {:.2}\ndiameter            {}\n",
        stats.n_entities,
        stats.n_relationships,
        stats.avg_total_degree,
        stats.avg_shortest_path,
        stats.diameter
    ));
    out.push_str("top entity types:\n");
    for (name, count) in &stats.top_entity_types {
        out.push_str(&format!("  {name:<24} {count}\n"));
    }
    out.push_str("top relation types:\n");
    for (name, count) in &stats.top_relation_types {
        out.push_str(&format!("  {name:<24} {count}\n"));
    }
    out
}

pub fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "pipeline   mode       accuracy  coverage  overall   abstains\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{:<10} {:<10} {:>8}  {:>8}  {:>8}  {:>4}/{}\n",
            row.pipeline.to_string(),
            row.prompt_mode.to_string(),
            percent(row.metrics.accuracy),
            percent(row.metrics.coverage),
            percent(row.metrics.overall_accuracy),
            row.metrics.n_abstains,
            row.metrics.n_total
        ));
    }
    out
}

pub fn render_eval(report: &serde_json::Value) -> String {
    let mut out = String::new();
    if let Some(borda) = report.get("borda").and_then(|v| v.as_object()) {
        out.push_str("borda scores:\n");
        for (name, score) in borda {
            out.push_str(&format!("  {name:<12} {score}\n"));
        }
    }
    if let Some(friedman) = report.get("friedman") {
        if let (Some(chi), Some(p)) = (
            friedman.get("chi_square").and_then(|v| v.as_f64()),
            friedman.get("p_value").and_then(|v| v.as_f64()),
        ) {
            out.push_str(&format!("friedman chi2 {chi:.2}, p {p:.4}\n"));
        } else if let Some(err) = friedman.get("error") {
            out.push_str(&format!("friedman: {err}\n"));
        }
    }
    if let Some(nemenyi) = report.get("nemenyi") {
        if let Some(cd) = nemenyi.get("critical_difference").and_then(|v| v.as_f64()) {
            out.push_str(&format!("nemenyi critical difference {cd:.4}\n"));
        }
    }
    if let Some(ilora) = report.get("ilora").and_then(|v| v.as_object()) {
        out.push_str("justification-quality means:\n");
        for key in [
            "informativeness",
            "logicality",
            "objectivity",
            "readability",
            "accuracy",
        ] {
            if let Some(value) = ilora.get(key).and_then(|v| v.as_f64()) {
                out.push_str(&format!("  {key:<16} {value:.2}\n"));
            }
        }
    }
    out
}
