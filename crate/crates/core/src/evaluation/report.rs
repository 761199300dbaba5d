//! Rank aggregation and report emission.

use super::{rate_key, EvaluationReport};
use crate::error::{Error, Result};
use crate::missingness::MissingKind;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;

/// Rank methods within one group by mean NRMSE: 1 is best, exact ties share
/// the average of their positions, failed methods share the worst ranks.
fn group_ranks(means: &[Option<f64>]) -> Vec<f64> {
    let m = means.len();
    let mut ranks = vec![0.0; m];
    let mut scored: Vec<(f64, usize)> = means
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|s| (s, i)))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut pos = 1usize;
    let mut idx = 0usize;
    while idx < scored.len() {
        let mut end = idx + 1;
        while end < scored.len() && scored[end].0 == scored[idx].0 {
            end += 1;
        }
        let tied = end - idx;
        let avg = pos as f64 + (tied as f64 - 1.0) / 2.0;
        for item in &scored[idx..end] {
            ranks[item.1] = avg;
        }
        pos += tied;
        idx = end;
    }

    let failures = m - scored.len();
    if failures > 0 {
        let avg = (m - failures + 1) as f64 + (failures as f64 - 1.0) / 2.0;
        for (i, v) in means.iter().enumerate() {
            if v.is_none() {
                ranks[i] = avg;
            }
        }
    }
    ranks
}

/// One row of the rank table: a (kind, rate) cell, or the per-kind average
/// row when `rate` is `None`.
#[derive(Clone, Debug)]
pub struct RankRow {
    pub kind: MissingKind,
    pub rate: Option<f64>,
    /// Mean and population std of ranks per method, in table column order.
    pub mean_std: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct RankSummary {
    pub methods: Vec<String>,
    pub rows: Vec<RankRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Build the rank summary from a full benchmark grid. Every
/// (dataset, kind, rate) group must contain every method once.
pub fn rank_table(reports: &[EvaluationReport]) -> Result<RankSummary> {
    let mut methods: Vec<String> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    if methods.is_empty() {
        return Err(Error::invalid("rank table needs at least one report"));
    }

    // group key -> mean NRMSE per method
    let mut groups: BTreeMap<(String, &'static str, u32), Vec<Option<f64>>> = BTreeMap::new();
    let mut seen: BTreeMap<(String, &'static str, u32), Vec<bool>> = BTreeMap::new();
    for r in reports {
        let key = (r.dataset.clone(), r.kind.as_str(), rate_key(r.rate));
        let entry = groups.entry(key.clone()).or_insert_with(|| vec![None; methods.len()]);
        let flags = seen.entry(key).or_insert_with(|| vec![false; methods.len()]);
        let mi = methods.iter().position(|m| *m == r.method).expect("known method");
        if flags[mi] {
            return Err(Error::invalid(format!(
                "duplicate report for {}/{}/{}/{}",
                r.dataset,
                r.kind.as_str(),
                r.rate,
                r.method
            )));
        }
        flags[mi] = true;
        entry[mi] = r.mean_nrmse();
    }
    for (key, flags) in &seen {
        if !flags.iter().all(|&f| f) {
            return Err(Error::invalid(format!(
                "group {}/{}/{} is missing some methods",
                key.0, key.1, key.2
            )));
        }
    }

    // ranks per group, then aggregate per (kind, rate) and per kind.
    let mut per_cell: BTreeMap<(&'static str, u32), Vec<Vec<f64>>> = BTreeMap::new();
    let mut per_kind: BTreeMap<&'static str, Vec<Vec<f64>>> = BTreeMap::new();
    for (key, means) in &groups {
        let ranks = group_ranks(means);
        per_cell.entry((key.1, key.2)).or_default().push(ranks.clone());
        per_kind.entry(key.1).or_default().push(ranks);
    }

    let parse_kind = |s: &str| -> MissingKind { s.parse().expect("valid kind key") };
    let mut rows = Vec::new();
    let mut kinds_in_order: Vec<&'static str> = Vec::new();
    for &(kind, _) in per_cell.keys() {
        if !kinds_in_order.contains(&kind) {
            kinds_in_order.push(kind);
        }
    }
    for kind in kinds_in_order {
        for (&(k, rk), group_ranks) in &per_cell {
            if k != kind {
                continue;
            }
            let mean_std_cols: Vec<(f64, f64)> = (0..methods.len())
                .map(|mi| {
                    let vals: Vec<f64> = group_ranks.iter().map(|g| g[mi]).collect();
                    mean_std(&vals)
                })
                .collect();
            rows.push(RankRow {
                kind: parse_kind(k),
                rate: Some(rk as f64 / 1000.0),
                mean_std: mean_std_cols,
            });
        }
        let all = &per_kind[kind];
        let avg_cols: Vec<(f64, f64)> = (0..methods.len())
            .map(|mi| {
                let vals: Vec<f64> = all.iter().map(|g| g[mi]).collect();
                mean_std(&vals)
            })
            .collect();
        rows.push(RankRow { kind: parse_kind(kind), rate: None, mean_std: avg_cols });
    }

    Ok(RankSummary { methods, rows })
}

/// Render the rank summary as an aligned plain-text table.
pub fn render_rank_table(summary: &RankSummary) -> String {
    let mut header = vec!["kind".to_string(), "rate".to_string()];
    header.extend(summary.methods.iter().cloned());
    let mut body: Vec<Vec<String>> = vec![header];
    for row in &summary.rows {
        let mut line = vec![
            row.kind.as_str().to_string(),
            match row.rate {
                Some(r) => format!("{}%", (r * 100.0).round() as u32),
                None => "Avg.".to_string(),
            },
        ];
        for &(mean, std) in &row.mean_std {
            line.push(format!("{:.2} ({:.2})", mean, std));
        }
        body.push(line);
    }
    let cols = body[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| body.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::from("Average rank order of imputation methods by NRMSE\n");
    for (i, row) in body.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{:<width$}", cell, width = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// One row per fold: the primary machine-readable result set.
pub fn write_reports_csv(reports: &[EvaluationReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "dataset,kind,rate,method,fold,nrmse,batch_spread,error")?;
    for r in reports {
        for f in &r.folds {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.dataset,
                r.kind.as_str(),
                r.rate,
                r.method,
                f.fold,
                f.nrmse.map(|v| v.to_string()).unwrap_or_default(),
                f.batch_spread.map(|v| v.to_string()).unwrap_or_default(),
                f.error.as_deref().unwrap_or("").replace(',', ";"),
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
pub struct CellSummary {
    pub dataset: String,
    pub kind: String,
    pub rate: f64,
    pub method: String,
    pub mean_nrmse: Option<f64>,
    pub std_nrmse: Option<f64>,
    pub realized_rate: f64,
    pub fold_nrmse: Vec<Option<f64>>,
    pub fold_errors: Vec<Option<String>>,
    pub mask_warnings: Vec<String>,
}

pub fn cell_summaries(reports: &[EvaluationReport]) -> Vec<CellSummary> {
    reports
        .iter()
        .map(|r| CellSummary {
            dataset: r.dataset.clone(),
            kind: r.kind.as_str().to_string(),
            rate: r.rate,
            method: r.method.clone(),
            mean_nrmse: r.mean_nrmse(),
            std_nrmse: r.std_nrmse(),
            realized_rate: r.realized_rate,
            fold_nrmse: r.folds.iter().map(|f| f.nrmse).collect(),
            fold_errors: r.folds.iter().map(|f| f.error.clone()).collect(),
            mask_warnings: r.mask_warnings.clone(),
        })
        .collect()
}

pub fn write_summary_json(reports: &[EvaluationReport], w: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(w, &cell_summaries(reports))
        .map_err(|e| Error::invalid(format!("summary encode: {e}")))
}

/// Wall-clock diagnostics; volatile across runs, kept out of the
/// deterministic report set.
pub fn write_timings_csv(reports: &[EvaluationReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "dataset,kind,rate,method,fold,seconds")?;
    for r in reports {
        for f in &r.folds {
            writeln!(
                w,
                "{},{},{},{},{},{:.3}",
                r.dataset,
                r.kind.as_str(),
                r.rate,
                r.method,
                f.fold,
                f.seconds
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::FoldResult;

    fn report(dataset: &str, kind: MissingKind, rate: f64, method: &str, nrmse: Option<f64>) -> EvaluationReport {
        let folds = (0..5)
            .map(|f| FoldResult {
                fold: f,
                nrmse,
                error: nrmse.is_none().then(|| "boom".to_string()),
                seconds: 0.0,
                batch_spread: None,
            })
            .collect();
        EvaluationReport {
            dataset: dataset.into(),
            kind,
            rate,
            method: method.into(),
            realized_rate: rate,
            mask_warnings: vec![],
            folds,
        }
    }

    #[test]
    fn dominant_method_ranks_first_everywhere() {
        let mut reports = Vec::new();
        for rate in [0.1, 0.3] {
            reports.push(report("d1", MissingKind::Mcar, rate, "a", Some(0.2)));
            reports.push(report("d1", MissingKind::Mcar, rate, "b", Some(0.5)));
        }
        let summary = rank_table(&reports).unwrap();
        assert_eq!(summary.methods, vec!["a".to_string(), "b".to_string()]);
        let avg = summary.rows.iter().find(|r| r.rate.is_none()).unwrap();
        assert_eq!(avg.mean_std[0], (1.0, 0.0));
        assert_eq!(avg.mean_std[1], (2.0, 0.0));
    }

    #[test]
    fn exact_ties_share_the_average_rank() {
        let reports = vec![
            report("d1", MissingKind::Mcar, 0.3, "a", Some(0.4)),
            report("d1", MissingKind::Mcar, 0.3, "b", Some(0.4)),
        ];
        let summary = rank_table(&reports).unwrap();
        let row = &summary.rows[0];
        assert_eq!(row.mean_std[0].0, 1.5);
        assert_eq!(row.mean_std[1].0, 1.5);
    }

    #[test]
    fn failures_take_the_worst_rank() {
        let reports = vec![
            report("d1", MissingKind::Mcar, 0.3, "a", Some(0.4)),
            report("d1", MissingKind::Mcar, 0.3, "b", None),
            report("d1", MissingKind::Mcar, 0.3, "c", Some(0.2)),
        ];
        let summary = rank_table(&reports).unwrap();
        let row = &summary.rows[0];
        assert_eq!(row.mean_std[0].0, 2.0); // a
        assert_eq!(row.mean_std[1].0, 3.0); // failed b is worst
        assert_eq!(row.mean_std[2].0, 1.0); // c
    }

    #[test]
    fn hand_computed_rank_means_over_four_groups() {
        // Three methods over four groups (2 datasets x 2 rates) with known
        // orderings. Per-group ranks:
        //   g1: a=1 b=2 c=3; g2: a=2 b=1 c=3; g3: a=1 b=3 c=2; g4: a=1 b=2 c=3
        // Means: a = 1.25, b = 2.0, c = 2.75.
        let mut reports = Vec::new();
        let grid = [
            ("d1", 0.1, [0.1, 0.2, 0.3]),
            ("d1", 0.3, [0.2, 0.1, 0.3]),
            ("d2", 0.1, [0.1, 0.3, 0.2]),
            ("d2", 0.3, [0.1, 0.2, 0.3]),
        ];
        for (ds, rate, scores) in grid {
            for (m, s) in ["a", "b", "c"].iter().zip(scores) {
                reports.push(report(ds, MissingKind::Mnar, rate, m, Some(s)));
            }
        }
        let summary = rank_table(&reports).unwrap();
        let avg = summary.rows.iter().find(|r| r.rate.is_none()).unwrap();
        assert_eq!(avg.mean_std[0].0, 1.25);
        assert_eq!(avg.mean_std[1].0, 2.0);
        assert_eq!(avg.mean_std[2].0, 2.75);
        // population std of a's ranks [1,2,1,1]: sqrt(3/16)
        assert!((avg.mean_std[0].1 - (3.0f64 / 16.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_table_rejects_incomplete_grids() {
        let reports = vec![
            report("d1", MissingKind::Mcar, 0.3, "a", Some(0.4)),
            report("d1", MissingKind::Mcar, 0.5, "a", Some(0.4)),
            report("d1", MissingKind::Mcar, 0.3, "b", Some(0.5)),
        ];
        assert!(rank_table(&reports).is_err());
    }

    #[test]
    fn rendered_table_has_one_row_per_cell_plus_averages() {
        let mut reports = Vec::new();
        for kind in [MissingKind::Mcar, MissingKind::Mnar] {
            for rate in [0.1, 0.3] {
                reports.push(report("d1", kind, rate, "a", Some(0.2)));
                reports.push(report("d1", kind, rate, "b", Some(0.3)));
            }
        }
        let summary = rank_table(&reports).unwrap();
        let text = render_rank_table(&summary);
        assert_eq!(text.lines().filter(|l| l.contains("Avg.")).count(), 2);
        assert_eq!(text.lines().filter(|l| l.contains('%')).count(), 4);
        assert!(text.contains("1.00 (0.00)"));
    }
}
