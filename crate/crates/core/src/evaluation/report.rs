use std::fmt::Write as _;

use super::{Column, EvaluationError, EvaluationReport};

/// A comparison table in two renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub columns: Vec<Column>,
    /// Baselines first, then the evaluated systems.
    pub systems: Vec<String>,
    /// `marks[row][col]` is set when that cell holds the column maximum.
    pub marks: Vec<Vec<bool>>,
    pub text: String,
    pub tsv: String,
}

fn labels(columns: &[Column]) -> String {
    columns.iter().map(|c| c.label()).collect::<Vec<_>>().join(", ")
}

/// Render systems side by side in the fixed seven-column layout, marking
/// each column's maximum (all tied maxima are marked). Unscored columns
/// show `-`. Every report must carry the same scored column set.
pub fn build_report(reports: &[EvaluationReport], baselines: &[EvaluationReport]) -> Result<RenderedReport, EvaluationError> {
    let all: Vec<&EvaluationReport> = baselines.iter().chain(reports).collect();
    let first = all.first().ok_or(EvaluationError::EmptyInput)?;
    for r in &all[1..] {
        if r.columns != first.columns {
            return Err(EvaluationError::SchemaMismatch {
                system: r.system_name.clone(),
                expected: labels(&first.columns),
                found: labels(&r.columns),
            });
        }
    }
    let columns = Column::ALL.to_vec();

    let values: Vec<Vec<Option<f64>>> = all
        .iter()
        .map(|r| columns.iter().map(|&c| r.aggregates.get(c)).collect())
        .collect();
    let mut marks = vec![vec![false; columns.len()]; all.len()];
    for col in 0..columns.len() {
        let best = values.iter().filter_map(|row| row[col]).fold(f64::NEG_INFINITY, f64::max);
        for (row, v) in values.iter().enumerate() {
            marks[row][col] = matches!(v[col], Some(x) if x == best);
        }
    }

    let cell = |v: Option<f64>, marked: bool| match v {
        Some(x) if marked => format!("{x:.4}*"),
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    };
    let name_width = all.iter().map(|r| r.system_name.len()).max().unwrap_or(0).max("System".len());
    let width = 8;
    let mut text = String::new();
    let _ = write!(text, "{:<name_width$}", "System");
    for c in &columns {
        let _ = write!(text, "  {:>width$}", c.label());
    }
    text.push('\n');
    let rule = name_width + columns.len() * (width + 2);
    for (row, r) in all.iter().enumerate() {
        if row == baselines.len() && !baselines.is_empty() || row == 0 {
            let _ = writeln!(text, "{}", "-".repeat(rule));
        }
        let _ = write!(text, "{:<name_width$}", r.system_name);
        for col in 0..columns.len() {
            let _ = write!(text, "  {:>width$}", cell(values[row][col], marks[row][col]));
        }
        text.push('\n');
    }
    text.push_str("* column maximum\n");

    let mut tsv = String::from("system");
    for c in &columns {
        tsv.push('\t');
        tsv.push_str(c.label());
    }
    tsv.push_str("\tmax_columns\n");
    for (row, r) in all.iter().enumerate() {
        tsv.push_str(&r.system_name);
        for v in &values[row] {
            tsv.push('\t');
            if let Some(x) = v {
                let _ = write!(tsv, "{x}");
            }
        }
        let best: Vec<&str> = columns
            .iter()
            .zip(&marks[row])
            .filter(|(_, &m)| m)
            .map(|(c, _)| c.label())
            .collect();
        let _ = writeln!(tsv, "\t{}", best.join(","));
    }

    Ok(RenderedReport {
        columns,
        systems: all.iter().map(|r| r.system_name.clone()).collect(),
        marks,
        text,
        tsv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ColumnValues, InstanceScores};

    fn report(name: &str, vals: [f64; 7]) -> EvaluationReport {
        let mut scores = ColumnValues::default();
        for (c, v) in Column::ALL.into_iter().zip(vals) {
            scores.set(c, Some(v));
        }
        EvaluationReport::from_rows(name, Column::ALL.to_vec(), vec![InstanceScores { id: "1".into(), scores }], vec![])
    }

    #[test]
    fn dominance_singleton_and_ties() {
        let a = report("a", [0.9, 4.0, 4.0, 4.0, 4.0, 0.5, 0.3]);
        let b = report("b", [0.8, 3.0, 3.0, 3.0, 3.0, 0.4, 0.2]);
        let out = build_report(&[a.clone(), b.clone()], &[]).unwrap();
        assert!(out.marks[0].iter().all(|&m| m) && out.marks[1].iter().all(|&m| !m));

        let single = build_report(&[b.clone()], &[]).unwrap();
        assert!(single.marks[0].iter().all(|&m| m));

        let c = report("c", [0.8, 3.0, 3.0, 3.0, 3.0, 0.5, 0.2]);
        let tie = build_report(&[b, c], &[a]).unwrap();
        assert_eq!(tie.systems, vec!["a", "b", "c"]);
        assert!(tie.marks[0][5] && !tie.marks[1][5] && tie.marks[2][5]);
        assert!(tie.text.contains("0.5000*"));
        assert!(tie.tsv.starts_with("system\tS_A\tS_G\tCoh\tFlu\tRel\tR1\tR2\tmax_columns\n"));
    }

    #[test]
    fn schema_mismatch_rejected() {
        let a = report("a", [0.5; 7]);
        let mut b = report("b", [0.5; 7]);
        b.columns.pop();
        b.aggregates.rouge2_f = None;
        assert!(matches!(build_report(&[a, b.clone()], &[]), Err(EvaluationError::SchemaMismatch { .. })));
        assert!(build_report(&[], &[]).is_err());
        let c = b.clone();
        let out = build_report(&[b, c], &[]).unwrap();
        assert_eq!(out.columns, Column::ALL.to_vec());
        assert!(!out.marks[0][6] && out.marks[0][5]);
        assert!(out.text.lines().nth(2).unwrap().ends_with("-"));
    }
}
