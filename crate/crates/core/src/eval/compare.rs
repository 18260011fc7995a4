use std::fmt::Write as _;
use std::path::Path;

use super::harness::EvalReport;
use crate::error::{Error, Result};
use crate::training::write_csv_rows;

/// Reports ranked by total cross-entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// Input order is kept.
    pub reports: Vec<EvalReport>,
    /// Index of the single best (lowest total BCE) report.
    pub best: usize,
    /// Names sharing the best score, when more than one.
    pub tied: Vec<String>,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "variant",
    "frames",
    "total_bce",
    "mean_pixel_bce",
    "auroc",
    "positive_rate",
    "best_flag",
];

/// Flags the lowest total BCE. Exact ties go to the name that sorts first.
pub fn compare_models(reports: Vec<EvalReport>) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Comparison("need at least two reports to compare".into()));
    }
    let first = &reports[0];
    if let Some(r) = reports
        .iter()
        .find(|r| r.stream_id != first.stream_id || r.frames != first.frames)
    {
        return Err(Error::Comparison(format!(
            "`{}` was scored on a different validation stream than `{}`",
            r.name, first.name
        )));
    }
    if let Some(r) = reports.iter().find(|r| !r.total_bce.is_finite()) {
        return Err(Error::Comparison(format!("`{}` has a non-finite total BCE", r.name)));
    }
    let min = reports.iter().map(|r| r.total_bce).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].total_bce == min).collect();
    tied.sort_by(|&a, &b| reports[a].name.cmp(&reports[b].name).then(a.cmp(&b)));
    let best = tied[0];
    let tied = if tied.len() > 1 {
        tied.iter().map(|&i| reports[i].name.clone()).collect()
    } else {
        Vec::new()
    };
    Ok(Comparison { reports, best, tied })
}

fn fmt_auroc(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |v| v.to_string())
}

impl Comparison {
    pub fn rows(&self) -> Vec<[String; 7]> {
        self.reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                [
                    r.name.clone(),
                    r.frames.to_string(),
                    r.total_bce.to_string(),
                    r.mean_pixel_bce.to_string(),
                    fmt_auroc(r.auroc),
                    r.positive_rate.to_string(),
                    u8::from(i == self.best).to_string(),
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv_rows(path, &REPORT_COLUMNS, self.rows())
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>7} {:>12} {:>10} {:>8} {:>9}",
            "model", "frames", "total BCE", "mean BCE", "AUROC", "pos rate"
        );
        for (i, r) in self.reports.iter().enumerate() {
            let auroc = r.auroc.map_or_else(|| "N/A".to_string(), |v| format!("{v:.4}"));
            let mark = if i == self.best { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:<20} {:>7} {:>12.4} {:>10.6} {:>8} {:>9.5}{mark}",
                r.name, r.frames, r.total_bce, r.mean_pixel_bce, auroc, r.positive_rate
            );
        }
        let best = &self.reports[self.best].name;
        if self.tied.is_empty() {
            let _ = writeln!(out, "best (lowest total BCE): {best}");
        } else {
            let _ = writeln!(
                out,
                "best (lowest total BCE): {best}; tie between {} broken by name",
                self.tied.join(", ")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, total: f64) -> EvalReport {
        EvalReport {
            name: name.into(),
            frames: 10,
            total_bce: total,
            mean_pixel_bce: total / 10.0,
            auroc: Some(0.7),
            positive_rate: 0.1,
            stream_id: "s".into(),
        }
    }

    #[test]
    fn lowest_total_wins() {
        let c = compare_models(vec![report("a", 3.0), report("b", 1.0), report("c", 2.0)]).unwrap();
        assert_eq!(c.best, 1);
        assert!(c.tied.is_empty());
    }

    #[test]
    fn ties_go_to_first_name() {
        let c = compare_models(vec![report("zeta", 1.0), report("alpha", 1.0)]).unwrap();
        assert_eq!(c.best, 1);
        assert_eq!(c.tied, vec!["alpha".to_string(), "zeta".to_string()]);
        assert!(c.table().contains("tie"));
    }

    #[test]
    fn mismatched_streams_are_rejected() {
        let mut b = report("b", 1.0);
        b.stream_id = "other".into();
        assert!(matches!(compare_models(vec![report("a", 1.0), b]), Err(Error::Comparison(_))));
    }

    #[test]
    fn single_report_is_rejected() {
        assert!(compare_models(vec![report("a", 1.0)]).is_err());
    }

    fn best_of(totals: [f64; 3]) -> String {
        let names = ["static_generative", "gru_baseline", "dynamic_autoenc"];
        let c = compare_models(names.iter().zip(totals).map(|(n, t)| report(n, t)).collect()).unwrap();
        c.reports[c.best].name.clone()
    }

    #[test]
    fn published_validation_totals_pick_the_published_winner() {
        assert_eq!(best_of([90.6, 87.0, 77.1]), "dynamic_autoenc");
        assert_eq!(best_of([129.7, 134.7, 140.6]), "static_generative");
        assert_eq!(best_of([120.8, 124.9, 102.4]), "dynamic_autoenc");
        assert_eq!(best_of([150.74, 152.0, 144.7]), "dynamic_autoenc");
    }

    #[test]
    fn csv_flags_exactly_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let c = compare_models(vec![report("a", 3.0), report("b", 1.0), report("c", 1.0)]).unwrap();
        c.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_COLUMNS.join(","));
        let flags: Vec<&str> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(flags, ["0", "1", "0"]);
    }

    #[test]
    fn non_finite_totals_are_rejected() {
        assert!(compare_models(vec![report("a", f64::NAN), report("b", 1.0)]).is_err());
    }
}
