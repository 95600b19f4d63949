//! Deterministic text tables and CSV output.

use super::{format_auc, format_delta, DeltaTable, EvalError, EvalReport, FairnessReport};

/// Marker for a cell with no defined value.
pub const ABSENT: &str = "—";
pub const REPORT_HEADER: [&str; 5] = ["condition", "model", "auc", "genuine_n", "impostor_n"];
pub const FAIRNESS_HEADER: [&str; 7] =
    ["condition", "model", "attribute", "subgroup", "auc", "genuine_n", "impostor_n"];

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Left-aligned first column, right-aligned others.
fn grid(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |r: &[String]| {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = " ".repeat(width[i] - c.chars().count());
                if i == 0 {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn ordered<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// `condition,model,auc,genuine_n,impostor_n` with full-precision AUC.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    csv_string(
        &REPORT_HEADER,
        reports.iter().map(|r| {
            vec![
                r.condition.clone(),
                r.model.clone(),
                r.auc.to_string(),
                r.genuine_n.to_string(),
                r.impostor_n.to_string(),
            ]
        }),
    )
}

/// Conditions as rows, models as columns, AUC to one decimal.
pub fn reports_text(reports: &[EvalReport]) -> String {
    let conditions = ordered(reports.iter().map(|r| r.condition.as_str()));
    let models = ordered(reports.iter().map(|r| r.model.as_str()));
    let header: Vec<String> =
        std::iter::once("condition".to_string()).chain(models.iter().map(|m| m.to_string())).collect();
    let rows: Vec<Vec<String>> = conditions
        .iter()
        .map(|c| {
            std::iter::once(c.to_string())
                .chain(models.iter().map(|m| {
                    reports
                        .iter()
                        .find(|r| r.condition == *c && r.model == *m)
                        .map_or_else(|| ABSENT.to_string(), |r| format_auc(r.auc))
                }))
                .collect()
        })
        .collect();
    grid(&header, &rows)
}

/// Reference rows carry absolute AUC, other rows the signed difference,
/// one column per model. One block per reference condition.
pub fn render_delta_grid(tables: &[DeltaTable]) -> String {
    let references = ordered(tables.iter().map(|t| t.reference.as_str()));
    let models = ordered(tables.iter().map(|t| t.model.as_str()));
    let header: Vec<String> =
        std::iter::once("condition".to_string()).chain(models.iter().map(|m| m.to_string())).collect();
    let mut rows = Vec::new();
    for r in &references {
        let block: Vec<&DeltaTable> = tables.iter().filter(|t| t.reference == *r).collect();
        let cell = |m: &str, f: &dyn Fn(&DeltaTable) -> Option<String>| {
            block.iter().find(|t| t.model == m).and_then(|t| f(t)).unwrap_or_else(|| ABSENT.to_string())
        };
        rows.push(
            std::iter::once(format!("{r} (ref)"))
                .chain(models.iter().map(|m| cell(m, &|t| Some(format_auc(t.reference_auc)))))
                .collect(),
        );
        let conditions = ordered(block.iter().flat_map(|t| t.rows.iter().map(|x| x.condition.as_str())));
        for c in conditions {
            rows.push(
                std::iter::once(c.to_string())
                    .chain(models.iter().map(|m| {
                        cell(m, &|t| t.rows.iter().find(|x| x.condition == c).map(|x| format_delta(x.delta_tenths)))
                    }))
                    .collect(),
            );
        }
    }
    grid(&header, &rows)
}

/// `condition,model,attribute,subgroup,auc,genuine_n,impostor_n`; an
/// undefined subgroup AUC is an empty field.
pub fn fairness_csv(reports: &[FairnessReport]) -> String {
    csv_string(
        &FAIRNESS_HEADER,
        reports.iter().flat_map(|f| {
            f.rows.iter().map(|r| {
                vec![
                    f.condition.clone(),
                    f.model.clone(),
                    r.attribute.to_string(),
                    r.subgroup.clone(),
                    r.auc.map(|a| a.to_string()).unwrap_or_default(),
                    r.genuine_n.to_string(),
                    r.impostor_n.to_string(),
                ]
            })
        }),
    )
}

pub fn fairness_text(reports: &[FairnessReport]) -> String {
    let mut out = String::new();
    for f in reports {
        out.push_str(&format!(
            "{} / {}: overall {}\n",
            f.condition,
            f.model,
            f.overall.map_or_else(|| ABSENT.to_string(), format_auc)
        ));
        let header: Vec<String> =
            ["attribute", "subgroup", "auc", "genuine_n", "impostor_n"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = f
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.attribute.to_string(),
                    r.subgroup.clone(),
                    r.auc.map_or_else(|| ABSENT.to_string(), format_auc),
                    r.genuine_n.to_string(),
                    r.impostor_n.to_string(),
                ]
            })
            .collect();
        out.push_str(&grid(&header, &rows));
        for (attr, n) in f.unknown.iter().filter(|(_, n)| **n > 0) {
            out.push_str(&format!("{attr}: {n} trials with unknown value excluded\n"));
        }
        out.push('\n');
    }
    out
}

/// Two-column `fpr,tpr` plot data.
pub fn roc_csv(points: &[(f64, f64)]) -> String {
    csv_string(&["fpr", "tpr"], points.iter().map(|(f, t)| vec![f.to_string(), t.to_string()]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: String,
}

pub fn render_report(reports: &[EvalReport]) -> Result<RenderedReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(RenderedReport { text: reports_text(reports), csv: reports_csv(reports) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::delta_table;

    fn rep(c: &str, m: &str, auc: f64) -> EvalReport {
        EvalReport { condition: c.into(), model: m.into(), auc, genuine_n: 3, impostor_n: 4 }
    }

    #[test]
    fn single_report() {
        let r = render_report(&[rep("A->A", "m", 91.25)]).unwrap();
        assert_eq!(r.csv, "condition,model,auc,genuine_n,impostor_n\nA->A,m,91.25,3,4\n");
        assert!(r.text.contains("91.3"));
        assert_eq!(render_report(&[]), Err(EvalError::Empty));
    }

    #[test]
    fn missing_cell_rendered_absent() {
        let t = reports_text(&[rep("a", "x", 50.0), rep("b", "y", 60.0)]);
        assert!(t.contains(ABSENT));
    }

    #[test]
    fn delta_grid_layout() {
        let reports = [
            rep("HUNY->HUNY", "Graph", 83.5),
            rep("HUNY->LIVE", "Graph", 87.4),
            rep("HUNY->HUNY", "DINOv2", 79.8),
            rep("HUNY->LIVE", "DINOv2", 79.8),
        ];
        let tables: Vec<_> = ["Graph", "DINOv2"]
            .iter()
            .map(|m| delta_table(&reports, "HUNY->HUNY", m, &["HUNY->LIVE"]).unwrap())
            .collect();
        let g = render_delta_grid(&tables);
        let lines: Vec<&str> = g.lines().collect();
        assert!(lines[0].starts_with("condition"));
        let cells = |l: &str| l.split_whitespace().map(String::from).collect::<Vec<_>>();
        assert_eq!(cells(lines[2]), ["HUNY->HUNY", "(ref)", "83.5", "79.8"]);
        assert_eq!(cells(lines[3]), ["HUNY->LIVE", "+3.9", "0.0"]);
    }

    #[test]
    fn roc_plot_data() {
        assert_eq!(roc_csv(&[(0.0, 0.0), (0.5, 1.0)]), "fpr,tpr\n0,0\n0.5,1\n");
    }
}
