use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};

/// AUC rounded to tenths of a percentage point, the precision of rendered tables.
pub fn tenths(auc: f64) -> i64 {
    (auc * 10.0).round() as i64
}

/// AUC to one decimal, rounded the same way as [`tenths`].
pub fn format_auc(auc: f64) -> String {
    let t = tenths(auc);
    let sign = if t < 0 { "-" } else { "" };
    let a = t.unsigned_abs();
    format!("{sign}{}.{}", a / 10, a % 10)
}

/// `+3.9`, `-1.5`, `0.0`.
pub fn format_delta(tenths: i64) -> String {
    let sign = match tenths.signum() {
        1 => "+",
        -1 => "-",
        _ => "",
    };
    let a = tenths.unsigned_abs();
    format!("{sign}{}.{}", a / 10, a % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub condition: String,
    pub auc: f64,
    /// Condition minus reference, in percentage points.
    pub delta: f64,
    /// Difference of the two AUCs as rendered (tenths), so that a rendered
    /// reference plus a rendered delta always gives the rendered condition.
    pub delta_tenths: i64,
}

impl DeltaRow {
    pub fn rendered(&self) -> String {
        format_delta(self.delta_tenths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub model: String,
    pub reference: String,
    pub reference_auc: f64,
    pub rows: Vec<DeltaRow>,
}

/// Differences of every report of `model` against the report of
/// `reference` for that model. `conditions` selects and orders the rows.
pub fn delta_table(
    reports: &[EvalReport],
    reference: &str,
    model: &str,
    conditions: &[&str],
) -> Result<DeltaTable, EvalError> {
    let find = |c: &str| reports.iter().find(|r| r.condition == c && r.model == model);
    let missing = |c: &str| EvalError::MissingReference { condition: c.to_string(), model: model.to_string() };
    let r = find(reference).ok_or_else(|| missing(reference))?;
    let rows = conditions
        .iter()
        .map(|c| {
            let x = find(c).ok_or_else(|| missing(c))?;
            Ok(DeltaRow {
                condition: x.condition.clone(),
                auc: x.auc,
                delta: x.auc - r.auc,
                delta_tenths: tenths(x.auc) - tenths(r.auc),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DeltaTable { model: model.to_string(), reference: reference.to_string(), reference_auc: r.auc, rows })
}
