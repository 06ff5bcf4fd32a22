//! The red/blue bus illustration: one residual layer restoring a plausible
//! car share after a duplicate bus alternative is added.
//!
//! Every published cell is stored with the number of decimals it was printed
//! with. Cells printed to three or more decimals must agree within `1e-3`;
//! coarser cells must round to the printed digits.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{choice_probabilities, residual_forward};

pub const TOLERANCE: f64 = 1e-3;

/// One alternative's row: `V`, `g` (absent without a residual layer),
/// `exp(V + g)` and `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub alternative: &'static str,
    pub v: f64,
    pub g: Option<f64>,
    pub exp_vg: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub rows: Vec<Row>,
}

/// A printed table value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Printed {
    pub value: f64,
    pub decimals: i32,
}

const fn printed(value: f64, decimals: i32) -> Printed {
    Printed { value, decimals }
}

/// Published `(alternative, g, exp(V+g), P)` cells, scenario by scenario.
type PublishedRow = (&'static str, Option<Printed>, Printed, Printed);

#[allow(clippy::approx_constant)]
const PUBLISHED: [(&str, &[PublishedRow]); 4] = [
    (
        "Scenario 1",
        &[
            ("car", None, printed(2.718, 3), printed(0.5, 3)),
            ("bus", None, printed(2.718, 3), printed(0.5, 3)),
        ],
    ),
    (
        "Scenario 2",
        &[
            ("car", None, printed(2.718, 3), printed(0.33, 2)),
            ("red bus", None, printed(2.718, 3), printed(0.33, 2)),
            ("blue bus", None, printed(2.718, 3), printed(0.33, 2)),
        ],
    ),
    (
        "Scenario 3 (competing car/bus)",
        &[
            ("car", Some(printed(-0.127, 3)), printed(2.394, 3), printed(0.468, 3)),
            ("red bus", Some(printed(-0.693, 3)), printed(1.359, 3), printed(0.265, 3)),
            ("blue bus", Some(printed(-0.693, 3)), printed(1.359, 3), printed(0.265, 3)),
        ],
    ),
    (
        "Scenario 3 (non-competing car/bus)",
        &[
            ("car", Some(printed(-0.693, 3)), printed(1.359, 3), printed(0.482, 3)),
            ("red bus", Some(printed(-1.313, 3)), printed(0.731, 3), printed(0.259, 3)),
            ("blue bus", Some(printed(-1.313, 3)), printed(0.731, 3), printed(0.259, 3)),
        ],
    ),
];

/// Residual matrix with car/bus competition (negative cross-effects) and
/// positive red/blue cross-effects.
pub fn competing_theta() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, -1.0, -1.0, -1.0, 0.0, 1.0, -1.0, 1.0, 0.0])
}

/// Red/blue cross-effects only.
pub fn non_competing_theta() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0])
}

fn mnl_rows(names: &[&'static str]) -> Result<Vec<Row>> {
    let v = vec![1.0; names.len()];
    let p = choice_probabilities(&v, &vec![0.0; names.len()])?;
    Ok(names
        .iter()
        .zip(p)
        .map(|(&alternative, p)| Row {
            alternative,
            v: 1.0,
            g: None,
            exp_vg: 1f64.exp(),
            p,
        })
        .collect())
}

fn residual_rows(theta: DMatrix<f64>) -> Result<Vec<Row>> {
    let v = [1.0; 3];
    let trace = residual_forward(&[theta], &v)?;
    let names = ["car", "red bus", "blue bus"];
    Ok((0..3)
        .map(|i| Row {
            alternative: names[i],
            v: v[i],
            g: Some(trace.g[i]),
            exp_vg: (v[i] + trace.g[i]).exp(),
            p: trace.probs[i],
        })
        .collect())
}

/// Computes all four scenario blocks with `V = 1` everywhere.
pub fn compute() -> Result<Vec<Scenario>> {
    Ok(vec![
        Scenario {
            name: PUBLISHED[0].0,
            rows: mnl_rows(&["car", "bus"])?,
        },
        Scenario {
            name: PUBLISHED[1].0,
            rows: mnl_rows(&["car", "red bus", "blue bus"])?,
        },
        Scenario {
            name: PUBLISHED[2].0,
            rows: residual_rows(competing_theta())?,
        },
        Scenario {
            name: PUBLISHED[3].0,
            rows: residual_rows(non_competing_theta())?,
        },
    ])
}

/// Whether `computed` reproduces a printed cell.
pub fn matches(computed: f64, cell: Printed) -> bool {
    if cell.decimals >= 3 {
        (computed - cell.value).abs() <= TOLERANCE
    } else {
        let scale = 10f64.powi(cell.decimals);
        (computed * scale).round() / scale == cell.value
    }
}

/// Lists every cell that does not reproduce the published table.
pub fn deviations(scenarios: &[Scenario]) -> Vec<String> {
    let mut out = Vec::new();
    if scenarios.len() != PUBLISHED.len() {
        out.push(format!("expected {} scenarios, got {}", PUBLISHED.len(), scenarios.len()));
        return out;
    }
    for (s, (name, rows)) in scenarios.iter().zip(PUBLISHED) {
        if s.rows.len() != rows.len() {
            out.push(format!("{name}: expected {} rows, got {}", rows.len(), s.rows.len()));
            continue;
        }
        for (row, &(alt, g, e, p)) in s.rows.iter().zip(rows) {
            let mut cells = vec![("exp(V+g)", row.exp_vg, e), ("P", row.p, p)];
            match (row.g, g) {
                (Some(got), Some(cell)) => cells.insert(0, ("g", got, cell)),
                (None, None) => {}
                _ => out.push(format!("{name}, {alt}: residual presence differs")),
            }
            for (what, got, cell) in cells {
                if !matches(got, cell) {
                    out.push(format!("{name}, {alt}, {what}: {got:.6} vs published {}", cell.value));
                }
            }
        }
    }
    out
}

/// Fixed-width table of the computed scenarios.
pub fn render(scenarios: &[Scenario]) -> String {
    let mut out = format!(
        "{:<10} {:>6} {:>8} {:>10} {:>8}\n",
        "choice", "V", "g", "exp(V+g)", "P"
    );
    for s in scenarios {
        out.push_str(s.name);
        out.push('\n');
        for r in &s.rows {
            let g = r.g.map_or("-".to_string(), |g| format!("{g:.3}"));
            out.push_str(&format!(
                "{:<10} {:>6} {:>8} {:>10.3} {:>8.3}\n",
                r.alternative, r.v, g, r.exp_vg, r.p
            ));
        }
    }
    out
}

/// Computes, renders and self-checks the table.
pub fn run() -> Result<String> {
    let scenarios = compute()?;
    let bad = deviations(&scenarios);
    if !bad.is_empty() {
        return Err(Error::SelfCheck(bad.join("; ")));
    }
    Ok(render(&scenarios))
}
