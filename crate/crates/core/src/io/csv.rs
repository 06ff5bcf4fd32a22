//! Wide-format CSV ingestion: one row per observation, a choice column and
//! one column per attribute.
//!
//! Categorical attributes become 0/1 dummies named `var_level`, one per
//! level. Levels are sorted numerically when every level parses as a number
//! and lexically otherwise. The resolved levels and alternative labels are
//! returned in the schema so a later file can be read with the same layout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Which columns to read and how to interpret them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub choice: String,
    /// Attribute columns in output order.
    pub variables: Vec<String>,
    /// Members of `variables` to expand into dummies.
    pub categorical: Vec<String>,
    /// Alternative labels in index order; inferred when absent.
    pub alternatives: Option<Vec<String>>,
    /// Fixed levels per categorical variable; inferred when absent.
    pub levels: BTreeMap<String, Vec<String>>,
}

impl CsvSchema {
    pub fn new(choice: impl Into<String>, variables: Vec<String>) -> Self {
        Self {
            choice: choice.into(),
            variables,
            ..Self::default()
        }
    }

    /// Dataset columns that enter the utilities. With an ASC the first level
    /// of each categorical variable is left out as the baseline.
    pub fn design_variables(&self, include_asc: bool) -> Vec<String> {
        let mut out = Vec::new();
        for v in &self.variables {
            match self.levels.get(v).filter(|_| self.categorical.contains(v)) {
                Some(levels) => {
                    let skip = usize::from(include_asc);
                    out.extend(levels.iter().skip(skip).map(|l| dummy_name(v, l)));
                }
                None => out.push(v.clone()),
            }
        }
        out
    }
}

pub fn dummy_name(variable: &str, level: &str) -> String {
    format!("{variable}_{level}")
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

fn csv_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn sort_levels(levels: &mut [String]) {
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        levels.sort();
    }
}

/// Reads `path` according to `schema`; returns the dataset and the schema
/// with alternatives and categorical levels resolved.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Dataset, CsvSchema)> {
    let path = path.as_ref();
    for c in &schema.categorical {
        if !schema.variables.contains(c) {
            return Err(Error::InvalidArgument(format!(
                "categorical variable `{c}` is not among the variables"
            )));
        }
    }
    let mut reader = ::csv::ReaderBuilder::new()
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, 1, e.to_string()))?
        .clone();
    for (i, h) in headers.iter().enumerate() {
        if headers.iter().take(i).any(|p| p == h) {
            return Err(csv_error(path, 1, format!("duplicate column `{h}`")));
        }
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_error(path, 1, format!("missing column `{name}`")))
    };
    let choice_col = find(&schema.choice)?;
    let var_cols = schema.variables.iter().map(|v| find(v)).collect::<Result<Vec<_>>>()?;

    let mut lines = Vec::new();
    let mut choice_raw = Vec::new();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); var_cols.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |col: usize, name: &str| -> Result<String> {
            let cell = record.get(col).unwrap_or("");
            if is_missing(cell) {
                return Err(csv_error(path, line, format!("missing value in `{name}`")));
            }
            Ok(cell.to_string())
        };
        choice_raw.push(get(choice_col, &schema.choice)?);
        for ((out, &col), name) in cells.iter_mut().zip(&var_cols).zip(&schema.variables) {
            out.push(get(col, name)?);
        }
        lines.push(line);
    }

    let mut resolved = schema.clone();
    let alternatives = match &schema.alternatives {
        Some(a) => a.clone(),
        None => infer_alternatives(&choice_raw),
    };
    let choices = choice_raw
        .iter()
        .zip(&lines)
        .map(|(c, &line)| {
            alternatives
                .iter()
                .position(|a| a == c)
                .or_else(|| c.parse::<usize>().ok().filter(|&i| i < alternatives.len()))
                .ok_or_else(|| csv_error(path, line, format!("unknown choice label `{c}`")))
        })
        .collect::<Result<Vec<usize>>>()?;
    resolved.alternatives = Some(alternatives.clone());

    // column-major blocks, interleaved into rows at the end
    let mut names = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (v, raw) in schema.variables.iter().zip(&cells) {
        if schema.categorical.contains(v) {
            let levels = match schema.levels.get(v) {
                Some(l) => l.clone(),
                None => {
                    let mut l: Vec<String> = raw.clone();
                    l.sort();
                    l.dedup();
                    sort_levels(&mut l);
                    l
                }
            };
            let index = raw
                .iter()
                .zip(&lines)
                .map(|(cell, &line)| {
                    levels
                        .iter()
                        .position(|l| l == cell)
                        .ok_or_else(|| csv_error(path, line, format!("unknown level `{cell}` for `{v}`")))
                })
                .collect::<Result<Vec<usize>>>()?;
            for (k, level) in levels.iter().enumerate() {
                names.push(dummy_name(v, level));
                blocks.push(index.iter().map(|&i| f64::from(u8::from(i == k))).collect());
            }
            resolved.levels.insert(v.clone(), levels);
        } else {
            let col = raw
                .iter()
                .zip(&lines)
                .map(|(cell, &line)| {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| csv_error(path, line, format!("cannot parse `{cell}` in `{v}` as a number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            names.push(v.clone());
            blocks.push(col);
        }
    }
    let n = choices.len();
    let mut attributes = Vec::with_capacity(n * blocks.len());
    for row in 0..n {
        attributes.extend(blocks.iter().map(|b| b[row]));
    }
    let data = Dataset::new(names, attributes, choices, alternatives)?;
    Ok((data, resolved))
}

/// Labels in sorted order, or `0..=max` when every label is an index.
fn infer_alternatives(raw: &[String]) -> Vec<String> {
    let indices: Option<Vec<usize>> = raw.iter().map(|c| c.parse::<usize>().ok()).collect();
    match indices {
        Some(ix) => {
            let j = ix.iter().max().map_or(2, |&m| (m + 1).max(2));
            (0..j).map(|i| i.to_string()).collect()
        }
        None => {
            let mut labels = raw.to_vec();
            labels.sort();
            labels.dedup();
            labels
        }
    }
}

/// Serializes `data` with its attribute columns followed by `choice_column`
/// holding alternative labels.
pub fn to_csv_string(data: &Dataset, choice_column: &str) -> Result<String> {
    let mut w = ::csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = data.attribute_names().iter().map(String::as_str).collect();
    header.push(choice_column);
    let to_err = |e: ::csv::Error| Error::InvalidDataset(e.to_string());
    w.write_record(&header).map_err(to_err)?;
    for n in 0..data.n_obs() {
        let mut rec: Vec<String> = data.row(n).iter().map(|v| v.to_string()).collect();
        rec.push(data.alt_names()[data.choice(n)].clone());
        w.write_record(&rec).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidDataset(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidDataset(e.to_string()))
}

pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, choice_column: &str) -> Result<()> {
    super::write_atomic(path.as_ref(), &to_csv_string(data, choice_column)?)
}

/// Schema that reads back a file written by [`write_csv`] unchanged.
pub fn round_trip_schema(data: &Dataset, choice_column: &str) -> CsvSchema {
    CsvSchema {
        choice: choice_column.to_string(),
        variables: data.attribute_names().to_vec(),
        categorical: Vec::new(),
        alternatives: Some(data.alt_names().to_vec()),
        levels: BTreeMap::new(),
    }
}

/// Resolves `p` against `base` unless it is absolute.
pub(crate) fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), contents).unwrap();
        f
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_row_fixture() {
        let f = file("a,b,mode\n1,2.5,car\n0.5,1,bus\n3,4,car\n");
        let (d, s) = load_csv(f.path(), &CsvSchema::new("mode", strings(&["a", "b"]))).unwrap();
        assert_eq!((d.n_obs(), d.n_vars(), d.n_alts()), (3, 2, 2));
        assert_eq!(d.alt_names(), &strings(&["bus", "car"])[..]);
        assert_eq!(d.choices(), &[1, 0, 1]);
        assert_eq!(d.row(1), &[0.5, 1.0]);
        assert_eq!(s.alternatives, Some(strings(&["bus", "car"])));
    }

    #[test]
    fn index_choices_and_fixed_alternatives() {
        let f = file("x,c\n1,0\n2,2\n");
        let (d, _) = load_csv(f.path(), &CsvSchema::new("c", strings(&["x"]))).unwrap();
        assert_eq!(d.n_alts(), 3);
        let schema = CsvSchema {
            alternatives: Some(strings(&["walk", "bike", "car", "bus"])),
            ..CsvSchema::new("c", strings(&["x"]))
        };
        let (d, _) = load_csv(f.path(), &schema).unwrap();
        assert_eq!(d.n_alts(), 4);
        assert_eq!(d.choices(), &[0, 2]);
    }

    #[test]
    fn categorical_expansion() {
        let mut text = String::from("activity,c\n");
        for level in [3, 1, 9, 2, 5, 4, 8, 6, 7, 1] {
            text.push_str(&format!("{level},a\n"));
        }
        text.push_str("10,b\n");
        let f = file(&text);
        let schema = CsvSchema {
            categorical: strings(&["activity"]),
            ..CsvSchema::new("c", strings(&["activity"]))
        };
        let (d, s) = load_csv(f.path(), &schema).unwrap();
        assert_eq!(d.n_vars(), 10);
        // numeric order, so 10 sorts last
        assert_eq!(d.attribute_names()[0], "activity_1");
        assert_eq!(d.attribute_names()[9], "activity_10");
        assert_eq!(d.row(0)[2], 1.0);
        assert_eq!(d.row(0).iter().sum::<f64>(), 1.0);
        assert_eq!(s.levels["activity"].len(), 10);
        assert_eq!(s.design_variables(true).len(), 9);
        assert_eq!(s.design_variables(false).len(), 10);
    }

    #[test]
    fn nine_level_categorical_gives_nine_dummies() {
        let mut text = String::from("activity,c\n");
        for level in ["work", "school", "shopping", "leisure", "health", "pickup", "return", "other", "meal"] {
            text.push_str(&format!("{level},x\n"));
        }
        let f = file(&text);
        let schema = CsvSchema {
            categorical: strings(&["activity"]),
            alternatives: Some(strings(&["x", "y"])),
            ..CsvSchema::new("c", strings(&["activity"]))
        };
        let (d, _) = load_csv(f.path(), &schema).unwrap();
        assert_eq!(d.n_vars(), 9);
        assert!(d.attribute_names().contains(&"activity_work".to_string()));
    }

    #[test]
    fn saved_levels_are_reused() {
        let f = file("k,c\nb,x\nb,y\n");
        let schema = CsvSchema {
            categorical: strings(&["k"]),
            levels: BTreeMap::from([("k".to_string(), strings(&["a", "b", "c"]))]),
            ..CsvSchema::new("c", strings(&["k"]))
        };
        let (d, _) = load_csv(f.path(), &schema).unwrap();
        assert_eq!(d.n_vars(), 3);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.0]);
        let g = file("k,c\nz,x\n");
        let err = load_csv(g.path(), &schema).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 2, .. }), "{err}");
    }

    #[test]
    fn errors_name_column_and_line() {
        let f = file("a,a,c\n1,2,x\n");
        let err = load_csv(f.path(), &CsvSchema::new("c", strings(&["a"]))).unwrap_err();
        assert!(err.to_string().contains("duplicate column `a`"), "{err}");

        let f = file("a,c\n1,x\n,y\n");
        let err = load_csv(f.path(), &CsvSchema::new("c", strings(&["a"]))).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");

        let f = file("a,c\n1,x\nabc,y\n");
        let err = load_csv(f.path(), &CsvSchema::new("c", strings(&["a"]))).unwrap_err();
        assert!(err.to_string().contains("cannot parse `abc`"), "{err}");

        let err = load_csv(f.path(), &CsvSchema::new("c", strings(&["b"]))).unwrap_err();
        assert!(err.to_string().contains("missing column `b`"), "{err}");

        let f = file("a,c\n1,x\n2,z\n");
        let schema = CsvSchema {
            alternatives: Some(strings(&["x", "y"])),
            ..CsvSchema::new("c", strings(&["a"]))
        };
        let err = load_csv(f.path(), &schema).unwrap_err();
        assert!(err.to_string().contains("unknown choice label `z`"), "{err}");
    }

    #[test]
    fn write_then_load_is_identity() {
        let data = Dataset::new(
            strings(&["x", "k_a", "k_b"]),
            vec![0.1, 1.0, 0.0, -3.25e-7, 0.0, 1.0, 1.0 / 3.0, 1.0, 0.0],
            vec![2, 0, 1],
            strings(&["car", "red, bus", "blue"]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&p, &data, "choice").unwrap();
        let (back, _) = load_csv(&p, &round_trip_schema(&data, "choice")).unwrap();
        assert_eq!(back, data);
    }
}
