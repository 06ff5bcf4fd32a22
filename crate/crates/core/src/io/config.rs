//! Run configuration: a flat `key = value` file with `#` comments.
//!
//! Relative paths are resolved against the directory holding the file.
//! Lists are comma-separated. Every key not listed in [`KEYS`] is rejected.

use std::path::{Path, PathBuf};

use crate::data::ModelKind;
use crate::error::{Error, Result};
use crate::io::csv::{resolve, CsvSchema};
use crate::stats::elasticity::{default_grid, Aggregation};
use crate::train::TrainConfig;

/// Every recognized key.
pub const KEYS: &[&str] = &[
    "dataset",
    "choice",
    "variables",
    "categorical",
    "alternatives",
    "reference",
    "asc",
    "model",
    "depth",
    "batch_size",
    "learning_rate",
    "rmsprop_decay",
    "rmsprop_epsilon",
    "max_iterations",
    "patience",
    "seed",
    "split_fraction",
    "standardize",
    "mlp_init_scale",
    "output_dir",
    "eval_dataset",
    "model_file",
    "elasticity_variable",
    "elasticity_grid",
    "elasticity_weighting",
    "sensitivity_variable",
    "sensitivity_dummies",
];

/// Everything a CLI run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Choice column, variables, categorical variables and alternative order.
    pub schema: CsvSchema,
    /// Reference alternative as a label or 0-based index; the first
    /// alternative when absent.
    pub reference: Option<String>,
    pub include_asc: bool,
    pub kind: ModelKind,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub eval_dataset: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub elasticity_variable: Option<String>,
    /// Percent changes for arc elasticities.
    pub elasticity_grid: Vec<f64>,
    pub elasticity_weighting: Aggregation,
    pub sensitivity_variable: Option<String>,
    pub sensitivity_dummies: Vec<String>,
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = std::path::absolute(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new("/")))
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn number<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(key, format!("expected {what}, got `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
    }
}

/// Parses configuration text; `base` anchors relative paths.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let mut entries: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", i + 1), format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::config(k, "unknown key"));
        }
        if entries.iter().any(|(e, _)| *e == k) {
            return Err(Error::config(k, "given more than once"));
        }
        entries.push((k, v));
    }
    let get = |k: &str| entries.iter().find(|(e, _)| e == k).map(|(_, v)| v.as_str());
    let required = |k: &str| get(k).ok_or_else(|| Error::config(k, "required key is missing"));

    let mut train = TrainConfig::default();
    if let Some(v) = get("batch_size") {
        train.batch_size = number("batch_size", v, "a positive integer")?;
    }
    if let Some(v) = get("learning_rate") {
        train.learning_rate = number("learning_rate", v, "a number")?;
    }
    if let Some(v) = get("rmsprop_decay") {
        train.rmsprop_decay = number("rmsprop_decay", v, "a number")?;
    }
    if let Some(v) = get("rmsprop_epsilon") {
        train.rmsprop_epsilon = number("rmsprop_epsilon", v, "a number")?;
    }
    if let Some(v) = get("max_iterations") {
        train.max_iterations = number("max_iterations", v, "a positive integer")?;
    }
    if let Some(v) = get("patience") {
        train.patience = number("patience", v, "a positive integer")?;
    }
    if let Some(v) = get("seed") {
        train.seed = number("seed", v, "a 64-bit unsigned integer")?;
    }
    if let Some(v) = get("split_fraction") {
        train.split_fraction = number("split_fraction", v, "a number")?;
        if !(train.split_fraction > 0.0 && train.split_fraction < 1.0) {
            return Err(Error::config("split_fraction", format!("must lie in (0, 1), got {v}")));
        }
    }
    if let Some(v) = get("standardize") {
        train.standardize = boolean("standardize", v)?;
    }
    if let Some(v) = get("mlp_init_scale") {
        train.mlp_init_scale = Some(number("mlp_init_scale", v, "a number")?);
    }
    train
        .validate()
        .map_err(|e| Error::config("train", e.to_string()))?;

    let depth = get("depth")
        .map(|v| number::<usize>("depth", v, "a non-negative integer"))
        .transpose()?;
    let kind = match required("model")? {
        "mnl" => match depth {
            None | Some(0) => ModelKind::Mnl,
            Some(_) => return Err(Error::config("depth", "mnl has no layers")),
        },
        "reslogit" => ModelKind::ResLogit(depth.ok_or_else(|| Error::config("depth", "required for reslogit"))?),
        "mlp" => ModelKind::Mlp(depth.ok_or_else(|| Error::config("depth", "required for mlp"))?),
        other => {
            return Err(Error::config(
                "model",
                format!("expected mnl, reslogit or mlp, got `{other}`"),
            ))
        }
    };

    let variables = get("variables").map(list).unwrap_or_default();
    let categorical = get("categorical").map(list).unwrap_or_default();
    for c in &categorical {
        if !variables.contains(c) {
            return Err(Error::config("categorical", format!("`{c}` is not listed in variables")));
        }
    }
    let schema = CsvSchema {
        choice: required("choice")?.to_string(),
        variables,
        categorical,
        alternatives: get("alternatives").map(list),
        levels: Default::default(),
    };
    let elasticity_grid = match get("elasticity_grid") {
        Some(v) => list(v)
            .iter()
            .map(|x| number("elasticity_grid", x, "a list of numbers"))
            .collect::<Result<Vec<f64>>>()?,
        None => default_grid(),
    };
    let elasticity_weighting = match get("elasticity_weighting") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::config("elasticity_weighting", format!("expected mean or probability, got `{v}`")))?,
        None => Aggregation::Mean,
    };

    Ok(RunConfig {
        dataset: resolve(base, required("dataset")?),
        schema,
        reference: get("reference").map(String::from),
        include_asc: get("asc").map(|v| boolean("asc", v)).transpose()?.unwrap_or(true),
        kind,
        train,
        output_dir: resolve(base, get("output_dir").unwrap_or("out")),
        eval_dataset: get("eval_dataset").map(|v| resolve(base, v)),
        model_file: get("model_file").map(|v| resolve(base, v)),
        elasticity_variable: get("elasticity_variable").map(String::from),
        elasticity_grid,
        elasticity_weighting,
        sensitivity_variable: get("sensitivity_variable").map(String::from),
        sensitivity_dummies: get("sensitivity_dummies").map(list).unwrap_or_default(),
    })
}

impl RunConfig {
    /// Index of the reference alternative among `alt_names`.
    pub fn reference_index(&self, alt_names: &[String]) -> Result<usize> {
        let Some(r) = &self.reference else {
            return Ok(0);
        };
        alt_names
            .iter()
            .position(|a| a == r)
            .or_else(|| r.parse::<usize>().ok().filter(|&i| i < alt_names.len()))
            .ok_or_else(|| Error::config("reference", format!("`{r}` is not an alternative")))
    }

    /// Effective configuration as `key = value` lines, in [`KEYS`] order.
    ///
    /// `output_dir` is left out so that runs differing only in where they
    /// write produce identical reports. Parsing the lines back yields the
    /// same configuration apart from `output_dir`.
    pub fn echo(&self) -> Vec<String> {
        let t = &self.train;
        let mut out: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.display().to_string()),
            ("choice", self.schema.choice.clone()),
            ("variables", self.schema.variables.join(", ")),
            ("categorical", self.schema.categorical.join(", ")),
        ];
        if let Some(a) = &self.schema.alternatives {
            out.push(("alternatives", a.join(", ")));
        }
        if let Some(r) = &self.reference {
            out.push(("reference", r.clone()));
        }
        out.push(("asc", self.include_asc.to_string()));
        out.push(("model", self.kind.name().to_string()));
        if !matches!(self.kind, ModelKind::Mnl) {
            out.push(("depth", self.kind.depth().to_string()));
        }
        out.extend([
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("rmsprop_decay", t.rmsprop_decay.to_string()),
            ("rmsprop_epsilon", t.rmsprop_epsilon.to_string()),
            ("max_iterations", t.max_iterations.to_string()),
            ("patience", t.patience.to_string()),
            ("seed", t.seed.to_string()),
            ("split_fraction", t.split_fraction.to_string()),
            ("standardize", t.standardize.to_string()),
        ]);
        if let Some(s) = t.mlp_init_scale {
            out.push(("mlp_init_scale", s.to_string()));
        }
        if let Some(p) = &self.eval_dataset {
            out.push(("eval_dataset", p.display().to_string()));
        }
        if let Some(p) = &self.model_file {
            out.push(("model_file", p.display().to_string()));
        }
        if let Some(v) = &self.elasticity_variable {
            out.push(("elasticity_variable", v.clone()));
        }
        let grid: Vec<String> = self.elasticity_grid.iter().map(|g| g.to_string()).collect();
        out.push(("elasticity_grid", grid.join(", ")));
        out.push(("elasticity_weighting", self.elasticity_weighting.as_str().to_string()));
        if let Some(v) = &self.sensitivity_variable {
            out.push(("sensitivity_variable", v.clone()));
        }
        if !self.sensitivity_dummies.is_empty() {
            out.push(("sensitivity_dummies", self.sensitivity_dummies.join(", ")));
        }
        out.into_iter().map(|(k, v)| format!("{k} = {v}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("/base"))
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse("dataset = trips.csv\nchoice = mode\nmodel = mnl\n").unwrap();
        assert_eq!(c.kind, ModelKind::Mnl);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.split_fraction, 0.7);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.dataset, PathBuf::from("/base/trips.csv"));
        assert_eq!(c.output_dir, PathBuf::from("/base/out"));
        assert!(c.include_asc);
        assert!(c.schema.variables.is_empty());
    }

    #[test]
    fn reslogit_depth() {
        let c = parse("dataset = d.csv\nchoice = c\nmodel = reslogit\ndepth = 16 # RL-16\n").unwrap();
        assert_eq!(c.kind, ModelKind::ResLogit(16));
        assert!(parse("dataset = d.csv\nchoice = c\nmodel = reslogit\n").is_err());
        assert!(parse("dataset = d.csv\nchoice = c\nmodel = mnl\ndepth = 2\n").is_err());
    }

    #[test]
    fn range_and_type_errors_name_the_key() {
        let base = "dataset = d.csv\nchoice = c\nmodel = mnl\n";
        let err = parse(&format!("{base}split_fraction = 1.2\n")).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "split_fraction"), "{err}");
        let err = parse(&format!("{base}batch_size = many\n")).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "batch_size"), "{err}");
        let err = parse(&format!("{base}asc = yes\n")).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "asc"), "{err}");
        let err = parse(&format!("{base}colour = red\n")).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "colour"), "{err}");
        let err = parse(&format!("{base}seed = 1\nseed = 2\n")).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "seed"), "{err}");
        assert!(parse("choice = c\nmodel = mnl\n").is_err());
    }

    #[test]
    fn lists_and_options() {
        let c = parse(
            "dataset = /data/d.csv\nchoice = c\nmodel = mlp\ndepth = 8\n\
             variables = a, b , act\ncategorical = act\nalternatives = car,bus\n\
             reference = bus\nmlp_init_scale = 12\nelasticity_grid = -20, -10, 10, 20\n\
             elasticity_weighting = probability\n",
        )
        .unwrap();
        assert_eq!(c.dataset, PathBuf::from("/data/d.csv"));
        assert_eq!(c.schema.variables, vec!["a", "b", "act"]);
        assert_eq!(c.schema.categorical, vec!["act"]);
        assert_eq!(c.kind, ModelKind::Mlp(8));
        assert_eq!(c.train.mlp_init_scale, Some(12.0));
        assert_eq!(c.elasticity_grid, vec![-20.0, -10.0, 10.0, 20.0]);
        assert_eq!(c.elasticity_weighting, Aggregation::ProbabilityWeighted);
        let alts = vec!["car".to_string(), "bus".to_string()];
        assert_eq!(c.reference_index(&alts).unwrap(), 1);
        assert!(parse("dataset = d\nchoice = c\nmodel = mnl\nvariables = a\ncategorical = b\n").is_err());
    }

    #[test]
    fn echo_parses_back() {
        let c = parse(
            "dataset = d.csv\nchoice = c\nmodel = reslogit\ndepth = 3\nvariables = a, b\n\
             learning_rate = 0.005\nseed = 17\noutput_dir = elsewhere\nreference = 1\n",
        )
        .unwrap();
        let text = c.echo().join("\n");
        assert!(!text.contains("output_dir"));
        let back = parse(&text).unwrap();
        assert_eq!(back, RunConfig { output_dir: back.output_dir.clone(), ..c });
    }
}
