//! End-to-end runs of the `reslogit` binary on the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reslogit::data::Slot;
use reslogit::io::report::{fit_design, parse_report, ModelFile};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn reslogit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reslogit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn train_into(out: &Path, extra: &[&str]) -> Output {
    let cfg = fixture("trips500_mnl.conf");
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = reslogit(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn report_value(text: &str, key: &str) -> String {
    parse_report(text)
        .into_iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .unwrap_or_else(|| panic!("no `{key}` in report"))
}

fn last_stderr_line(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).lines().last().unwrap_or("").to_string()
}

#[test]
fn train_writes_consistent_report() {
    let dir = tempfile::tempdir().unwrap();
    train_into(dir.path(), &[]);
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("model: mnl\n"));
    let ll: f64 = report_value(&report, "log_likelihood").parse().unwrap();
    let k: f64 = report_value(&report, "n_parameters").parse().unwrap();
    let aic: f64 = report_value(&report, "aic").parse().unwrap();
    assert!(ll.is_finite() && ll < 0.0);
    assert_eq!(aic, 2.0 * k - 2.0 * ll);
    assert!(report.contains("config: seed = 7\n"));
    assert!(!report.contains("output_dir"));

    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "iteration,train_ll,valid_ll,valid_error");
    let iterations: Vec<usize> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(iterations.windows(2).all(|w| w[0] < w[1]));

    let coefs = std::fs::read_to_string(dir.path().join("coefficients.csv")).unwrap();
    assert_eq!(
        coefs.lines().next().unwrap(),
        "variable,alternative,beta,std_err,robust_std_err,significant"
    );
    // 2 ASCs + (time, cost, income, 2 purpose dummies) × 2 alternatives
    assert_eq!(coefs.lines().count(), 1 + 12);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train_into(a.path(), &[]);
    train_into(b.path(), &[]);
    for f in ["report.txt", "curve.csv", "coefficients.csv", "model.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = fixture("trips500_mnl.conf");
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_reslogit"))
            .args(["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
            .env("RESLOGIT_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        reports.push(std::fs::read(dir.path().join("report.txt")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn echoed_config_reproduces_report() {
    let a = tempfile::tempdir().unwrap();
    train_into(a.path(), &["--seed", "11"]);
    let report = std::fs::read_to_string(a.path().join("report.txt")).unwrap();
    let echoed: String = report
        .lines()
        .filter_map(|l| l.strip_prefix("config: "))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(echoed.contains("seed = 11\n"));
    let b = tempfile::tempdir().unwrap();
    let cfg = b.path().join("echo.conf");
    std::fs::write(&cfg, echoed).unwrap();
    let out = b.path().join("out");
    let o = reslogit(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report, std::fs::read_to_string(out.join("report.txt")).unwrap());
}

#[test]
fn evaluate_accuracy_matches_recount() {
    let dir = tempfile::tempdir().unwrap();
    train_into(dir.path(), &[]);
    let cfg = fixture("trips500_mnl.conf");
    let o = reslogit(&["evaluate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("evaluation.txt")).unwrap();
    let accuracy: f64 = report_value(&summary, "accuracy").parse().unwrap();

    // recount from the written probabilities, taking the first maximum
    let text = std::fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let alts: Vec<&str> = header[3..].iter().map(|h| h.trim_start_matches("p_")).collect();
    let (mut hits, mut n) = (0, 0);
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let p: Vec<f64> = cells[3..].iter().map(|c| c.parse().unwrap()).collect();
        let mut best = 0;
        for j in 1..p.len() {
            if p[j] > p[best] {
                best = j;
            }
        }
        hits += usize::from(alts[best] == cells[1]);
        n += 1;
    }
    assert_eq!(n, 500);
    assert_eq!(accuracy, hits as f64 / n as f64);
}

#[test]
fn elasticity_of_zero_coefficient_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    train_into(dir.path(), &[]);
    let mut model = ModelFile::load(&dir.path().join("model.json")).unwrap();
    let design = fit_design(&model.fit).unwrap();
    let v = model.fit.spec.variables.iter().position(|v| v == "income").unwrap();
    for alt in 0..3 {
        if let Some(b) = design.index(Slot::Variable(v), alt) {
            model.fit.params.beta[b] = 0.0;
        }
    }
    let zeroed = dir.path().join("zeroed.json");
    std::fs::write(&zeroed, model.to_json().unwrap()).unwrap();
    let conf = dir.path().join("el.conf");
    std::fs::write(
        &conf,
        format!(
            "dataset = {}\nchoice = mode\nvariables = time, cost, income, purpose\ncategorical = purpose\n\
             model = mnl\nmodel_file = {}\nelasticity_variable = income\n",
            fixture("trips500.csv").display(),
            zeroed.display()
        ),
    )
    .unwrap();
    let o = reslogit(&["elasticity", "--config", conf.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["elasticity_point.csv", "elasticity_arc.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.lines().count() > 1);
        for line in text.lines().skip(1) {
            let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(v, 0.0, "{f}: {line}");
        }
    }
}

#[test]
fn elasticity_refuses_dummies() {
    let dir = tempfile::tempdir().unwrap();
    train_into(dir.path(), &[]);
    let conf = dir.path().join("el.conf");
    std::fs::write(
        &conf,
        format!(
            "dataset = {}\nchoice = mode\nmodel = mnl\nmodel_file = {}\nelasticity_variable = purpose_work\n",
            fixture("trips500.csv").display(),
            dir.path().join("model.json").display()
        ),
    )
    .unwrap();
    let o = reslogit(&["elasticity", "--config", conf.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(last_stderr_line(&o).starts_with("error: invalid_argument: "));
}

#[test]
fn demo_redbus_passes_self_check() {
    let o = reslogit(&["demo-redbus"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Scenario 3 (competing car/bus)"));
    assert!(text.contains("-0.127"));
    assert!(text.contains("0.482"));
}

#[test]
fn errors_end_with_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "dataset = x.csv\nchoice = c\nmodel = mnl\nsplit_fraction = 1.2\n").unwrap();
    let o = reslogit(&["train", "--config", conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(last_stderr_line(&o).starts_with("error: config: "), "{}", last_stderr_line(&o));

    std::fs::write(&conf, "dataset = missing.csv\nchoice = c\nmodel = mnl\n").unwrap();
    let o = reslogit(&["train", "--config", conf.to_str().unwrap()]);
    assert!(last_stderr_line(&o).starts_with("error: csv: "), "{}", last_stderr_line(&o));

    let o = reslogit(&["train"]);
    assert!(!o.status.success());
    assert!(last_stderr_line(&o).starts_with("error: usage: "), "{}", last_stderr_line(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_reslogit"))
        .args(["demo-redbus"])
        .env("RESLOGIT_THREADS", "zero")
        .output()
        .unwrap();
    assert!(last_stderr_line(&o).starts_with("error: invalid_argument: "));
}

#[test]
fn three_row_fixture_loads() {
    let schema = reslogit::io::csv::CsvSchema::new("mode", vec!["time".into(), "cost".into()]);
    let (d, _) = reslogit::io::csv::load_csv(fixture("trips3.csv"), &schema).unwrap();
    assert_eq!((d.n_obs(), d.n_vars(), d.n_alts()), (3, 2, 2));
}
