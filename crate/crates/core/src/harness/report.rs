use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentKind, HarnessError};

/// A metric table. The first two columns are always `seed` and `config_hash`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        let mut header = vec!["seed".to_string(), "config_hash".to_string()];
        header.extend(columns.iter().map(|c| c.to_string()));
        Self {
            name: name.into(),
            header,
            rows: Vec::new(),
        }
    }

    /// Appends a row; `seed` is a seed or a seed range label.
    pub fn push(&mut self, seed: impl ToString, hash: &str, values: Vec<String>) {
        let mut row = vec![seed.to_string(), hash.to_string()];
        row.extend(values);
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of one column parsed as `f64`.
    pub fn floats(&self, name: &str) -> Vec<f64> {
        let Some(c) = self.column(name) else { return Vec::new() };
        self.rows.iter().filter_map(|r| r[c].parse().ok()).collect()
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }
}

/// One embedded assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    /// Wall-clock measurements, kept out of the metric tables.
    pub timings: Vec<(String, f64)>,
    /// Extra files written under the output directory.
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    experiment: String,
    artifact: String,
    config_hash: String,
    seeds: String,
    rows: usize,
}

impl Report {
    pub fn new(experiment: ExperimentKind, config_hash: String, seeds: Vec<u64>) -> Self {
        Self {
            experiment,
            config_hash,
            seeds,
            tables: Vec::new(),
            checks: Vec::new(),
            timings: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }

    fn checks_table(&self) -> Table {
        let mut t = Table::new("checks", &["check", "passed", "detail"]);
        let seeds = super::seed_label(&self.seeds);
        for c in &self.checks {
            t.push(
                &seeds,
                &self.config_hash,
                vec![c.name.clone(), c.passed.to_string(), c.detail.clone()],
            );
        }
        t
    }

    /// Writes `<table>.csv` for every table plus the checks, a manifest
    /// `<experiment>.manifest.jsonl` and wall times in `<experiment>.timing.csv`.
    pub fn write(&self, out: &Path) -> Result<(), HarnessError> {
        check_output_dir(out, &self.config_hash)?;
        fs::create_dir_all(out)?;
        let prefix = self.experiment.name().replace('-', "_");
        let checks = self.checks_table();
        let mut manifest = String::new();
        for table in self.tables.iter().chain([&checks]) {
            let file = format!("{prefix}.{}.csv", table.name);
            fs::write(out.join(&file), table.to_csv()?)?;
            manifest.push_str(&self.manifest_line(&file, table.rows.len())?);
        }
        for artifact in &self.artifacts {
            let rel = artifact.strip_prefix(out).unwrap_or(artifact);
            manifest.push_str(&self.manifest_line(&rel.to_string_lossy(), 0)?);
        }
        fs::write(out.join(format!("{prefix}.manifest.jsonl")), manifest)?;

        let mut timing = String::from("what,seconds\n");
        for (what, s) in &self.timings {
            timing.push_str(&format!("{what},{s}\n"));
        }
        fs::write(out.join(format!("{prefix}.timing.csv")), timing)?;
        Ok(())
    }

    fn manifest_line(&self, artifact: &str, rows: usize) -> Result<String, HarnessError> {
        let line = ManifestLine {
            experiment: self.experiment.name().into(),
            artifact: artifact.into(),
            config_hash: self.config_hash.clone(),
            seeds: super::seed_label(&self.seeds),
            rows,
        };
        Ok(serde_json::to_string(&line)? + "\n")
    }

    /// One line per check, for terminals.
    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "[{}] {}: {}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                )
            })
            .collect()
    }
}

/// Rejects an output directory that already holds results of another config.
pub fn check_output_dir(out: &Path, config_hash: &str) -> Result<(), HarnessError> {
    let Ok(entries) = fs::read_dir(out) else { return Ok(()) };
    for entry in entries {
        let path = entry?.path();
        if !path.to_string_lossy().ends_with(".manifest.jsonl") {
            continue;
        }
        for line in fs::read_to_string(&path)?.lines().filter(|l| !l.trim().is_empty()) {
            let m: ManifestLine = serde_json::from_str(line)?;
            if m.config_hash != config_hash {
                return Err(HarnessError::ConfigMismatch {
                    dir: out.to_path_buf(),
                    found: m.config_hash,
                    expected: config_hash.into(),
                });
            }
        }
    }
    Ok(())
}

/// Shortest round-trip formatting, so CSVs are exact and reproducible.
pub(crate) fn num(v: f64) -> String {
    v.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(hash: &str) -> Report {
        let mut r = Report::new(ExperimentKind::Run, hash.into(), vec![1, 2]);
        let mut t = Table::new("metrics", &["value"]);
        t.push(1, hash, vec![num(0.1)]);
        t.push(2, hash, vec!["a,b".into()]);
        r.tables.push(t);
        r.check("ok", true, "fine");
        r
    }

    #[test]
    fn rows_carry_seed_and_hash() {
        let csv = report("abc").tables[0].to_csv().unwrap();
        assert_eq!(csv, "seed,config_hash,value\n1,abc,0.1\n2,abc,\"a,b\"\n");
    }

    #[test]
    fn writes_and_rejects_foreign_configs() {
        let dir = tempfile::tempdir().unwrap();
        report("abc").write(dir.path()).unwrap();
        assert!(dir.path().join("run.metrics.csv").exists());
        assert!(dir.path().join("run.checks.csv").exists());
        report("abc").write(dir.path()).unwrap();
        assert!(matches!(
            report("def").write(dir.path()),
            Err(HarnessError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn failing_check_fails_the_report() {
        let mut r = report("x");
        assert!(r.passed());
        r.check("bad", false, "nope");
        assert!(!r.passed());
        assert!(r.summary().contains("[FAIL] bad: nope"));
    }
}
