//! Report, manifest and artifact writers behind the command-line tool.
//!
//! Reports are pure functions of their inputs: no timestamps, no absolute
//! paths, floats printed in shortest round-trip form. Wall-clock time and
//! cache counters go to the append-only `manifest.jsonl` instead.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{CacheStats, EvaluationCache};
use crate::shapley::{
    axiom_report, exact_shapley_with_cache, mc_shapley_with_cache, permutation_shapley_with_cache,
    AxiomReport, McConfig, McDiagnostics, Violation, EFFICIENCY_REL_TOL,
};
use crate::testbed::{
    build_value_function, AttributionSpec, CoalitionOutcome, ExperimentSpec, RunRecord,
};
use crate::{fixtures, Attribution, Coalition, Error, Method, Result, ValueFunction, ValueTable};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Process exit codes of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    InputError = 1,
    AxiomViolation = 2,
    PartialFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub schema_version: u32,
    pub command: String,
    pub players: Vec<String>,
    pub method: Method,
    pub phi: Vec<f64>,
    /// `phi` as a percentage of the grand improvement; null when that is 0.
    pub phi_percent: Vec<Option<f64>>,
    pub grand_improvement: f64,
    pub efficiency_gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<Vec<f64>>,
    pub ranking: Vec<String>,
    pub evaluations_used: usize,
    pub axioms: AxiomReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<McDiagnostics>,
    /// SHA-256 of the canonical JSON of the resolved inputs.
    pub config_digest: String,
    /// Manifest log this report's run was appended to, relative to the
    /// report's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl AttributionReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn exit_status(&self) -> ExitStatus {
        if self.axioms.passed() {
            ExitStatus::Success
        } else {
            ExitStatus::AxiomViolation
        }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config: serde_json::Value,
    pub config_digest: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub wall_clock_secs: f64,
    pub cache: CacheStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_runs: Option<usize>,
    pub exit_code: i32,
}

pub fn digest(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn append_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(MANIFEST_FILE);
    let mut line = serde_json::to_string(manifest)?;
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
    f.write_all(line.as_bytes())?;
    Ok(path)
}

fn percent(phi: &[f64], grand: f64) -> Vec<Option<f64>> {
    phi.iter()
        .map(|p| (grand != 0.0).then(|| 100.0 * p / grand))
        .collect()
}

/// Assembles a report from an attribution over a value table.
pub fn build_report(
    command: &str,
    table: &ValueTable,
    attribution: &Attribution,
    axioms: AxiomReport,
    monte_carlo: Option<McDiagnostics>,
    config_digest: String,
) -> AttributionReport {
    let grand = table.grand_value().unwrap_or(f64::NAN) - table.empty_value();
    let players = table.players().to_vec();
    AttributionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command: command.to_string(),
        ranking: attribution
            .ranking()
            .iter()
            .map(|p| players[p.0].clone())
            .collect(),
        players,
        method: attribution.method,
        phi: attribution.phi.clone(),
        phi_percent: percent(&attribution.phi, grand),
        grand_improvement: grand,
        efficiency_gap: axioms.efficiency_gap,
        stderr: attribution.stderr.clone(),
        evaluations_used: attribution.evaluations_used,
        axioms,
        monte_carlo,
        config_digest,
        manifest: None,
    }
}

/// Attribution method chosen on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodChoice {
    Exact,
    Permutation,
    MonteCarlo { iters: u64, seed: u64 },
}

impl MethodChoice {
    fn config(&self) -> serde_json::Value {
        match self {
            Self::Exact => serde_json::json!({ "method": "exact" }),
            Self::Permutation => serde_json::json!({ "method": "permutation" }),
            Self::MonteCarlo { iters, seed } => {
                serde_json::json!({ "method": "monte_carlo", "max_iter": iters, "seed": seed })
            }
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Self::MonteCarlo { seed, .. } => *seed,
            _ => 0,
        }
    }
}

fn attribute_with(
    table: &ValueTable,
    method: &MethodChoice,
    cache: &EvaluationCache,
) -> Result<(Attribution, Option<McDiagnostics>)> {
    let n = table.n_players();
    Ok(match method {
        MethodChoice::Exact => (exact_shapley_with_cache(table, n, cache)?, None),
        MethodChoice::Permutation => (permutation_shapley_with_cache(table, n, cache)?, None),
        MethodChoice::MonteCarlo { iters, seed } => {
            let (a, d) = mc_shapley_with_cache(table, n, &McConfig::new(*iters, *seed), cache)?;
            (a, Some(d))
        }
    })
}

/// Attribution of a complete value table. The table is normalized so that
/// the empty coalition is worth 0 before attribution.
pub fn attribute_table(
    table: &ValueTable,
    method: &MethodChoice,
) -> Result<(AttributionReport, CacheStats)> {
    if !table.is_complete() {
        return Err(Error::Table(format!(
            "table over {} players has {} of {} coalitions",
            table.n_players(),
            table.len(),
            1u64 << table.n_players()
        )));
    }
    let table = table.normalized();
    let config = serde_json::json!({
        "table": serde_json::from_str::<serde_json::Value>(&table.to_json_string()?)?,
        "attribution": method.config(),
    });
    let cache = EvaluationCache::new();
    let (attribution, mc) = attribute_with(&table, method, &cache)?;
    let axioms = axiom_report(&table, &attribution);
    let report = build_report(
        "attribute",
        &table,
        &attribution,
        axioms,
        mc,
        digest(&config),
    );
    Ok((report, cache.stats()))
}

/// Writes a report to `out` and appends a manifest line next to it.
pub fn emit_report(
    report: &mut AttributionReport,
    out: &Path,
    config: serde_json::Value,
    seed: u64,
    cache: CacheStats,
    started: Instant,
) -> Result<PathBuf> {
    report.manifest = Some(MANIFEST_FILE.to_string());
    write_atomic(out, report.to_json()?.as_bytes())?;
    let dir = out
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    append_manifest(
        dir,
        &RunManifest {
            schema_version: REPORT_SCHEMA_VERSION,
            command: report.command.clone(),
            config_digest: report.config_digest.clone(),
            config,
            seed,
            artifacts: vec![out.display().to_string()],
            wall_clock_secs: started.elapsed().as_secs_f64(),
            cache,
            training_runs: None,
            exit_code: report.exit_status().code(),
        },
    )
}

/// `attribute`: load a table file, attribute it, optionally write the report.
pub fn cmd_attribute(
    table_path: &Path,
    method: &MethodChoice,
    out: Option<&Path>,
) -> Result<AttributionReport> {
    let started = Instant::now();
    let table = ValueTable::load(table_path)?;
    let (mut report, stats) = attribute_table(&table, method)?;
    if let Some(out) = out {
        let config = serde_json::json!({
            "table": table_path.display().to_string(),
            "attribution": method.config(),
        });
        emit_report(&mut report, out, config, method.seed(), stats, started)?;
    }
    Ok(report)
}

/// `replay-paper`: exact attribution of an embedded accuracy table.
pub fn replay_paper(name: &str) -> Result<(AttributionReport, ValueTable, CacheStats)> {
    let raw = fixtures::raw_by_name(name)?;
    let (mut report, stats) = attribute_table(&raw, &MethodChoice::Exact)?;
    report.command = format!("replay-paper {name}");
    Ok((report, raw, stats))
}

/// Human-readable ranking with the improvement decomposition.
pub fn render_ranking(name: &str, report: &AttributionReport, raw: Option<&ValueTable>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{name}: {} knowledge items, {} method",
        report.players.len(),
        report.method.as_str()
    );
    if let Some(raw) = raw {
        let _ = writeln!(
            s,
            "accuracy without knowledge {:.4}, with all knowledge {:.4}",
            raw.empty_value(),
            raw.grand_value().unwrap_or(f64::NAN)
        );
    }
    let _ = writeln!(s, "improvement {:.4}", report.grand_improvement);
    let width = report
        .players
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(9);
    let _ = writeln!(
        s,
        "{:<4} {:<width$} {:>10} {:>8}",
        "rank", "knowledge", "phi", "share"
    );
    for (rank, name) in report.ranking.iter().enumerate() {
        let i = report.players.iter().position(|p| p == name).unwrap_or(0);
        let share = report.phi_percent[i].map_or("n/a".to_string(), |p| format!("{p:.1}%"));
        let _ = writeln!(
            s,
            "{:<4} {:<width$} {:>10.6} {:>8}",
            rank + 1,
            name,
            report.phi[i],
            share
        );
    }
    let _ = writeln!(
        s,
        "sum of phi {:.6}, efficiency gap {:.1e}",
        report.phi.iter().sum::<f64>(),
        report.efficiency_gap
    );
    for v in &report.axioms.violations {
        let _ = writeln!(s, "axiom violation ({}): {}", v.axiom, v.detail);
    }
    s
}

/// Artifacts of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub status: ExitStatus,
    pub report: Option<AttributionReport>,
    pub outcomes: Vec<CoalitionOutcome>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Serialize)]
struct RunEntry<'a> {
    coalition: Vec<usize>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<&'a RunRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    schema_version: u32,
    players: Vec<String>,
    repetition_seeds: &'a [u64],
    flipped_bits: Vec<usize>,
    coalitions_trained: usize,
    runs: Vec<RunEntry<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<&'a McDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn table_order(outcomes: &mut [CoalitionOutcome]) {
    outcomes.sort_by_key(|o| (o.coalition.len(), o.coalition.member_indices()));
}

/// Per-coalition accuracy table: one 0/1 column per knowledge item, then
/// the seed-mean accuracy and the improvement over the empty coalition.
pub fn coalition_table_csv(players: &[String], outcomes: &[CoalitionOutcome]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = players.iter().map(String::as_str).collect();
    header.extend(["accuracy", "improvement", "error"]);
    w.write_record(&header)?;
    for o in outcomes {
        let mut row: Vec<String> = (0..players.len())
            .map(|i| {
                if o.coalition.contains(crate::PlayerId(i)) {
                    "1"
                } else {
                    "0"
                }
                .to_string()
            })
            .collect();
        let acc = o.mean_accuracy();
        row.push(acc.map_or(String::new(), |a| a.to_string()));
        let improvement = if o.coalition.is_empty() {
            acc.map(|_| 0.0)
        } else {
            paired_improvement(o, outcomes)
        };
        row.push(improvement.map_or(String::new(), |v| v.to_string()));
        row.push(o.error().unwrap_or("").to_string());
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Seed-mean of paired accuracy differences, summed in seed order exactly
/// as the value function does.
fn paired_improvement(o: &CoalitionOutcome, outcomes: &[CoalitionOutcome]) -> Option<f64> {
    let empty = outcomes.iter().find(|e| e.coalition.is_empty())?;
    let mut sum = 0.0;
    for (a, b) in o.runs.iter().zip(&empty.runs) {
        sum += a.as_ref().ok()?.accuracy - b.as_ref().ok()?.accuracy;
    }
    Some(sum / o.runs.len() as f64)
}

/// `experiment`: build the value function, attribute, and write the
/// coalition table, value table, report, diagnostics and manifest into
/// `out_dir`.
pub fn cmd_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentResult> {
    let started = Instant::now();
    let vf = build_value_function(spec)?;
    let n = vf.n_players();
    let players = spec.player_names();
    let config = serde_json::to_value(spec)?;
    let config_digest = digest(&config);
    let cache = EvaluationCache::new();

    let mut failure = None;
    let mut attribution = None;
    let mut mc_diag = None;
    match &spec.attribution {
        AttributionSpec::Exact | AttributionSpec::Permutation => {
            // Train everything up front so failures are reported per coalition.
            let all = crate::coalition::enumerate_all(n)?;
            let outcomes = vf.outcomes(&all);
            if outcomes.iter().all(|o| o.error().is_none()) {
                let a = if spec.attribution == AttributionSpec::Exact {
                    exact_shapley_with_cache(&vf, n, &cache)
                } else {
                    permutation_shapley_with_cache(&vf, n, &cache)
                };
                match a {
                    Ok(a) => attribution = Some(a),
                    Err(e) => failure = Some(e.to_string()),
                }
            } else {
                failure = Some("one or more coalitions failed to train".to_string());
            }
        }
        AttributionSpec::MonteCarlo(mc) => match mc_shapley_with_cache(&vf, n, mc, &cache) {
            Ok((a, d)) => {
                attribution = Some(a);
                mc_diag = Some(d);
            }
            Err(Error::MonteCarloAborted {
                diagnostics,
                source,
            }) => {
                mc_diag = Some(*diagnostics);
                failure = Some(source.to_string());
            }
            Err(e) => return Err(e),
        },
    }

    let mut outcomes = vf.outcomes(&vf.trained_coalitions());
    table_order(&mut outcomes);

    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    files.push(("coalitions.csv", coalition_table_csv(&players, &outcomes)?));

    let mut report = None;
    if let Some(a) = &attribution {
        let entries: Vec<(Coalition, f64)> = outcomes
            .iter()
            .filter_map(|o| {
                let v = if o.coalition.is_empty() {
                    0.0
                } else {
                    paired_improvement(o, &outcomes)?
                };
                Some((o.coalition, v))
            })
            .collect();
        let table = ValueTable::new(n, players.clone(), entries)?;
        let axioms = if table.is_complete() {
            axiom_report(&table, a)
        } else {
            efficiency_only(&vf, a)?
        };
        let mut r = build_report(
            "experiment",
            &table,
            a,
            axioms,
            mc_diag.clone(),
            config_digest.clone(),
        );
        if !table.is_complete() {
            r.grand_improvement = vf.evaluate(Coalition::grand(n)?)?;
            r.phi_percent = percent(&r.phi, r.grand_improvement);
        }
        r.manifest = Some(MANIFEST_FILE.to_string());
        files.push((
            "value_table.json",
            (table.to_json_string()? + "\n").into_bytes(),
        ));
        files.push(("attribution.json", r.to_json()?.into_bytes()));
        report = Some(r);
    }

    let runs: Vec<RunEntry> = outcomes
        .iter()
        .flat_map(|o| {
            o.runs
                .iter()
                .zip(vf.seeds())
                .map(move |(r, &seed)| RunEntry {
                    coalition: o.coalition.member_indices(),
                    seed,
                    record: r.as_ref().ok(),
                    error: r.as_ref().err().map(String::as_str),
                })
        })
        .collect();
    let diagnostics = Diagnostics {
        schema_version: REPORT_SCHEMA_VERSION,
        players: players.clone(),
        repetition_seeds: vf.seeds(),
        flipped_bits: vf.flipped().iter().map(Vec::len).collect(),
        coalitions_trained: vf.coalitions_trained(),
        runs,
        monte_carlo: mc_diag.as_ref(),
        error: failure.clone(),
    };
    files.push((
        "diagnostics.json",
        (serde_json::to_string_pretty(&diagnostics)? + "\n").into_bytes(),
    ));

    let status = match (&failure, &report) {
        (Some(_), _) => ExitStatus::PartialFailure,
        (None, Some(r)) => r.exit_status(),
        (None, None) => ExitStatus::PartialFailure,
    };

    fs::create_dir_all(out_dir)?;
    let mut artifacts = Vec::new();
    for (name, bytes) in &files {
        let path = out_dir.join(name);
        write_atomic(&path, bytes)?;
        artifacts.push(path);
    }
    let seed = match &spec.attribution {
        AttributionSpec::MonteCarlo(mc) => mc.seed,
        _ => spec.repetition_seeds[0],
    };
    append_manifest(
        out_dir,
        &RunManifest {
            schema_version: REPORT_SCHEMA_VERSION,
            command: "experiment".into(),
            config,
            config_digest,
            seed,
            artifacts: files.iter().map(|(n, _)| n.to_string()).collect(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            cache: cache.stats(),
            training_runs: Some(vf.runs_completed()),
            exit_code: status.code(),
        },
    )?;
    Ok(ExperimentResult {
        status,
        report,
        outcomes,
        artifacts,
    })
}

/// Efficiency check for attributions over an incomplete table, against the
/// value function's grand coalition.
fn efficiency_only<V: ValueFunction>(vf: &V, a: &Attribution) -> Result<AxiomReport> {
    let grand = vf.evaluate(Coalition::grand(a.n_players())?)?;
    let gap = a.total() - grand;
    let tolerance = EFFICIENCY_REL_TOL * grand.abs().max(1.0);
    let mut violations = Vec::new();
    if gap.abs() > tolerance {
        violations.push(Violation {
            axiom: "efficiency".into(),
            players: Vec::new(),
            detail: format!("sum of phi misses V(grand) = {grand} by {gap:e}"),
        });
    }
    Ok(AxiomReport {
        efficiency_gap: gap,
        efficiency_tolerance: tolerance,
        symmetric_pairs: Vec::new(),
        null_players: Vec::new(),
        violations,
    })
}
