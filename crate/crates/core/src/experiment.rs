//! Experiment configuration and report generation, shared by the command
//! line runner and the acceptance tests.
//!
//! A report is a pure function of the effective configuration: no clocks,
//! no thread-count dependence, and a single seeded random stream per run.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::bms;
use crate::cartan::{self, CartanVector, Functional, RootSubset};
use crate::convexity;
use crate::error::{Error, Result};
use crate::fixtures;
use crate::flags::{self, PartialFlag, TransversePair};
use crate::hilbert::{self, ConvexDomain, DistanceRoute, DomainSpec};
use crate::linalg::{self, Mat};
use crate::orbit::{self, ExponentMethod, GeneratorSet, LabeledMatrix, OrbitBall, WordPolicy};
use crate::shadows::{self, ShadowSpec};
use crate::tol;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "text" => Ok(Format::Text),
            other => Err(Error::InvalidInput(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Kappa,
    Exponent,
    Limitset,
    Ps,
    Track,
    Bms,
    Hilbert,
    Convexity,
    Selftest,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Kappa,
        Command::Exponent,
        Command::Limitset,
        Command::Ps,
        Command::Track,
        Command::Bms,
        Command::Hilbert,
        Command::Convexity,
        Command::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Kappa => "kappa",
            Command::Exponent => "exponent",
            Command::Limitset => "limitset",
            Command::Ps => "ps",
            Command::Track => "track",
            Command::Bms => "bms",
            Command::Hilbert => "hilbert",
            Command::Convexity => "convexity",
            Command::Selftest => "selftest",
        }
    }

    fn randomized(self) -> bool {
        matches!(
            self,
            Command::Track | Command::Bms | Command::Hilbert | Command::Convexity | Command::Selftest
        )
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown subcommand `{s}`")))
    }
}

/// Either a named fixture or explicit generator matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<LabeledMatrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<WordPolicy>,
}

impl Default for GroupSpec {
    fn default() -> Self {
        GroupSpec {
            fixture: Some("F3".into()),
            generators: None,
            policy: None,
        }
    }
}

impl GroupSpec {
    pub fn fixture(name: &str) -> Self {
        GroupSpec {
            fixture: Some(name.into()),
            generators: None,
            policy: None,
        }
    }

    pub fn build(&self) -> Result<GeneratorSet> {
        let gens = match (&self.fixture, &self.generators) {
            (Some(name), None) => fixtures::by_name(name)?,
            (None, Some(g)) => GeneratorSet::from_labeled(g, WordPolicy::FreeReduced)?,
            _ => {
                return Err(Error::InvalidInput(
                    "group needs exactly one of `fixture` and `generators`".into(),
                ))
            }
        };
        Ok(match self.policy {
            Some(p) => gens.with_policy(p),
            None => gens,
        })
    }
}

fn default_max_len() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub group: GroupSpec,
    /// Simple roots (1-based) defining `θ`.
    pub theta: Vec<usize>,
    /// `Θ ⊇ θ` for tracking; all simple roots when absent.
    pub big_theta: Option<Vec<usize>>,
    /// Functionals as coefficients over the fundamental weights; `ω₁` when empty.
    pub functionals: Vec<Vec<f64>>,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    pub radii: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub seed: Option<u64>,
    pub samples: usize,
    pub shadow_test_len: usize,
    pub track_len: usize,
    pub translate_len: usize,
    pub bms_pairs: usize,
    pub domain: Option<DomainSpec>,
    pub basepoint: Option<Vec<f64>>,
    pub kaimanovich_len: usize,
    pub lambda_ns: Vec<f64>,
    pub out: Option<String>,
    pub format: Option<Format>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            group: GroupSpec::default(),
            theta: vec![1],
            big_theta: None,
            functionals: Vec::new(),
            max_len: default_max_len(),
            radii: vec![4.0],
            epsilons: tol::PS_EPSILONS.to_vec(),
            seed: None,
            samples: 100,
            shadow_test_len: 3,
            track_len: 20,
            translate_len: 3,
            bms_pairs: 50,
            domain: None,
            basepoint: None,
            kaimanovich_len: 8,
            lambda_ns: vec![10.0, 40.0],
            out: None,
            format: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fields that determine results; output location and format do not.
    fn hashed_view(&self) -> Value {
        let mut c = self.clone();
        c.out = None;
        c.format = None;
        sorted(serde_json::to_value(c).expect("config serializes"))
    }

    /// SHA-256 of the canonical (sorted-key) JSON of the result-determining fields.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.hashed_view()).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn validate(&self, cmd: Command) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::InvalidInput("max_len must be at least 1".into()));
        }
        if cmd.randomized() && self.seed.is_none() {
            return Err(Error::InvalidInput(format!(
                "`{}` draws random samples and needs a seed",
                cmd.name()
            )));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) || self.epsilons.is_empty() {
            return Err(Error::InvalidInput("epsilons must be positive and nonempty".into()));
        }
        if self.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidInput("radii must be positive".into()));
        }
        Ok(())
    }

    fn theta(&self, d: usize) -> Result<RootSubset> {
        RootSubset::new(d, self.theta.iter().copied())
    }

    fn big_theta(&self, d: usize) -> Result<RootSubset> {
        match &self.big_theta {
            Some(b) => RootSubset::new(d, b.iter().copied()),
            None => Ok(RootSubset::full(d)),
        }
    }

    fn functionals(&self, d: usize) -> Result<Vec<Functional>> {
        if self.functionals.is_empty() {
            return Ok(vec![Functional::fundamental_weight(d, 1)?]);
        }
        self.functionals
            .iter()
            .map(|c| {
                if c.len() + 1 != d {
                    Err(Error::DimensionMismatch { expected: d - 1, got: c.len() })
                } else {
                    Ok(Functional::new(c.clone()))
                }
            })
            .collect()
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(0))
    }
}

/// Recursively rebuild objects with keys in sorted order, independent of
/// the map type backing `serde_json::Value`.
pub fn sorted(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, sorted(v));
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sorted).collect()),
        other => other,
    }
}

/// A CSV-ready table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            wr.write_record(r).map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// The outcome of one subcommand.
#[derive(Clone, Debug)]
pub struct Report {
    pub command: Command,
    /// Full JSON report with provenance.
    pub json: Value,
    pub tables: Vec<Table>,
    /// `Some(false)` when a pass/fail command found a failing check.
    pub passed: Option<bool>,
    orbit: Option<OrbitBall>,
}

impl Report {
    pub fn json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.json).expect("value serializes");
        s.push('\n');
        s
    }

    /// Aligned `key  value` lines over the scalar leaves of the result.
    pub fn text(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        flatten("", &self.json, &mut rows);
        let width = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let pad = width - k.chars().count();
            let _ = writeln!(out, "{k}{}  {v}", " ".repeat(pad));
        }
        out
    }

    /// Render to stdout-ready text in the given format. CSV uses the first table.
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.json_string(),
            Format::Text => self.text(),
            Format::Csv => self.tables.first().map(Table::to_csv).unwrap_or_default(),
        }
    }

    /// Write `<command>.json`, one CSV per table, the text summary, and the
    /// orbit as JSON lines where one was built. Returns the written paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let name = self.command.name();
        let mut written = Vec::new();
        let p = dir.join(format!("{name}.json"));
        std::fs::write(&p, self.json_string())?;
        written.push(p);
        let p = dir.join(format!("{name}.txt"));
        std::fs::write(&p, self.text())?;
        written.push(p);
        for t in &self.tables {
            let p = dir.join(format!("{name}-{}.csv", t.name));
            t.write_csv(std::fs::File::create(&p)?)?;
            written.push(p);
        }
        if let Some(orbit) = &self.orbit {
            let p = dir.join("orbit.jsonl");
            orbit.write_jsonl(std::io::BufWriter::new(std::fs::File::create(&p)?))?;
            written.push(p);
        }
        Ok(written)
    }
}

const TEXT_ARRAY_LIMIT: usize = 8;

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                flatten(&key(k), v, out);
            }
        }
        Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) && a.len() <= TEXT_ARRAY_LIMIT => {
            let items: Vec<String> = a.iter().map(|x| x.to_string()).collect();
            out.push((prefix.to_string(), format!("[{}]", items.join(", "))));
        }
        Value::Array(a) if a.len() <= TEXT_ARRAY_LIMIT => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        Value::Array(a) => out.push((prefix.to_string(), format!("[{} items]", a.len()))),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// JSON body of an error, as printed by the command line runner.
pub fn error_json(e: &Error) -> Value {
    json!({"error": {"kind": e.kind(), "message": e.to_string()}})
}

struct Outcome {
    result: Value,
    tables: Vec<Table>,
    passed: Option<bool>,
    orbit: Option<OrbitBall>,
}

impl Outcome {
    fn new(result: Value) -> Self {
        Outcome {
            result,
            tables: Vec::new(),
            passed: None,
            orbit: None,
        }
    }
}

/// Run one subcommand on a configuration.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate(cmd)?;
    let outcome = match cmd {
        Command::Kappa => run_kappa(cfg)?,
        Command::Exponent => run_exponent(cfg)?,
        Command::Limitset => run_limitset(cfg)?,
        Command::Ps => run_ps(cfg)?,
        Command::Track => run_track(cfg)?,
        Command::Bms => run_bms(cfg)?,
        Command::Hilbert => run_hilbert(cfg)?,
        Command::Convexity => run_convexity(cfg)?,
        Command::Selftest => run_selftest(cfg)?,
    };
    let mut report = json!({
        "command": cmd.name(),
        "version": VERSION,
        "config": cfg.hashed_view(),
        "config_hash": cfg.hash(),
        "cartan_norm": tol::CARTAN_NORM,
        "tolerances": tol::as_json(),
        "result": outcome.result,
    });
    if let Some(p) = outcome.passed {
        report["passed"] = json!(p);
    }
    Ok(Report {
        command: cmd,
        json: sorted(report),
        tables: outcome.tables,
        passed: outcome.passed,
        orbit: outcome.orbit,
    })
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn estimate_value(r: &Result<orbit::ExponentEstimate>) -> Value {
    match r {
        Ok(e) => to_value(e),
        Err(e) => error_json(e),
    }
}

const JSON_ROW_LIMIT: usize = 2000;

fn run_kappa(cfg: &ExperimentConfig) -> Result<Outcome> {
    let gens = cfg.group.build()?;
    let orbit = OrbitBall::enumerate(&gens, cfg.max_len)?;
    let d = orbit.dim();
    let mut header: Vec<String> = vec!["index".into(), "word".into(), "length".into()];
    header.extend((1..=d).map(|i| format!("kappa_{i}")));
    header.extend((1..=d).map(|i| format!("lambda_{i}")));
    let lambdas: Vec<Result<CartanVector>> = {
        use crate::par::*;
        (0..orbit.len())
            .into_par_iter()
            .map(|i| gens.jordan_projection(&orbit.word(i)))
            .collect()
    };
    let mut table = Table {
        name: "table".into(),
        header,
        rows: Vec::with_capacity(orbit.len()),
    };
    let mut rows_json = Vec::new();
    for (i, lam) in lambdas.into_iter().enumerate() {
        let lam = lam?;
        let k = orbit.kappa(i);
        let mut row = vec![i.to_string(), orbit.word_string(i), orbit.word_len(i).to_string()];
        row.extend(k.0.iter().map(|x| num(*x)));
        row.extend(lam.0.iter().map(|x| num(*x)));
        table.rows.push(row);
        if i < JSON_ROW_LIMIT {
            rows_json.push(json!({"word": orbit.word_string(i), "kappa": k.0, "lambda": lam.0}));
        }
    }
    let result = json!({
        "dim": d,
        "count": orbit.len(),
        "max_len": orbit.max_len(),
        "policy": gens.policy(),
        "dedup": orbit.dedup_stats(),
        "rows": rows_json,
        "rows_truncated": orbit.len() > JSON_ROW_LIMIT,
    });
    let mut out = Outcome::new(result);
    out.tables.push(table);
    out.orbit = Some(orbit);
    Ok(out)
}

fn run_exponent(cfg: &ExperimentConfig) -> Result<Outcome> {
    let gens = cfg.group.build()?;
    let orbit = OrbitBall::enumerate(&gens, cfg.max_len)?;
    let mut table = Table::new(
        "estimates",
        &["functional", "method", "delta_hat", "stderr", "window_lo", "window_hi", "error"],
    );
    let mut entries = Vec::new();
    for phi in cfg.functionals(orbit.dim())? {
        let count = orbit::critical_exponent(&orbit, &phi, ExponentMethod::CountRegression);
        let series = orbit::critical_exponent(&orbit, &phi, ExponentMethod::SeriesRoot);
        for (name, r) in [("count_regression", &count), ("series_root", &series)] {
            table.rows.push(match r {
                Ok(e) => vec![
                    phi.to_string(),
                    name.into(),
                    num(e.delta_hat),
                    num(e.slope_stderr),
                    num(e.window.0),
                    num(e.window.1),
                    String::new(),
                ],
                Err(err) => vec![
                    phi.to_string(),
                    name.into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    err.kind().into(),
                ],
            });
        }
        let shells: Vec<Value> = (1..=orbit.max_len())
            .map(|l| {
                let vals: Vec<f64> = orbit.shell(l).map(|i| phi.eval(&orbit.kappa(i))).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                json!({"length": l, "count": vals.len(), "min": lo, "max": hi})
            })
            .collect();
        entries.push(json!({
            "functional": phi.weight_coeffs,
            "count_regression": estimate_value(&count),
            "series_root": estimate_value(&series),
            "shells": shells,
        }));
    }
    let mut out = Outcome::new(json!({
        "count": orbit.len(),
        "max_len": orbit.max_len(),
        "dedup": orbit.dedup_stats(),
        "estimates": entries,
    }));
    out.tables.push(table);
    Ok(out)
}

fn first_functional(cfg: &ExperimentConfig, d: usize) -> Result<Functional> {
    Ok(cfg.functionals(d)?.remove(0))
}

fn run_limitset(cfg: &ExperimentConfig) -> Result<Outcome> {
    let gens = cfg.group.build()?;
    let orbit = OrbitBall::enumerate(&gens, cfg.max_len)?;
    let d = orbit.dim();
    let theta = cfg.theta(d)?;
    let phi = first_functional(cfg, d)?;
    let est = orbit::critical_exponent(&orbit, &phi, ExponentMethod::CountRegression)?;
    let s = est.delta_hat + cfg.epsilons[0];
    let mu = shadows::patterson_construct(&orbit, &phi, s, &theta)?;
    let (header, rows) = mu.csv_rows();
    let mut h = vec!["word".to_string()];
    h.extend(header);
    let table = Table {
        name: "atoms".into(),
        header: h,
        rows: rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = vec![orbit.word_string(mu.source(i))];
                row.extend(r.iter().map(|x| num(*x)));
                row
            })
            .collect(),
    };
    let mut out = Outcome::new(json!({
        "theta": theta.indices(),
        "functional": phi.weight_coeffs,
        "delta_hat": est.delta_hat,
        "s": s,
        "atoms": mu.len(),
        "skipped": mu.skipped,
        "total_mass": mu.total(),
    }));
    out.tables.push(table);
    Ok(out)
}

fn run_ps(cfg: &ExperimentConfig) -> Result<Outcome> {
    let gens = cfg.group.build()?;
    let orbit = OrbitBall::enumerate(&gens, cfg.max_len)?;
    let d = orbit.dim();
    let theta = cfg.theta(d)?;
    let phi = first_functional(cfg, d)?;
    let (delta_hat, measures) = shadows::patterson_family(&orbit, &phi, &theta, &cfg.epsilons)?;
    let sample_len = cfg.shadow_test_len.min(orbit.max_len());
    let samples: Vec<usize> = orbit.shell(sample_len).take(cfg.samples).collect();
    let mut ratios = Table::new("shadow_ratios", &["s", "r", "word", "length", "mass", "ratio"]);
    let mut entries = Vec::new();
    for (eps, mu) in cfg.epsilons.iter().zip(&measures) {
        let s = mu.provenance.s;
        let mut lemma = Vec::new();
        for &r in &cfg.radii {
            let rep = shadows::shadow_lemma_report(mu, &orbit, r, s, &phi, cfg.shadow_test_len)?;
            for x in &rep.ratios {
                ratios.rows.push(vec![
                    num(s),
                    num(r),
                    x.word.clone(),
                    x.word_len.to_string(),
                    num(x.mass),
                    num(x.ratio),
                ]);
            }
            lemma.push(json!({
                "r": r,
                "c_hat": rep.c_hat,
                "empty": rep.empty.len(),
                "profile": rep.profile,
            }));
        }
        let mut conformality = Vec::new();
        for l in 0..gens.rank() {
            let r = cfg.radii[0];
            let rep = shadows::conformality_residual(mu, &orbit, gens.letter(l), s, &phi, r, &samples)?;
            conformality.push(json!({
                "generator": gens.label(l),
                "r": r,
                "median_abs": rep.median_abs,
                "iqr": rep.iqr,
                "matched": rep.matched,
                "tested": rep.tested,
            }));
        }
        entries.push(json!({
            "epsilon": eps,
            "s": s,
            "atoms": mu.len(),
            "skipped": mu.skipped,
            "total_mass": mu.total(),
            "shadow_lemma": lemma,
            "conformality": conformality,
        }));
    }
    let mut out = Outcome::new(json!({
        "theta": theta.indices(),
        "functional": phi.weight_coeffs,
        "delta_hat": delta_hat,
        "measures": entries,
    }));
    out.tables.push(ratios);
    Ok(out)
}

fn run_track(cfg: &ExperimentConfig) -> Result<Outcome> {
    let gens = cfg.group.build()?;
    let d = gens.dim();
    let theta = cfg.theta(d)?;
    let big = cfg.big_theta(d)?;
    let mut rng = cfg.rng();
    let mut table = Table::new("traces", &["trace", "n", "min_gap", "increment", "degenerate"]);
    let mut traces = Vec::new();
    let (mut converged, mut worst_at, mut worst_equiv) = (0usize, 0usize, 0.0f64);
    for t in 0..cfg.samples {
        let w = shadows::random_reduced_word(&mut rng, &gens, cfg.track_len);
        let gamma = shadows::random_reduced_word(&mut rng, &gens, cfg.translate_len);
        let tr = shadows::conical_tracking(&gens, &w, &theta, &big)?;
        for e in &tr.entries {
            table.rows.push(vec![
                t.to_string(),
                e.n.to_string(),
                num(e.min_gap),
                e.increment.map(num).unwrap_or_default(),
                e.degenerate.map(|j| j.to_string()).unwrap_or_default(),
            ]);
        }
        let eq = shadows::lift_equivariance(&gens, &w, &gamma, &theta, &big)?;
        if tr.converged {
            converged += 1;
        }
        worst_at = worst_at.max(tr.converged_at.unwrap_or(usize::MAX));
        worst_equiv = worst_equiv.max(eq.distance);
        traces.push(json!({
            "word": tr.word.concat(),
            "converged": tr.converged,
            "converged_at": tr.converged_at,
            "limit": tr.limit,
            "limit_theta": tr.limit_theta,
            "translate": eq.translate.concat(),
            "equivariance_distance": eq.distance,
        }));
    }
    let mut out = Outcome::new(json!({
        "theta": theta.indices(),
        "big_theta": big.indices(),
        "traces": traces,
        "converged": converged,
        "total": cfg.samples,
        "worst_converged_at": if converged == cfg.samples && cfg.samples > 0 { json!(worst_at) } else { Value::Null },
        "max_equivariance_distance": worst_equiv,
    }));
    out.tables.push(table);
    Ok(out)
}

/// Random element of the group as a reduced word of length `1..=max`.
fn random_element(rng: &mut ChaCha8Rng, gens: &GeneratorSet, max: usize) -> (Mat, Mat) {
    let n = rng.random_range(1..=max.max(1));
    let w = shadows::random_reduced_word(rng, gens, n);
    gens.evaluate(&w)
}

/// Counts of `log10` residuals in unit bins from `[-17, -16)` to `[−1, 0)`;
/// zeros go to the first bin and values `≥ 1` to a final overflow bin.
fn log_histogram(name: &str, values: &[f64]) -> Table {
    let mut counts = [0usize; 18];
    for &v in values {
        let b = if v <= 0.0 {
            0
        } else {
            ((v.log10().floor() + 17.0).max(0.0) as usize).min(17)
        };
        counts[b] += 1;
    }
    let mut t = Table::new(name, &["log10_lo", "log10_hi", "count"]);
    for (i, c) in counts.iter().enumerate() {
        let lo = i as i64 - 17;
        let hi = if i == 17 { "inf".to_string() } else { (lo + 1).to_string() };
        t.rows.push(vec![lo.to_string(), hi, c.to_string()]);
    }
    t
}

fn run_bms(cfg: &ExperimentConfig) -> Result<Outcome> {
    let gens = cfg.group.build()?;
    let orbit = OrbitBall::enumerate(&gens, cfg.max_len)?;
    let d = orbit.dim();
    let full = RootSubset::full(d);
    let phi = first_functional(cfg, d)?;
    let psi = cartan::istar(&phi);
    let eps = cfg.epsilons[0];
    let e_phi = orbit::critical_exponent(&orbit, &phi, ExponentMethod::CountRegression)?;
    let e_psi = orbit::critical_exponent(&orbit, &psi, ExponentMethod::CountRegression)?;
    let mu = shadows::patterson_construct(&orbit, &phi, e_phi.delta_hat + eps, &full)?;
    let nu = shadows::patterson_construct(&orbit, &psi, e_psi.delta_hat + eps, &full)?;
    let sample = bms::bms_sample(&mu, &nu, cfg.bms_pairs)?;
    let pairs: Vec<TransversePair> = sample
        .pairs
        .iter()
        .map(|p| TransversePair::new(mu.atom(p.xi_atom), nu.atom(p.eta_atom)))
        .collect::<Result<_>>()?;
    let mut rng = cfg.rng();
    let mut residuals = Vec::with_capacity(cfg.samples);
    let mut rebuilt = Vec::with_capacity(cfg.samples);
    let mut min_margin = f64::INFINITY;
    let mut convention = None;
    for _ in 0..cfg.samples {
        let pair = &pairs[rng.random_range(0..pairs.len())];
        let (g, _) = random_element(&mut rng, &gens, cfg.translate_len);
        if convention.is_none() {
            convention = Some(bms::convention_check(&g, pair, &phi)?);
        }
        residuals.push(bms::invariance_residual(&g, pair, &phi)?);
        let (r, m) = bms::rebuilt_witness_residual(&g, pair, &phi)?;
        rebuilt.push(r);
        min_margin = min_margin.min(m);
    }
    let convention_ok = convention.as_ref().is_some_and(|c| c.stated_is_unique(tol::BMS_RESIDUAL));
    let mut hopf = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let (g, gi) = random_element(&mut rng, &gens, cfg.translate_len);
        let (h, hi) = random_element(&mut rng, &gens, cfg.translate_len);
        hopf.push(bms::hopf_action_check_with_inverses((&g, &gi), (&h, &hi))?);
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
    let mut out = Outcome::new(json!({
        "functional": phi.weight_coeffs,
        "delta_phi": e_phi.delta_hat,
        "delta_istar_phi": e_psi.delta_hat,
        "sample": to_value(&sample),
        "invariance_max_residual": max(&residuals),
        "convention": convention,
        "convention_validated": convention_ok,
        "rebuilt_witness_max_residual": max(&rebuilt),
        "moved_min_margin": min_margin,
        "hopf_max_residual": max(&hopf),
        "samples": cfg.samples,
    }));
    out.tables.push(log_histogram("invariance_histogram", &residuals));
    out.tables.push(log_histogram("hopf_histogram", &hopf));
    Ok(out)
}

fn hilbert_setup(cfg: &ExperimentConfig, gens: &GeneratorSet) -> Result<(ConvexDomain, Vec<f64>)> {
    let domain = match &cfg.domain {
        Some(spec) => ConvexDomain::new(spec.clone())?,
        None if gens.dim() >= 2 => ConvexDomain::klein(gens.dim() - 1),
        None => return Err(Error::InvalidInput("hilbert needs a domain".into())),
    };
    let o = cfg.basepoint.clone().unwrap_or_else(|| domain.center());
    Ok((domain, o))
}

/// Uniform point of the domain shrunk by `scale` about its center.
fn random_point(rng: &mut ChaCha8Rng, domain: &ConvexDomain, scale: f64) -> Vec<f64> {
    let c = domain.center();
    loop {
        let x: Vec<f64> = c.iter().map(|ci| ci + rng.random_range(-1.0..1.0) * 2.0).collect();
        let y: Vec<f64> = x.iter().zip(&c).map(|(xi, ci)| ci + scale * (xi - ci)).collect();
        if domain.contains(&x) && domain.contains(&y) {
            return y;
        }
    }
}

fn run_hilbert(cfg: &ExperimentConfig) -> Result<Outcome> {
    let gens = cfg.group.build()?;
    let (domain, o) = hilbert_setup(cfg, &gens)?;
    let orbit = OrbitBall::enumerate(&gens, cfg.max_len)?;
    let pos = hilbert::orbit_positions(&domain, &orbit, &o)?;
    let rows = hilbert::metric_table(&domain, &pos, &o)?;
    let values: Vec<(f64, usize)> = rows.iter().map(|r| (r.2, r.1)).collect();
    let est = orbit::critical_exponent_from_values(&values, ExponentMethod::CountRegression);
    let phi_h = convexity::hilbert_functional(gens.dim())?;
    let phi_h_gap = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.2 - phi_h.eval(&orbit.kappa(i))).abs())
        .fold(0.0f64, f64::max);
    let mut table = Table::new("distances", &["word", "length", "distance"]);
    table.rows = rows.iter().map(|r| vec![r.0.clone(), r.1.to_string(), num(r.2)]).collect();

    let mut rng = cfg.rng();
    let delta = est.as_ref().map(|e| e.delta_hat).unwrap_or(0.0) + cfg.epsilons[0];
    let korbit = OrbitBall::enumerate(&gens, cfg.kaimanovich_len.clamp(1, cfg.max_len))?;
    let kpos = hilbert::orbit_positions(&domain, &korbit, &o)?;
    let bound_factor = 2.0 * delta * (2.0 * delta).exp();
    let (mut tested, mut violations, mut min_slack) = (0usize, 0usize, f64::INFINITY);
    while tested < cfg.samples {
        let p = random_point(&mut rng, &domain, 0.5);
        let q = random_point(&mut rng, &domain, 0.5);
        let dist = domain.distance(&p, &q)?;
        if dist > 1.0 {
            continue;
        }
        tested += 1;
        let tv = hilbert::kaimanovich_nu(&domain, &kpos, delta, &p)?
            .total_variation(&hilbert::kaimanovich_nu(&domain, &kpos, delta, &q)?)?;
        let slack = bound_factor * dist - tv;
        min_slack = min_slack.min(slack);
        if slack < 0.0 {
            violations += 1;
        }
    }
    let q = random_point(&mut rng, &domain, 0.5);
    let dir: Vec<f64> = (0..domain.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = domain.exit_time(&o, &dir);
    let x: Vec<f64> = o.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
    let mut lambda = Vec::new();
    for &n in &cfg.lambda_ns {
        let a = hilbert::lambda_n(&domain, &kpos, delta, &o, &x, n)?;
        let b = hilbert::lambda_n(&domain, &kpos, delta, &q, &x, n)?;
        lambda.push(json!({"n": n, "tv": a.total_variation(&b)?}));
    }
    let mut out = Outcome::new(json!({
        "domain": domain.spec(),
        "basepoint": o,
        "route": pos.route(),
        "count": orbit.len(),
        "delta_omega": estimate_value(&est),
        "phi_h_max_abs_diff": if pos.route() == DistanceRoute::Form { json!(phi_h_gap) } else { Value::Null },
        "kaimanovich": {
            "delta": delta,
            "orbit_len": korbit.max_len(),
            "tested": tested,
            "violations": violations,
            "min_slack": min_slack,
        },
        "lambda": lambda,
        "boundary_point": x,
        "second_point": q,
    }));
    out.tables.push(table);
    Ok(out)
}

fn edge_probes(grid: &[Vec<f64>], steps: usize) -> Vec<(usize, usize)> {
    let find = |a: f64, b: f64| {
        grid.iter().position(|g| {
            (g[0] - a).abs() < 1e-12 && g.len() > 1 && (g[1] - b).abs() < 1e-12 && g[2..].iter().all(|x| *x == 0.0)
        })
    };
    (0..5.min(steps / 2))
        .filter_map(|k| {
            let f = k as f64 / steps as f64;
            Some((find(f, 1.0 - f)?, find(1.0 - f, f)?))
        })
        .collect()
}

fn run_convexity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let gens = cfg.group.build()?;
    let orbit = OrbitBall::enumerate(&gens, cfg.max_len)?;
    let d = orbit.dim();
    if d < 3 {
        return Err(Error::InvalidInput("convexity experiments need d ≥ 3".into()));
    }
    let h = convexity::hilbert_functional(d)?;
    let w1 = Functional::fundamental_weight(d, 1)?;
    let wl = Functional::fundamental_weight(d, d - 1)?;
    let mut combos = vec![(h.clone(), w1.clone(), wl.clone())];
    for p in 1..=d - 2 {
        combos.push((h.scale(p as f64), convexity::phi_p(d, p)?, convexity::phi_bar_p(d, p)?));
    }
    combos.push((w1.clone(), w1.clone(), w1.clone()));
    let reports: Vec<Value> = combos
        .iter()
        .map(|(phi, a, b)| match convexity::convexity_gap(&orbit, phi, a, b, 0.5, 0.5) {
            Ok(r) => to_value(&r),
            Err(e) => json!({"phi": phi, "phi1": a, "phi2": b, "error": error_json(&e)}),
        })
        .collect();
    let grid = convexity::simplex_grid(d - 1, convexity::SCAN_STEPS);
    let probes = edge_probes(&grid, convexity::SCAN_STEPS);
    let scan = convexity::q_levelset_scan(&orbit, &grid, &probes)?;
    let (header, rows) = scan.csv_rows();
    let middle = convexity::middle_eigenvalue_probe(&OrbitBall::enumerate(&gens, cfg.max_len.min(10))?)?;
    let mut rng = cfg.rng();
    let mut min_slack = f64::INFINITY;
    for _ in 0..cfg.samples {
        let mut t: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mean = t.iter().sum::<f64>() / d as f64;
        t.iter_mut().for_each(|x| *x -= mean);
        let x = CartanVector(t).into_chamber();
        for p in 1..=d - 2 {
            min_slack = min_slack.min(convexity::functional_comparison(&x, d, p)?.slack);
        }
    }
    let mut out = Outcome::new(json!({
        "entropy": reports,
        "scan": {
            "midpoints_checked": scan.midpoints.len(),
            "midpoint_failures": scan.midpoints.iter().filter(|m| !m.ok).count(),
            "strictness": scan.strictness,
            "scaling": scan.scaling,
        },
        "middle_eigenvalue": middle,
        "comparison_min_slack": min_slack,
    }));
    out.tables.push(Table {
        name: "scan".into(),
        header,
        rows,
    });
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    threshold: f64,
    /// `"le"` when `value ≤ threshold` passes, `"ge"` for the reverse.
    sense: &'static str,
    passed: bool,
}

fn le(name: &'static str, value: f64, threshold: f64) -> Check {
    Check { name, value, threshold, sense: "le", passed: value <= threshold }
}

fn ge(name: &'static str, value: f64, threshold: f64) -> Check {
    Check { name, value, threshold, sense: "ge", passed: value >= threshold }
}

/// The invariant suite at small scale on the built-in fixtures.
fn run_selftest(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut rng = cfg.rng();
    let n = cfg.samples.max(1);
    let mut checks = Vec::new();

    let (mut inv, mut cocycle, mut hopf, mut witness) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..n {
        let d = if k % 2 == 0 { 3 } else { 4 };
        let full = RootSubset::full(d);
        let g = linalg::random_sl(&mut rng, d);
        let h = linalg::random_sl(&mut rng, d);
        let kg = cartan::cartan_projection(&g)?;
        let kgi = cartan::cartan_projection(&linalg::inverse(&g)?)?;
        inv = inv.max(kgi.dist_sup(&cartan::opposition(&kg)));
        let x = PartialFlag::standard(full.clone()).act(&linalg::random_sl(&mut rng, d));
        let lhs = flags::iwasawa_cocycle(&(&g * &h), &x)?;
        let rhs = &flags::iwasawa_cocycle(&g, &x.act(&h))? + &flags::iwasawa_cocycle(&h, &x)?;
        cocycle = cocycle.max(lhs.dist_sup(&rhs));
        hopf = hopf.max(bms::hopf_action_check(&g, &h)?);
        let pair = TransversePair::from_witness(&g, &full)?;
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = CartanVector::from_diagonal(a);
        let mut m = Mat::identity(d, d);
        m[(0, 0)] = -1.0;
        m[(d - 1, d - 1)] = -1.0;
        let moved = TransversePair {
            xi: pair.xi.clone(),
            eta: pair.eta.clone(),
            witness: Some(&g * m * linalg::exp_diag(&a.0)),
        };
        witness = witness.max(flags::gromov_product(&pair)?.dist_sup(&flags::gromov_product(&moved)?));
    }
    checks.push(le("kappa_inverse_is_opposition", inv, tol::ONE_FACTORIZATION));
    checks.push(le("iwasawa_cocycle_additivity", cocycle, 1e-9));
    checks.push(le("hopf_action_law", hopf, 1e-8));
    checks.push(le("gromov_witness_invariance", witness, 1e-8));

    let f3 = fixtures::f3()?;
    let full3 = RootSubset::full(3);
    let ball = OrbitBall::enumerate(&f3, 6)?;
    let phi = Functional::new(vec![1.0, 0.0]);
    let mut bms_max = 0.0f64;
    let mut unique = true;
    let shell: Vec<usize> = ball.shell(6).collect();
    for k in 0..n {
        let i = shell[rng.random_range(0..shell.len())];
        let j = shell[rng.random_range(0..shell.len())];
        let xi = flags::u_theta_with_inverse(&ball.matrix(i), &ball.inverse(i), &full3, tol::GAP_FLOOR)?;
        let eta = flags::u_theta_with_inverse(&ball.matrix(j), &ball.inverse(j), &full3, tol::GAP_FLOOR)?;
        let Ok(pair) = TransversePair::new(xi, eta) else { continue };
        let (g, _) = random_element(&mut rng, &f3, 3);
        if k == 0 {
            unique = bms::convention_check(&g, &pair, &phi)?.stated_is_unique(tol::BMS_RESIDUAL);
        }
        bms_max = bms_max.max(bms::invariance_residual(&g, &pair, &phi)?);
    }
    checks.push(le("bms_invariance_identity", bms_max, tol::BMS_RESIDUAL));
    checks.push(ge("bms_convention_unique", unique as u8 as f64, 1.0));

    let small = OrbitBall::enumerate(&f3, 3)?;
    let mut outside = 0usize;
    for theta in [RootSubset::single(3, 1)?, full3.clone()] {
        for i in 1..small.len() {
            let spec = ShadowSpec::from_orbit(&small, i, 1.0, theta.clone())?;
            let x = flags::u_theta_with_inverse(&small.matrix(i), &small.inverse(i), &theta, tol::GAP_FLOOR)?;
            if !shadows::shadow_contains(&spec, &x)? {
                outside += 1;
            }
        }
    }
    checks.push(le("u_theta_in_own_shadow_failures", outside as f64, 0.0));
    let mu = shadows::patterson_construct(&ball, &phi, 0.7, &RootSubset::single(3, 1)?)?;
    checks.push(le("patterson_mass_error", (mu.total() - 1.0).abs(), 1e-12));

    let alpha1 = RootSubset::single(3, 1)?;
    let (mut worst_at, mut equiv) = (0usize, 0.0f64);
    for _ in 0..10 {
        let w = shadows::random_reduced_word(&mut rng, &f3, 20);
        let tr = shadows::conical_tracking(&f3, &w, &alpha1, &full3)?;
        worst_at = worst_at.max(tr.converged_at.unwrap_or(usize::MAX));
        let gamma = shadows::random_reduced_word(&mut rng, &f3, 3);
        equiv = equiv.max(shadows::lift_equivariance(&f3, &w, &gamma, &alpha1, &full3)?.distance);
    }
    checks.push(le("tracking_converged_by", worst_at as f64, 20.0));
    checks.push(le("tracking_equivariance", equiv, 1e-5));

    let cyc = OrbitBall::enumerate(&fixtures::f1(), 40)?;
    let e = orbit::critical_exponent(&cyc, &phi, ExponentMethod::CountRegression)?;
    checks.push(le("cyclic_exponent", e.delta_hat, 0.1));

    let f2 = fixtures::f2_so21();
    let klein = ConvexDomain::klein(2);
    let f2_ball = OrbitBall::enumerate(&f2, 6)?;
    let pos = hilbert::orbit_positions(&klein, &f2_ball, &[0.0, 0.0])?;
    let dists = pos.distances_from(&klein, &[0.0, 0.0])?;
    let h3 = convexity::hilbert_functional(3)?;
    let gap = (0..f2_ball.len())
        .map(|i| (dists[i] - h3.eval(&f2_ball.kappa(i))).abs())
        .fold(0.0f64, f64::max);
    checks.push(le("klein_distance_matches_phi_h", gap, 1e-6));
    let (mut radial, mut triangle) = (0.0f64, f64::INFINITY);
    for _ in 0..n {
        let p = random_point(&mut rng, &klein, 0.99);
        let q = random_point(&mut rng, &klein, 0.99);
        let r = random_point(&mut rng, &klein, 0.99);
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        radial = radial.max((klein.distance(&[0.0, 0.0], &p)? - norm.atanh()).abs());
        triangle = triangle
            .min(klein.distance(&p, &q)? + klein.distance(&q, &r)? - klein.distance(&p, &r)?);
    }
    checks.push(le("klein_radial_formula", radial, 1e-10));
    checks.push(ge("triangle_inequality_slack", triangle, -1e-9));

    let mut slack_min = f64::INFINITY;
    let mut d4p2 = 0.0f64;
    for _ in 0..n {
        for d in 3..7 {
            let mut t: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mean = t.iter().sum::<f64>() / d as f64;
            t.iter_mut().for_each(|x| *x -= mean);
            let x = CartanVector(t).into_chamber();
            for p in 1..=d - 2 {
                let s = convexity::functional_comparison(&x, d, p)?.slack;
                slack_min = slack_min.min(s);
                if d == 4 && p == 2 {
                    d4p2 = d4p2.max(s.abs());
                }
            }
        }
    }
    checks.push(ge("comparison_slack_nonnegative", slack_min, -1e-12));
    checks.push(le("comparison_slack_d4_p2_zero", d4p2, 1e-12));
    let mid_f2 = convexity::middle_eigenvalue_probe(&f2_ball)?;
    checks.push(le("middle_eigenvalues_so21", mid_f2.deviation, 1e-6));
    let mid_f3 = convexity::middle_eigenvalue_probe(&small)?;
    checks.push(ge("middle_eigenvalues_f3", mid_f3.deviation, 0.1));

    let passed = checks.iter().all(|c| c.passed);
    let mut table = Table::new("checks", &["name", "value", "threshold", "sense", "passed"]);
    for c in &checks {
        table.rows.push(vec![
            c.name.into(),
            num(c.value),
            num(c.threshold),
            c.sense.into(),
            c.passed.to_string(),
        ]);
    }
    let mut out = Outcome::new(json!({"checks": checks, "samples": n}));
    out.tables.push(table);
    out.passed = Some(passed);
    Ok(out)
}
