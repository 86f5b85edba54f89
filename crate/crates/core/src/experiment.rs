//! Experiment configuration, sweep presets and result emission.
//!
//! A configuration is a flat set of keys resolved in layers: built-in
//! defaults, then the keys of a named preset, then a TOML file, then
//! `--key value` overrides. Later layers win. Per-strategy keys live in
//! sections (`tefas.multiply`, `qalgo.c_coef`, `fixed.frame`) and may also
//! be given by their bare name.
//!
//! A sweep is the cartesian product strategy x timing profile x `f_ini`
//! x `n_tags`, in that nesting order; output rows follow it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{Rounding, F_MAX};
use crate::protocols::{FixedFrame, QParams, StrategyKind, TefasParams};
use crate::sim::{aggregate, run_trials, AggregateResult, MonteCarloSpec, SEED_RULE};
use crate::timing::TimingProfile;

/// Every accepted configuration key.
pub const KEYS: [&str; 20] = [
    "strategy",
    "n_tags",
    "f_ini",
    "tc_te_ratio",
    "t_idle_s",
    "t_success_s",
    "t_collision_s",
    "trials",
    "seed",
    "preset",
    "output",
    "format",
    "trace",
    "tefas.multiply",
    "tefas.coef_upper",
    "tefas.coef_lower",
    "tefas.rounding",
    "tefas.nmax_factor",
    "qalgo.c_coef",
    "fixed.frame",
];

pub const DEFAULT_TRIALS: u32 = 1000;
pub const DEFAULT_SEED: u64 = 1;

/// Maps a user-supplied key to its canonical form. Dashes count as
/// underscores, `strategies` is accepted for `strategy`, and per-strategy
/// keys may drop their section prefix.
pub fn canonical_key(raw: &str) -> Result<&'static str> {
    let key = raw.trim().trim_start_matches("--").replace('-', "_");
    let key = if key == "strategies" { "strategy".to_string() } else { key };
    if let Some(k) = KEYS.iter().find(|k| **k == key) {
        return Ok(k);
    }
    let mut sectioned = KEYS
        .iter()
        .filter(|k| k.split_once('.').is_some_and(|(_, bare)| bare == key));
    match (sectioned.next(), sectioned.next()) {
        (Some(k), None) => Ok(k),
        _ => Err(Error::config(raw.trim(), "unknown key")),
    }
}

/// A named bundle of key assignments applied on top of the defaults.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub settings: &'static [(&'static str, &'static str)],
}

const N_100_TO_1000: &str = "100,200,300,400,500,600,700,800,900,1000";

pub const PRESETS: [Preset; 3] = [
    Preset {
        name: "fig1",
        description: "throughput vs tag count for several initial frame sizes",
        settings: &[
            ("strategy", "all"),
            ("n_tags", N_100_TO_1000),
            ("f_ini", "8,16,64,256"),
        ],
    },
    Preset {
        name: "fig2",
        description: "time efficiency vs T_C/T_E with T_C and T_S held fixed",
        settings: &[
            ("strategy", "all"),
            ("tc_te_ratio", "1,1.5,2,3,4"),
            ("n_tags", "100,500,1000"),
            ("f_ini", "16"),
        ],
    },
    Preset {
        name: "fig3",
        description: "identification time per tag vs tag count, F_ini = 16",
        settings: &[("strategy", "all"), ("n_tags", N_100_TO_1000), ("f_ini", "16")],
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Result file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err("expected csv or json".into()),
        }
    }
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub strategies: Vec<StrategyKind>,
    pub n_tags: Vec<u32>,
    pub f_ini: Vec<u32>,
    /// Profile used as is, or as the base of the ratio sweep.
    pub profile: TimingProfile,
    /// `T_C / T_E` values; at each, `t_idle = t_collision / ratio`. Empty
    /// means no ratio sweep.
    pub tc_te_ratios: Vec<f64>,
    pub trials: u32,
    pub seed: u64,
    #[serde(skip)]
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub format: OutputFormat,
    #[serde(skip)]
    pub trace: Option<PathBuf>,
}

type Settings = BTreeMap<&'static str, String>;

fn default_settings() -> Settings {
    let t = TefasParams::default();
    let p = TimingProfile::DEFAULT;
    let q = QParams::default();
    [
        ("strategy", "tefas".to_string()),
        ("n_tags", "100".to_string()),
        ("f_ini", "16".to_string()),
        ("tc_te_ratio", String::new()),
        ("t_idle_s", p.t_idle.to_string()),
        ("t_success_s", p.t_success.to_string()),
        ("t_collision_s", p.t_collision.to_string()),
        ("trials", DEFAULT_TRIALS.to_string()),
        ("seed", DEFAULT_SEED.to_string()),
        ("format", "csv".to_string()),
        ("tefas.multiply", t.multiply.to_string()),
        ("tefas.coef_upper", t.coef_upper.to_string()),
        ("tefas.coef_lower", t.coef_lower.to_string()),
        ("tefas.rounding", "integer".to_string()),
        ("tefas.nmax_factor", t.n_max_factor.to_string()),
        ("qalgo.c_coef", q.c_coef.to_string()),
        ("fixed.frame", "auto".to_string()),
    ]
    .into_iter()
    .collect()
}

/// Flattens a TOML document into canonical `(key, value)` assignments.
/// Arrays become comma lists.
pub fn parse_config_file(text: &str) -> Result<Vec<(&'static str, String)>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
    let mut out = Vec::new();
    flatten("", &table, &mut out)?;
    Ok(out)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(&'static str, String)>) -> Result<()> {
    for (k, v) in table {
        let full = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if let toml::Value::Table(inner) = v {
            flatten(&full, inner, out)?;
            continue;
        }
        let key = canonical_key(&full)?;
        let text = match v {
            toml::Value::Array(items) => items
                .iter()
                .map(|item| scalar_text(key, item))
                .collect::<Result<Vec<_>>>()?
                .join(","),
            other => scalar_text(key, other)?,
        };
        out.push((key, text));
    }
    Ok(())
}

fn scalar_text(key: &str, v: &toml::Value) -> Result<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        _ => Err(Error::config(key, "expected a string, number or list of them")),
    }
}

/// Resolves defaults, preset, config file and overrides into a config.
pub fn resolve_config(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let file = match file_text {
        Some(text) => parse_config_file(text)?,
        None => Vec::new(),
    };
    let flags = overrides
        .iter()
        .map(|(k, v)| Ok((canonical_key(k)?, v.clone())))
        .collect::<Result<Vec<_>>>()?;

    let mut settings = default_settings();
    let last_preset = |layer: &[(&str, String)]| {
        layer.iter().rev().find(|(k, _)| *k == "preset").map(|(_, v)| v.clone())
    };
    let preset_name = last_preset(&flags).or_else(|| last_preset(&file));
    if let Some(name) = preset_name {
        let p = preset(&name).ok_or_else(|| {
            let known: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
            Error::config("preset", format!("unknown preset '{name}' (known: {})", known.join(", ")))
        })?;
        for (k, v) in p.settings {
            settings.insert(canonical_key(k)?, v.to_string());
        }
    }
    for (k, v) in file.into_iter().chain(flags) {
        settings.insert(k, v);
    }
    build_config(&settings)
}

fn get<'a>(s: &'a Settings, key: &str) -> &'a str {
    s.get(key).map(String::as_str).unwrap_or("")
}

fn parse_one<T: FromStr>(s: &Settings, key: &'static str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = get(s, key).trim();
    raw.parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse '{raw}': {e}")))
}

fn parse_list<T: FromStr>(s: &Settings, key: &'static str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let raw = get(s, key);
    let items: Vec<&str> = raw.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
    items
        .into_iter()
        .map(|x| {
            x.parse()
                .map_err(|e: T::Err| Error::config(key, format!("cannot parse '{x}': {e}")))
        })
        .collect()
}

fn non_empty<T>(key: &str, v: Vec<T>) -> Result<Vec<T>> {
    if v.is_empty() {
        Err(Error::config(key, "must list at least one value"))
    } else {
        Ok(v)
    }
}

fn build_config(s: &Settings) -> Result<ExperimentConfig> {
    let tefas = TefasParams {
        multiply: parse_one(s, "tefas.multiply")?,
        coef_upper: parse_one(s, "tefas.coef_upper")?,
        coef_lower: parse_one(s, "tefas.coef_lower")?,
        rounding: match get(s, "tefas.rounding").trim() {
            "integer" => Rounding::Integer,
            "pow2" => Rounding::PowerOfTwo,
            other => {
                return Err(Error::config(
                    "tefas.rounding",
                    format!("expected integer or pow2, got '{other}'"),
                ))
            }
        },
        n_max_factor: parse_one(s, "tefas.nmax_factor")?,
    };
    let qalgo = QParams {
        c_coef: parse_one(s, "qalgo.c_coef")?,
    };
    let fixed = match get(s, "fixed.frame").trim() {
        "auto" => FixedFrame::Auto,
        n => match n.parse::<u32>() {
            Ok(f) if (1..=F_MAX).contains(&f) => FixedFrame::Size(f),
            _ => {
                return Err(Error::config(
                    "fixed.frame",
                    format!("expected auto or a size in [1, {F_MAX}], got '{n}'"),
                ))
            }
        },
    };

    let names: Vec<String> = non_empty("strategy", parse_list(s, "strategy")?)?;
    let mut strategies = Vec::new();
    for name in &names {
        let kinds: Vec<StrategyKind> = if name == "all" {
            StrategyKind::NAMES.iter().map(|n| n.parse()).collect::<Result<_>>()?
        } else {
            vec![name.parse()?]
        };
        for kind in kinds {
            let kind = match kind {
                StrategyKind::Tefas(_) => StrategyKind::Tefas(tefas),
                StrategyKind::QAlgo(_) => StrategyKind::QAlgo(qalgo),
                StrategyKind::Fixed(_) => StrategyKind::Fixed(fixed),
                StrategyKind::Schoute => StrategyKind::Schoute,
            };
            if strategies.iter().any(|k: &StrategyKind| k.name() == kind.name()) {
                return Err(Error::config("strategy", format!("'{}' listed twice", kind.name())));
            }
            strategies.push(kind);
        }
    }

    let n_tags = non_empty("n_tags", parse_list(s, "n_tags")?)?;
    let f_ini: Vec<u32> = non_empty("f_ini", parse_list(s, "f_ini")?)?;
    if let Some(bad) = f_ini.iter().find(|f| !(1..=F_MAX).contains(*f)) {
        return Err(Error::config("f_ini", format!("{bad} is outside [1, {F_MAX}]")));
    }

    let mut times = [0.0; 3];
    for (slot, key) in times.iter_mut().zip(["t_idle_s", "t_success_s", "t_collision_s"]) {
        let v: f64 = parse_one(s, key)?;
        *slot = v;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::config(key, "must be a positive duration in seconds"));
        }
    }
    let profile = TimingProfile::new(times[0], times[1], times[2])?;
    let tc_te_ratios: Vec<f64> = parse_list(s, "tc_te_ratio")?;
    for r in &tc_te_ratios {
        profile
            .with_collision_idle_ratio(*r)
            .map_err(|_| Error::config("tc_te_ratio", format!("{r} is not a positive ratio")))?;
    }

    let trials: u32 = parse_one(s, "trials")?;
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let seed = parse_one(s, "seed")?;
    let format = parse_one(s, "format")?;
    let path = |key| Some(get(s, key).trim()).filter(|p| !p.is_empty()).map(PathBuf::from);

    let config = ExperimentConfig {
        strategies,
        n_tags,
        f_ini,
        profile,
        tc_te_ratios,
        trials,
        seed,
        output: path("output"),
        format,
        trace: path("trace"),
    };
    // Surface parameter errors now, for listed and unlisted strategies alike.
    for kind in [StrategyKind::Tefas(tefas), StrategyKind::QAlgo(qalgo), StrategyKind::Fixed(fixed)] {
        kind.build(config.f_ini[0], config.n_tags[0], &config.profile)?;
    }
    Ok(config)
}

impl ExperimentConfig {
    /// Timing profiles of the sweep, in order.
    pub fn profiles(&self) -> Vec<TimingProfile> {
        if self.tc_te_ratios.is_empty() {
            return vec![self.profile];
        }
        self.tc_te_ratios
            .iter()
            .map(|r| self.profile.with_collision_idle_ratio(*r).expect("validated ratio"))
            .collect()
    }

    /// Sweep points in output order.
    pub fn points(&self) -> Vec<MonteCarloSpec> {
        let profiles = self.profiles();
        let mut out = Vec::new();
        for strategy in &self.strategies {
            for profile in &profiles {
                for f_ini in &self.f_ini {
                    for n_tags in &self.n_tags {
                        out.push(MonteCarloSpec {
                            strategy: *strategy,
                            n_tags: *n_tags,
                            f_ini: *f_ini,
                            profile: *profile,
                            trials: self.trials,
                            master_seed: self.seed,
                        });
                    }
                }
            }
        }
        out
    }

    /// Short digest of everything that determines the results.
    pub fn fingerprint(&self) -> String {
        crate::sim::digest(self)
    }
}

/// One output row: a sweep point and its aggregated metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub n_tags: u32,
    pub f_ini: u32,
    pub t_idle: f64,
    pub t_success: f64,
    pub t_collision: f64,
    pub trials: u32,
    pub seed: u64,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub time_eff_mean: f64,
    pub time_eff_std: f64,
    pub ms_per_tag_mean: f64,
    pub ms_per_tag_std: f64,
}

impl From<&AggregateResult> for ResultRow {
    fn from(a: &AggregateResult) -> Self {
        ResultRow {
            strategy: a.spec.strategy.name().to_string(),
            n_tags: a.spec.n_tags,
            f_ini: a.spec.f_ini,
            t_idle: a.spec.profile.t_idle,
            t_success: a.spec.profile.t_success,
            t_collision: a.spec.profile.t_collision,
            trials: a.trials,
            seed: a.spec.master_seed,
            throughput_mean: a.throughput.mean,
            throughput_std: a.throughput.std,
            time_eff_mean: a.time_efficiency.mean,
            time_eff_std: a.time_efficiency.std,
            ms_per_tag_mean: a.ms_per_tag.mean,
            ms_per_tag_std: a.ms_per_tag.std,
        }
    }
}

pub const CSV_HEADER: &str = "strategy,n_tags,f_ini,t_idle,t_success,t_collision,trials,seed,\
throughput_mean,throughput_std,time_eff_mean,time_eff_std,ms_per_tag_mean,ms_per_tag_std";

/// One line of the per-frame trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub point: usize,
    pub strategy: String,
    pub n_tags: u32,
    pub f_ini: u32,
    pub trial: u32,
    pub frame: usize,
    pub size: u32,
    pub e: u64,
    pub s: u64,
    pub c: u64,
    pub action: String,
    pub n_est: Option<u32>,
    pub f_opt: Option<u32>,
}

/// Runs every sweep point in order. With `trace`, every executed frame of
/// every trial is written to it as one JSON line.
pub fn run_sweep(config: &ExperimentConfig, mut trace: Option<&mut (dyn Write + Send)>) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (point, spec) in config.points().iter().enumerate() {
        let runs = run_trials(spec)?;
        if let Some(out) = trace.as_deref_mut() {
            for (trial, run) in runs.iter().enumerate() {
                for (frame, rec) in run.frames.iter().enumerate() {
                    let line = TraceRecord {
                        point,
                        strategy: spec.strategy.name().to_string(),
                        n_tags: spec.n_tags,
                        f_ini: spec.f_ini,
                        trial: trial as u32,
                        frame,
                        size: rec.size,
                        e: rec.stats.idle,
                        s: rec.stats.success,
                        c: rec.stats.collision,
                        action: rec.end.label(),
                        n_est: rec.n_est,
                        f_opt: rec.f_opt,
                    };
                    serde_json::to_writer(&mut *out, &line).map_err(|e| Error::Io(e.to_string()))?;
                    out.write_all(b"\n")?;
                }
            }
        }
        rows.push(ResultRow::from(&aggregate(spec, &runs)));
    }
    Ok(rows)
}

/// Runs the sweep on a dedicated pool of `workers` threads, or on the
/// global pool when `None`.
pub fn run_sweep_with_workers(
    config: &ExperimentConfig,
    workers: Option<usize>,
    trace: Option<&mut (dyn Write + Send)>,
) -> Result<Vec<ResultRow>> {
    match workers {
        None => run_sweep(config, trace),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("TEFAS_WORKERS", e.to_string()))?;
            pool.install(|| run_sweep(config, trace))
        }
    }
}

/// CSV with a leading `#` comment carrying the config fingerprint. Numbers
/// use the shortest decimal form that parses back to the same value.
pub fn write_csv(out: &mut dyn Write, fingerprint: &str, rows: &[ResultRow]) -> Result<()> {
    writeln!(out, "# tefas results seed_rule={SEED_RULE} config={fingerprint}")?;
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.strategy,
            r.n_tags,
            r.f_ini,
            r.t_idle,
            r.t_success,
            r.t_collision,
            r.trials,
            r.seed,
            r.throughput_mean,
            r.throughput_std,
            r.time_eff_mean,
            r.time_eff_std,
            r.ms_per_tag_mean,
            r.ms_per_tag_std
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonDocument<'a> {
    config: &'a str,
    seed_rule: &'a str,
    rows: &'a [ResultRow],
}

/// JSON document whose `rows` array holds one object per CSV row.
pub fn write_json(out: &mut dyn Write, fingerprint: &str, rows: &[ResultRow]) -> Result<()> {
    let doc = JsonDocument {
        config: fingerprint,
        seed_rule: SEED_RULE,
        rows,
    };
    serde_json::to_writer_pretty(&mut *out, &doc).map_err(|e| Error::Io(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Per-strategy means over all of that strategy's sweep points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub points: usize,
    pub throughput: f64,
    pub time_eff: f64,
    pub ms_per_tag: f64,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<StrategySummary> {
    let mut out: Vec<StrategySummary> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|s| s.strategy == r.strategy) {
            Some(i) => i,
            None => {
                out.push(StrategySummary {
                    strategy: r.strategy.clone(),
                    points: 0,
                    throughput: 0.0,
                    time_eff: 0.0,
                    ms_per_tag: 0.0,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        s.points += 1;
        s.throughput += r.throughput_mean;
        s.time_eff += r.time_eff_mean;
        s.ms_per_tag += r.ms_per_tag_mean;
    }
    for s in &mut out {
        let k = s.points as f64;
        s.throughput /= k;
        s.time_eff /= k;
        s.ms_per_tag /= k;
    }
    out
}

pub fn format_summary(summary: &[StrategySummary]) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<10} {:>6} {:>12} {:>12} {:>12}",
        "strategy", "points", "throughput", "time_eff", "ms_per_tag"
    );
    for s in summary {
        let _ = writeln!(
            t,
            "{:<10} {:>6} {:>12.4} {:>12.4} {:>12.4}",
            s.strategy, s.points, s.throughput, s.time_eff, s.ms_per_tag
        );
    }
    t
}
