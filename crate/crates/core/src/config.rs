//! Experiment configuration, validation and the pipelines behind the CLI.
//!
//! A run writes its artifacts (CSV fields and traces, a JSON report) into an
//! output directory together with `manifest.json`, which records the
//! canonical configuration, its SHA-256, the seed, the crate version and the
//! SHA-256 of every artifact. Feeding a manifest back as a configuration
//! reruns the same experiment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{self, FlowConfig};
use crate::kernels::{Attraction, Kernel, KernelSpec};
use crate::measures::RadialGrid;
use crate::obstacle::{self, SelfConsistentOptions};
use crate::verify::{self, ElOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Flow,
    Obstacle,
    FracObstacle,
    Crosscheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    pub n: usize,
    pub dt0: f64,
    pub t_max: f64,
    pub tol_velocity: f64,
    pub collision_radius: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            n: 1000,
            dt0: 0.5,
            t_max: 30.0,
            tol_velocity: 1e-4,
            collision_radius: 2e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridParams {
    pub h: f64,
    #[serde(rename = "L")]
    pub length: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { h: 1e-3, length: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleParams {
    pub theta: f64,
    pub tol: f64,
    pub max_outer: usize,
}

impl Default for ObstacleParams {
    fn default() -> Self {
        let d = SelfConsistentOptions::default();
        Self {
            theta: d.theta,
            tol: d.tol,
            max_outer: d.max_outer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyParams {
    pub r_check: f64,
    pub m_samples: usize,
    pub smoothing: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        let d = ElOptions::default();
        Self {
            r_check: d.r_check,
            m_samples: d.m_samples,
            smoothing: d.smoothing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub obstacle: ObstacleParams,
    #[serde(default)]
    pub verify: VerifyParams,
}

/// Allowed keys per section: `(name, kind)`.
const SECTIONS: &[(&str, &[(&str, Kind)])] = &[
    (
        "flow",
        &[
            ("n", Kind::Count),
            ("dt0", Kind::Positive),
            ("t_max", Kind::Positive),
            ("tol_velocity", Kind::Positive),
            ("collision_radius", Kind::NonNegative),
        ],
    ),
    ("grid", &[("h", Kind::Positive), ("L", Kind::Positive)]),
    (
        "obstacle",
        &[("theta", Kind::Fraction), ("tol", Kind::Positive), ("max_outer", Kind::Count)],
    ),
    (
        "verify",
        &[("r_check", Kind::Positive), ("m_samples", Kind::Count), ("smoothing", Kind::NonNegative)],
    ),
];

#[derive(Debug, Clone, Copy)]
enum Kind {
    Positive,
    NonNegative,
    /// In `(0, 1]`.
    Fraction,
    /// Positive integer.
    Count,
}

fn check_number(path: &str, v: &Value, kind: Kind, errs: &mut Vec<String>) {
    let ok = match kind {
        Kind::Count => v.as_u64().is_some_and(|n| n > 0),
        Kind::Positive => v.as_f64().is_some_and(|x| x > 0.0 && x.is_finite()),
        Kind::NonNegative => v.as_f64().is_some_and(|x| x >= 0.0 && x.is_finite()),
        Kind::Fraction => v.as_f64().is_some_and(|x| x > 0.0 && x <= 1.0),
    };
    if !ok {
        let want = match kind {
            Kind::Count => "a positive integer",
            Kind::Positive => "a positive number",
            Kind::NonNegative => "a non-negative number",
            Kind::Fraction => "a number in (0, 1]",
        };
        errs.push(format!("{path}: expected {want}, got {v}"));
    }
}

fn validate_kernel(v: &Value, errs: &mut Vec<String>) {
    let Some(obj) = v.as_object() else {
        errs.push("kernel: expected an object".into());
        return;
    };
    for key in obj.keys() {
        if !["dim", "s", "attraction", "cutoff"].contains(&key.as_str()) {
            errs.push(format!("kernel: unknown key '{key}'"));
        }
    }
    match obj.get("dim") {
        None => errs.push("kernel.dim: missing required field".into()),
        Some(d) if !d.as_u64().is_some_and(|n| (1..=12).contains(&n)) => {
            errs.push(format!("kernel.dim: expected an integer in 1..=12, got {d}"))
        }
        _ => {}
    }
    match obj.get("s") {
        None => errs.push("kernel.s: missing required field".into()),
        Some(s) if !s.as_f64().is_some_and(|x| x > 0.0 && x <= 1.0) => {
            errs.push(format!("kernel.s: expected a number in (0, 1], got {s}"))
        }
        _ => {}
    }
    if let Some(c) = obj.get("cutoff") {
        if !c.is_null() && !c.as_f64().is_some_and(|x| x > 0.0) {
            errs.push(format!("kernel.cutoff: expected null or a positive number, got {c}"));
        }
    }
    let Some(att) = obj.get("attraction") else {
        errs.push("kernel.attraction: missing required field".into());
        return;
    };
    let Some(att) = att.as_object() else {
        errs.push("kernel.attraction: expected an object".into());
        return;
    };
    let allowed: &[&str] = match att.get("type").and_then(Value::as_str) {
        Some("power") => {
            match att.get("q") {
                None => errs.push("kernel.attraction.q: missing required field".into()),
                Some(q) => check_number("kernel.attraction.q", q, Kind::Positive, errs),
            }
            if let Some(c) = att.get("coeff") {
                check_number("kernel.attraction.coeff", c, Kind::Positive, errs);
            }
            &["type", "q", "coeff"]
        }
        Some("quadratic") => {
            match att.get("K").or_else(|| att.get("k")) {
                None => errs.push("kernel.attraction.K: missing required field".into()),
                Some(k) => check_number("kernel.attraction.K", k, Kind::Positive, errs),
            }
            &["type", "K", "k"]
        }
        Some("none") => &["type"],
        other => {
            errs.push(format!(
                "kernel.attraction.type: expected one of power, quadratic, none; got {other:?}"
            ));
            return;
        }
    };
    for key in att.keys() {
        if !allowed.contains(&key.as_str()) {
            errs.push(format!("kernel.attraction: unknown key '{key}'"));
        }
    }
}

/// Every problem with a raw configuration value, in document order.
pub fn validate_value(v: &Value) -> Vec<String> {
    let mut errs = Vec::new();
    let Some(obj) = v.as_object() else {
        return vec!["config: expected a JSON object".into()];
    };
    let top = ["kernel", "method", "seed", "flow", "grid", "obstacle", "verify"];
    for key in obj.keys() {
        if !top.contains(&key.as_str()) {
            errs.push(format!("unknown key '{key}'"));
        }
    }
    match obj.get("kernel") {
        None => errs.push("kernel: missing required field".into()),
        Some(k) => validate_kernel(k, &mut errs),
    }
    match obj.get("method") {
        None => errs.push("method: missing required field (flow, obstacle, frac_obstacle, crosscheck)".into()),
        Some(m) => {
            if !m
                .as_str()
                .is_some_and(|s| ["flow", "obstacle", "frac_obstacle", "crosscheck"].contains(&s))
            {
                errs.push(format!(
                    "method: expected one of flow, obstacle, frac_obstacle, crosscheck; got {m}"
                ));
            }
        }
    }
    if let Some(s) = obj.get("seed") {
        if s.as_u64().is_none() {
            errs.push(format!("seed: expected a non-negative integer, got {s}"));
        }
    }
    for (name, keys) in SECTIONS {
        let Some(sec) = obj.get(*name) else { continue };
        let Some(sec) = sec.as_object() else {
            errs.push(format!("{name}: expected an object"));
            continue;
        };
        for (key, val) in sec {
            match keys.iter().find(|(k, _)| k == key) {
                Some((_, kind)) => check_number(&format!("{name}.{key}"), val, *kind, &mut errs),
                None => errs.push(format!("{name}: unknown key '{key}'")),
            }
        }
    }
    errs
}

impl ExperimentConfig {
    /// Parse and validate; all problems are reported together.
    pub fn from_value(v: &Value) -> Result<Self> {
        let mut errs = validate_value(v);
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let cfg: Self = serde_json::from_value(v.clone()).map_err(|e| Error::Config(vec![e.to_string()]))?;
        errs.extend(cfg.semantic_errors());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Accepts a plain configuration or a manifest (its `config` member).
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        match v.get("config") {
            Some(inner) if v.get("config_sha256").is_some() => Self::from_value(inner),
            _ => Self::from_value(&v),
        }
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn semantic_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let kernel = match Kernel::from_spec(&self.kernel) {
            Ok(k) => Some(k),
            Err(e) => {
                errs.push(format!("kernel: {e}"));
                None
            }
        };
        let quadratic = matches!(self.kernel.attraction, Attraction::Quadratic { .. });
        match self.method {
            Method::Obstacle if self.kernel.s != 1.0 => {
                errs.push("method obstacle needs s = 1 (use frac_obstacle for s < 1)".into())
            }
            Method::FracObstacle if self.kernel.s >= 1.0 || !quadratic || self.kernel.dim < 2 => {
                errs.push("method frac_obstacle needs s < 1, N >= 2 and quadratic attraction".into())
            }
            Method::Crosscheck if !quadratic => errs.push("method crosscheck needs quadratic attraction".into()),
            _ => {}
        }
        if matches!(self.method, Method::Obstacle | Method::FracObstacle | Method::Crosscheck)
            && self.kernel.cutoff.is_some()
        {
            errs.push("obstacle solvers need a kernel without cutoff".into());
        }
        if self.grid.h >= self.grid.length {
            errs.push(format!("grid: h = {} must be below L = {}", self.grid.h, self.grid.length));
        }
        if let Some(k) = kernel {
            if let Err(Error::Config(e)) = self.flow_config(k).validate() {
                errs.extend(e);
            }
        }
        errs
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::from_spec(&self.kernel)
    }

    pub fn flow_config(&self, kernel: Kernel) -> FlowConfig {
        let mut c = FlowConfig::new(kernel, self.flow.n);
        c.dt0 = self.flow.dt0;
        c.t_max = self.flow.t_max;
        c.tol_velocity = self.flow.tol_velocity;
        c.collision_radius = self.flow.collision_radius;
        c.seed = self.seed;
        c
    }

    pub fn grid(&self) -> Result<RadialGrid> {
        RadialGrid::new(self.grid.h, self.grid.length)
    }

    pub fn el_options(&self) -> ElOptions {
        ElOptions {
            r_check: self.verify.r_check,
            m_samples: self.verify.m_samples,
            smoothing: self.verify.smoothing,
            ..ElOptions::default()
        }
    }

    /// Canonical JSON (sorted keys, defaults filled in).
    pub fn canonical(&self) -> Value {
        sort_keys(serde_json::to_value(self).expect("config serialises"))
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.canonical().to_string().as_bytes())
    }
}

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<String, Value> = m.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files written by a run (relative names) and the JSON report.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub report: Value,
    /// Every pass flag in the report holds.
    pub passed: bool,
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn run_flow(cfg: &ExperimentConfig, k: &Kernel, dir: &Path, files: &mut Vec<String>) -> Result<(Value, bool, flow::FlowTrace)> {
    let fc = cfg.flow_config(k.clone());
    let trace = flow::run(&fc, fc.initial_cloud()?)?;
    trace.write_csv(dir.join("trace.csv"))?;
    trace.final_cloud.write_csv(dir.join("cloud.csv"))?;
    files.extend(["trace.csv".to_string(), "cloud.csv".to_string()]);
    let el = verify::el_check(&trace.final_cloud, k, &cfg.el_options())?;
    let monotone = trace.energies().windows(2).all(|w| w[1] <= w[0]);
    let report = json!({
        "energy": trace.final_energy(),
        "converged": trace.converged,
        "stalled": trace.stalled,
        "accepted": trace.accepted,
        "rejected": trace.rejected,
        "energy_monotone": monotone,
        "el_check": el,
    });
    Ok((report, monotone && el.passed(), trace))
}

fn run_obstacle(cfg: &ExperimentConfig, k: &Kernel, dir: &Path, files: &mut Vec<String>) -> Result<(Value, bool, obstacle::ObstacleSolution)> {
    let opts = SelfConsistentOptions {
        theta: cfg.obstacle.theta,
        tol: cfg.obstacle.tol,
        max_outer: cfg.obstacle.max_outer,
        initial_radius: None,
    };
    let sol = obstacle::self_consistent_minimizer_with(k, &cfg.grid()?, &opts)?;
    sol.write_csv(dir.join("solution.csv"))?;
    files.push("solution.csv".into());
    let reg = verify::regularity_report(&sol, k)?;
    let pass_linf = reg.linf_bound_violation <= 1e-8;
    let pass_identity = reg.interior_identity_error <= 1e-2 * reg.f_sup;
    let pass_compl = sol.residuals.complementarity <= 1e-8;
    let report = json!({
        "c0": sol.c0,
        "iterations": sol.iterations,
        "residuals": sol.residuals,
        "mass": sol.mass(),
        "contact_radius": sol.contact_radius(),
        "regularity": reg,
        "pass_linf_bound": pass_linf,
        "pass_interior_identity": pass_identity,
        "pass_complementarity": pass_compl,
    });
    Ok((report, pass_linf && pass_identity && pass_compl, sol))
}

fn run_frac(k: &Kernel, cfg: &ExperimentConfig, dir: &Path, files: &mut Vec<String>) -> Result<(Value, bool, obstacle::ObstacleSolution)> {
    let rep = obstacle::frac_quadratic_minimizer(k, &cfg.grid()?)?;
    rep.solution.write_csv(dir.join("solution.csv"))?;
    files.push("solution.csv".into());
    let exponent_ok = (rep.mass_exponent / rep.predicted_exponent - 1.0).abs() <= 1e-2;
    let psi_ok = rep.psi_oscillation <= 2e-2;
    let report = json!({
        "levels": rep.levels,
        "mass_exponent": rep.mass_exponent,
        "predicted_exponent": rep.predicted_exponent,
        "unit_level": rep.unit_level,
        "c0": rep.solution.c0,
        "psi_oscillation": rep.psi_oscillation,
        "residuals": rep.solution.residuals,
        "pass_mass_exponent": exponent_ok,
        "pass_psi_constant": psi_ok,
    });
    Ok((report, exponent_ok && psi_ok, rep.solution))
}

/// Execute the configured pipeline, writing artifacts and `manifest.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    let k = cfg.kernel()?;
    let mut files = Vec::new();
    let (report, passed) = match cfg.method {
        Method::Flow => {
            let (r, p, _) = run_flow(cfg, &k, out_dir, &mut files)?;
            (r, p)
        }
        Method::Obstacle => {
            let (r, p, _) = run_obstacle(cfg, &k, out_dir, &mut files)?;
            (r, p)
        }
        Method::FracObstacle => {
            let (r, p, _) = run_frac(&k, cfg, out_dir, &mut files)?;
            (r, p)
        }
        Method::Crosscheck => {
            let (flow_rep, flow_ok, trace) = run_flow(cfg, &k, out_dir, &mut files)?;
            let (obst_rep, obst_ok, sol) = if k.order() < 1.0 {
                run_frac(&k, cfg, out_dir, &mut files)?
            } else {
                run_obstacle(cfg, &k, out_dir, &mut files)?
            };
            let cc = verify::uniqueness_crosscheck(&k, &trace.final_cloud, &sol)?;
            let threshold = if k.order() < 1.0 { 0.08 } else { 0.05 };
            let ok = cc.d2 <= threshold;
            (
                json!({
                    "flow": flow_rep,
                    "obstacle": obst_rep,
                    "crosscheck": cc,
                    "d2_threshold": threshold,
                    "pass_crosscheck": ok,
                }),
                flow_ok && obst_ok && ok,
            )
        }
    };
    let report = json!({ "method": cfg.method, "passed": passed, "report": report });
    write_json(&out_dir.join("report.json"), &report)?;
    files.push("report.json".into());
    let mut hashes = BTreeMap::new();
    for f in &files {
        hashes.insert(f.clone(), sha256_hex(&fs::read(out_dir.join(f))?));
    }
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "method": cfg.method,
        "seed": cfg.seed,
        "config_sha256": cfg.sha256(),
        "config": cfg.canonical(),
        "outputs": hashes,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    files.push("manifest.json".into());
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        files,
        report,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_lists_required_fields() {
        let Err(Error::Config(errs)) = ExperimentConfig::from_json("{}") else {
            panic!("empty config accepted")
        };
        assert!(errs.iter().any(|e| e.starts_with("kernel")));
        assert!(errs.iter().any(|e| e.starts_with("method")));
    }

    #[test]
    fn all_errors_are_reported_together() {
        let text = r#"{"kernel": {"dim": 3, "s": 1.0, "attraction": {"type": "quadratic", "K": -1}, "extra": 1},
                       "method": "teleport", "grid": {"h": 0}, "colour": "red"}"#;
        let Err(Error::Config(errs)) = ExperimentConfig::from_json(text) else {
            panic!("invalid config accepted")
        };
        assert_eq!(errs.len(), 5, "{errs:?}");
    }

    #[test]
    fn valid_config_round_trips_through_its_manifest_form() {
        let text = r#"{"kernel": {"dim": 3, "s": 1.0, "attraction": {"type": "quadratic", "K": 0.1666}},
                       "method": "obstacle", "seed": 3}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let manifest = json!({"config_sha256": cfg.sha256(), "config": cfg.canonical()}).to_string();
        let again = ExperimentConfig::from_json(&manifest).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.sha256(), again.sha256());
    }

    #[test]
    fn method_requirements_are_checked() {
        let text = r#"{"kernel": {"dim": 2, "s": 0.5, "attraction": {"type": "quadratic", "K": 0.2}},
                       "method": "obstacle"}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))));
    }
}
