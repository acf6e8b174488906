//! Experiment driver behind the `kinlab` binary. A study is configured by a
//! JSON document merged over per-study defaults; each run writes CSV tables
//! (every row tagged with the config hash) and a `manifest.json` echoing the
//! resolved configuration and the outcome of every acceptance check.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::boltzmann_evolver::{spectral_gap, write_snapshot, BoltzmannEvolver, PrimalScheme, TrajectoryRow, TransportScheme};
use crate::canon::to_canonical_json;
use crate::coherent_dynamics::{
    coherent_parameter, measurement_kernel, short_time_comparison, EtaGrid, FockTruncation, QuantumScales, ShortTimeConfig,
};
use crate::collision_ops::{c_zeta_convergence, mollifier_convergence_study, MollifierStudy, Profile, ScatteringData, TestFunction};
use crate::error::{invalid, LabError, Result};
use crate::field_montecarlo::{covariance_check, renewal_trend, FieldSampler, Lattice, RenewalConfig};
use crate::kinetic_grid::{DualObservable, GridSpec, PhaseGrid, PhaseMeasure};
use crate::stats::linear_slope;

pub const EXIT_OK: i32 = 0;
/// Numerical failure that is not an acceptance check (non-convergence, support violation, I/O).
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Trotter,
    Mollifier,
    ShortTime,
    Renewal,
    Boltzmann,
    FieldCheck,
    FockOracle,
}

impl Study {
    pub const ALL: [Study; 7] =
        [Study::Trotter, Study::Mollifier, Study::ShortTime, Study::Renewal, Study::Boltzmann, Study::FieldCheck, Study::FockOracle];

    pub fn name(self) -> &'static str {
        match self {
            Study::Trotter => "trotter",
            Study::Mollifier => "mollifier",
            Study::ShortTime => "short-time",
            Study::Renewal => "renewal",
            Study::Boltzmann => "boltzmann",
            Study::FieldCheck => "field-check",
            Study::FockOracle => "fock-oracle",
        }
    }
}

/// Dual Trotter error against a self-refined reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrotterConfig {
    pub grid: GridSpec,
    pub profile: Profile,
    pub transport: TransportScheme,
    pub total_time: f64,
    pub n_ladder: Vec<usize>,
    pub slope_band: [f64; 2],
}

impl Default for TrotterConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec { dim: 2, box_len: 2.0 * PI, nx: 64, r_inner: 0.5, r_outer: 1.5, speeds: vec![1.0], angular: 32 },
            profile: Profile::gaussian(1.0, 1.0),
            transport: TransportScheme::Spectral,
            total_time: 1.0,
            n_ladder: vec![8, 16, 32, 64],
            slope_band: [-1.2, -0.8],
        }
    }
}

/// Lorentzian mollifier rates: a scalar test function and the mollified loss rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierConfig {
    pub zetas: Vec<f64>,
    pub test_function: TestFunction,
    pub window: [f64; 2],
    pub n_eval: usize,
    pub profile: Profile,
    pub xi: Vec<f64>,
    pub slope_band: [f64; 2],
}

impl Default for MollifierConfig {
    fn default() -> Self {
        Self {
            zetas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            test_function: TestFunction::Gaussian { center: 0.0, width: 1.0 },
            window: [-3.0, 3.0],
            n_eval: 61,
            profile: Profile::gaussian(1.0, 1.0),
            xi: vec![1.0, 0.0],
            slope_band: [0.7, 1.1],
        }
    }
}

/// Primal Boltzmann trajectory with mass, positivity and relaxation diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub grid: GridSpec,
    pub profile: Profile,
    pub transport: TransportScheme,
    pub scheme: PrimalScheme,
    pub total_time: f64,
    pub steps: usize,
    /// Record a row (and optionally a snapshot) every this many steps.
    pub every: usize,
    pub snapshots: bool,
    pub mass_tolerance: f64,
    /// Allowed relative gap between the fitted relaxation time and 1/spectral gap.
    pub relaxation_tolerance: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec { dim: 2, box_len: 1.0, nx: 16, r_inner: 0.5, r_outer: 1.5, speeds: vec![1.0], angular: 32 },
            profile: Profile::gaussian(1.0, 1.0),
            transport: TransportScheme::Spectral,
            scheme: PrimalScheme::Trotter,
            total_time: 1.5,
            steps: 300,
            every: 5,
            snapshots: false,
            mass_tolerance: 1e-10,
            relaxation_tolerance: 0.05,
        }
    }
}

/// Empirical field covariance against hG at a few lags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldCheckConfig {
    pub dim: usize,
    pub n: usize,
    pub box_len: f64,
    pub h: f64,
    pub profile: Profile,
    pub axis: usize,
    pub lags: Vec<i64>,
    pub samples: usize,
    pub z_max: f64,
}

impl Default for FieldCheckConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            n: 64,
            box_len: 32.0,
            h: 0.1,
            profile: Profile::gaussian(2.0, 1.0),
            axis: 0,
            lags: vec![0, 1, 2, 3, 5],
            samples: 100_000,
            z_max: 4.0,
        }
    }
}

/// Coherent kernel against a dense truncated Fock space (d = 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FockOracleConfig {
    pub h: f64,
    pub eps: f64,
    pub t: f64,
    pub profile: Profile,
    pub eta_nodes: Vec<f64>,
    pub eta_weights: Vec<f64>,
    pub xi_a: f64,
    pub xi_b: f64,
    pub n_max: usize,
    pub px: Vec<f64>,
    pub entry: [f64; 2],
    pub tolerance: f64,
    pub degenerate_tolerance: f64,
}

impl Default for FockOracleConfig {
    fn default() -> Self {
        Self {
            h: 0.2,
            eps: 0.5,
            t: 0.8,
            profile: Profile::gaussian(1.0, 1.0),
            eta_nodes: vec![-0.9, 1.7],
            eta_weights: vec![0.6, 0.45],
            xi_a: 0.6,
            xi_b: -0.4,
            n_max: 20,
            px: vec![0.0, 1.3, -2.2, 4.0],
            entry: [0.3, -0.2],
            tolerance: 1e-8,
            degenerate_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "kebab-case")]
pub enum StudyConfig {
    Trotter(TrotterConfig),
    Mollifier(MollifierConfig),
    ShortTime(ShortTimeConfig),
    Renewal(RenewalConfig),
    Boltzmann(TrajectoryConfig),
    FieldCheck(FieldCheckConfig),
    FockOracle(FockOracleConfig),
}

impl StudyConfig {
    pub fn defaults(study: Study) -> Self {
        match study {
            Study::Trotter => StudyConfig::Trotter(TrotterConfig::default()),
            Study::Mollifier => StudyConfig::Mollifier(MollifierConfig::default()),
            Study::ShortTime => StudyConfig::ShortTime(ShortTimeConfig::default()),
            Study::Renewal => StudyConfig::Renewal(RenewalConfig::default()),
            Study::Boltzmann => StudyConfig::Boltzmann(TrajectoryConfig::default()),
            Study::FieldCheck => StudyConfig::FieldCheck(FieldCheckConfig::default()),
            Study::FockOracle => StudyConfig::FockOracle(FockOracleConfig::default()),
        }
    }

    pub fn study(&self) -> Study {
        match self {
            StudyConfig::Trotter(_) => Study::Trotter,
            StudyConfig::Mollifier(_) => Study::Mollifier,
            StudyConfig::ShortTime(_) => Study::ShortTime,
            StudyConfig::Renewal(_) => Study::Renewal,
            StudyConfig::Boltzmann(_) => Study::Boltzmann,
            StudyConfig::FieldCheck(_) => Study::FieldCheck,
            StudyConfig::FockOracle(_) => Study::FockOracle,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; not part of the config hash.
    pub out: Option<String>,
    #[serde(flatten)]
    pub params: StudyConfig,
}

impl ExperimentConfig {
    pub fn defaults(study: Study) -> Self {
        Self { seed: 17, out: None, params: StudyConfig::defaults(study) }
    }

    pub fn study(&self) -> Study {
        self.params.study()
    }

    /// Defaults for `study`, overridden key by key by `json` (nested objects
    /// merge, everything else replaces), then by the command-line flags.
    /// Unknown keys and a mismatched `study` are usage errors.
    pub fn resolve(study: Study, json: Option<&str>, seed: Option<u64>, out: Option<String>) -> Result<Self> {
        let mut base = serde_json::to_value(Self::defaults(study))?;
        if let Some(text) = json {
            let user: Value = serde_json::from_str(text).map_err(|e| invalid(format!("config is not valid JSON: {e}")))?;
            if !user.is_object() {
                return Err(invalid("config must be a JSON object"));
            }
            if let Some(s) = user.get("study") {
                if s.as_str() != Some(study.name()) {
                    return Err(invalid(format!("config is for study {s}, not {}", study.name())));
                }
            }
            merge(&mut base, &user, "")?;
        }
        let mut cfg: Self = serde_json::from_value(base).map_err(|e| invalid(format!("bad config: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if out.is_some() {
            cfg.out = out;
        }
        if let StudyConfig::Renewal(r) = &mut cfg.params {
            r.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.params {
            StudyConfig::Trotter(c) => {
                increasing(&c.n_ladder.iter().map(|&n| n as f64).collect::<Vec<_>>(), "N ladder")?;
                if c.n_ladder[0] == 0 || !(c.total_time > 0.0) {
                    return Err(invalid("trotter needs N ≥ 1 and T > 0"));
                }
                band(c.slope_band)
            }
            StudyConfig::Mollifier(c) => {
                decreasing(&c.zetas, "ζ ladder")?;
                if !(c.zetas[c.zetas.len() - 1] > 0.0) || c.n_eval < 2 || !(c.window[0] < c.window[1]) {
                    return Err(invalid("mollifier needs ζ > 0, n_eval ≥ 2 and a nonempty window"));
                }
                c.profile.validate()?;
                band(c.slope_band)
            }
            StudyConfig::ShortTime(c) => {
                decreasing(&c.hs, "h ladder")?;
                alpha_range(c.alpha)?;
                c.validate()
            }
            StudyConfig::Renewal(c) => {
                decreasing(&c.hs, "h ladder")?;
                alpha_range(c.alpha)?;
                c.validate()
            }
            StudyConfig::Boltzmann(c) => {
                if c.steps == 0 || c.every == 0 || !(c.total_time > 0.0) {
                    return Err(invalid("trajectory needs steps ≥ 1, every ≥ 1 and T > 0"));
                }
                c.profile.validate()
            }
            StudyConfig::FieldCheck(c) => {
                if c.lags.is_empty() || c.samples < 2 || c.axis >= c.dim {
                    return Err(invalid("field check needs lags, at least two samples and a valid axis"));
                }
                c.profile.validate()
            }
            StudyConfig::FockOracle(c) => {
                if c.eta_nodes.len() != c.eta_weights.len() || c.eta_nodes.is_empty() || c.px.is_empty() {
                    return Err(invalid("fock oracle needs matching η nodes/weights and at least one p_x"));
                }
                c.profile.validate()
            }
        }
    }

    /// Hex SHA-256 of the canonical JSON of the config without `out`.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = None;
        let digest = Sha256::digest(to_canonical_json(&c)?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.out.clone().unwrap_or_else(|| format!("kinlab-out/{}", self.study().name())))
    }
}

fn merge(base: &mut Value, user: &Value, path: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    // tagged enums (profile, test function) are replaced whole
                    Some(slot) if slot.is_object() && v.is_object() && !(slot.get("kind").is_some() && v.get("kind").is_some()) => {
                        merge(slot, v, &here)?
                    }
                    Some(slot) => *slot = v.clone(),
                    None => return Err(invalid(format!("unknown config key `{here}`"))),
                }
            }
            Ok(())
        }
        _ => Err(invalid(format!("config key `{path}` must be an object"))),
    }
}

fn increasing(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() || xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("{what} must be nonempty and strictly increasing")));
    }
    Ok(())
}

fn decreasing(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() || xs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid(format!("{what} must be nonempty and strictly decreasing")));
    }
    Ok(())
}

fn alpha_range(alpha: f64) -> Result<()> {
    if !(alpha > 0.75 && alpha < 1.0) {
        return Err(invalid(format!("α must lie in (3/4, 1), got {alpha}")));
    }
    Ok(())
}

fn band(b: [f64; 2]) -> Result<()> {
    if !(b[0] < b[1]) {
        return Err(invalid("acceptance band must be [lo, hi] with lo < hi"));
    }
    Ok(())
}

/// One CSV file: header and formatted rows (without the hash column).
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &str, header: &[&str]) -> Self {
        Self { file: file.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self, hash: &str) -> String {
        let mut s = format!("config_hash,{}\n", self.header.join(","));
        for r in &self.rows {
            s.push_str(hash);
            for c in r {
                s.push(',');
                s.push_str(c);
            }
            s.push('\n');
        }
        s
    }
}

/// Fixed CSV float format.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "NaN".into()
    }
}

/// Outcome of one acceptance assertion inside a study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    study: &'a str,
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    outputs: Vec<&'a str>,
    checks: &'a [Check],
    passed: bool,
}

/// Runs the configured study. Snapshots (boltzmann) go under `out/snapshots`.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate()?;
    match &cfg.params {
        StudyConfig::Trotter(c) => trotter_study(c),
        StudyConfig::Mollifier(c) => mollifier_study(c),
        StudyConfig::ShortTime(c) => short_time_study(c),
        StudyConfig::Renewal(c) => renewal_study(&RenewalConfig { seed: cfg.seed, ..c.clone() }),
        StudyConfig::Boltzmann(c) => boltzmann_trajectory(c, c.snapshots.then(|| cfg.out_dir().join("snapshots")).as_deref()),
        StudyConfig::FieldCheck(c) => field_check_study(c, cfg.seed),
        StudyConfig::FockOracle(c) => fock_oracle_study(c),
    }
}

/// Writes every table and `manifest.json` into the output directory.
pub fn write_report(cfg: &ExperimentConfig, report: &StudyReport) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir)?;
    let hash = cfg.hash()?;
    for t in &report.tables {
        std::fs::write(dir.join(&t.file), t.to_csv(&hash))?;
    }
    let manifest = Manifest {
        study: cfg.study().name(),
        config_hash: &hash,
        config: cfg,
        outputs: report.tables.iter().map(|t| t.file.as_str()).collect(),
        checks: &report.checks,
        passed: report.passed(),
    };
    std::fs::write(dir.join("manifest.json"), to_canonical_json(&manifest)?)?;
    Ok(dir)
}

/// Exit status for a library error: configuration problems are usage errors.
pub fn error_exit_code(e: &LabError) -> i32 {
    match e {
        LabError::InvalidParameter(_) | LabError::GridMismatch | LabError::Json(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// The smooth observable of the Trotter study.
pub fn trotter_observable(grid: &Arc<PhaseGrid>) -> DualObservable {
    let a = 2.0 * PI / grid.box_len;
    let d = grid.dim;
    DualObservable::from_fn(grid.clone(), move |x, xi| {
        (a * x[0]).sin() * (a * x[d - 1]).cos() + 0.5 * (a * (x[0] + x[d - 1])).cos() * (1.0 + xi[0]) + xi[d - 1] * xi[d - 1]
    })
}

fn trotter_study(c: &TrotterConfig) -> Result<StudyReport> {
    let g = PhaseGrid::new(&c.grid)?;
    let ev = BoltzmannEvolver::new(ScatteringData::new(g.clone(), c.profile.clone())?, c.transport);
    let st = ev.trotter_error_study(&trotter_observable(&g), c.total_time, &c.n_ladder)?;
    let mut t = Table::new("trotter.csv", &["steps", "tau", "error", "reference_steps"]);
    for (n, e) in st.steps.iter().zip(&st.errors) {
        t.rows.push(vec![n.to_string(), num(c.total_time / *n as f64), num(*e), st.reference_steps.to_string()]);
    }
    let ok = st.slope >= c.slope_band[0] && st.slope <= c.slope_band[1];
    let check = Check::new(
        "trotter_slope",
        ok,
        format!("log-log slope {:.4} against band [{}, {}]", st.slope, c.slope_band[0], c.slope_band[1]),
    );
    Ok(StudyReport { tables: vec![t], checks: vec![check] })
}

fn mollifier_study(c: &MollifierConfig) -> Result<StudyReport> {
    let scalar = mollifier_convergence_study(&c.test_function, &c.zetas, (c.window[0], c.window[1]), c.n_eval)?;
    let rate = c_zeta_convergence(&c.profile, &c.xi, &c.zetas)?;
    let mut t = Table::new("mollifier.csv", &["family", "zeta", "sup_error", "sup_error_d1"]);
    let mut checks = Vec::new();
    for (name, st) in [("scalar_convolution", &scalar), ("collision_rate", &rate)] {
        push_mollifier_rows(&mut t, name, st);
        let ok = st.slope >= c.slope_band[0] && st.slope <= c.slope_band[1];
        checks.push(Check::new(
            &format!("{name}_slope"),
            ok,
            format!("log-log slope {:.4} against band [{}, {}]", st.slope, c.slope_band[0], c.slope_band[1]),
        ));
    }
    Ok(StudyReport { tables: vec![t], checks })
}

fn push_mollifier_rows(t: &mut Table, name: &str, st: &MollifierStudy) {
    for r in &st.rows {
        t.rows.push(vec![name.into(), num(r.zeta), num(r.sup_error), num(r.sup_error_d1.unwrap_or(f64::NAN))]);
    }
}

fn short_time_study(c: &ShortTimeConfig) -> Result<StudyReport> {
    let rows = short_time_comparison(c)?;
    let mut t = Table::new("short_time.csv", &["h", "eps", "t", "m_app", "m_boltzmann", "D", "E6_shape", "imag_residue"]);
    for r in &rows {
        t.rows.push(vec![num(r.h), num(r.eps), num(r.t), num(r.m_app), num(r.m_boltzmann), num(r.d), num(r.e6_shape), num(r.imag_residue)]);
    }
    let ds: Vec<f64> = rows.iter().map(|r| r.d).collect();
    let ok = ds.windows(2).all(|w| w[1] < w[0]);
    let check = Check::new("short_time_monotone", ok, format!("D(h) along the ladder: {}", ds.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ")));
    Ok(StudyReport { tables: vec![t], checks: vec![check] })
}

fn renewal_study(c: &RenewalConfig) -> Result<StudyReport> {
    let rows = renewal_trend(c)?;
    let mut t = Table::new(
        "renewal.csv",
        &["h", "intervals", "dt", "total_time", "tv", "backscatter_mc", "backscatter_se", "backscatter_boltzmann"],
    );
    for r in &rows {
        t.rows.push(vec![
            num(r.h),
            r.intervals.to_string(),
            num(r.dt),
            num(r.total_time),
            num(r.tv),
            num(r.backscatter_mc),
            num(r.backscatter_se),
            num(r.backscatter_boltzmann),
        ]);
    }
    let tv: Vec<f64> = rows.iter().map(|r| r.tv).collect();
    let ok = tv.windows(2).all(|w| w[1] < w[0]);
    let check = Check::new("renewal_trend", ok, format!("trend check only; TV along the ladder: {tv:.4?}"));
    Ok(StudyReport { tables: vec![t], checks: vec![check] })
}

/// Initial density of the trajectory study: a spatial cosine times an
/// anisotropic angular profile (first and second harmonics).
pub fn trajectory_initial(grid: &Arc<PhaseGrid>) -> Result<PhaseMeasure> {
    let a = 2.0 * PI / grid.box_len;
    let d = grid.dim;
    PhaseMeasure::from_fn(grid.clone(), move |x, xi| {
        let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (c1, c2) = (xi[0] / r, xi[d - 1] / r);
        let second = if d >= 2 { 0.3 * 2.0 * c1 * c2 } else { 0.0 };
        (1.0 + 0.5 * (a * x[0]).cos()) * (1.0 + 0.6 * c1 + second)
    })
}

/// Decay rate of the angular anisotropy, fitted on the second half of the rows.
pub fn fitted_relaxation_rate(rows: &[TrajectoryRow]) -> f64 {
    let tmax = rows.last().map_or(0.0, |r| r.time);
    let late: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.time >= 0.5 * tmax && r.anisotropy > 0.0).collect();
    if late.len() < 2 {
        return f64::NAN;
    }
    let ts: Vec<f64> = late.iter().map(|r| r.time).collect();
    let ls: Vec<f64> = late.iter().map(|r| r.anisotropy.ln()).collect();
    -linear_slope(&ts, &ls)
}

/// Snapshot series of a primal evolution; writes `step_NNNNNN.{bin,json}` into
/// `snapshot_dir` when given.
pub fn boltzmann_trajectory(c: &TrajectoryConfig, snapshot_dir: Option<&Path>) -> Result<StudyReport> {
    let g = PhaseGrid::new(&c.grid)?;
    let sd = ScatteringData::new(g.clone(), c.profile.clone())?;
    let gap = (0..g.shells.len()).map(|m| spectral_gap(&sd, m)).fold(f64::INFINITY, f64::min);
    let ev = BoltzmannEvolver::new(sd, c.transport);
    let tau = c.total_time / c.steps as f64;
    let mut mu = trajectory_initial(&g)?;
    if let Some(dir) = snapshot_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut rows = vec![TrajectoryRow::of(0, 0.0, &mu)];
    let mut step = 0;
    while step < c.steps {
        let k = c.every.min(c.steps - step);
        mu = ev.primal_evolve(&mu, k as f64 * tau, k, c.scheme)?;
        step += k;
        let time = step as f64 * tau;
        rows.push(TrajectoryRow::of(step, time, &mu));
        if let Some(dir) = snapshot_dir {
            write_snapshot(&dir.join(format!("step_{step:06}")), "measure", time, &g, mu.values())?;
        }
    }

    let nshell = g.shells.len();
    let mut header = vec!["step", "time", "mass", "min_value", "anisotropy"];
    let shell_cols: Vec<String> = (0..nshell).map(|m| format!("shell_{m}")).collect();
    header.extend(shell_cols.iter().map(|s| s.as_str()));
    let mut traj = Table::new("trajectory.csv", &header);
    for r in &rows {
        let mut line = vec![r.step.to_string(), num(r.time), num(r.mass), num(r.min_value), num(r.anisotropy)];
        line.extend(r.shell_marginals.iter().map(|&x| num(x)));
        traj.rows.push(line);
    }

    let m0 = rows[0].mass;
    let drift = rows.iter().map(|r| (r.mass - m0).abs()).fold(0.0, f64::max);
    let mut checks = vec![Check::new(
        "mass_conservation",
        drift <= c.mass_tolerance,
        format!("max |mass − mass₀| = {drift:.3e}, tolerance {:.1e}", c.mass_tolerance),
    )];
    let shell_drift = rows
        .iter()
        .flat_map(|r| r.shell_marginals.iter().zip(&rows[0].shell_marginals).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "shell_decoupling",
        shell_drift <= c.mass_tolerance,
        format!("max per-shell mass change {shell_drift:.3e}"),
    ));
    if c.scheme == PrimalScheme::PositivitySplit {
        let min = rows.iter().map(|r| r.min_value).fold(f64::INFINITY, f64::min);
        checks.push(Check::new("positivity", min >= 0.0, format!("minimum value {min:e}")));
    }

    let rate = fitted_relaxation_rate(&rows);
    let mut relax = Table::new("relaxation.csv", &["spectral_gap", "fitted_rate", "gap_time", "relaxation_time", "relative_error"]);
    let rel = (rate / gap - 1.0).abs();
    relax.rows.push(vec![num(gap), num(rate), num(1.0 / gap), num(1.0 / rate), num(rel)]);
    if gap > 0.0 {
        checks.push(Check::new(
            "relaxation_time",
            rel <= c.relaxation_tolerance,
            format!("fitted {:.5} vs 1/gap {:.5} (relative {rel:.2e})", 1.0 / rate, 1.0 / gap),
        ));
    }
    Ok(StudyReport { tables: vec![traj, relax], checks })
}

fn field_check_study(c: &FieldCheckConfig, seed: u64) -> Result<StudyReport> {
    let lat = Lattice::new(c.dim, c.n, c.box_len)?;
    let sampler = FieldSampler::new(lat, &c.profile, c.h, seed)?;
    let rows = covariance_check(&sampler, c.axis, &c.lags, c.samples)?;
    let mut t = Table::new("field_check.csv", &["axis", "lag", "empirical", "se", "exact", "z"]);
    for r in &rows {
        t.rows.push(vec![c.axis.to_string(), r.lag.to_string(), num(r.empirical), num(r.se), num(r.exact), num(r.z)]);
    }
    let zmax = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    let check = Check::new(
        "field_covariance",
        zmax <= c.z_max,
        format!("largest |empirical − exact| / SE = {zmax:.3} over {} lags", rows.len()),
    );
    Ok(StudyReport { tables: vec![t], checks: vec![check] })
}

fn fock_oracle_study(c: &FockOracleConfig) -> Result<StudyReport> {
    // α and the step count do not enter the kernel
    let sc = QuantumScales::new(c.h, c.eps, 0.8, 1, 1)?;
    let grid = EtaGrid::from_nodes(1, c.eta_nodes.clone(), c.eta_weights.clone())?;
    let fock = FockTruncation::new(grid.len(), c.n_max, c.eps)?;
    let entry = Complex64::new(c.entry[0], c.entry[1]);
    let f1 = coherent_parameter(&grid, &c.profile, &sc, &[c.xi_a], c.t)?;
    let f2 = coherent_parameter(&grid, &c.profile, &sc, &[c.xi_b], c.t)?;
    let mut t = Table::new("fock_oracle.csv", &["case", "px", "kernel_re", "kernel_im", "oracle_re", "oracle_im", "abs_error"]);
    let mut push = |case: &str, px: f64, k: Complex64, o: Complex64| -> f64 {
        let e = (k - o).norm();
        t.rows.push(vec![case.into(), num(px), num(k.re), num(k.im), num(o.re), num(o.im), num(e)]);
        e
    };
    let mut worst = 0.0f64;
    for &px in &c.px {
        let k = measurement_kernel(&grid, &f1, &f2, &[px], entry, c.eps);
        let phase = Complex64::from_polar(1.0, -(f1.omega - f2.omega) / c.eps);
        let o = phase * entry * fock.overlap(&grid, &f1.z, &f2.z, &[px])?;
        worst = worst.max(push("kernel", px, k, o));
    }
    let mut degenerate = 0.0f64;
    let k = measurement_kernel(&grid, &f1, &f1, &[0.0], entry, c.eps);
    degenerate = degenerate.max(push("self_overlap", 0.0, k, entry));
    let fs = fock.overlap(&grid, &f1.z, &f1.z, &[0.0])?;
    degenerate = degenerate.max(push("fock_self_overlap", 0.0, fs, Complex64::new(1.0, 0.0)));
    let g1 = coherent_parameter(&grid, &c.profile, &sc, &[c.xi_a], 0.0)?;
    let g2 = coherent_parameter(&grid, &c.profile, &sc, &[c.xi_b], 0.0)?;
    for &px in &c.px {
        let k = measurement_kernel(&grid, &g1, &g2, &[px], entry, c.eps);
        degenerate = degenerate.max(push("zero_time", px, k, entry));
    }
    let checks = vec![
        Check::new("fock_agreement", worst <= c.tolerance, format!("max |K − oracle| = {worst:.3e}, tolerance {:.1e}", c.tolerance)),
        Check::new(
            "degenerate_cases",
            degenerate <= c.degenerate_tolerance,
            format!("self-overlap and t = 0 max error {degenerate:.3e}, tolerance {:.1e}", c.degenerate_tolerance),
        ),
    ];
    Ok(StudyReport { tables: vec![t], checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for s in Study::ALL {
            let cfg = ExperimentConfig::defaults(s);
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), text);
            assert_eq!(back.study(), s);
        }
    }

    #[test]
    fn merge_rules() {
        let cfg = ExperimentConfig::resolve(Study::Trotter, Some(r#"{"grid": {"nx": 16}, "n_ladder": [4, 8]}"#), Some(5), None).unwrap();
        let StudyConfig::Trotter(t) = &cfg.params else { panic!() };
        assert_eq!(t.grid.nx, 16);
        assert_eq!(t.grid.angular, 32);
        assert_eq!(t.n_ladder, vec![4, 8]);
        assert_eq!(cfg.seed, 5);
        let r = ExperimentConfig::resolve(Study::Trotter, Some(r#"{"grdi": {}}"#), None, None);
        assert!(matches!(r, Err(LabError::InvalidParameter(_))));
        let r = ExperimentConfig::resolve(Study::Trotter, Some(r#"{"study": "renewal"}"#), None, None);
        assert!(matches!(r, Err(LabError::InvalidParameter(_))));
        let r = ExperimentConfig::resolve(Study::Renewal, Some(r#"{"alpha": 0.7}"#), None, None);
        assert!(matches!(r, Err(LabError::InvalidParameter(_))));
        let p = ExperimentConfig::resolve(Study::FieldCheck, Some(r#"{"profile": {"kind": "constant", "amplitude": 1.0}}"#), None, None)
            .unwrap();
        let StudyConfig::FieldCheck(f) = &p.params else { panic!() };
        assert_eq!(f.profile, Profile::Constant { amplitude: 1.0 });
    }

    #[test]
    fn ladders_must_be_monotone() {
        for (s, j) in [
            (Study::Trotter, r#"{"n_ladder": []}"#),
            (Study::Trotter, r#"{"n_ladder": [16, 8]}"#),
            (Study::Mollifier, r#"{"zetas": [0.01, 0.1]}"#),
            (Study::ShortTime, r#"{"hs": []}"#),
            (Study::Renewal, r#"{"hs": [0.1, 0.1]}"#),
        ] {
            assert!(matches!(ExperimentConfig::resolve(s, Some(j), None, None), Err(LabError::InvalidParameter(_))), "{j}");
        }
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::resolve(Study::FieldCheck, None, None, Some("x".into())).unwrap();
        let b = ExperimentConfig::resolve(Study::FieldCheck, None, None, Some("y".into())).unwrap();
        let c = ExperimentConfig::resolve(Study::FieldCheck, None, Some(3), Some("y".into())).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 16);
    }

    #[test]
    fn renewal_seed_follows_the_run_seed() {
        let cfg = ExperimentConfig::resolve(Study::Renewal, None, Some(99), None).unwrap();
        let StudyConfig::Renewal(r) = &cfg.params else { panic!() };
        assert_eq!(r.seed, 99);
    }
}
