//! Configuration-driven verification runs: parse a TOML config, build the
//! scenario, execute the requested checks and emit a JSON report plus CSV
//! tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{
    boundary, check_relative_invariant, check_tube_of_solutions, solution_tube_with, Chain, InvariantOptions,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expr::Expr;
use crate::field::VectorField;
use crate::flow::StepRule;
use crate::form::{spatial_exterior_derivative, DifferentialForm};
use crate::geometry::{directed_hausdorff, orthonormalize};
use crate::kernel::{
    check_lines_move_with_fluid, check_surface_advection, check_tube_strength, dimension_report, frobenius_residual,
    kernel_angle, kernel_at, trace_integral_surface, LineAdvectionOptions, SurfaceAdvectionOptions, SurfaceOptions,
    TubeOptions, TubeSpec,
};
use crate::scenario::{self, bernoulli_checks, stationary_euler_residual, BernoulliOptions, Scenario};
use crate::space::Space;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Bumped whenever a CSV column changes.
pub const CSV_SCHEMA: u32 = 1;
pub const DEFAULT_SEED: u64 = 7;
/// Default Gauss points per axis on tube cross-sections and solution tubes.
const TUBE_QUAD_ORDER: usize = 6;
/// Flow steps for sweeping whole chains; the fields involved are smooth.
const COARSE_RULE: StepRule = StepRule { max_step: 1e-2, min_steps: 10 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    EulerResidual,
    Bernoulli,
    Kelvin,
    HelmholtzLines,
    TubeStrength,
    KernelDims,
    Frobenius,
    TubeOfSolutions,
    SurfaceAdvect,
}

impl CheckName {
    pub const ALL: [CheckName; 9] = [
        CheckName::EulerResidual,
        CheckName::Bernoulli,
        CheckName::Kelvin,
        CheckName::HelmholtzLines,
        CheckName::TubeStrength,
        CheckName::KernelDims,
        CheckName::Frobenius,
        CheckName::TubeOfSolutions,
        CheckName::SurfaceAdvect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::EulerResidual => "euler_residual",
            CheckName::Bernoulli => "bernoulli",
            CheckName::Kelvin => "kelvin",
            CheckName::HelmholtzLines => "helmholtz_lines",
            CheckName::TubeStrength => "tube_strength",
            CheckName::KernelDims => "kernel_dims",
            CheckName::Frobenius => "frobenius",
            CheckName::TubeOfSolutions => "tube_of_solutions",
            CheckName::SurfaceAdvect => "surface_advect",
        }
    }

    pub fn parse(name: &str) -> Result<CheckName> {
        CheckName::ALL
            .into_iter()
            .find(|c| c.as_str() == name)
            .ok_or_else(|| Error::UnknownCheck { name: name.to_string(), suggestions: suggest(name) })
    }

    /// What the check verifies and what it measures.
    pub fn describe(self) -> &'static str {
        match self {
            CheckName::EulerResidual => {
                "Euler equations in exterior form. Steady flows: max |i_v dv + dE| over random points, \
                 where v is the velocity 1-form and E = v^2/2 + P + Phi. Unsteady flows: the same with \
                 the time derivative of v added. Constructed systems: |i_v d alpha - d beta|. Also checks \
                 that i_xi d sigma and the decomposed residual vanish together on M x R."
            }
            CheckName::Bernoulli => {
                "Bernoulli theorems for steady solutions: E is constant along streamlines (v . grad E = 0) \
                 and along vortex lines, and uniform throughout irrotational or Beltrami flows."
            }
            CheckName::Kelvin => {
                "Kelvin circulation theorem: the integral of the velocity 1-form (or alpha) around a circle \
                 carried by the flow is constant in time. Time-dependent systems integrate sigma = \
                 alpha + dt ^ beta around a circle moved by xi = d/dt + v."
            }
            CheckName::HelmholtzLines => {
                "Helmholtz line theorem: a vortex line (integral curve of the kernel of dv) advected by the \
                 flow is again a vortex line. Reports the line residual of the advected curve and its \
                 Hausdorff distance to the line retraced from the advected seed."
            }
            CheckName::TubeStrength => {
                "Helmholtz tube theorem and its higher-degree generalisation: the flux of d alpha through a \
                 transversal cross-section is unchanged when the section slides along the kernel of d alpha."
            }
            CheckName::KernelDims => {
                "Dimension of the distribution D = ker d alpha: rank by SVD at sample points, constancy of \
                 rank, the bound dim D <= n - degree, and the principal angles between ker(d sigma, dt) \
                 and ker(d_hat alpha_hat, dt) on M x R."
            }
            CheckName::Frobenius => {
                "Frobenius integrability of D: the component of Lie brackets of frame fields of D that \
                 leaves D, at sample points."
            }
            CheckName::TubeOfSolutions => {
                "Poincare-Cartan invariant: two cycles around one tube of integral curves of xi, related by \
                 point-dependent time offsets, give the same integral of sigma, and d sigma integrates to \
                 zero over the swept surface between them."
            }
            CheckName::SurfaceAdvect => {
                "Integral surfaces of D move with the flow: builds a surface tangent to D, pushes it \
                 forward and measures how far the image leaves D."
            }
        }
    }
}

impl std::fmt::Display for CheckName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn suggest(name: &str) -> Vec<String> {
    let mut scored: Vec<(usize, &str)> = CheckName::ALL
        .iter()
        .map(|c| (strsim::levenshtein(name, c.as_str()), c.as_str()))
        .filter(|(d, c)| *d <= 3 || c.starts_with(name) || (!name.is_empty() && c.contains(name)))
        .collect();
    scored.sort();
    if scored.is_empty() {
        return CheckName::ALL.iter().map(|c| c.as_str().to_string()).collect();
    }
    scored.into_iter().map(|(_, c)| c.to_string()).collect()
}

/// Text description of a check, or suggestions for a misspelt name.
pub fn describe(check: &str) -> Result<String> {
    let c = CheckName::parse(check)?;
    Ok(format!("{}: {}", c.as_str(), c.describe()))
}

/// Scenario names with one-line summaries.
pub fn list_scenarios() -> Vec<(&'static str, &'static str)> {
    scenario::catalog()
}

/// Number given either literally or as a constant expression such as
/// `"pi/4"` or `"2*sqrt(2)"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNum", into = "f64")]
pub struct Num(pub f64);

#[derive(Deserialize)]
#[serde(untagged)]
enum RawNum {
    Int(i64),
    Float(f64),
    Expr(String),
}

impl TryFrom<RawNum> for Num {
    type Error = String;

    fn try_from(raw: RawNum) -> std::result::Result<Self, String> {
        let v = match raw {
            RawNum::Int(i) => i as f64,
            RawNum::Float(f) => f,
            RawNum::Expr(s) => Expr::constant(&s).map_err(|e| format!("{s:?}: {e}"))?,
        };
        if v.is_finite() {
            Ok(Num(v))
        } else {
            Err(format!("{v} is not a finite number"))
        }
    }
}

impl From<Num> for f64 {
    fn from(n: Num) -> f64 {
        n.0
    }
}

/// Per-check settings. Each check reads the keys that apply to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Section {
    pub tolerance: Option<Num>,
    /// Advection time, tube slide length or tube-of-solutions duration.
    pub t: Option<Num>,
    /// Time samples for Kelvin.
    pub samples: Option<usize>,
    /// Random sample points.
    pub points: Option<usize>,
    /// Circle radius for Kelvin.
    pub radius: Option<Num>,
    /// Coordinate plane of the Kelvin circle; defaults to the scenario's.
    pub plane: Option<[usize; 2]>,
    /// Vortex line length or streamline duration.
    pub length: Option<Num>,
    /// Edge length of transversal boxes.
    pub size: Option<Num>,
    /// Half-width of integral surfaces in each frame direction.
    pub extent: Option<Num>,
    /// Seed point; defaults to the scenario anchor.
    pub center: Option<Vec<Num>>,
    /// Required kernel dimension for `kernel_dims`.
    pub expect_dim: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub checks: Vec<CheckName>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Overrides every per-check tolerance.
    #[serde(default)]
    pub tolerance: Option<Num>,
    #[serde(default)]
    pub quad_order: Option<usize>,
    #[serde(default)]
    pub sequential: bool,
    #[serde(default)]
    pub params: BTreeMap<String, Num>,
    #[serde(default)]
    pub euler_residual: Section,
    #[serde(default)]
    pub bernoulli: Section,
    #[serde(default)]
    pub kelvin: Section,
    #[serde(default)]
    pub helmholtz_lines: Section,
    #[serde(default)]
    pub tube_strength: Section,
    #[serde(default)]
    pub kernel_dims: Section,
    #[serde(default)]
    pub frobenius: Section,
    #[serde(default)]
    pub tube_of_solutions: Section,
    #[serde(default)]
    pub surface_advect: Section,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub quad_order: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(scenario: &str, checks: &[CheckName]) -> Self {
        Self {
            scenario: scenario.to_string(),
            checks: checks.to_vec(),
            seed: DEFAULT_SEED,
            out_dir: None,
            tolerance: None,
            quad_order: None,
            sequential: false,
            params: BTreeMap::new(),
            euler_residual: Section::default(),
            bernoulli: Section::default(),
            kelvin: Section::default(),
            helmholtz_lines: Section::default(),
            tube_strength: Section::default(),
            kernel_dims: Section::default(),
            frobenius: Section::default(),
            tube_of_solutions: Section::default(),
            surface_advect: Section::default(),
        }
    }

    /// Parses TOML; errors carry the line and column.
    pub fn parse(src: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::parse(&src).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.tolerance {
            self.tolerance = Some(Num(t));
        }
        if let Some(q) = o.quad_order {
            self.quad_order = Some(q);
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = Some(d.clone());
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.checks.is_empty() {
            return Err(Error::Config("no checks requested".into()));
        }
        for (i, c) in self.checks.iter().enumerate() {
            if self.checks[..i].contains(c) {
                return Err(Error::Config(format!("check {c} listed twice")));
            }
        }
        if let Some(q) = self.quad_order {
            if q == 0 {
                return Err(Error::Config("quad_order must be positive".into()));
            }
        }
        let mut tols = vec![("tolerance".to_string(), self.tolerance)];
        for c in CheckName::ALL {
            tols.push((format!("{c}.tolerance"), self.section(c).tolerance));
        }
        for (key, t) in tols {
            if let Some(Num(t)) = t {
                if t <= 0.0 {
                    return Err(Error::Config(format!("{key} must be positive, got {t}")));
                }
            }
        }
        Ok(())
    }

    pub fn section(&self, c: CheckName) -> &Section {
        match c {
            CheckName::EulerResidual => &self.euler_residual,
            CheckName::Bernoulli => &self.bernoulli,
            CheckName::Kelvin => &self.kelvin,
            CheckName::HelmholtzLines => &self.helmholtz_lines,
            CheckName::TubeStrength => &self.tube_strength,
            CheckName::KernelDims => &self.kernel_dims,
            CheckName::Frobenius => &self.frobenius,
            CheckName::TubeOfSolutions => &self.tube_of_solutions,
            CheckName::SurfaceAdvect => &self.surface_advect,
        }
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }
}

/// Checks that make sense for a scenario, in canonical order.
pub fn applicable_checks(s: &Scenario) -> Vec<CheckName> {
    let steady = !s.is_time_dependent();
    let steady_fluid = s.fluid.as_ref().is_some_and(|f| f.steady);
    let k = s.system.degree();
    let n = s.system.alpha.space().spatial_dim();
    let kernel_dim = kernel_at(&s.system.dalpha, &s.anchor, &constraints_for(s)).map(|f| f.dim()).unwrap_or(0);
    CheckName::ALL
        .into_iter()
        .filter(|c| match c {
            CheckName::Bernoulli => steady_fluid,
            CheckName::Kelvin => k == 1,
            CheckName::HelmholtzLines => steady && kernel_dim == 1 && n == 3,
            CheckName::TubeStrength => steady && kernel_dim >= 1,
            CheckName::SurfaceAdvect => kernel_dim >= 1,
            CheckName::TubeOfSolutions => k < n,
            CheckName::KernelDims => s.constant_rank,
            _ => true,
        })
        .collect()
}

fn constraints_for(s: &Scenario) -> Vec<DifferentialForm> {
    if s.is_time_dependent() {
        DifferentialForm::dt(s.system.extended_space()).into_iter().collect()
    } else {
        Vec::new()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: CheckName,
    pub pass: bool,
    pub tolerance: f64,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
    pub elapsed_ms: f64,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub engine_version: String,
    pub scenario: String,
    pub description: String,
    pub constructed: bool,
    pub seed: u64,
    pub config: RunConfig,
    pub checks: Vec<CheckOutcome>,
    pub pass: bool,
}

/// CSV table with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Artifact {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn with_coords(name: &str, leading: &[&str], dim: usize, trailing: &[&str]) -> Self {
        let mut header: Vec<String> = leading.iter().map(|h| h.to_string()).collect();
        header.extend((0..dim).map(|i| format!("x{i}")));
        header.extend(trailing.iter().map(|h| h.to_string()));
        Self { name: name.to_string(), header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Comment line with the engine version, header, rows; LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# cartan-core {ENGINE_VERSION} csv-schema {CSV_SCHEMA}\n");
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Shortest round-trip scientific notation, so that equal values always
/// print identically.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:e}")
    }
}

fn fmt_row(leading: &[String], xs: &[f64]) -> Vec<String> {
    leading.iter().cloned().chain(xs.iter().map(|x| fmt_num(*x))).collect()
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    /// Writes `report.json` and every CSV into `dir`, each via a temporary
    /// file and a rename.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for a in &self.artifacts {
            written.push(write_atomic(dir, &a.name, a.to_csv().as_bytes())?);
        }
        let mut json = serde_json::to_string_pretty(&self.report).map_err(|e| Error::Io(e.to_string()))?;
        json.push('\n');
        written.push(write_atomic(dir, "report.json", json.as_bytes())?);
        Ok(written)
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, &target)?;
    Ok(target)
}

/// Builds the scenario (self-checks included) and runs every requested
/// check. Check failures are recorded in the report; only configuration and
/// scenario errors abort the run.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let params: BTreeMap<String, f64> = config.params.iter().map(|(k, v)| (k.clone(), v.0)).collect();
    let sc = scenario::build(&config.scenario, &params)?;
    let exec = config.exec();
    let results = exec.map(&config.checks, |&c| {
        let ctx = Ctx { sc: &sc, cfg: config, check: c, exec };
        let start = Instant::now();
        let r = ctx.run();
        (c, r, start.elapsed().as_secs_f64() * 1e3)
    });
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    for (check, r, elapsed_ms) in results {
        let outcome = match r {
            Ok(done) => {
                let names = done.artifacts.iter().map(|a| a.name.clone()).collect();
                artifacts.extend(done.artifacts);
                CheckOutcome {
                    check,
                    pass: done.pass,
                    tolerance: done.tolerance,
                    metrics: done.metrics,
                    error: None,
                    elapsed_ms,
                    artifacts: names,
                }
            }
            Err(e) => CheckOutcome {
                check,
                pass: false,
                tolerance: f64::NAN,
                metrics: BTreeMap::new(),
                error: Some(e.to_string()),
                elapsed_ms,
                artifacts: Vec::new(),
            },
        };
        checks.push(outcome);
    }
    let pass = checks.iter().all(|c| c.pass);
    let report = RunReport {
        engine_version: ENGINE_VERSION.to_string(),
        scenario: sc.name.clone(),
        description: sc.description.clone(),
        constructed: sc.constructed,
        seed: config.seed,
        config: config.clone(),
        checks,
        pass,
    };
    Ok(RunOutput { report, artifacts })
}

/// One line per check, for terminal output.
pub fn summary(report: &RunReport) -> String {
    let mut out = String::new();
    let tag = if report.constructed { " (constructed example)" } else { "" };
    let _ = writeln!(out, "scenario {}{tag}", report.scenario);
    for c in &report.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        match &c.error {
            Some(e) => {
                let _ = writeln!(out, "{verdict} {:<18} error: {e}", c.check.as_str());
            }
            None => {
                let metrics: Vec<String> = c.metrics.iter().map(|(k, v)| format!("{k}={v:.3e}")).collect();
                let _ =
                    writeln!(out, "{verdict} {:<18} tol={:.1e} {}", c.check.as_str(), c.tolerance, metrics.join(" "));
            }
        }
    }
    out
}

struct Done {
    pass: bool,
    tolerance: f64,
    metrics: BTreeMap<String, f64>,
    artifacts: Vec<Artifact>,
}

struct Ctx<'a> {
    sc: &'a Scenario,
    cfg: &'a RunConfig,
    check: CheckName,
    exec: Exec,
}

fn metrics(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

impl Ctx<'_> {
    fn section(&self) -> &Section {
        self.cfg.section(self.check)
    }

    fn tol(&self, default: f64) -> f64 {
        self.cfg.tolerance.or(self.section().tolerance).map_or(default, |n| n.0)
    }

    fn num(&self, v: Option<Num>, default: f64) -> f64 {
        v.map_or(default, |n| n.0)
    }

    fn rng(&self) -> ChaCha8Rng {
        let idx = CheckName::ALL.iter().position(|c| *c == self.check).unwrap_or(0) as u64;
        ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(idx))
    }

    fn base_points(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        let mut rng = self.rng();
        (0..n).map(|_| self.sc.sample_base(&mut rng, 0.05)).collect()
    }

    fn extended_points(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        let mut rng = self.rng();
        (0..n).map(|_| self.sc.sample_extended(&mut rng, 0.05)).collect()
    }

    /// Seed on the base space.
    fn center(&self) -> Result<Vec<f64>> {
        let c = match &self.section().center {
            Some(c) => c.iter().map(|n| n.0).collect(),
            None => self.sc.anchor.clone(),
        };
        let dim = self.sc.system.alpha.dim();
        if c.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: c.len() });
        }
        Ok(c)
    }

    fn quad(&self, c: Chain) -> Chain {
        match self.cfg.quad_order {
            Some(q) => c.with_quad_order(q),
            None => c,
        }
    }

    fn require_steady(&self) -> Result<()> {
        if self.sc.is_time_dependent() {
            return Err(Error::InvalidArgument(format!("{} needs a steady system", self.check)));
        }
        Ok(())
    }

    fn run(&self) -> Result<Done> {
        match self.check {
            CheckName::EulerResidual => self.euler_residual(),
            CheckName::Bernoulli => self.bernoulli(),
            CheckName::Kelvin => self.kelvin(),
            CheckName::HelmholtzLines => self.helmholtz_lines(),
            CheckName::TubeStrength => self.tube_strength(),
            CheckName::KernelDims => self.kernel_dims(),
            CheckName::Frobenius => self.frobenius(),
            CheckName::TubeOfSolutions => self.tube_of_solutions(),
            CheckName::SurfaceAdvect => self.surface_advect(),
        }
    }

    fn euler_residual(&self) -> Result<Done> {
        let sys = &self.sc.system;
        let steady_fluid = self.sc.fluid.as_ref().filter(|f| f.steady);
        let default_tol = if steady_fluid.is_some() { 1e-5 } else { self.sc.residual_tol.max(1e-6) };
        let tol = self.tol(default_tol);
        let n = self.section().points.unwrap_or(50);
        let pts = self.base_points(n)?;
        let residuals = self.exec.try_map(&pts, |x| match steady_fluid {
            Some(f) => Ok(stationary_euler_residual(f, x)?.norm()),
            None => Ok(sys.transport_residual(x)?.norm()),
        })?;
        let mut table = Artifact::with_coords("euler_residual.csv", &["index"], sys.alpha.dim(), &["residual"]);
        for (i, (x, r)) in pts.iter().zip(&residuals).enumerate() {
            let mut row = fmt_row(&[i.to_string()], x);
            row.push(fmt_num(*r));
            table.push(row);
        }
        let max_residual = residuals.iter().copied().fold(0.0, f64::max);

        let ext = self.extended_points(20)?;
        let samples = self.exec.try_map(&ext, |x| sys.equivalence_sample(x))?;
        let mut eq = Artifact::with_coords(
            "cartan_equivalence.csv",
            &["index"],
            sys.extended_space().dim(),
            &["cartan", "decomposed", "spatial_cartan", "together"],
        );
        let mut failures = 0usize;
        let mut gap = 0.0f64;
        for (i, s) in samples.iter().enumerate() {
            let together = s.vanish_together(tol);
            failures += usize::from(!together);
            gap = gap.max((s.spatial_cartan_norm - s.decomposed_norm).abs());
            let mut row = fmt_row(&[i.to_string()], &s.point);
            row.extend([s.cartan_norm, s.decomposed_norm, s.spatial_cartan_norm].map(fmt_num));
            row.push(u8::from(together).to_string());
            eq.push(row);
        }
        let max_cartan = samples.iter().map(|s| s.cartan_norm).fold(0.0, f64::max);
        Ok(Done {
            pass: max_residual < tol && failures == 0,
            tolerance: tol,
            metrics: metrics(&[
                ("max_residual", max_residual),
                ("max_cartan", max_cartan),
                ("spatial_gap", gap),
                ("equivalence_failures", failures as f64),
            ]),
            artifacts: vec![table, eq],
        })
    }

    fn bernoulli(&self) -> Result<Done> {
        let tol = self.tol(1e-5);
        let s = self.section();
        let opts = BernoulliOptions {
            seeds: s.points.unwrap_or(6),
            streamline_time: self.num(s.t, 1.0),
            line_length: self.num(s.length, 0.5),
            tolerance: tol,
            seed: self.cfg.seed,
            exec: self.exec,
        };
        let r = bernoulli_checks(self.sc, &opts)?;
        let mut table = Artifact::new("bernoulli.csv", &["quantity", "value"]);
        let mut m = vec![("streamline_max", r.streamline_max)];
        if let Some(v) = r.vortex_line_max {
            m.push(("vortex_line_max", v));
        }
        if let Some(v) = r.global_variation {
            m.push(("global_variation", v));
        }
        for (k, v) in &m {
            table.push(vec![k.to_string(), fmt_num(*v)]);
        }
        Ok(Done { pass: r.pass, tolerance: tol, metrics: metrics(&m), artifacts: vec![table] })
    }

    fn kelvin(&self) -> Result<Done> {
        let sys = &self.sc.system;
        if sys.degree() != 1 {
            return Err(Error::InvalidDegree(format!("kelvin integrates 1-forms, alpha has degree {}", sys.degree())));
        }
        let tol = self.tol(1e-6);
        let s = self.section();
        let radius = self.num(s.radius, 0.3);
        let ts = linspace(0.0, self.num(s.t, self.default_duration()), s.samples.unwrap_or(11));
        let center = self.center()?;
        let (v, a, space) = if sys.time_dependent {
            (&sys.xi, &sys.sigma, sys.extended_space().clone())
        } else {
            (&sys.v, &sys.alpha, sys.alpha.space().clone())
        };
        let plane = s.plane.map_or(self.sc.circulation_plane, |[a, b]| (a, b));
        let circle = self.quad(Chain::circle(&space, center, radius, plane, 8)?);
        let opts = InvariantOptions { tolerance: tol, exec: self.exec, ..Default::default() };
        let r = check_relative_invariant(v, a, &circle, &ts, &opts)?;
        let mut table = Artifact::new("kelvin.csv", &["t", "circulation", "drift"]);
        for s in &r.samples {
            table.push(vec![fmt_num(s.t), fmt_num(s.value), fmt_num(s.drift)]);
        }
        let mut m = vec![("max_drift", r.max_drift), ("circulation", r.samples[0].value)];
        if let Some(d) = r.differential_residual {
            m.push(("differential_residual", d));
        }
        Ok(Done { pass: r.pass, tolerance: tol, metrics: metrics(&m), artifacts: vec![table] })
    }

    /// Flow duration that stays inside the scenario's time window.
    fn default_duration(&self) -> f64 {
        if self.sc.is_time_dependent() {
            0.5 * (self.sc.time_range.1 - self.sc.time_range.0)
        } else {
            1.0
        }
    }

    fn helmholtz_lines(&self) -> Result<Done> {
        self.require_steady()?;
        let sys = &self.sc.system;
        let tol = self.tol(1e-4);
        let s = self.section();
        let t = self.num(s.t, 0.5);
        let length = self.num(s.length, 1.0);
        let opts = LineAdvectionOptions { tolerance: tol, exec: self.exec, ..Default::default() };
        let r = check_lines_move_with_fluid(&sys.v, &sys.dalpha, &self.center()?, t, length, &opts)?;
        let mut table = Artifact::with_coords("vortex_lines.csv", &["curve", "index"], sys.alpha.dim(), &["distance"]);
        for (label, line, other) in [("advected", &r.advected, &r.retraced), ("retraced", &r.retraced, &r.advected)] {
            for (i, p) in line.iter().enumerate() {
                let mut row = fmt_row(&[label.to_string(), i.to_string()], p);
                row.push(fmt_num(directed_hausdorff(std::slice::from_ref(p), other)));
                table.push(row);
            }
        }
        Ok(Done {
            pass: r.pass,
            tolerance: tol,
            metrics: metrics(&[("distance", r.distance), ("residual", r.residual), ("lie_residual", r.lie_residual)]),
            artifacts: vec![table],
        })
    }

    fn tube_strength(&self) -> Result<Done> {
        self.require_steady()?;
        let sys = &self.sc.system;
        let form = &sys.dalpha;
        let tol = self.tol(1e-6);
        let s = self.section();
        let size = self.num(s.size, 0.4);
        let slide = self.num(s.t, 0.5);
        let center = self.center()?;
        let frame = kernel_at(form, &center, &[])?;
        if frame.degenerate || frame.dim() == 0 {
            return Err(Error::KernelDimension { expected: 1, found: frame.dim(), point: center });
        }
        let kernel: Vec<Vec<f64>> = frame.basis.iter().map(|b| b.comps().to_vec()).collect();
        let n = center.len();
        let mut spanning = kernel.clone();
        spanning.extend((0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()));
        let complement: Vec<Vec<f64>> = orthonormalize(&spanning, 1e-8).split_off(kernel.len());
        if complement.len() != form.degree() {
            return Err(Error::InvalidDegree(format!(
                "cross-sections need {} transversal directions, the kernel leaves {}",
                form.degree(),
                complement.len()
            )));
        }
        let origin: Vec<f64> =
            (0..n).map(|i| center[i] - 0.5 * size * complement.iter().map(|c| c[i]).sum::<f64>()).collect();
        let edges: Vec<Vec<f64>> = complement.iter().map(|c| c.iter().map(|x| size * x).collect()).collect();
        let space = sys.alpha.space();
        // the flowed section is smooth, a modest rule per axis suffices
        let transversal = self.quad(Chain::parallelepiped(space, origin, edges)?.with_quad_order(TUBE_QUAD_ORDER));
        let seed_cycle = boundary(&transversal)?;
        let field = VectorField::kernel_frame(form, &[], kernel, 0)?;
        let tube = TubeSpec::new(seed_cycle, transversal, field)?;
        let opts = TubeOptions { tolerance: tol, exec: self.exec, ..Default::default() };
        let r = check_tube_strength(form, &tube, slide, &opts)?;
        let mut table = Artifact::new("tube_strength.csv", &["section", "s", "flux"]);
        table.push(vec!["start".into(), fmt_num(0.0), fmt_num(r.flux_start)]);
        table.push(vec!["end".into(), fmt_num(r.s), fmt_num(r.flux_end)]);
        Ok(Done {
            pass: r.pass,
            tolerance: tol,
            metrics: metrics(&[
                ("flux", r.flux_start),
                ("difference", r.difference),
                ("kernel_residual", r.kernel_residual),
            ]),
            artifacts: vec![table],
        })
    }

    /// The form whose kernel defines `D`, its constraints, and the matching
    /// sample points.
    fn distribution(&self, n: usize) -> Result<(DifferentialForm, Vec<DifferentialForm>, Vec<Vec<f64>>)> {
        let sys = &self.sc.system;
        if sys.time_dependent {
            Ok((sys.dsigma.clone(), constraints_for(self.sc), self.extended_points(n)?))
        } else {
            Ok((sys.dalpha.clone(), Vec::new(), self.base_points(n)?))
        }
    }

    fn kernel_dims(&self) -> Result<Done> {
        let sys = &self.sc.system;
        let tol = self.tol(1e-5);
        let s = self.section();
        let n = s.points.unwrap_or(20);
        let (form, cons, pts) = self.distribution(n)?;
        let dims = dimension_report(&form, &pts, &cons, self.exec)?;

        // ker(d sigma, dt) against ker(d_hat alpha_hat, dt) on M x R
        let ext = self.extended_points(n)?;
        let dt = constraints_for_extended(sys.extended_space())?;
        let dhat = spatial_exterior_derivative(&sys.alpha_hat)?;
        let angles = self.exec.try_map(&ext, |x| kernel_angle(&sys.dsigma, &dt, &dhat, &dt, x))?;
        let max_angle = angles.iter().copied().fold(0.0, f64::max);

        let mut table = Artifact::new("kernel_dims.csv", &["index", "rank", "kernel_dim", "degenerate", "angle"]);
        for (i, (r, a)) in dims.samples.iter().zip(&angles).enumerate() {
            table.push(vec![
                i.to_string(),
                r.rank_form.to_string(),
                r.kernel_dim.to_string(),
                u8::from(r.degenerate).to_string(),
                fmt_num(*a),
            ]);
        }
        let dim_ok = match (s.expect_dim, dims.kernel_dim) {
            (Some(e), Some(d)) => e == d,
            (Some(_), None) => false,
            (None, _) => true,
        };
        let pass = dims.constant_rank && dims.bound_holds && dim_ok && max_angle < tol;
        Ok(Done {
            pass,
            tolerance: tol,
            metrics: metrics(&[
                ("kernel_dim", dims.kernel_dim.map_or(-1.0, |d| d as f64)),
                ("bound", dims.bound as f64),
                ("bound_attained", f64::from(u8::from(dims.bound_attained))),
                ("constant_rank", f64::from(u8::from(dims.constant_rank))),
                ("max_angle", max_angle),
            ]),
            artifacts: vec![table],
        })
    }

    fn frobenius(&self) -> Result<Done> {
        let tol = self.tol(1e-6);
        let n = self.section().points.unwrap_or(20);
        let (form, cons, pts) = self.distribution(n)?;
        // where the form vanishes D is the whole tangent space, trivially integrable
        let residuals = self.exec.try_map(&pts, |x| match frobenius_residual(&form, x, &cons) {
            Ok(r) => Ok(Some(r)),
            Err(Error::DegenerateForm { .. }) => Ok(None),
            Err(e) => Err(e),
        })?;
        let mut table = Artifact::with_coords("frobenius.csv", &["index"], form.dim(), &["residual"]);
        for (i, (x, r)) in pts.iter().zip(&residuals).enumerate() {
            let mut row = fmt_row(&[i.to_string()], x);
            row.push(r.map_or_else(|| "degenerate".to_string(), fmt_num));
            table.push(row);
        }
        let max = residuals.iter().flatten().copied().fold(0.0, f64::max);
        let skipped = residuals.iter().filter(|r| r.is_none()).count();
        Ok(Done {
            pass: max < tol,
            tolerance: tol,
            metrics: metrics(&[("max_residual", max), ("degenerate_points", skipped as f64)]),
            artifacts: vec![table],
        })
    }

    fn tube_of_solutions(&self) -> Result<Done> {
        let sys = &self.sc.system;
        let tol = self.tol(1e-6);
        let s = self.section();
        let k = sys.degree();
        let ext_space = sys.extended_space();
        let n = ext_space.spatial_dim();
        if k + 1 > n {
            return Err(Error::InvalidDegree(format!("no {k}-cycles bounding a box in {n} dimensions")));
        }
        let size = self.num(s.size, 0.4);
        let duration = self.num(s.t, self.default_duration() / 1.25);
        let mut origin = self.center()?;
        if !sys.time_dependent {
            origin.push(0.0);
        }
        let axes: Vec<usize> = if k == 1 {
            let (a, b) = self.sc.circulation_plane;
            vec![a, b]
        } else {
            (0..=k).collect()
        };
        for &a in &axes {
            origin[a] -= 0.5 * size;
        }
        let edges: Vec<Vec<f64>> =
            axes.iter().map(|&a| (0..=n).map(|j| if a == j { size } else { 0.0 }).collect()).collect();
        let block = self.quad(Chain::parallelepiped(ext_space, origin, edges)?.with_quad_order(TUBE_QUAD_ORDER));
        let c1 = boundary(&block)?;
        // non-uniform offsets along the tube
        let offsets = move |x: &[f64]| duration * (1.0 + 0.25 * (x[0] + 2.0 * x[1]).sin());
        let tube = solution_tube_with(&sys.xi, &c1, offsets, COARSE_RULE)?;
        let opts = InvariantOptions {
            tolerance: tol,
            exec: self.exec,
            solution_tol: (10.0 * self.sc.residual_tol).max(1e-5),
            ..Default::default()
        };
        let r = check_tube_of_solutions(&sys.xi, &sys.sigma, &c1, &tube.c2, Some(&tube.sweep), &opts)?;
        let (i1, i2) = (r.samples[0].value, r.samples[1].value);
        let sweep = r.sweep_integral.unwrap_or(f64::NAN);
        let mut table = Artifact::new("tube_of_solutions.csv", &["quantity", "value"]);
        for (q, v) in [("c1", i1), ("c2", i2), ("difference", r.max_drift), ("sweep", sweep)] {
            table.push(vec![q.into(), fmt_num(v)]);
        }
        Ok(Done {
            pass: r.pass,
            tolerance: tol,
            metrics: metrics(&[
                ("integral", i1),
                ("difference", r.max_drift),
                ("sweep", sweep),
                ("solution_residual", r.differential_residual.unwrap_or(f64::NAN)),
            ]),
            artifacts: vec![table],
        })
    }

    fn surface_advect(&self) -> Result<Done> {
        let sys = &self.sc.system;
        let tol = self.tol(1e-5);
        let s = self.section();
        let extent = self.num(s.extent, 0.3);
        let t = self.num(s.t, self.default_duration().min(0.5));
        let cons = constraints_for(self.sc);
        let (form, v) = if sys.time_dependent { (&sys.dsigma, &sys.xi) } else { (&sys.dalpha, &sys.v) };
        let sopts = SurfaceOptions { constraints: cons.clone(), exec: self.exec, ..Default::default() };
        let surface = trace_integral_surface(form, &self.center()?, extent, &sopts)?;
        let aopts =
            SurfaceAdvectionOptions { constraints: cons, tolerance: tol, exec: self.exec, ..Default::default() };
        let r = check_surface_advection(v, form, &surface, t, &aopts)?;
        let dim = form.dim();
        let mut nodes = Artifact::with_coords("surface.csv", &["index"], dim, &["residual"]);
        for (i, node) in surface.nodes.iter().enumerate() {
            let mut row = fmt_row(&[i.to_string()], &node.point);
            row.push(fmt_num(node.residual));
            nodes.push(row);
        }
        let mut images = Artifact::with_coords("surface_advected.csv", &["index"], dim, &[]);
        for (i, p) in r.images.iter().enumerate() {
            images.push(fmt_row(&[i.to_string()], p));
        }
        Ok(Done {
            pass: r.pass && surface.complete,
            tolerance: tol,
            metrics: metrics(&[
                ("surface_dim", surface.dim as f64),
                ("surface_residual", surface.max_residual),
                ("frobenius", surface.frobenius),
                ("max_residual", r.max_residual),
                ("max_angle", r.max_angle),
            ]),
            artifacts: vec![nodes, images],
        })
    }
}

fn constraints_for_extended(space: &Space) -> Result<Vec<DifferentialForm>> {
    Ok(vec![DifferentialForm::dt(space)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_config_with_expressions() {
        let cfg = RunConfig::parse(
            r#"
            scenario = "abc"
            checks = ["kelvin", "helmholtz_lines"]
            seed = 3

            [params]
            a = "sqrt(2)"

            [kelvin]
            radius = "pi/10"
            samples = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.checks, vec![CheckName::Kelvin, CheckName::HelmholtzLines]);
        assert!((cfg.params["a"].0 - 2f64.sqrt()).abs() < 1e-15);
        assert!((cfg.kelvin.radius.unwrap().0 - std::f64::consts::PI / 10.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_check_is_rejected_at_parse_time_with_position() {
        let err = RunConfig::parse("scenario = \"abc\"\nchecks = [\"kelvn\"]\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("kelvn"), "{msg}");
    }

    #[test]
    fn unknown_keys_and_bad_tolerances_are_rejected() {
        assert!(RunConfig::parse("scenario = \"abc\"\nchecks = [\"kelvin\"]\nfoo = 1\n").is_err());
        assert!(RunConfig::parse("scenario = \"abc\"\nchecks = [\"kelvin\"]\n[kelvin]\nradus = 1\n").is_err());
        assert!(RunConfig::parse("scenario = \"abc\"\nchecks = [\"kelvin\"]\ntolerance = -1\n").is_err());
        assert!(RunConfig::parse("scenario = \"abc\"\nchecks = [\"kelvin\"]\n[kelvin]\ntolerance = 0\n").is_err());
        assert!(RunConfig::parse("scenario = \"abc\"\nchecks = [\"kelvin\", \"kelvin\"]\n").is_err());
        assert!(RunConfig::parse("scenario = \"abc\"\nchecks = []\n").is_err());
        assert!(RunConfig::parse("scenario = \"abc\"\nchecks = [\"kelvin\"]\ntolerance = \"1/0\"\n").is_err());
    }

    #[test]
    fn describe_and_suggestions() {
        assert!(describe("kelvin").unwrap().contains("circulation"));
        match describe("kelvn") {
            Err(Error::UnknownCheck { suggestions, .. }) => assert_eq!(suggestions[0], "kelvin"),
            other => panic!("{other:?}"),
        }
        match describe("tube") {
            Err(Error::UnknownCheck { suggestions, .. }) => {
                assert!(suggestions.contains(&"tube_strength".to_string()));
                assert!(suggestions.contains(&"tube_of_solutions".to_string()));
            }
            other => panic!("{other:?}"),
        }
        assert!(list_scenarios().len() >= 7);
    }

    #[test]
    fn csv_format_is_fixed() {
        let mut a = Artifact::new("x.csv", &["a", "b"]);
        a.push(vec!["1".into(), fmt_num(0.1)]);
        a.push(vec!["2".into(), fmt_num(-2.5e-12)]);
        let text = a.to_csv();
        assert_eq!(text, format!("# cartan-core {ENGINE_VERSION} csv-schema 1\na,b\n1,1e-1\n2,-2.5e-12\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn kelvin_on_abc_passes() {
        let out = run(&RunConfig::new("abc", &[CheckName::Kelvin])).unwrap();
        let c = &out.report.checks[0];
        assert!(c.pass, "{c:?}");
        assert!(c.metrics["max_drift"] < 1e-6);
    }

    #[test]
    fn helmholtz_lines_at_time_zero_are_identical() {
        let mut cfg = RunConfig::new("abc", &[CheckName::HelmholtzLines]);
        cfg.helmholtz_lines.t = Some(Num(0.0));
        let out = run(&cfg).unwrap();
        assert!(out.report.pass, "{:?}", out.report.checks);
        let csv = &out.artifacts[0];
        let col = csv.header.iter().position(|h| h == "distance").unwrap();
        assert!(csv.rows.iter().all(|r| r[col] == "0e0"));
    }

    #[test]
    fn r5_dims_and_tube() {
        let mut cfg = RunConfig::new("r5_decomposable", &[CheckName::KernelDims, CheckName::TubeStrength]);
        cfg.kernel_dims.expect_dim = Some(2);
        let out = run(&cfg).unwrap();
        assert!(out.report.pass, "{:#?}", out.report.checks);
        assert_eq!(out.report.checks[0].metrics["kernel_dim"], 2.0);
    }

    #[test]
    fn inapplicable_check_fails_without_aborting() {
        let out = run(&RunConfig::new("oscillator", &[CheckName::HelmholtzLines, CheckName::EulerResidual])).unwrap();
        assert!(!out.report.checks[0].pass && out.report.checks[0].error.is_some());
        assert!(out.report.checks[1].pass, "{:?}", out.report.checks[1]);
        assert!(!out.report.pass);
    }

    #[test]
    fn unknown_scenario_aborts() {
        assert!(matches!(run(&RunConfig::new("nope", &[CheckName::Kelvin])), Err(Error::UnknownScenario { .. })));
    }
}
