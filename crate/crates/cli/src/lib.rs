//! Configuration, orchestration, and result emission for the `magnls`
//! binary. The JSON run config is the single source of truth; flags only
//! select the config path, the output directory, and dotted-path
//! overrides. All diagnostics go to standard error as single-line JSON
//! events.

use magnls_core::energy::{
    diamagnetic_check, energy_ea, functional_j, pointwise_bounds_check, LinkPhases, LinkRule,
};
use magnls_core::gauge::{
    b_sup_norm, corrected_potential, poincare_phase, pregauge, AnyPotential, CustomVector,
    ElectricPotential, MagneticPotential, PoincarePotential, Quadrature,
};
use magnls_core::grid::{ComplexField, DiscretizationSpec, GridSpec};
use magnls_core::infinity::{penalty_report, PenaltyOptions};
use magnls_core::io::{read_field, write_field};
use magnls_core::profiles::{
    extract_profiles, synthesize_sequence, verify_splitting, ExtractOptions, ShiftFrame,
};
use magnls_core::solver::{
    minimize_ground_state, random_initial, solve_critical, validate_subcritical, SolveOptions,
    SolverError,
};
use magnls_core::expr::Expr;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("invariant check failed: {0}")]
    CheckFailed(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::CheckFailed(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Single-line JSON diagnostic on stderr.
pub fn emit_event(level: &str, event: &str, detail: &str) {
    let line = serde_json::json!({"level": level, "event": event, "detail": detail});
    eprintln!("{line}");
}

// ---------------------------------------------------------------------
// run config
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    Penalty,
    Profiles,
    Critical,
    GaugeCheck,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Solve => "solve",
            Mode::Penalty => "penalty",
            Mode::Profiles => "profiles",
            Mode::Critical => "critical",
            Mode::GaugeCheck => "gauge-check",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// spatial dimension (2 or 3)
    pub n: usize,
    /// half-width of the box
    pub l: f64,
    /// nodes per axis (odd)
    pub m: usize,
}

impl GridBlock {
    pub fn build(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(self.n, self.l, self.m).map_err(|e| CliError::Validation(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum MagneticSpec {
    Zero,
    ConstantField {
        #[serde(default)]
        b12: f64,
        #[serde(default)]
        b13: f64,
        #[serde(default)]
        b23: f64,
    },
    AharonovBohm {
        lambda: f64,
    },
    Custom {
        components: Vec<String>,
    },
    Perturbed {
        base: Box<MagneticSpec>,
        delta: Vec<String>,
    },
}

fn parse_components(comps: &[String]) -> Result<CustomVector, CliError> {
    let mut exprs = Vec::with_capacity(comps.len());
    for c in comps {
        exprs.push(
            Expr::parse(c).map_err(|e| CliError::Validation(format!("component `{c}`: {e}")))?,
        );
    }
    Ok(CustomVector::new(exprs))
}

impl MagneticSpec {
    pub fn build(&self) -> Result<MagneticPotential, CliError> {
        Ok(match self {
            MagneticSpec::Zero => MagneticPotential::Zero,
            MagneticSpec::ConstantField { b12, b13, b23 } => MagneticPotential::ConstantField {
                b12: *b12,
                b13: *b13,
                b23: *b23,
            },
            MagneticSpec::AharonovBohm { lambda } => {
                MagneticPotential::AharonovBohm { lambda: *lambda }
            }
            MagneticSpec::Custom { components } => {
                MagneticPotential::Custom(parse_components(components)?)
            }
            MagneticSpec::Perturbed { base, delta } => MagneticPotential::Perturbed {
                base: Box::new(base.build()?),
                delta: parse_components(delta)?,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ElectricSpec {
    Constant { value: f64 },
    Well { base: f64, depth: f64, width: f64 },
    Hardy { mu: f64 },
    Custom { expr: String },
}

impl ElectricSpec {
    pub fn build(&self) -> Result<ElectricPotential, CliError> {
        Ok(match self {
            ElectricSpec::Constant { value } => ElectricPotential::Constant(*value),
            ElectricSpec::Well { base, depth, width } => ElectricPotential::Well {
                base: *base,
                depth: *depth,
                width: *width,
            },
            ElectricSpec::Hardy { mu } => ElectricPotential::Hardy { mu: *mu },
            ElectricSpec::Custom { expr } => ElectricPotential::Custom(
                Expr::parse(expr)
                    .map_err(|e| CliError::Validation(format!("electric `{expr}`: {e}")))?,
            ),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialBlock {
    pub magnetic: MagneticSpec,
    pub electric: ElectricSpec,
}

fn default_p() -> f64 {
    3.0
}
fn default_step() -> f64 {
    0.1
}
fn default_tol() -> f64 {
    1e-7
}
fn default_max_iter() -> usize {
    20_000
}
fn default_restarts() -> usize {
    5
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_p")]
    pub p: f64,
    /// initial gradient step
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            p: default_p(),
            step: default_step(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            restarts: default_restarts(),
            seed: default_seed(),
        }
    }
}

impl SolverBlock {
    pub fn options(&self, record_trace: bool) -> SolveOptions {
        SolveOptions {
            p: self.p,
            max_iter: self.max_iter,
            tol: self.tol,
            restarts: self.restarts,
            seed: self.seed,
            step: self.step,
            record_trace,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PenaltyBlock {
    /// smallest admissible |y| for the last shift of each ray
    pub horizon: Option<f64>,
    /// pointwise conditions are checked on |x| <= window
    pub window: Option<f64>,
    /// explicit integer ray directions; default: axes + diagonals
    pub rays: Option<Vec<[i64; 3]>>,
    /// lattice step of the shift set (default: grid spacing)
    pub lattice_step: Option<f64>,
    pub covering_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalBlock {
    pub lambda_ab: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfilesAction {
    Synth,
    Extract,
    Verify,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSource {
    Gaussian {
        center: [f64; 3],
        sigma: f64,
        amplitude: f64,
    },
    Dump {
        path: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    /// shifts[n][k]
    pub shifts: Vec<Vec<[f64; 3]>>,
    /// critical mode scales
    #[serde(default)]
    pub scales: Option<Vec<Vec<i32>>>,
    #[serde(default)]
    pub separation_threshold: f64,
}

fn default_delta() -> f64 {
    1e-3
}
fn default_max_profiles() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesBlock {
    pub action: ProfilesAction,
    /// sequence length K (synth)
    #[serde(default)]
    pub k: usize,
    /// extraction threshold on the window mass
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// noise amplitude at k = 0 (synth)
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub frame: Option<FrameSpec>,
    #[serde(default)]
    pub sources: Vec<ProfileSource>,
    /// where the sequence dumps live (extract / verify); synth writes here
    #[serde(default)]
    pub sequence_dir: Option<String>,
    pub lattice_step: Option<f64>,
    pub covering_radius: Option<f64>,
    #[serde(default)]
    pub tail: usize,
    #[serde(default = "default_max_profiles")]
    pub max_profiles: usize,
}

fn default_check_fields() -> usize {
    20
}
fn default_check_centers() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeCheckBlock {
    #[serde(default = "default_check_fields")]
    pub fields: usize,
    #[serde(default = "default_check_centers")]
    pub centers: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for GaugeCheckBlock {
    fn default() -> Self {
        GaugeCheckBlock {
            fields: default_check_fields(),
            centers: default_check_centers(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// default output directory; the --out flag overrides it
    #[serde(default)]
    pub directory: Option<String>,
    #[serde(default)]
    pub dump_fields: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridBlock,
    pub potential: PotentialBlock,
    /// optional; must agree with the subcommand when present
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub penalty: Option<PenaltyBlock>,
    #[serde(default)]
    pub profiles: Option<ProfilesBlock>,
    #[serde(default)]
    pub critical: Option<CriticalBlock>,
    #[serde(default)]
    pub gauge_check: Option<GaugeCheckBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Parses the config file, applies `--set key=value` dotted-path
/// overrides, and validates the schema.
pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
    for s in sets {
        apply_override(&mut value, s)?;
    }
    serde_json::from_value(value).map_err(|e| CliError::Validation(format!("config schema: {e}")))
}

fn apply_override(root: &mut serde_json::Value, setting: &str) -> Result<(), CliError> {
    let (key, raw) = setting
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("--set needs key=value, got `{setting}`")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            cursor
                .as_object_mut()
                .ok_or_else(|| CliError::Validation(format!("--set path `{key}` is not an object")))?
                .insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| CliError::Validation(format!("--set path `{key}` is not an object")))?
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// emission helpers
// ---------------------------------------------------------------------

fn ensure_finite(value: &serde_json::Value, path: &str) -> Result<(), CliError> {
    match value {
        serde_json::Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if !f.is_finite() {
                    return Err(CliError::CheckFailed(format!(
                        "non-finite number at {path}: {f}"
                    )));
                }
            }
            Ok(())
        }
        serde_json::Value::Null => Err(CliError::CheckFailed(format!(
            "null (lost number?) at {path}"
        ))),
        serde_json::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                ensure_finite(v, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                ensure_finite(v, &format!("{path}.{k}"))?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn write_result_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let v = serde_json::to_value(value)
        .map_err(|e| CliError::Io(format!("serialize {name}: {e}")))?;
    ensure_finite(&v, name)?;
    let mut text = serde_json::to_string_pretty(&v)
        .map_err(|e| CliError::Io(format!("serialize {name}: {e}")))?;
    text.push('\n');
    fs::write(out.join(name), text)?;
    Ok(())
}

fn write_trace_csv(
    out: &Path,
    name: &str,
    trace: &[magnls_core::solver::TracePoint],
) -> Result<(), CliError> {
    let mut f = fs::File::create(out.join(name))?;
    writeln!(f, "iter,energy,residual,step")?;
    for t in trace {
        writeln!(f, "{},{:.17e},{:.17e},{:.17e}", t.iter, t.energy, t.residual, t.step)?;
    }
    Ok(())
}

fn dump_field(out: &Path, name: &str, field: &ComplexField) -> Result<(), CliError> {
    let mut f = fs::File::create(out.join(name))?;
    write_field(&mut f, field, name.trim_end_matches(".bin"))
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

fn quadrature() -> Quadrature {
    Quadrature::gauss_legendre(16)
}

// ---------------------------------------------------------------------
// modes
// ---------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SolveResult {
    mode: String,
    kappa: f64,
    multiplier: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
    restart_index: usize,
    p: f64,
    seed: u64,
    energy: magnls_core::energy::EnergyReport,
}

fn run_solve(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let magnetic = config.potential.magnetic.build()?;
    let electric = config.potential.electric.build()?;
    validate_subcritical(config.solver.p, grid.dim())?;
    let a = pregauge(&magnetic, &quadrature());
    let links = LinkPhases::build(&a, &grid, LinkRule::Midpoint);
    let weight = electric.sample(&grid);
    let opts = config.solver.options(true);
    emit_event("info", "solve.start", &format!("grid {}^{}", grid.points_per_axis(), grid.dim()));
    let res = minimize_ground_state(&links, &weight, &opts)?;
    let report = functional_j(&res.minimizer, &links, &weight);
    let result = SolveResult {
        mode: "solve".into(),
        kappa: res.kappa,
        multiplier: res.multiplier,
        residual: res.residual,
        iterations: res.iterations,
        converged: res.converged,
        restart_index: res.restart_index,
        p: opts.p,
        seed: opts.seed,
        energy: report,
    };
    write_result_json(out, "result.json", &result)?;
    write_trace_csv(out, "trace.csv", &res.trace)?;
    if config.output.dump_fields {
        dump_field(out, "ground_state.bin", &res.minimizer)?;
    }
    if !res.converged {
        emit_event("error", "solve.nonconvergence", &format!("residual {}", res.residual));
        return Err(CliError::NonConvergence(format!(
            "residual {} above tolerance {}",
            res.residual, opts.tol
        )));
    }
    emit_event("info", "solve.done", &format!("kappa {}", res.kappa));
    Ok(())
}

fn run_critical(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let block = config
        .critical
        .as_ref()
        .ok_or_else(|| CliError::Validation("critical mode needs a `critical` block".into()))?;
    let opts = config.solver.options(true);
    emit_event(
        "info",
        "critical.start",
        &format!("lambda_ab {} mu {}", block.lambda_ab, block.mu),
    );
    let (report, res) = solve_critical(&grid, block.lambda_ab, block.mu, &opts)?;
    write_result_json(out, "result.json", &report)?;
    write_trace_csv(out, "trace.csv", &res.trace)?;
    if config.output.dump_fields {
        dump_field(out, "ground_state.bin", &res.minimizer)?;
    }
    if !res.converged {
        return Err(CliError::NonConvergence(format!(
            "residual {} above tolerance {}",
            res.residual, opts.tol
        )));
    }
    emit_event("info", "critical.done", &format!("kappa {}", report.kappa));
    Ok(())
}

fn run_penalty(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let magnetic = config.potential.magnetic.build()?;
    let electric = config.potential.electric.build()?;
    validate_subcritical(config.solver.p, grid.dim())?;
    let block = config.penalty.clone().unwrap_or_default();
    let step = block.lattice_step.unwrap_or_else(|| grid.spacing());
    let covering = block
        .covering_radius
        .unwrap_or(step * (grid.dim() as f64).sqrt());
    let xi = DiscretizationSpec::new(step, covering, grid.dim())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mut opts = PenaltyOptions::with_grid(&grid);
    if let Some(h) = block.horizon {
        opts.horizon = h;
    }
    if let Some(w) = block.window {
        opts.window_radius = w;
    }
    opts.directions = block.rays;
    opts.solve = config.solver.options(false);
    emit_event("info", "penalty.start", &format!("horizon {}", opts.horizon));
    let report = penalty_report(&magnetic, &electric, &grid, &xi, &opts)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    write_result_json(out, "result.json", &report)?;
    let failed = report.rays.iter().filter(|r| r.failed).count();
    if failed > 0 {
        return Err(CliError::NonConvergence(format!(
            "{failed} ray solves failed"
        )));
    }
    emit_event("info", "penalty.done", &format!("{} rays", report.rays.len()));
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProfilesManifest {
    action: String,
    num_profiles: usize,
    frames: Vec<Vec<[f64; 3]>>,
    residual_window_mass: Option<f64>,
    aborted: Option<bool>,
    p_mass_defect: Option<f64>,
    l2_margin: Option<f64>,
    energy_margin: Option<f64>,
    t_masses: Option<Vec<f64>>,
    sequence: Vec<String>,
    profile_dumps: Vec<String>,
}

fn load_sequence(dir: &Path) -> Result<Vec<ComplexField>, CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "bin").unwrap_or(false))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Validation(format!(
            "no field dumps in {}",
            dir.display()
        )));
    }
    let mut seq = Vec::new();
    for p in &names {
        let mut f = fs::File::open(p)?;
        let (field, _) = read_field(&mut f).map_err(|e| CliError::Io(e.to_string()))?;
        seq.push(field);
    }
    Ok(seq)
}

fn run_profiles(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let magnetic = config.potential.magnetic.build()?;
    let block = config
        .profiles
        .as_ref()
        .ok_or_else(|| CliError::Validation("profiles mode needs a `profiles` block".into()))?;
    let quad = quadrature();
    let p = config.solver.p;
    validate_subcritical(p, grid.dim())?;
    let seq_dir = block
        .sequence_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("sequence"));

    let synth = |manifest_seq: &mut Vec<String>| -> Result<Vec<ComplexField>, CliError> {
        let frame_spec = block
            .frame
            .as_ref()
            .ok_or_else(|| CliError::Validation("synth needs a `frame`".into()))?;
        if block.k == 0 {
            return Err(CliError::Validation("synth needs k >= 1".into()));
        }
        if frame_spec.shifts.iter().any(|s| s.len() != block.k) {
            return Err(CliError::Validation(
                "frame shift sequences must have length k".into(),
            ));
        }
        let frame = ShiftFrame::new(
            frame_spec.shifts.clone(),
            frame_spec.scales.clone(),
            frame_spec.separation_threshold,
        )
        .map_err(|e| CliError::Validation(e.to_string()))?;
        let mut sources = Vec::new();
        for s in &block.sources {
            sources.push(match s {
                ProfileSource::Gaussian {
                    center,
                    sigma,
                    amplitude,
                } => {
                    let (c, sg, am) = (*center, *sigma, *amplitude);
                    ComplexField::from_fn(grid, move |x| {
                        let mut r2 = 0.0;
                        for ax in 0..3 {
                            let d = x[ax] - c[ax];
                            r2 += d * d;
                        }
                        Complex64::new(am * (-r2 / (2.0 * sg * sg)).exp(), 0.0)
                    })
                }
                ProfileSource::Dump { path } => {
                    let mut f = fs::File::open(path)?;
                    read_field(&mut f)
                        .map_err(|e| CliError::Io(e.to_string()))?
                        .0
                }
            });
        }
        let a = pregauge(&magnetic, &quad);
        let seq = synthesize_sequence(
            &sources,
            &frame,
            &a,
            &quad,
            p,
            block.noise,
            config.solver.seed,
        )
        .map_err(|e| CliError::Validation(e.to_string()))?;
        fs::create_dir_all(&seq_dir)?;
        for (k, u) in seq.iter().enumerate() {
            let name = format!("u_{k:03}.bin");
            let mut f = fs::File::create(seq_dir.join(&name))?;
            write_field(&mut f, u, &name).map_err(|e| CliError::Io(e.to_string()))?;
            manifest_seq.push(name);
        }
        Ok(seq)
    };

    let mut manifest = ProfilesManifest {
        action: String::new(),
        num_profiles: 0,
        frames: Vec::new(),
        residual_window_mass: None,
        aborted: None,
        p_mass_defect: None,
        l2_margin: None,
        energy_margin: None,
        t_masses: None,
        sequence: Vec::new(),
        profile_dumps: Vec::new(),
    };

    match block.action {
        ProfilesAction::Synth => {
            manifest.action = "synth".into();
            let seq = synth(&mut manifest.sequence)?;
            manifest.num_profiles = block.sources.len();
            emit_event("info", "profiles.synth", &format!("{} snapshots", seq.len()));
        }
        ProfilesAction::Extract | ProfilesAction::Verify => {
            let verify = matches!(block.action, ProfilesAction::Verify);
            manifest.action = if verify { "verify".into() } else { "extract".into() };
            let seq = if seq_dir.is_dir() {
                load_sequence(&seq_dir)?
            } else {
                synth(&mut manifest.sequence)?
            };
            let step = block.lattice_step.unwrap_or_else(|| grid.spacing());
            let covering = block
                .covering_radius
                .unwrap_or(step * (grid.dim() as f64).sqrt());
            let xi = DiscretizationSpec::new(step, covering, grid.dim())
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let a = pregauge(&magnetic, &quad);
            let potential = match magnetic {
                MagneticPotential::Zero => None,
                _ => Some((a.clone(), quad.clone())),
            };
            let opts = ExtractOptions {
                p,
                tail: block.tail,
                max_profiles: block.max_profiles,
                potential,
            };
            let dec = extract_profiles(&seq, &xi, block.delta, &opts)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            manifest.num_profiles = dec.profiles.len();
            manifest.frames = dec.frame.shifts.clone();
            manifest.residual_window_mass = Some(dec.residual_window_mass);
            manifest.aborted = Some(dec.aborted);
            let pdir = out.join("profiles");
            fs::create_dir_all(&pdir)?;
            for (n, v) in dec.profiles.iter().enumerate() {
                let name = format!("profile_{n}.bin");
                let mut f = fs::File::create(pdir.join(&name))?;
                write_field(&mut f, v, &name).map_err(|e| CliError::Io(e.to_string()))?;
                manifest.profile_dumps.push(format!("profiles/{name}"));
            }
            if verify {
                let field = a
                    .field_strength()
                    .ok_or_else(|| CliError::Validation("potential has no field strength".into()))?;
                let report = verify_splitting(
                    &dec,
                    &seq,
                    p,
                    &field,
                    &a,
                    &quad,
                    LinkRule::Midpoint,
                )
                .map_err(|e| CliError::Validation(e.to_string()))?;
                manifest.p_mass_defect = Some(report.p_mass_defect);
                manifest.l2_margin = Some(report.l2_margin);
                manifest.energy_margin = Some(report.energy_margin);
                manifest.t_masses = Some(report.t_masses);
            }
            emit_event(
                "info",
                "profiles.extract",
                &format!("{} profiles", dec.profiles.len()),
            );
        }
    }
    write_result_json(out, "result.json", &manifest)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct GaugeCheckReport {
    /// worst relative covariance defect over fields x centers
    pub covariance_defect: f64,
    /// true when the link rule makes covariance exact for this potential
    pub covariance_exact: bool,
    pub diamagnetic_violations: usize,
    pub diamagnetic_min_slack: f64,
    pub pointwise_lower_violations: usize,
    pub pointwise_upper_violations: usize,
    /// worst margin of `|B| |x-y| + tol - |A_y(x)|` over nodes x centers
    pub poincare_margin: f64,
    pub fields: usize,
    pub centers: usize,
}

fn run_gauge_check(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let magnetic = config.potential.magnetic.build()?;
    if magnetic.is_aharonov_bohm() {
        return Err(CliError::Validation(
            "gauge-check needs a nonsingular potential".into(),
        ));
    }
    let block = config.gauge_check.clone().unwrap_or_default();
    let quad = quadrature();
    let a = pregauge(&magnetic, &quad);
    let field = a
        .field_strength()
        .ok_or_else(|| CliError::Validation("potential has no field strength".into()))?;
    let links = LinkPhases::build(&a, &grid, LinkRule::Midpoint);
    let mut rng = ChaCha8Rng::seed_from_u64(block.seed);
    let l = grid.half_width();
    let centers: Vec<[f64; 3]> = (0..block.centers)
        .map(|_| {
            let mut y = [0.0; 3];
            for item in y.iter_mut().take(grid.dim()) {
                use rand::Rng;
                *item = rng.gen_range(-0.5 * l..0.5 * l);
            }
            y
        })
        .collect();

    let mut covariance_defect: f64 = 0.0;
    let mut diamag_violations = 0;
    let mut diamag_slack = f64::INFINITY;
    let mut pw_lower = 0;
    let mut pw_upper = 0;
    // covariance and the two exact pointwise suites on random fields
    for _ in 0..block.fields {
        let u = random_initial(&grid, &mut rng);
        let d = diamagnetic_check(&u, &links);
        diamag_violations += d.violations;
        diamag_slack = diamag_slack.min(d.min_slack);
        let b = pointwise_bounds_check(&u, &links);
        pw_lower += b.lower_violations;
        pw_upper += b.upper_violations;
        for y in &centers {
            let phase = poincare_phase(&a, *y, &quad)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let ay =
                corrected_potential(&a, &phase).map_err(|e| CliError::Validation(e.to_string()))?;
            let mut v = u.clone();
            for i in 0..grid.num_nodes() {
                let x = grid.node_coord(i);
                v.values_mut()[i] *= Complex64::from_polar(1.0, phase.eval(&x));
            }
            let links_ay = LinkPhases::build(&ay, &grid, LinkRule::Midpoint);
            let e_left = energy_ea(&v, &links);
            let e_right = energy_ea(&u, &links_ay);
            let rel = (e_left - e_right).abs() / e_right.abs().max(1e-300);
            covariance_defect = covariance_defect.max(rel);
        }
    }
    // Poincaré linear-growth bound of the corrected potential
    let b_sup = b_sup_norm(&field, &grid);
    let mut poincare_margin = f64::INFINITY;
    for y in &centers {
        let ay = AnyPotential::Poincare(PoincarePotential {
            field: field.clone(),
            center: *y,
            quad: quad.clone(),
        });
        for idx in 0..grid.num_nodes() {
            let x = grid.node_coord(idx);
            let v = ay.eval(&x);
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let mut d2 = 0.0;
            for ax in 0..3 {
                let d = x[ax] - y[ax];
                d2 += d * d;
            }
            poincare_margin = poincare_margin.min(b_sup * d2.sqrt() + 1e-8 - norm);
        }
    }
    // midpoint links integrate linear potentials exactly, so covariance is
    // an exact invariant precisely for the constant-field families
    let covariance_exact = matches!(
        magnetic,
        MagneticPotential::Zero | MagneticPotential::ConstantField { .. }
    );
    let report = GaugeCheckReport {
        covariance_defect,
        covariance_exact,
        diamagnetic_violations: diamag_violations,
        diamagnetic_min_slack: diamag_slack,
        pointwise_lower_violations: pw_lower,
        pointwise_upper_violations: pw_upper,
        poincare_margin,
        fields: block.fields,
        centers: block.centers,
    };
    write_result_json(out, "result.json", &report)?;
    let mut failures = Vec::new();
    if diamag_violations > 0 {
        failures.push(format!("{diamag_violations} diamagnetic violations"));
    }
    if pw_lower + pw_upper > 0 {
        failures.push(format!("{} pointwise bound violations", pw_lower + pw_upper));
    }
    if poincare_margin < 0.0 {
        failures.push(format!("linear-growth bound broken by {poincare_margin}"));
    }
    if covariance_exact && covariance_defect > 1e-11 {
        failures.push(format!("covariance defect {covariance_defect}"));
    }
    if !failures.is_empty() {
        let msg = failures.join("; ");
        emit_event("error", "gauge-check.failed", &msg);
        return Err(CliError::CheckFailed(msg));
    }
    emit_event(
        "info",
        "gauge-check.done",
        &format!("covariance defect {covariance_defect}"),
    );
    Ok(())
}

/// Executes `mode` with `config`, writing artifacts under `out`.
pub fn run(mode: Mode, config: &RunConfig, out: &Path) -> Result<(), CliError> {
    if let Some(m) = config.mode {
        if m != mode {
            return Err(CliError::Validation(format!(
                "config declares mode `{m}` but `{mode}` was requested"
            )));
        }
    }
    fs::create_dir_all(out)?;
    match mode {
        Mode::Solve => run_solve(config, out),
        Mode::Critical => run_critical(config, out),
        Mode::Penalty => run_penalty(config, out),
        Mode::Profiles => run_profiles(config, out),
        Mode::GaugeCheck => run_gauge_check(config, out),
    }
}
