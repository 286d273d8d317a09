//! Config loading and subcommand drivers for the `aoi-lq` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aoi_lq_core::discretization::{build_age_cost_table, default_capacity, AgeCostTable};
use aoi_lq_core::experiments::{default_dt, SweepOptions};
use aoi_lq_core::game::{DEFAULT_NEWTON_ITERS, DEFAULT_RICCATI_TOL};
use aoi_lq_core::linalg::{from_rows, to_rows};
use aoi_lq_core::sensing::{
    DEFAULT_BETA, DEFAULT_BISECTION_TOL, DEFAULT_MAX_SWEEPS, DEFAULT_VI_STATES, DEFAULT_VI_TOL,
};
use aoi_lq_core::simulator::DEFAULT_DIVERGENCE_GUARD;
use aoi_lq_core::{
    discounted_value_iteration, lagrange_bisection, simulate, solve_game_riccati, sweep_budget, sweep_h,
    transformed_are_residual, Error as CoreError, GameSolution, GameSpec, Matrix, MdpConfig, Redraw, Scheme,
    SensorPolicy, SimConfig,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_OUTPUT_DIR: &str = "out";
pub const DEFAULT_RECORD_STRIDE: usize = 10;
pub const DEFAULT_SIM_HORIZON: f64 = 5000.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("config error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 0 success, 1 user/config error, 2 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical_failure() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B1")]
    pub b1: Rows,
    #[serde(rename = "B2")]
    pub b2: Rows,
    /// Defaults to the identity.
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Rows>,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R1")]
    pub r1: Rows,
    #[serde(rename = "R2")]
    pub r2: Rows,
    /// Defaults to zero.
    #[serde(rename = "Sigma0", default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<Rows>,
}

impl GameConfig {
    pub fn to_spec(&self) -> CliResult<GameSpec> {
        let m = |name: &str, rows: &Rows| from_rows(rows).map_err(|e| CliError::Invalid(format!("{name}: {e}")));
        let a = m("A", &self.a)?;
        let n = a.nrows();
        let spec = GameSpec {
            b1: m("B1", &self.b1)?,
            b2: m("B2", &self.b2)?,
            g: match &self.g {
                Some(g) => m("G", g)?,
                None => Matrix::identity(n, n),
            },
            q: m("Q", &self.q)?,
            r1: m("R1", &self.r1)?,
            r2: m("R2", &self.r2)?,
            sigma0: match &self.sigma0 {
                Some(s) => m("Sigma0", s)?,
                None => Matrix::zeros(n, n),
            },
            a,
        };
        spec.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    /// Echo with the defaults written out.
    pub fn resolved(spec: &GameSpec) -> Self {
        Self {
            a: to_rows(&spec.a),
            b1: to_rows(&spec.b1),
            b2: to_rows(&spec.b2),
            g: Some(to_rows(&spec.g)),
            q: to_rows(&spec.q),
            r1: to_rows(&spec.r1),
            r2: to_rows(&spec.r2),
            sigma0: Some(to_rows(&spec.sigma0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingConfig {
    pub b: f64,
    pub h: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub redraw: Redraw,
}

fn default_eps() -> f64 {
    DEFAULT_BISECTION_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdpSection {
    /// Multiplier for `--dump-vi`; the policy's `lambda_star` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub beta: f64,
    /// Value-iteration truncation; at least twice the largest policy threshold when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    pub vi_tol: f64,
    pub max_sweeps: usize,
}

impl Default for MdpSection {
    fn default() -> Self {
        Self {
            lambda: None,
            beta: DEFAULT_BETA,
            n_max: None,
            vi_tol: DEFAULT_VI_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub seed: u64,
    pub record_stride: usize,
    pub scheme: Scheme,
    pub divergence_guard: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon_t: DEFAULT_SIM_HORIZON,
            dt: None,
            seed: 0,
            record_stride: DEFAULT_RECORD_STRIDE,
            scheme: Scheme::default(),
            divergence_guard: DEFAULT_DIVERGENCE_GUARD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub h_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub seeds: usize,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub scheme: Scheme,
}

impl Default for SweepSection {
    fn default() -> Self {
        let opts = SweepOptions::default();
        Self {
            h_values: vec![0.5, 0.25, 0.1, 0.05],
            b_values: vec![0.1, 0.2, 0.4, 0.8, 1.6, 3.2],
            seeds: opts.seeds,
            horizon_t: opts.horizon,
            dt: None,
            scheme: opts.scheme,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub game: GameConfig,
    pub sensing: SensingConfig,
    #[serde(default)]
    pub mdp: MdpSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Parses a config document; errors name the offending field.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| CliError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.into(),
        source,
    })?;
    parse_config(&text)
}

fn positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.game.to_spec()?;
        positive("sensing.b", self.sensing.b)?;
        positive("sensing.h", self.sensing.h)?;
        positive("sensing.eps", self.sensing.eps)?;
        let mdp = MdpConfig {
            lambda: self.mdp.lambda.unwrap_or(0.0),
            beta: self.mdp.beta,
            n_max: self.mdp.n_max.unwrap_or(DEFAULT_VI_STATES),
            vi_tol: self.mdp.vi_tol,
            bisection_tol: self.sensing.eps,
            max_sweeps: self.mdp.max_sweeps,
        };
        mdp.validate().map_err(|e| CliError::Invalid(format!("mdp: {e}")))?;
        positive("sim.horizon_T", self.sim.horizon_t)?;
        positive("sim.divergence_guard", self.sim.divergence_guard)?;
        if let Some(dt) = self.sim.dt {
            positive("sim.dt", dt)?;
        }
        let probe = SimConfig {
            horizon: self.sim.horizon_t,
            dt: self.sim_dt(),
            h: self.sensing.h,
            seed: self.sim.seed,
            policy: SensorPolicy::deterministic(1, self.sensing.h),
            record_stride: self.sim.record_stride,
            scheme: self.sim.scheme,
            divergence_guard: self.sim.divergence_guard,
        };
        probe.validate().map_err(|e| CliError::Invalid(format!("sim: {e}")))?;
        if self.sweep.seeds == 0 {
            return Err(CliError::Invalid("sweep.seeds must be >= 1".into()));
        }
        positive("sweep.horizon_T", self.sweep.horizon_t)?;
        for &h in &self.sweep.h_values {
            positive("sweep.h_values", h)?;
        }
        for &b in &self.sweep.b_values {
            positive("sweep.b_values", b)?;
        }
        Ok(())
    }

    fn sim_dt(&self) -> f64 {
        self.sim.dt.unwrap_or_else(|| default_dt(self.sensing.h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    H,
    B,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::H => "h",
            Axis::B => "b",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Policy { dump_age_costs: bool, dump_vi: bool },
    Simulate,
    Sweep(Axis),
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Policy { .. } => "policy",
            Command::Simulate => "simulate",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct SolutionOut {
    #[serde(rename = "P")]
    p: Rows,
    #[serde(rename = "K1")]
    k1: Rows,
    #[serde(rename = "K2")]
    k2: Rows,
    #[serde(rename = "A_tilde")]
    a_tilde: Rows,
    #[serde(rename = "Q_tilde")]
    q_tilde: Rows,
    #[serde(rename = "M1")]
    m1: Rows,
    #[serde(rename = "M2")]
    m2: Rows,
    #[serde(rename = "J_star")]
    j_star: f64,
    residual_norm: f64,
    transformed_residual_norm: f64,
    p_min_eigenvalue: f64,
    stabilizing: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    axis: Option<&'a str>,
    package_version: &'a str,
    config: &'a RunConfig,
}

struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    fn create(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir).map_err(|source| CliError::Write {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        let wrap = |source| CliError::Write {
            path: path.clone(),
            source,
        };
        let file = fs::File::create(&path).map_err(wrap)?;
        let mut out = BufWriter::new(file);
        body(&mut out).map_err(wrap)?;
        out.flush().map_err(wrap)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        self.write(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value).map_err(std::io::Error::other)?;
            writeln!(out)
        })
    }
}

fn solve(spec: &GameSpec) -> CliResult<GameSolution> {
    Ok(solve_game_riccati(spec, DEFAULT_RICCATI_TOL, DEFAULT_NEWTON_ITERS)?)
}

fn table_for(spec: &GameSpec, sol: &GameSolution, cfg: &RunConfig) -> CliResult<AgeCostTable> {
    let (b, h) = (cfg.sensing.b, cfg.sensing.h);
    Ok(build_age_cost_table(sol, &spec.g, h, default_capacity(b, h))?)
}

fn policy_from(table: &AgeCostTable, cfg: &RunConfig) -> CliResult<SensorPolicy> {
    let policy = lagrange_bisection(table, cfg.sensing.b, cfg.sensing.h, cfg.sensing.eps)?;
    Ok(policy.with_redraw(cfg.sensing.redraw))
}

/// Runs one subcommand and returns the files written.
pub fn run(command: Command, mut cfg: RunConfig, overrides: &Overrides) -> CliResult<Vec<PathBuf>> {
    if let Some(seed) = overrides.seed {
        cfg.sim.seed = seed;
    }
    let dir = overrides
        .output
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let spec = cfg.game.to_spec()?;
    cfg.game = GameConfig::resolved(&spec);
    cfg.sim.dt = Some(cfg.sim_dt());
    let out = Outputs::create(dir.clone())?;
    let mut written = Vec::new();

    match command {
        Command::Solve => {
            let sol = solve(&spec)?;
            let solution = SolutionOut {
                p: to_rows(&sol.p),
                k1: to_rows(&sol.k1),
                k2: to_rows(&sol.k2),
                a_tilde: to_rows(&sol.a_tilde),
                q_tilde: to_rows(&sol.q_tilde),
                m1: to_rows(&sol.m1),
                m2: to_rows(&sol.m2),
                j_star: sol.j_star,
                residual_norm: sol.residual_norm,
                transformed_residual_norm: transformed_are_residual(&sol, &spec)?,
                p_min_eigenvalue: sol.p_min_eigenvalue,
                stabilizing: sol.stabilizing,
            };
            written.push(out.json("solution.json", &solution)?);
        }
        Command::Policy {
            dump_age_costs,
            dump_vi,
        } => {
            let sol = solve(&spec)?;
            let table = table_for(&spec, &sol, &cfg)?;
            let policy = policy_from(&table, &cfg)?;
            written.push(out.json("policy.json", &policy)?);
            if dump_age_costs {
                written.push(out.write("age_costs.csv", |w| table.write_csv(w))?);
            }
            if dump_vi {
                let mdp = MdpConfig {
                    lambda: cfg.mdp.lambda.unwrap_or(policy.lambda_star),
                    beta: cfg.mdp.beta,
                    n_max: cfg
                        .mdp
                        .n_max
                        .unwrap_or_else(|| DEFAULT_VI_STATES.max(2 * policy.max_threshold())),
                    vi_tol: cfg.mdp.vi_tol,
                    bisection_tol: cfg.sensing.eps,
                    max_sweeps: cfg.mdp.max_sweeps,
                };
                let vi = discounted_value_iteration(&table, &mdp)?;
                written.push(out.write("vi.csv", |w| vi.write_csv(w))?);
            }
        }
        Command::Simulate => {
            let sol = solve(&spec)?;
            let table = table_for(&spec, &sol, &cfg)?;
            let policy = policy_from(&table, &cfg)?;
            let sim = SimConfig {
                horizon: cfg.sim.horizon_t,
                dt: cfg.sim_dt(),
                h: cfg.sensing.h,
                seed: cfg.sim.seed,
                policy: policy.clone(),
                record_stride: cfg.sim.record_stride,
                scheme: cfg.sim.scheme,
                divergence_guard: cfg.sim.divergence_guard,
            };
            let rec = simulate(&spec, &sol, &sim)?;
            written.push(out.json("policy.json", &policy)?);
            if cfg.sim.record_stride > 0 {
                written.push(out.write("trajectory.csv", |w| rec.write_csv(w))?);
            }
            written.push(out.json("summary.json", &rec.summary(sol.j_star))?);
        }
        Command::Sweep(axis) => {
            let opts = SweepOptions {
                seeds: cfg.sweep.seeds,
                horizon: cfg.sweep.horizon_t,
                base_seed: cfg.sim.seed,
                dt: cfg.sweep.dt,
                scheme: cfg.sweep.scheme,
                bisection_eps: cfg.sensing.eps,
                divergence_guard: None,
            };
            let result = match axis {
                Axis::H => sweep_h(&spec, cfg.sensing.b, &cfg.sweep.h_values, &opts)?,
                Axis::B => sweep_budget(&spec, cfg.sensing.h, &cfg.sweep.b_values, &opts)?,
            };
            let stem = format!("sweep_{}", axis.name());
            written.push(out.write(&format!("{stem}.csv"), |w| result.write_csv(w))?);
            written.push(out.write(&format!("{stem}_manifest.json"), |w| writeln!(w, "{}", result.manifest))?);
        }
    }

    let axis = match command {
        Command::Sweep(a) => Some(a.name()),
        _ => None,
    };
    let manifest = Manifest {
        command: command.name(),
        axis,
        package_version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
    };
    written.push(out.json("manifest.json", &manifest)?);
    Ok(written)
}

/// The scalar benchmark as a config document.
pub fn benchmark_config(b: f64, h: f64) -> RunConfig {
    RunConfig {
        game: GameConfig::resolved(&GameSpec::scalar_benchmark()),
        sensing: SensingConfig {
            b,
            h,
            eps: DEFAULT_BISECTION_TOL,
            redraw: Redraw::Once,
        },
        mdp: MdpSection::default(),
        sim: SimSection::default(),
        sweep: SweepSection::default(),
        output_dir: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "game": {"A": [[0.5]], "B1": [[1.0]], "B2": [[0.5]], "Q": [[4.0]], "R1": [[1.0]], "R2": [[0.5]]},
        "sensing": {"b": 0.4, "h": 0.1}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = parse_config(SCALAR).unwrap();
        let spec = cfg.game.to_spec().unwrap();
        assert_eq!(spec, GameSpec::scalar_benchmark());
        assert_eq!(cfg.sim.record_stride, DEFAULT_RECORD_STRIDE);
        assert_eq!(cfg.sensing.eps, DEFAULT_BISECTION_TOL);
    }

    #[test]
    fn unknown_key_named() {
        let text = SCALAR.replace("\"h\": 0.1", "\"h\": 0.1, \"bogus\": 1");
        match parse_config(&text) {
            Err(CliError::Parse { path, message }) => {
                assert_eq!(path, "sensing.bogus");
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_names_field() {
        let text = SCALAR.replace("\"Q\": [[4.0]]", "\"Q\": [[\"four\"]]");
        match parse_config(&text) {
            Err(CliError::Parse { path, .. }) => assert_eq!(path, "game.Q[0][0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn r1_validation_message() {
        let text = SCALAR.replace("\"R1\": [[1.0]]", "\"R1\": [[-1.0]]");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("R1 must be positive definite"), "{err}");
    }

    #[test]
    fn dt_must_divide_h() {
        let text = SCALAR.replace("\"h\": 0.1}", "\"h\": 0.1}, \"sim\": {\"dt\": 0.03}");
        assert!(matches!(parse_config(&text), Err(CliError::Invalid(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            CliError::Core(CoreError::NoStabilizingSolution("x".into())).exit_code(),
            2
        );
        assert_eq!(
            CliError::Core(CoreError::Diverged {
                time: 1.0,
                norm: 2.0,
                guard: 1.0
            })
            .exit_code(),
            2
        );
        assert_eq!(CliError::Core(CoreError::ConfigMismatch("x".into())).exit_code(), 1);
        assert_eq!(CliError::Invalid("x".into()).exit_code(), 1);
    }

    #[test]
    fn benchmark_config_round_trips() {
        let cfg = benchmark_config(0.4, 0.1);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }
}
