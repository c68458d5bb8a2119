//! Command-line front end.
//!
//! Every subcommand computes its full result in memory first. Files are
//! written only when the computation succeeded, followed by a
//! `manifest.json` describing the run.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coupling::{compose_coupling, infidelity_raw, synthesize_tones, tone_report, CouplingMatrix, WeightVector};
use crate::equilibrium::{solve_equilibrium_1d, solve_equilibrium_2d_seeded, spacing_stats, Crystal};
use crate::error::Error;
use crate::graphs::{named_graph, power_law_graph, GraphDoc, InteractionGraph, Layout, GRAPH_NAMES};
use crate::modes::{crystal_modes, matrix_rows, sinusoidal_modes, ModeReport, ModeSpectrum};
use crate::synthesis::{
    accessibility_test, default_detunings, make_double_well, optimize_weights, relabel_search,
    shape_potential_equispaced, single_tone_fit_curve, single_tone_sweep,
};
use crate::trap::{length_scale, Geometry, PhysicalConstants, TrapConfig, TrapConfigDoc};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

const DEFAULT_BUDGET: usize = 100_000;
const DEFAULT_BARRIER: f64 = 50.0;
const FIG3_POINTS: usize = 120;

const SCHEMA_HELP: &str = "\
config file: a JSON object, every field optional
  trap        {omega_x, omega_y, omega_z_tilde (MHz), beta {order: coeff},
               geometry Chain1D|Crystal2D, drive_axis x|y}
  constants   {ion_mass, ion_charge, vacuum_permittivity, recoil_frequency, rabi_scale}
  n           number of ions
  graph       {name, params} with name one of the named graphs or power_law,
              or {n, edges: [[i, j, w], ...]} with 1-based indices
  weights     [c_1, ..., c_N]
  j_exp, j_des  coupling matrices as arrays of rows
  budget, n_max, barrier, grid_size, offset
  sizes, alphas, orders  sweep parameter lists";

#[derive(Parser, Debug)]
#[command(name = "ionweave", version, about = "Interaction-graph engineering for trapped-ion crystals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Without it the JSON report goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, env = "IONWEAVE_THREADS")]
    threads: Option<usize>,
    /// Number of ions, overrides the config.
    #[arg(long, global = true, value_delimiter = ',')]
    n: Vec<usize>,
    /// Named target graph, overrides the config.
    #[arg(long, global = true)]
    graph: Option<String>,
    /// Power-law exponents, overrides the config.
    #[arg(long, global = true, value_delimiter = ',')]
    alpha: Vec<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium positions.
    Equilibrium,
    /// Transverse normal modes.
    Modes {
        #[arg(long, value_enum, default_value_t = Approx::Exact)]
        approx: Approx,
    },
    /// Coupling matrix composed from mode weights.
    Couple {
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
    },
    /// Infidelity between two coupling matrices.
    Infidelity {
        #[arg(long)]
        exp: Option<PathBuf>,
        #[arg(long)]
        des: Option<PathBuf>,
    },
    /// Bichromatic tones realizing a weight vector or an optimized graph.
    Tones,
    /// Exact accessibility test for a graph.
    Accessible,
    /// Least-squares mode weights for a graph.
    Optimize,
    /// Search ion labelings for the lowest infidelity.
    Relabel {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Shape the axial potential.
    Shape {
        #[arg(long, value_enum)]
        target: ShapeTarget,
        #[arg(long)]
        n_max: Option<u32>,
        #[arg(long)]
        barrier: Option<f64>,
    },
    /// Figure data.
    Sweep {
        #[arg(long, value_enum)]
        figure: Figure,
        /// Shaping orders for fig11.
        #[arg(long, value_delimiter = ',')]
        order: Vec<u32>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Approx {
    Exact,
    Sinusoidal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShapeTarget {
    Equispaced,
    DoubleWell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Figure {
    Fig3,
    Fig5a,
    Fig5b,
    Fig6a,
    Fig6b,
    Fig9a,
    Fig9b,
    Fig9c,
    Fig11,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    trap: Option<TrapConfigDoc>,
    constants: Option<PhysicalConstants>,
    n: Option<usize>,
    graph: Option<GraphInput>,
    weights: Option<Vec<f64>>,
    j_exp: Option<MatrixInput>,
    j_des: Option<MatrixInput>,
    budget: Option<usize>,
    n_max: Option<u32>,
    barrier: Option<f64>,
    grid_size: Option<usize>,
    offset: Option<f64>,
    sizes: Option<Vec<usize>>,
    alphas: Option<Vec<f64>>,
    orders: Option<Vec<u32>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GraphInput {
    Named(NamedGraph),
    Edges(GraphDoc),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedGraph {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixInput {
    Rows(Vec<Vec<f64>>),
    Edges(GraphDoc),
}

/// Provenance record written next to every output set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub tool_version: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
    Io(std::io::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Lib(Error::NonConvergence(_)) => EXIT_NONCONVERGENCE,
            CliError::Lib(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// In-memory result of a subcommand.
struct Outputs {
    name: &'static str,
    report: Value,
    csv: Option<String>,
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\n{SCHEMA_HELP}");
            }
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, argv: &[String]) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let raw = match &cli.config {
        Some(p) => std::fs::read(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?,
        None => Vec::new(),
    };
    let config: RunConfig = if raw.is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_slice(&raw).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?
    };
    let ctx = Context { cli, config };
    let outputs = ctx.dispatch()?;

    match &cli.out {
        None => {
            let text = match &outputs.csv {
                Some(csv) if matches!(cli.command, Command::Sweep { .. }) => csv.clone(),
                _ => to_json(&outputs.report) + "\n",
            };
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
        Some(dir) => {
            let manifest = write_outputs(dir, &outputs, argv, &raw, cli.seed)?;
            log::info!("wrote {} files to {}", manifest.outputs.len() + 1, dir.display());
            Ok(())
        }
    }
}

fn to_json(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn write_outputs(dir: &Path, out: &Outputs, argv: &[String], config: &[u8], seed: u64) -> CliResult<RunManifest> {
    let mut files: Vec<(String, String)> = vec![(format!("{}.json", out.name), to_json(&out.report) + "\n")];
    if let Some(csv) = &out.csv {
        files.push((format!("{}.csv", out.name), csv.clone()));
    }
    let manifest = RunManifest {
        command: command_line(argv),
        config_hash: hex::encode(Sha256::digest(config)),
        seed,
        outputs: files.iter().map(|(n, _)| n.clone()).collect(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    std::fs::create_dir_all(dir)?;
    for (name, body) in &files {
        std::fs::write(dir.join(name), body)?;
    }
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(dir.join("manifest.json"), body)?;
    Ok(manifest)
}

/// Arguments without the program name and without the flags that do not
/// change numeric output.
fn command_line(argv: &[String]) -> String {
    let mut parts = Vec::new();
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        match a.as_str() {
            "--out" | "--threads" | "--config" => {
                it.next();
            }
            s if s.starts_with("--out=") || s.starts_with("--threads=") || s.starts_with("--config=") => {}
            s => parts.push(s.to_string()),
        }
    }
    parts.join(" ")
}

struct Context<'a> {
    cli: &'a Cli,
    config: RunConfig,
}

impl Context<'_> {
    fn dispatch(&self) -> CliResult<Outputs> {
        match &self.cli.command {
            Command::Equilibrium => self.equilibrium(),
            Command::Modes { approx } => self.modes(*approx),
            Command::Couple { weights } => self.couple(weights),
            Command::Infidelity { exp, des } => self.infidelity(exp.as_deref(), des.as_deref()),
            Command::Tones => self.tones(),
            Command::Accessible => self.accessible(),
            Command::Optimize => self.optimize(),
            Command::Relabel { budget } => self.relabel(*budget),
            Command::Shape { target, n_max, barrier } => self.shape(*target, *n_max, *barrier),
            Command::Sweep { figure, order } => self.sweep(*figure, order),
        }
    }

    fn trap(&self) -> CliResult<TrapConfig> {
        match &self.config.trap {
            Some(doc) => Ok(TrapConfig::try_from(doc.clone())?),
            None => Ok(TrapConfig::default_chain()),
        }
    }

    fn planar_trap(&self) -> CliResult<TrapConfig> {
        match &self.config.trap {
            Some(doc) if doc.geometry == Geometry::Crystal2D => Ok(TrapConfig::try_from(doc.clone())?),
            _ => Ok(TrapConfig::planar_mhz(5.0, 0.1)),
        }
    }

    fn constants(&self) -> CliResult<PhysicalConstants> {
        let c = self.config.constants.clone().unwrap_or_default();
        c.validate()?;
        Ok(c)
    }

    fn n(&self) -> CliResult<usize> {
        match (self.cli.n.as_slice(), self.config.n) {
            ([n], _) => Ok(*n),
            ([], Some(n)) => Ok(n),
            ([], None) => match &self.config.graph {
                Some(GraphInput::Edges(doc)) => Ok(doc.n),
                _ => Err(CliError::Usage("number of ions not given (--n or config `n`)".into())),
            },
            _ => Err(CliError::Usage("this subcommand takes a single --n".into())),
        }
    }

    fn sizes(&self, default: &[usize]) -> Vec<usize> {
        let mut v = if !self.cli.n.is_empty() {
            self.cli.n.clone()
        } else {
            self.config.sizes.clone().unwrap_or_else(|| default.to_vec())
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    fn alphas(&self, default: &[f64]) -> Vec<f64> {
        let mut v = if !self.cli.alpha.is_empty() {
            self.cli.alpha.clone()
        } else {
            self.config.alphas.clone().unwrap_or_else(|| default.to_vec())
        };
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn crystal_with(&self, trap: &TrapConfig, n: usize) -> CliResult<Crystal> {
        Ok(match trap.geometry {
            Geometry::Chain1D => solve_equilibrium_1d(trap, n)?,
            Geometry::Crystal2D => solve_equilibrium_2d_seeded(trap, n, self.cli.seed)?,
        })
    }

    fn crystal(&self) -> CliResult<Crystal> {
        self.crystal_with(&self.trap()?, self.n()?)
    }

    fn graph(&self, crystal: &Crystal) -> CliResult<InteractionGraph> {
        let layout = layout_of(crystal);
        if let Some(name) = &self.cli.graph {
            let params = match &self.config.graph {
                Some(GraphInput::Named(g)) if &g.name == name => g.params.clone(),
                _ => BTreeMap::new(),
            };
            return self.resolve_named(name, &params, layout);
        }
        match &self.config.graph {
            Some(GraphInput::Named(g)) => self.resolve_named(&g.name, &g.params, layout),
            Some(GraphInput::Edges(doc)) => {
                if doc.n != crystal.len() {
                    return Err(Error::DimensionMismatch { expected: crystal.len(), actual: doc.n }.into());
                }
                Ok(InteractionGraph::try_from(doc)?)
            }
            None => Err(CliError::Usage("no target graph (--graph or config `graph`)".into())),
        }
    }

    fn resolve_named(&self, name: &str, params: &BTreeMap<String, f64>, layout: Layout) -> CliResult<InteractionGraph> {
        if name == "power_law" {
            let alpha = match (self.cli.alpha.as_slice(), params.get("alpha")) {
                ([a], _) => *a,
                ([], Some(&a)) => a,
                _ => return Err(CliError::Usage("power_law needs a single alpha".into())),
            };
            return Ok(power_law_graph(layout, alpha, params.get("j0").copied().unwrap_or(1.0))?);
        }
        if !GRAPH_NAMES.contains(&name) {
            return Err(Error::UnknownName(name.to_string()).into());
        }
        Ok(named_graph(name, layout, params)?)
    }

    fn equilibrium(&self) -> CliResult<Outputs> {
        let crystal = self.crystal()?;
        let consts = self.constants()?;
        let l = length_scale(&consts, &crystal.trap).l;
        let spacing = if crystal.dim() == 1 { spacing_stats(&crystal).ok() } else { None };
        let mut csv = CsvOut::new(if crystal.dim() == 1 { &["i", "z"] } else { &["i", "x", "z"] });
        for (i, p) in crystal.positions.iter().enumerate() {
            let mut row = vec![(i + 1) as f64];
            row.extend(p);
            csv.row(&row);
        }
        Ok(Outputs {
            name: "equilibrium",
            report: json!({
                "n": crystal.len(),
                "positions": crystal.positions,
                "length_scale_m": l,
                "energy": crystal.energy,
                "gradient_norm": crystal.gradient_norm(),
                "degenerate_minimum": crystal.degenerate_minimum,
                "spacing": spacing,
            }),
            csv: Some(csv.finish()),
        })
    }

    fn modes(&self, approx: Approx) -> CliResult<Outputs> {
        if let Approx::Sinusoidal = approx {
            let n = self.n()?;
            if n == 0 {
                return Err(Error::InvalidArgument("need at least one ion".into()).into());
            }
            return Ok(Outputs {
                name: "modes",
                report: json!({ "approx": "sinusoidal", "b": matrix_rows(&sinusoidal_modes(n)) }),
                csv: None,
            });
        }
        let modes = crystal_modes(&self.crystal()?)?;
        let mut csv = CsvOut::new(&["k", "frequency"]);
        for (k, w) in modes.frequencies.iter().enumerate() {
            csv.row(&[(k + 1) as f64, *w]);
        }
        let mut report = serde_json::to_value(ModeReport::from(&modes)).expect("serializes");
        report["degenerate_groups"] = json!(one_based_groups(&modes));
        Ok(Outputs { name: "modes", report, csv: Some(csv.finish()) })
    }

    fn couple(&self, weights: &[f64]) -> CliResult<Outputs> {
        let w = self.weights(weights)?;
        let modes = crystal_modes(&self.crystal()?)?;
        let j = compose_coupling(&w, &modes.interaction_matrices())?;
        Ok(Outputs { name: "couple", report: json!({ "weights": w, "j": matrix_rows(&j.j) }), csv: None })
    }

    fn weights(&self, flag: &[f64]) -> CliResult<WeightVector> {
        if !flag.is_empty() {
            return Ok(WeightVector(flag.to_vec()));
        }
        self.config.weights.clone().map(WeightVector).ok_or_else(|| CliError::Usage("no weights given".into()))
    }

    fn infidelity(&self, exp: Option<&Path>, des: Option<&Path>) -> CliResult<Outputs> {
        let exp = load_matrix(exp, self.config.j_exp.as_ref(), "exp")?;
        let des = load_matrix(des, self.config.j_des.as_ref(), "des")?;
        let value = infidelity_raw(&exp, &des)?;
        Ok(Outputs { name: "infidelity", report: json!({ "infidelity": value }), csv: None })
    }

    fn tones(&self) -> CliResult<Outputs> {
        let crystal = self.crystal()?;
        let modes = crystal_modes(&crystal)?;
        let set = modes.interaction_matrices();
        let target = match (&self.config.weights, &self.config.graph, &self.cli.graph) {
            (Some(w), None, None) => WeightVector(w.clone()),
            _ => optimize_weights(&self.graph(&crystal)?, &set)?.0,
        };
        let consts = self.constants()?;
        let grid = self.config.grid_size.unwrap_or(4 * modes.len() + 1);
        let synth = synthesize_tones(&target, &modes, &consts, grid, self.config.offset.unwrap_or(0.0))?;
        let mut csv = CsvOut::new(&["mu_mhz", "omega_khz"]);
        let report_tones = tone_report(&synth.tones, &modes);
        for t in &report_tones {
            csv.row(&[t.mu_mhz, t.omega_khz]);
        }
        Ok(Outputs {
            name: "tones",
            report: json!({
                "target_weights": target,
                "tones": report_tones,
                "relative_residual": synth.relative_residual,
            }),
            csv: Some(csv.finish()),
        })
    }

    fn accessible(&self) -> CliResult<Outputs> {
        let crystal = self.crystal()?;
        let modes = crystal_modes(&crystal)?;
        let g = self.graph(&crystal)?;
        let rep = accessibility_test(&g, &modes)?;
        let mut report = serde_json::to_value(&rep).expect("serializes");
        report["degenerate_groups"] = json!(one_based_groups(&modes));
        report["graph"] = json!(g.name);
        Ok(Outputs { name: "accessible", report, csv: None })
    }

    fn optimize(&self) -> CliResult<Outputs> {
        let crystal = self.crystal()?;
        let modes = crystal_modes(&crystal)?;
        let g = self.graph(&crystal)?;
        let (w, inf) = optimize_weights(&g, &modes.interaction_matrices())?;
        let mut csv = CsvOut::new(&["k", "weight"]);
        for (k, c) in w.0.iter().enumerate() {
            csv.row(&[(k + 1) as f64, *c]);
        }
        Ok(Outputs {
            name: "optimize",
            report: json!({ "graph": g.name, "weights": w, "infidelity": inf }),
            csv: Some(csv.finish()),
        })
    }

    fn relabel(&self, budget: Option<usize>) -> CliResult<Outputs> {
        let crystal = self.crystal()?;
        let modes = crystal_modes(&crystal)?;
        let g = self.graph(&crystal)?;
        let budget = budget.or(self.config.budget).unwrap_or(DEFAULT_BUDGET);
        let res = relabel_search(&g, &modes.interaction_matrices(), budget)?;
        let relabeled = g.permuted(&res.permutation);
        Ok(Outputs {
            name: "relabel",
            report: json!({
                "graph": g.name,
                "permutation": res.permutation.iter().map(|p| p + 1).collect::<Vec<_>>(),
                "infidelity_before": res.infidelity_before,
                "infidelity_after": res.infidelity_after,
                "evaluated_count": res.evaluated_count,
                "budget_exceeded": res.budget_exceeded,
                "mode": res.mode,
                "relabeled_graph": GraphDoc::from(&relabeled),
            }),
            csv: None,
        })
    }

    fn shape(&self, target: ShapeTarget, n_max: Option<u32>, barrier: Option<f64>) -> CliResult<Outputs> {
        let n = self.n()?;
        let base = self.trap()?;
        let (label, beta, crystal, modes, uniformity) = match target {
            ShapeTarget::Equispaced => {
                let order = n_max.or(self.config.n_max).unwrap_or(crate::synthesis::MAX_SHAPING_ORDER);
                let res = shape_potential_equispaced(n, order, &base)?;
                (
                    json!({ "target": "equispaced", "n_max": order }),
                    res.beta,
                    res.crystal,
                    res.modes,
                    Some(res.uniformity),
                )
            }
            ShapeTarget::DoubleWell => {
                let b = barrier.or(self.config.barrier).unwrap_or(DEFAULT_BARRIER);
                let trap = make_double_well(b, &base)?;
                let crystal = solve_equilibrium_1d(&trap, n)?;
                let modes = crystal_modes(&crystal)?;
                (json!({ "target": "double_well", "barrier": b }), trap.beta.clone(), crystal, modes, None)
            }
        };
        let trap_doc = TrapConfigDoc::from(&crystal.trap);
        let mut csv = CsvOut::new(&["i", "z"]);
        for (i, z) in crystal.axial().iter().enumerate() {
            csv.row(&[(i + 1) as f64, *z]);
        }
        Ok(Outputs {
            name: "shape",
            report: json!({
                "shape": label,
                "beta": beta,
                "trap": trap_doc,
                "positions": crystal.axial(),
                "uniformity": uniformity,
                "frequencies": modes.frequencies,
                "degenerate_groups": one_based_groups(&modes),
            }),
            csv: Some(csv.finish()),
        })
    }

    fn harmonic_modes(&self, n: usize) -> CliResult<ModeSpectrum> {
        let trap = self.trap()?;
        if trap.geometry != Geometry::Chain1D {
            return Err(CliError::Usage("this figure needs a Chain1D trap".into()));
        }
        Ok(crystal_modes(&solve_equilibrium_1d(&trap, n)?)?)
    }

    fn shaped_modes(&self, n: usize, order: u32) -> CliResult<ModeSpectrum> {
        let trap = self.trap()?;
        Ok(shape_potential_equispaced(n, order, &trap)?.modes)
    }

    fn sweep(&self, figure: Figure, orders: &[u32]) -> CliResult<Outputs> {
        let budget = self.config.budget.unwrap_or(DEFAULT_BUDGET);
        let shaping = self.config.n_max.unwrap_or(crate::synthesis::MAX_SHAPING_ORDER);
        let (columns, rows, extra): (&[&str], Vec<Vec<f64>>, Value) = match figure {
            Figure::Fig3 => {
                let sizes = self.sizes(&[10, 20, 30]);
                let detunings = default_detunings(FIG3_POINTS);
                let rows = par_rows(&sizes, |n| {
                    let modes = self.harmonic_modes(n)?;
                    let curve = single_tone_fit_curve(&modes, Layout::Chain(n), &detunings)?;
                    Ok(curve.iter().map(|p| vec![n as f64, p.mu, p.detuning, p.alpha, p.infidelity]).collect())
                })?;
                (&["n", "mu", "detuning", "alpha", "infidelity"], rows, Value::Null)
            }
            Figure::Fig5a => {
                let sizes = self.sizes(&[10, 20, 40]);
                let alphas = self.alphas(&alpha_grid(0.25, 3.0, 0.25));
                let rows = par_rows(&sizes, |n| {
                    let modes = self.harmonic_modes(n)?;
                    let set = modes.interaction_matrices();
                    let single = single_tone_sweep(&modes, Layout::Chain(n), &alphas)?;
                    alphas
                        .iter()
                        .zip(&single)
                        .map(|(&a, p)| {
                            let g = power_law_graph(Layout::Chain(n), a, 1.0)?;
                            Ok(vec![n as f64, a, p.infidelity, optimize_weights(&g, &set)?.1])
                        })
                        .collect()
                })?;
                (&["n", "alpha", "single_tone", "optimized"], rows, Value::Null)
            }
            Figure::Fig5b => {
                let sizes = self.sizes(&(3..=12).collect::<Vec<_>>());
                let rows = par_rows(&sizes, |n| {
                    let modes = self.harmonic_modes(n)?;
                    let g = named_graph("ring", Layout::Chain(n), &BTreeMap::new())?;
                    let res = relabel_search(&g, &modes.interaction_matrices(), budget)?;
                    Ok(vec![vec![n as f64, res.infidelity_before, res.infidelity_after]])
                })?;
                (&["n", "monotone", "relabeled"], rows, Value::Null)
            }
            Figure::Fig6a | Figure::Fig6b => {
                let n = match self.cli.n.as_slice() {
                    [] => self.config.n.unwrap_or(19),
                    [n] => *n,
                    _ => return Err(CliError::Usage("fig6 takes a single --n".into())),
                };
                let crystal = self.crystal_with(&self.planar_trap()?, n)?;
                let layout = Layout::Planar(&crystal);
                let g = if figure == Figure::Fig6a {
                    let alpha = self.alphas(&[1.5]);
                    if alpha.len() != 1 {
                        return Err(CliError::Usage("fig6a takes a single alpha".into()));
                    }
                    power_law_graph(layout, alpha[0], 1.0)?
                } else {
                    named_graph("nearest_neighbor", layout, &BTreeMap::new())?
                };
                let modes = crystal_modes(&crystal)?;
                let set = modes.interaction_matrices();
                let (w, inf) = optimize_weights(&g, &set)?;
                let j = compose_coupling(&w, &set)?;
                let scale = matched_scale(&j, &g.matrix);
                let mut rows = Vec::new();
                for a in 0..n {
                    for b in a + 1..n {
                        rows.push(vec![(a + 1) as f64, (b + 1) as f64, g.matrix.j[(a, b)], scale * j.j[(a, b)]]);
                    }
                }
                let extra = json!({ "infidelity": inf, "positions": crystal.positions, "weights": w });
                (&["i", "j", "desired", "experimental"], rows, extra)
            }
            Figure::Fig9a => {
                let sizes = self.sizes(&(4..=30).step_by(2).collect::<Vec<_>>());
                let rows = par_rows(&sizes, |n| {
                    let modes = self.shaped_modes(n, shaping)?;
                    let g = named_graph("nearest_neighbor", Layout::Chain(n), &BTreeMap::new())?;
                    Ok(vec![vec![n as f64, optimize_weights(&g, &modes.interaction_matrices())?.1]])
                })?;
                (&["n", "infidelity"], rows, json!({ "n_max": shaping }))
            }
            Figure::Fig9b => {
                let sizes = self.sizes(&[20]);
                let alphas = self.alphas(&alpha_grid(0.5, 3.0, 0.25));
                let rows = par_rows(&sizes, |n| {
                    let harmonic = self.harmonic_modes(n)?;
                    let shaped = self.shaped_modes(n, shaping)?.interaction_matrices();
                    let single = single_tone_sweep(&harmonic, Layout::Chain(n), &alphas)?;
                    alphas
                        .iter()
                        .zip(&single)
                        .map(|(&a, p)| {
                            let g = power_law_graph(Layout::Chain(n), a, 1.0)?;
                            Ok(vec![n as f64, a, p.infidelity, optimize_weights(&g, &shaped)?.1])
                        })
                        .collect()
                })?;
                (&["n", "alpha", "single_tone", "equispaced"], rows, json!({ "n_max": shaping }))
            }
            Figure::Fig9c => {
                let sizes = self.sizes(&(4..=20).step_by(2).collect::<Vec<_>>());
                let rows = par_rows(&sizes, |n| {
                    let set = self.shaped_modes(n, shaping)?.interaction_matrices();
                    let layout = Layout::Chain(n);
                    let none = BTreeMap::new();
                    let ring = relabel_search(&named_graph("ring", layout, &none)?, &set, budget)?.infidelity_after;
                    let ladder = optimize_weights(&named_graph("ladder", layout, &none)?, &set)?.1;
                    let annni = optimize_weights(&named_graph("annni", layout, &none)?, &set)?.1;
                    Ok(vec![vec![n as f64, ring, ladder, annni]])
                })?;
                (&["n", "ring", "ladder", "annni"], rows, json!({ "n_max": shaping }))
            }
            Figure::Fig11 => {
                let sizes = self.sizes(&[10, 20, 30]);
                let mut orders: Vec<u32> = if !orders.is_empty() {
                    orders.to_vec()
                } else {
                    self.config.orders.clone().unwrap_or_else(|| vec![4, 6, 8, 10])
                };
                orders.sort_unstable();
                orders.dedup();
                let rows = par_rows(&sizes, |n| {
                    let g = named_graph("nearest_neighbor", Layout::Chain(n), &BTreeMap::new())?;
                    orders
                        .iter()
                        .map(|&o| {
                            let set = self.shaped_modes(n, o)?.interaction_matrices();
                            Ok(vec![n as f64, o as f64, optimize_weights(&g, &set)?.1])
                        })
                        .collect()
                })?;
                (&["n", "n_max", "infidelity"], rows, Value::Null)
            }
        };
        let mut csv = CsvOut::new(columns);
        for r in &rows {
            csv.row(r);
        }
        let name = figure.to_possible_value().expect("named").get_name().to_string();
        let mut report = json!({ "figure": name, "columns": columns, "rows": rows.len() });
        if !extra.is_null() {
            report["details"] = extra;
        }
        Ok(Outputs { name: "sweep", report, csv: Some(csv.finish()) })
    }
}

fn layout_of(crystal: &Crystal) -> Layout<'_> {
    if crystal.dim() == 1 {
        Layout::Chain(crystal.len())
    } else {
        Layout::Planar(crystal)
    }
}

fn one_based_groups(modes: &ModeSpectrum) -> Vec<Vec<usize>> {
    modes.degenerate_groups().into_iter().map(|g| g.into_iter().map(|k| k + 1).collect()).collect()
}

fn alpha_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step).round() as usize;
    (0..=count).map(|k| lo + k as f64 * step).collect()
}

/// Scale minimizing `||s J~exp - J~des||`, so both columns of a CSV share units.
fn matched_scale(j: &CouplingMatrix, des: &CouplingMatrix) -> f64 {
    let (a, b) = (j.stripped(), des.stripped());
    let aa = a.dot(&a);
    if aa == 0.0 {
        0.0
    } else {
        a.dot(&b) / aa
    }
}

/// Rows for each size computed in parallel, concatenated in size order.
fn par_rows<F>(sizes: &[usize], f: F) -> CliResult<Vec<Vec<f64>>>
where
    F: Fn(usize) -> CliResult<Vec<Vec<f64>>> + Sync,
{
    let blocks: Vec<CliResult<Vec<Vec<f64>>>> = sizes.par_iter().map(|&n| f(n)).collect();
    let mut rows = Vec::new();
    for b in blocks {
        rows.extend(b?);
    }
    Ok(rows)
}

fn load_matrix(path: Option<&Path>, inline: Option<&MatrixInput>, which: &str) -> CliResult<nalgebra::DMatrix<f64>> {
    let parsed;
    let input = match (path, inline) {
        (Some(p), _) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            parsed = serde_json::from_str::<MatrixInput>(&text)
                .map_err(|e| CliError::Usage(format!("invalid matrix in {}: {e}", p.display())))?;
            &parsed
        }
        (None, Some(m)) => m,
        (None, None) => return Err(CliError::Usage(format!("no `{which}` matrix given"))),
    };
    match input {
        MatrixInput::Rows(rows) => {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(CliError::Usage(format!("`{which}` matrix is not square")));
            }
            Ok(nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        }
        MatrixInput::Edges(doc) => Ok(InteractionGraph::try_from(doc)?.matrix.j),
    }
}

/// CSV body with a fixed 17-significant-digit number format and `\n` endings.
struct CsvOut {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    fn row(&mut self, values: &[f64]) {
        self.writer.write_record(values.iter().map(|v| format!("{v:.16e}"))).expect("in-memory write");
    }

    fn finish(self) -> String {
        String::from_utf8(self.writer.into_inner().expect("in-memory flush")).expect("ascii")
    }
}
