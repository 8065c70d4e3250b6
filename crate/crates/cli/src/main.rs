use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use chiralsim_core::device::{format_rwa_report, load_config, rwa_lint, RwaFlag};
use chiralsim_core::experiments::{
    fit_g0, run_adiabatic, run_chevron, run_circulation, run_darkon, run_eigenstate_prep, run_entanglement,
    run_spectrum, run_two_photon, with_occupation_noise, ChevronMode, CirculationOptions, ExperimentResult, Frame,
    Layout, RampSchedule, RampShape,
};
use chiralsim_core::gauge::{compile_fluxes, Graph};
use chiralsim_core::io::{parse_csv, Format, OutputDir, RunManifest, StageTime};
use chiralsim_core::{reference_ring, DeviceSpec, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "chiralsim", version, about = "Photon circulation in flux-threaded qubit rings")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Device description (TOML). Defaults to the built-in three-qubit ring.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = FrameArg::Effective)]
    frame: FrameArg,
    /// Also write an SVG chart next to the table.
    #[arg(long, global = true)]
    plot: bool,
    /// Loop flux in radians.
    #[arg(long, global = true, allow_hyphen_values = true, conflicts_with = "flux_frac")]
    flux: Option<f64>,
    /// Loop flux in units of 2π.
    #[arg(long, global = true, allow_hyphen_values = true)]
    flux_frac: Option<f64>,
    /// Flux sweep as start:stop:points (radians).
    #[arg(long, global = true, allow_hyphen_values = true)]
    flux_grid: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FrameArg {
    Lab,
    Effective,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Static,
    Parametric,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShapeArg {
    Linear,
    Cosine,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-photon circulation from one excited qubit.
    Circulate {
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        #[arg(long, default_value_t = 1.0)]
        sample: f64,
        /// Initial occupations, e.g. 100.
        #[arg(long)]
        initial: Option<String>,
    },
    /// Two-photon circulation and vacancy order.
    TwoPhoton {
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        #[arg(long, default_value_t = 1.0)]
        sample: f64,
        #[arg(long)]
        initial: Option<String>,
    },
    /// Two-qubit chevron: static coupling or parametric modulation.
    Chevron {
        #[arg(long, value_enum, default_value_t = ModeArg::Static)]
        mode: ModeArg,
        /// Half-width of the sweep (MHz).
        #[arg(long, default_value_t = 10.0)]
        span: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
        #[arg(long, default_value_t = 400.0)]
        duration: f64,
    },
    /// Rotating-frame spectra of the one- and two-photon manifolds.
    Spectrum,
    /// Ramped ground-state preparation and its chiral current.
    Adiabatic {
        #[arg(long, default_value_t = 400.0)]
        ramp_ns: f64,
        #[arg(long, value_enum, default_value_t = ShapeArg::Linear)]
        shape: ShapeArg,
        /// Initial-site bias at the start of the ramp; 0 ramps only the coupling.
        #[arg(long)]
        bias_mhz: Option<f64>,
        #[arg(long, default_value_t = 1)]
        manifold: usize,
    },
    /// Mixtures of one- and two-photon circulation.
    Darkon {
        #[arg(long, default_value_t = 11)]
        alphas: usize,
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
    },
    /// Single-qubit purities during circulation.
    Entanglement {
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
    },
    /// Momentum eigenstate preparation and energies over a flux sweep.
    EigPrep {
        #[arg(long, default_value_t = 1)]
        manifold: usize,
    },
    /// Least-squares g0 from measured occupation traces.
    Fit {
        /// CSV with t_ns and p_q* columns.
        #[arg(long)]
        observed: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        g0_min: f64,
        #[arg(long, default_value_t = 5.0)]
        g0_max: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
        /// Add Gaussian noise of this width to the observed occupations first.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Per-link phases realizing target fluxes on fundamental cycles.
    CompileFlux {
        /// Links as 1-2,2-3,3-1 (1-based sites).
        #[arg(long)]
        edges: String,
        /// Target fluxes in radians, one per independent cycle.
        #[arg(long, allow_hyphen_values = true)]
        targets: String,
    },
    /// Check a device description and print the RWA report.
    ValidateConfig,
}

fn device(global: &Global) -> Result<DeviceSpec> {
    let d = read_config(global)?;
    d.validate()?;
    Ok(d)
}

fn read_config(global: &Global) -> Result<DeviceSpec> {
    match &global.config {
        Some(path) => load_config(path).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
            other => other,
        }),
        None => Ok(reference_ring()),
    }
}

fn flux(global: &Global, d: &DeviceSpec) -> Result<f64> {
    match (global.flux, global.flux_frac) {
        (Some(f), _) => Ok(f),
        (None, Some(x)) => Ok(2.0 * PI * x),
        (None, None) => d.flux(),
    }
}

fn flux_grid(global: &Global, default_points: usize) -> Result<Vec<f64>> {
    let Some(spec) = &global.flux_grid else {
        return Ok((0..default_points).map(|i| -PI + 2.0 * PI * i as f64 / (default_points - 1) as f64).collect());
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("flux grid must be start:stop:points, got {spec}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    match n {
        0 => Err(bad()),
        1 => Ok(vec![a]),
        _ => Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()),
    }
}

fn occupations(text: &str, n: usize) -> Result<Vec<u8>> {
    let occ: Vec<u8> = text
        .chars()
        .map(|c| c.to_digit(10).map(|d| d as u8).ok_or_else(|| Error::Config(format!("bad occupation digit {c:?}"))))
        .collect::<Result<_>>()?;
    if occ.len() != n {
        return Err(Error::Config(format!("initial state {text} has {} sites, device has {n}", occ.len())));
    }
    Ok(occ)
}

fn frame(global: &Global) -> Frame {
    match global.frame {
        FrameArg::Lab => Frame::Lab,
        FrameArg::Effective => Frame::Effective,
    }
}

fn circulation_options(global: &Global, d: &DeviceSpec, base: CirculationOptions, duration: f64, sample: f64, initial: &Option<String>) -> Result<CirculationOptions> {
    let mut o = base;
    o.duration = duration;
    o.sample = sample;
    o.frame = frame(global);
    if let Some(s) = initial {
        o.initial = occupations(s, d.num_sites())?;
    }
    Ok(o)
}

fn compile_flux_table(edges: &str, targets: &str) -> Result<ExperimentResult> {
    let mut pairs = Vec::new();
    for e in edges.split(',').filter(|s| !s.trim().is_empty()) {
        let (a, b) = e.split_once('-').ok_or_else(|| Error::Config(format!("edge {e} is not of the form j-k")))?;
        let parse = |s: &str| -> Result<usize> {
            match s.trim().parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(Error::Config(format!("bad site index {s} in edge {e}"))),
            }
        };
        pairs.push((parse(a)?, parse(b)?));
    }
    let n = pairs.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    let targets: Vec<f64> = targets
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad target flux {s}"))))
        .collect::<Result<_>>()?;
    let graph = Graph::new(n, pairs.clone());
    let phases = compile_fluxes(&graph, &targets)?;
    let mut r = ExperimentResult::new(
        "compile_flux",
        vec!["site_j".into(), "site_k".into(), "phi_rad".into()],
        Layout::Series { x: "site_j".into(), ys: vec!["phi_rad".into()] },
    );
    for (&(a, b), p) in pairs.iter().zip(phases) {
        r.push(vec![(a + 1) as f64, (b + 1) as f64, p]);
    }
    r.param("cycles", json!(graph.fundamental_cycles().iter().map(|c| c.iter().map(|s| s + 1).collect::<Vec<_>>()).collect::<Vec<_>>()));
    r.param("targets", json!(targets));
    Ok(r)
}

fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let setup = Instant::now();
    if let Command::ValidateConfig = cli.command {
        let d = read_config(g)?;
        let reports = rwa_lint(&d);
        print!("{}", format_rwa_report(&reports));
        for w in d.frequency_warnings() {
            println!("warning: {w:?}");
        }
        d.validate()?;
        if reports.iter().any(|r| r.flag == RwaFlag::Invalid) {
            return Err(Error::Validation(vec!["a link violates the rotating-wave condition".into()]));
        }
        println!("configuration valid");
        return Ok(());
    }
    let d = device(g)?;
    let setup_s = setup.elapsed().as_secs_f64();
    let run = Instant::now();
    let mut result = match &cli.command {
        Command::Circulate { duration, sample, initial } => {
            let o = circulation_options(g, &d, CirculationOptions::new(d.num_sites()), *duration, *sample, initial)?;
            run_circulation(&d, flux(g, &d)?, &o)?.result
        }
        Command::TwoPhoton { duration, sample, initial } => {
            let o = circulation_options(g, &d, CirculationOptions::two_photon(d.num_sites()), *duration, *sample, initial)?;
            run_two_photon(&d, flux(g, &d)?, &o)?.result
        }
        Command::Chevron { mode, span, points, duration } => {
            let mode = match mode {
                ModeArg::Static => ChevronMode::Static,
                ModeArg::Parametric => ChevronMode::Parametric,
            };
            let sweep: Vec<f64> = match points {
                0 => return Err(Error::Config("chevron needs at least one sweep point".into())),
                1 => vec![0.0],
                n => (0..*n).map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64).collect(),
            };
            run_chevron(mode, &sweep, *duration, 1.0)?
        }
        Command::Spectrum => run_spectrum(&d, &flux_grid(g, 201)?)?,
        Command::Adiabatic { ramp_ns, shape, bias_mhz, manifold } => {
            let shape = match shape {
                ShapeArg::Linear => RampShape::Linear,
                ShapeArg::Cosine => RampShape::Cosine,
            };
            let schedule = RampSchedule { duration: *ramp_ns, shape, bias_mhz: *bias_mhz };
            run_adiabatic(&d, &flux_grid(g, 41)?, &schedule, *manifold)?
        }
        Command::Darkon { alphas, duration } => {
            let grid: Vec<f64> = match alphas {
                0 => return Err(Error::Config("darkon needs at least one mixing angle".into())),
                1 => vec![PI / 4.0],
                n => (0..*n).map(|i| PI / 2.0 * i as f64 / (n - 1) as f64).collect(),
            };
            run_darkon(&d, flux(g, &d)?, &grid, *duration)?
        }
        Command::Entanglement { duration, epsilon } => run_entanglement(&d, flux(g, &d)?, *duration, *epsilon)?.result,
        Command::EigPrep { manifold } => run_eigenstate_prep(&d, *manifold, &flux_grid(g, 41)?)?,
        Command::Fit { observed, g0_min, g0_max, points, noise } => {
            let text = std::fs::read_to_string(observed)?;
            let mut table = parse_csv("observed", &text)?;
            if let Some(sigma) = noise {
                table = with_occupation_noise(&table, *sigma, g.seed)?;
            }
            let fit = fit_g0(&table, &d, flux(g, &d)?, (*g0_min, *g0_max), *points)?;
            let mut r = ExperimentResult::new(
                "fit",
                vec!["g0_mhz".into(), "residual".into()],
                Layout::Series { x: "g0_mhz".into(), ys: vec!["residual".into()] },
            );
            for (x, y) in &fit.scan {
                r.push(vec![*x, *y]);
            }
            r.note("g0_mhz", fit.g0_mhz);
            r.note("residual", fit.residual);
            r.warnings = fit.warnings;
            println!("g0 = {:.6} MHz (residual {:.3e})", fit.g0_mhz, fit.residual);
            r
        }
        Command::CompileFlux { edges, targets } => compile_flux_table(edges, targets)?,
        Command::ValidateConfig => unreachable!("handled above"),
    };
    let run_s = run.elapsed().as_secs_f64();
    if result.device_toml.is_none() && !matches!(cli.command, Command::CompileFlux { .. } | Command::Chevron { .. }) {
        result.device_toml = Some(chiralsim_core::device::serialize_config(&d));
    }
    result.seed = Some(g.seed);
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let write = Instant::now();
    let out = OutputDir::acquire(&g.out)?;
    let format = match g.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    };
    let mut manifest = RunManifest::for_result(&result, vec![]);
    manifest.wall_times = vec![
        StageTime { stage: "setup".into(), seconds: setup_s },
        StageTime { stage: "run".into(), seconds: run_s },
        StageTime { stage: "write".into(), seconds: write.elapsed().as_secs_f64() },
    ];
    for path in out.write(&result, format, &manifest, g.plot)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CHIRALSIM_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("CHIRALSIM_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config("CHIRALSIM_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| execute(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
