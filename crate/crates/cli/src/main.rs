use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rfsense::experiments::{compare_estimators, run_scenario, RunManifest, ScenarioConfig};
use rfsense::render::{render_pgm, Scaling};
use rfsense::Error;

#[derive(Parser)]
#[command(name = "rfsense", version, about = "Radio sensing and positioning simulations")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its outputs plus a manifest.
    Run(RunArgs),
    /// Run MUSIC and SAGE on the same trials and write paired errors.
    Compare(RunArgs),
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render three CSV columns (row key, column key, value) as a PGM image.
    Render(RenderArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the file's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    Linear,
    Log,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    scaling: ScalingArg,
    /// Column holding the image row key (default: first column).
    #[arg(long)]
    row: Option<String>,
    /// Column holding the image column key (default: second column).
    #[arg(long)]
    col: Option<String>,
    /// Column holding the value (default: last column).
    #[arg(long)]
    value: Option<String>,
}

/// Exit 2 for bad configs or inputs, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Validation { .. } | Error::Parse(_) | Error::InvalidConfig(_)) => 2,
        _ => 1,
    }
}

fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ScenarioConfig::from_toml_str(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(manifest: &RunManifest, dir: &Path) {
    log::info!(
        "wrote {} files to {} (config {})",
        manifest.files.len(),
        dir.display(),
        &manifest.config_hash[..12]
    );
}

fn render_csv(args: &RenderArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| anyhow!("empty CSV"))?.split(',').collect();
    let find = |name: &Option<String>, default: usize| -> anyhow::Result<usize> {
        match name {
            Some(n) => header
                .iter()
                .position(|h| h.trim() == n)
                .ok_or_else(|| anyhow!("no column named {n}")),
            None if default < header.len() => Ok(default),
            None => bail!("CSV needs at least three columns"),
        }
    };
    if header.len() < 3 && (args.row.is_none() || args.col.is_none() || args.value.is_none()) {
        bail!("CSV needs at least three columns");
    }
    let (ri, ci, vi) = (find(&args.row, 0)?, find(&args.col, 1)?, find(&args.value, header.len() - 1)?);
    let mut rows: HashMap<String, usize> = HashMap::new();
    let mut cols: HashMap<String, usize> = HashMap::new();
    let mut cells = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != header.len() {
            return Err(Error::Parse(format!("line {}: expected {} fields", n + 2, header.len())).into());
        }
        let v: f64 = f[vi]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?;
        let next = rows.len();
        let r = *rows.entry(f[ri].to_string()).or_insert(next);
        let next = cols.len();
        let c = *cols.entry(f[ci].to_string()).or_insert(next);
        cells.push((r, c, v));
    }
    let mut grid = Array2::from_elem((rows.len(), cols.len()), f64::NAN);
    for (r, c, v) in cells {
        grid[[r, c]] = v;
    }
    if grid.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse("CSV does not fill a complete grid".into()).into());
    }
    let scaling = match args.scaling {
        ScalingArg::Linear => Scaling::Linear,
        ScalingArg::Log => Scaling::Log,
    };
    let comment = format!("rows {} ({}), cols {} ({})", header[ri], rows.len(), header[ci], cols.len());
    let bytes = render_pgm(grid.view(), scaling, &[comment])?;
    std::fs::write(&args.out, bytes).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(a) => {
            let cfg = load(&a.config, a.seed)?;
            let dir = cfg.resolve_output_dir(a.out.as_deref());
            let m = run_scenario(&cfg, &dir)?;
            report(&m, &dir);
        }
        Command::Compare(a) => {
            let cfg = load(&a.config, a.seed)?;
            let dir = cfg.resolve_output_dir(a.out.as_deref());
            let m = compare_estimators(&cfg, &dir)?;
            report(&m, &dir);
        }
        Command::Validate { config } => {
            load(&config, None)?;
            log::info!("{} is valid", config.display());
        }
        Command::Render(a) => render_csv(&a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
