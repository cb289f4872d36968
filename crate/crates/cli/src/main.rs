mod sketchfile;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use emdsparse::emd::emd_norm_with_plan;
use emdsparse::harness::{aggregate, run, write_csv, write_summary_csv, RunSpec};
use emdsparse::kmedian::KMedianOptions;
use emdsparse::pipeline::{strict_sparsify, Scheme, SchemeConfig};
use emdsparse::pyramid::{pyramid_invert, pyramid_transform};
use emdsparse::randrec::small_k_warning;
use emdsparse::synth::{generate, GenSpec, ImageKind};
use emdsparse::{GridImage, PyramidCoeffs};

use sketchfile::SketchFile;

#[derive(Parser)]
#[command(name = "emdsparse", version, about = "Sketch and recover nonnegative images under the Earth-Mover Distance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic EMDIMG image.
    Gen(GenArgs),
    /// Sketch an EMDIMG image into an EMDSKT file.
    Sketch(SketchArgs),
    /// Recover an EMDIMG image from an EMDSKT file.
    Recover(RecoverArgs),
    /// Run sketch, recover and evaluate over seeds and schemes; writes CSV.
    Run(RunArgs),
    /// Exact EMD norm of an image, or of the difference of two images.
    OracleEmd(OracleArgs),
    /// Pyramid transform of an EMDIMG image, or inversion of an EMDPYR file.
    Pyramid(PyramidArgs),
}

#[derive(Args)]
struct Output {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Output {
    fn write(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
            None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "clusters")]
    kind: ImageKind,
    #[arg(long)]
    delta: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Standard deviation of cluster offsets, in pixels.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    /// Total number of unit masses.
    #[arg(long, default_value_t = 1000)]
    units: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SketchArgs {
    /// EMDIMG file to sketch.
    input: PathBuf,
    #[arg(long)]
    scheme: Scheme,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct RecoverArgs {
    /// EMDSKT file.
    input: PathBuf,
    /// Reduce the recovery to exactly k point masses by weighted k-median.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run description; flags given alongside it are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme to run; repeat for several, or pass `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    scheme: Vec<String>,
    #[arg(long, default_value = "clusters_plus_noise")]
    kind: ImageKind,
    #[arg(long, default_value_t = 32)]
    delta: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 1000)]
    units: usize,
    /// First seed; trials use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Emit per-scheme median and 90th-percentile summaries instead of rows.
    #[arg(long)]
    aggregate: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct OracleArgs {
    /// EMDIMG file.
    first: PathBuf,
    /// Optional second image; the norm of `first - second` is reported.
    second: Option<PathBuf>,
    /// Also print the transport plan.
    #[arg(long)]
    plan: bool,
}

#[derive(Args)]
struct PyramidArgs {
    /// EMDIMG file, or EMDPYR with `--invert`.
    input: PathBuf,
    #[arg(long)]
    invert: bool,
    #[command(flatten)]
    output: Output,
}

fn read_image(path: &Path) -> Result<GridImage> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GridImage::parse_emdimg(&text).with_context(|| format!("parsing {}", path.display()))
}

fn warn_small_k(scheme: Scheme, k: usize, delta: usize) {
    if scheme == Scheme::PyramidRandomized {
        if let Some(msg) = small_k_warning(k, delta * delta) {
            eprintln!("warning: {msg}");
        }
    }
}

fn gen(args: GenArgs) -> Result<()> {
    let spec = GenSpec {
        kind: args.kind,
        delta: args.delta,
        k: args.k,
        spread: args.spread,
        units: args.units,
        seed: args.seed,
    };
    args.output.write(&generate(&spec)?.to_emdimg())
}

fn sketch(args: SketchArgs) -> Result<()> {
    let x = read_image(&args.input)?;
    let config = SchemeConfig::new(args.scheme, x.delta(), args.k, args.eps, args.seed);
    warn_small_k(args.scheme, args.k, x.delta());
    let measurements = config.build()?.sketch(&x)?;
    args.output.write(&SketchFile { config, measurements }.to_text()?)
}

fn recover(args: RecoverArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let file = SketchFile::parse(&text)?;
    let rec = file.config.build()?.recover(&file.measurements)?;
    let image = if args.strict {
        strict_sparsify(&rec.image, file.config.k, &KMedianOptions { seed: file.config.seed, ..Default::default() })?
            .image
    } else {
        rec.image
    };
    args.output.write(&image.to_emdimg())
}

fn parse_schemes(names: &[String]) -> Result<Vec<Scheme>> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(Scheme::ALL);
        } else {
            out.push(name.parse()?);
        }
    }
    out.dedup();
    if out.is_empty() {
        bail!("no schemes selected");
    }
    Ok(out)
}

fn run_cmd(args: RunArgs) -> Result<()> {
    let spec = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RunSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunSpec {
            eps: args.eps,
            spread: args.spread,
            units: args.units,
            first_seed: args.seed,
            trials: args.trials,
            ..RunSpec::new(parse_schemes(&args.scheme)?, args.kind, args.delta, args.k)
        },
    };
    for &scheme in &spec.schemes {
        warn_small_k(scheme, spec.k, spec.delta);
    }
    let reports = run(&spec);
    let mut buf = Vec::new();
    if args.aggregate {
        write_summary_csv(&mut buf, &aggregate(&reports))?;
    } else {
        write_csv(&mut buf, &reports)?;
    }
    let failed = reports.iter().filter(|r| !r.success).count();
    if failed > 0 {
        eprintln!("{failed} of {} trials failed to recover; see the error column", reports.len());
    }
    args.output.write(&String::from_utf8(buf)?)
}

fn oracle_emd(args: OracleArgs) -> Result<()> {
    let mut w = read_image(&args.first)?;
    if let Some(second) = &args.second {
        let y = read_image(second)?;
        if y.delta() != w.delta() {
            bail!("images have different sizes ({} vs {})", w.delta(), y.delta());
        }
        w = &w - &y;
    }
    let sol = emd_norm_with_plan(&w);
    println!("{}", sol.cost);
    if args.plan {
        let grid = w.grid();
        for e in &sol.plan.edges {
            let (sr, sc) = grid.pixel_coords(e.source);
            let (tr, tc) = grid.pixel_coords(e.sink);
            println!("move {sr} {sc} -> {tr} {tc} mass {}", e.mass);
        }
        for &(p, mass) in &sol.plan.unmatched {
            let (r, c) = grid.pixel_coords(p);
            println!("unmatched {r} {c} mass {mass}");
        }
    }
    Ok(())
}

fn pyramid(args: PyramidArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    if args.invert {
        let b = PyramidCoeffs::parse_emdpyr(&text)?;
        args.output.write(&pyramid_invert(&b)?.to_emdimg())
    } else {
        let x = GridImage::parse_emdimg(&text)?;
        args.output.write(&pyramid_transform(&x).to_emdpyr())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Sketch(a) => sketch(a),
        Command::Recover(a) => recover(a),
        Command::Run(a) => run_cmd(a),
        Command::OracleEmd(a) => oracle_emd(a),
        Command::Pyramid(a) => pyramid(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
