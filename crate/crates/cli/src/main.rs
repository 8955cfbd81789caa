mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use qfde_core::blockopt::{
    optimal_block_length_with, write_curve_csv, ComplexityParams, FrameCount, SearchMode, EXHAUSTIVE_LIMIT,
};
use qfde_core::numfmt::sig12;
use qfde_core::quant::{design, distortion_factor, QuantizerKind};
use qfde_core::simulate::{per_position_error_profile, run_experiment, Method, PdpSpec, ProfileRequest, SimConfig};
use qfde_core::validation::{run_properties, Fault};

use config::{BathtubSection, BlockSection, FileConfig, SimSection};

#[derive(Parser)]
#[command(name = "qfde", version, about = "Block-length optimization and simulation for quantized massive-MIMO frequency-domain equalization")]
struct Cli {
    /// Directory for CSV outputs and JSON sidecars.
    #[arg(long, global = true, env = "QFDE_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,
    /// TOML run file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complexity-optimal block length.
    OptimizeBlock(BlockArgs),
    /// MSE/BER sweep over Eb/N0, block length and equalizer.
    Sweep(SweepArgs),
    /// Per-position error power inside a block, without discard.
    Bathtub(BathtubArgs),
    /// Optimal uniform quantizer step and distortion for 1..8 bits.
    QuantizerTable(TableArgs),
    /// Runs the fixed-seed property checks.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct BlockArgs {
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    antennas: Option<usize>,
    /// Discarded samples per block, L'.
    #[arg(long)]
    overlap: Option<usize>,
    /// Coherence time T_c in symbols.
    #[arg(long)]
    coherence: Option<usize>,
    /// Restrict the search to powers of two.
    #[arg(long)]
    pow2: bool,
    /// Count whole frames instead of a fractional frame count.
    #[arg(long)]
    whole_frames: bool,
    /// Write the cost curve to this CSV file.
    #[arg(long)]
    emit_curve: Option<PathBuf>,
}

#[derive(Args, Default)]
struct SimArgs {
    /// Full-size defaults (M = 64, 128 taps, T_c = 50000, 200 realizations).
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    antennas: Option<usize>,
    /// Channel taps L + 1.
    #[arg(long)]
    taps: Option<usize>,
    /// Power-delay profile: eva or uniform.
    #[arg(long)]
    pdp: Option<String>,
    /// EVA sample period in ns (default spreads the profile over all taps).
    #[arg(long)]
    eva_sample_period_ns: Option<f64>,
    /// QAM order (4, 16, 64).
    #[arg(long)]
    modulation: Option<usize>,
    #[arg(long)]
    coherence: Option<usize>,
    /// Channel realizations.
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ebn0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    block_lens: Option<Vec<usize>>,
    #[arg(long)]
    overlap: Option<usize>,
    /// ADC resolution in bits; 0 runs the unquantized receiver.
    #[arg(long)]
    bits: Option<u32>,
    /// uniform or lloyd-max.
    #[arg(long)]
    quantizer: Option<String>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    sigma_eta2: Option<f64>,
    /// Keep the undiscarded stream-edge symbols in the statistics.
    #[arg(long)]
    include_edges: bool,
    #[arg(long)]
    ebn0_ref_block_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// CSV path (default `<output-dir>/sweep.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BathtubArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    block_len: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    ebn0_db: Option<f64>,
    /// wf or wfq.
    #[arg(long)]
    method: Option<String>,
    /// CSV path (default `<output-dir>/bathtub.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, default_value_t = 8)]
    max_bits: u32,
    /// uniform or lloyd-max.
    #[arg(long, default_value = "uniform")]
    quantizer: String,
}

#[derive(Args)]
struct ValidateArgs {
    /// Print the verdicts as JSON.
    #[arg(long)]
    json: bool,
    /// Inject a fault to check that the suite can fail: circulant.
    #[arg(long = "break")]
    fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = config::load(cli.config.as_deref())?;
    fs::create_dir_all(&cli.output_dir)
        .with_context(|| format!("creating output directory {}", cli.output_dir.display()))?;
    let out_dir = cli.output_dir.as_path();
    match cli.command {
        Command::OptimizeBlock(a) => optimize_block(&a, &file.optimize_block, out_dir),
        Command::Sweep(a) => sweep(&a, &file, out_dir),
        Command::Bathtub(a) => bathtub(&a, &file, out_dir),
        Command::QuantizerTable(a) => quantizer_table(&a, out_dir),
        Command::Validate(a) => validate(&a, out_dir),
    }
}

fn write_sidecar<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = out_dir.join(format!("{name}.json"));
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn optimize_block(a: &BlockArgs, f: &BlockSection, out_dir: &Path) -> Result<ExitCode> {
    let users = a.users.or(f.users).unwrap_or(2);
    let antennas = a.antennas.or(f.antennas).unwrap_or(64);
    let overlap = a.overlap.or(f.overlap).unwrap_or(127);
    let coherence = a.coherence.or(f.coherence).unwrap_or(50_000);
    let pow2 = a.pow2 || f.pow2.unwrap_or(false);
    let whole = a.whole_frames || f.whole_frames.unwrap_or(false);
    let mode = if pow2 { SearchMode::PowerOfTwo } else { SearchMode::Exhaustive };
    let frames = if whole { FrameCount::Whole } else { FrameCount::Continuous };

    let p = ComplexityParams::new(users, antennas, overlap, coherence)?;
    let res = optimal_block_length_with(&p, mode, frames, a.emit_curve.is_some(), EXHAUSTIVE_LIMIT)?;
    if let (Some(path), Some(curve)) = (&a.emit_curve, &res.curve) {
        write_curve_csv(curve, create(path)?)?;
    }
    println!("n_opt = {}", res.n_opt);
    match res.n_opt_pow2 {
        Some(n) => println!("n_opt_pow2 = {n}"),
        None => println!("n_opt_pow2 = none"),
    }
    println!("t_sym_opt = {}", sig12(res.cost_at_opt));

    write_sidecar(
        out_dir,
        "optimize-block",
        &json!({
            "subcommand": "optimize-block",
            "config": {
                "users": users, "antennas": antennas, "overlap": overlap, "coherence": coherence,
                "search": mode, "whole_frames": whole,
            },
            "result": res,
            "curve_csv": a.emit_curve,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn parse_pdp(name: &str, sample_period_ns: Option<f64>) -> Result<PdpSpec> {
    match name.to_ascii_lowercase().as_str() {
        "eva" => Ok(PdpSpec::Eva { sample_period_ns }),
        "uniform" => Ok(PdpSpec::Uniform),
        other => bail!("unknown power-delay profile '{other}' (expected eva or uniform)"),
    }
}

fn parse_quantizer(name: &str) -> Result<QuantizerKind> {
    match name.to_ascii_lowercase().as_str() {
        "uniform" => Ok(QuantizerKind::Uniform),
        "lloyd-max" | "lloyd_max" | "lloydmax" => Ok(QuantizerKind::LloydMax),
        other => bail!("unknown quantizer '{other}' (expected uniform or lloyd-max)"),
    }
}

fn sim_config(a: &SimArgs, f: &SimSection) -> Result<SimConfig> {
    let paper = a.paper_scale || f.paper_scale.unwrap_or(false);
    let mut cfg = if paper { SimConfig::paper_scale() } else { SimConfig::default() };
    macro_rules! set {
        ($flag:ident => $field:ident) => {
            if let Some(v) = a.$flag.clone().or(f.$flag.clone()) {
                cfg.$field = v;
            }
        };
    }
    set!(users => users);
    set!(antennas => antennas);
    set!(taps => total_taps);
    set!(modulation => modulation);
    set!(coherence => coherence);
    set!(realizations => realizations);
    set!(block_lens => block_lens);
    set!(sigma_eta2 => sigma_eta2);
    set!(ebn0_ref_block_len => ebn0_ref_block_len);
    set!(seed => seed);
    if let Some(g) = a.ebn0.clone().or(f.ebn0_grid.clone()) {
        cfg.ebn0_grid = g;
    }
    if let Some(o) = a.overlap.or(f.overlap) {
        cfg.overlap = Some(o);
    }
    if let Some(w) = a.workers.or(f.workers) {
        cfg.workers = Some(w);
    }
    let period = a.eva_sample_period_ns.or(f.eva_sample_period_ns);
    match a.pdp.as_ref().or(f.pdp.as_ref()) {
        Some(name) => cfg.pdp = parse_pdp(name, period)?,
        None if period.is_some() => cfg.pdp = PdpSpec::Eva { sample_period_ns: period },
        None => {}
    }
    if let Some(b) = a.bits.or(f.bits) {
        cfg.quant_bits = (b > 0).then_some(b);
    }
    if let Some(q) = a.quantizer.as_ref().or(f.quantizer.as_ref()) {
        cfg.quantizer = parse_quantizer(q)?;
    }
    if let Some(ms) = a.methods.as_ref().or(f.methods.as_ref()) {
        cfg.methods = ms.iter().map(|m| m.parse::<Method>()).collect::<Result<_, _>>()?;
    }
    if a.include_edges || f.include_edges.unwrap_or(false) {
        cfg.exclude_edges = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sweep(a: &SweepArgs, file: &FileConfig, out_dir: &Path) -> Result<ExitCode> {
    let cfg = sim_config(&a.sim, &file.simulate)?;
    let report = run_experiment(&cfg)?;
    let csv_path = a.out.clone().unwrap_or_else(|| out_dir.join("sweep.csv"));
    report.write_csv(create(&csv_path)?)?;
    eprintln!(
        "wrote {} rows ({} block lengths: {:?}) to {}",
        report.rows.len(),
        report.block_lens.len(),
        report.block_lens,
        csv_path.display()
    );
    write_sidecar(
        out_dir,
        "sweep",
        &json!({
            "subcommand": "sweep",
            "seed": cfg.seed,
            "config": cfg,
            "block_lens": report.block_lens,
            "rho_q": report.rho_q,
            "mean_trace": report.mean_trace,
            "sigma_x2": report.sigma_x2,
            "csv": csv_path,
            "rows": report.rows,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn bathtub(a: &BathtubArgs, file: &FileConfig, out_dir: &Path) -> Result<ExitCode> {
    let BathtubSection { block_len, ebn0_db, method } = &file.bathtub;
    let mut cfg = sim_config(&a.sim, &file.simulate)?;
    let n_b = a.block_len.or(*block_len).unwrap_or(64);
    cfg.block_lens = vec![n_b];
    cfg.validate()?;
    let method = match a.method.as_ref().or(method.as_ref()) {
        Some(m) => m.parse::<Method>()?,
        None => Method::WfQ,
    };
    let req = ProfileRequest { n_b, ebn0_db: a.ebn0_db.or(*ebn0_db).unwrap_or(10.0), method };
    let profile = per_position_error_profile(&cfg, req)?;
    let csv_path = a.out.clone().unwrap_or_else(|| out_dir.join("bathtub.csv"));
    profile.write_csv(create(&csv_path)?)?;
    let memory = cfg.memory();
    let (pre, post) = (memory.div_ceil(2), memory / 2);
    let (edge, center) = profile.edge_center_means(pre, post);
    println!("edge_mean = {}", sig12(edge));
    println!("center_mean = {}", sig12(center));
    write_sidecar(
        out_dir,
        "bathtub",
        &json!({
            "subcommand": "bathtub",
            "seed": cfg.seed,
            "config": cfg,
            "request": req,
            "csv": csv_path,
            "edge_mean": edge,
            "center_mean": center,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn quantizer_table(a: &TableArgs, out_dir: &Path) -> Result<ExitCode> {
    let kind = parse_quantizer(&a.quantizer)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "b,delta_over_sigma,rho_q,approx")?;
    let mut rows = Vec::new();
    for b in 1..=a.max_bits {
        let q = design(kind, b, 1.0)?;
        writeln!(w, "{b},{},{},{}", sig12(q.step), sig12(q.rho_q), sig12(distortion_factor(b)))?;
        rows.push(json!({"b": b, "delta_over_sigma": q.step, "rho_q": q.rho_q, "approx": distortion_factor(b)}));
    }
    write_sidecar(
        out_dir,
        "quantizer-table",
        &json!({"subcommand": "quantizer-table", "config": {"max_bits": a.max_bits, "quantizer": kind}, "rows": rows}),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn validate(a: &ValidateArgs, out_dir: &Path) -> Result<ExitCode> {
    let fault = match a.fault.as_deref() {
        None => Fault::None,
        Some("circulant") => Fault::Circulant,
        Some(other) => bail!("unknown fault '{other}' (expected circulant)"),
    };
    let results = run_properties(fault)?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        for r in &results {
            println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        }
    }
    write_sidecar(
        out_dir,
        "validate",
        &json!({"subcommand": "validate", "config": {"fault": a.fault}, "results": results}),
    )?;
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed properties: {}", failed.join(", "));
        Ok(ExitCode::FAILURE)
    }
}
