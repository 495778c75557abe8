//! Command-line front end: analytic pass evaluation and trade sweeps,
//! finite-key calculation, Monte Carlo stream generation, clock sync and
//! sifting, and telemetry fitting.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qkdlink_core::event_sim::{load_scenario, simulate_scenario, BeaconParams, LossProfile};
use qkdlink_core::finite_key::{
    asymptotic_key_bits, finite_key_length, finite_key_map, keys_256, FiniteKeyInput,
};
use qkdlink_core::params::{load_params, SystemParams};
use qkdlink_core::sync::{
    apply_correction, find_coincidences, raw_key_bits, sift_and_estimate, sync_clocks, SyncOptions,
};
use qkdlink_core::telemetry::{
    darkcount_analysis, fit_correlation_curves, read_correlation_csv, read_darkcount_csv,
};
use qkdlink_core::timestamps::{read_timestamps, write_timestamps};
use qkdlink_core::trade::{loss_sweep, run_pass_with, PassOptions, SweepSpec};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "qkdlink",
    about = "Entanglement-based satellite QKD link modeling and timestamp processing",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one pass: geometry, link loss and rates per time sample.
    Pass(PassArgs),
    /// 2-D parameter sweep of a pass metric.
    Sweep(SweepArgs),
    /// Finite-size secret key length for a raw key, or a full (n, QBER) map.
    FiniteKey(FiniteKeyArgs),
    /// Generate Monte Carlo timestamp streams for a scenario.
    SimulateEvents(SimulateArgs),
    /// Recover the clock relation from two streams; optionally sift.
    Sync(SyncArgs),
    /// Fit polarization-correlation curves and estimate the CHSH statistic.
    ChshFit(ChshArgs),
    /// Fit dark counts vs temperature; extrapolate and trend over days.
    DarkcountFit(DarkcountArgs),
    /// Static-link sweep over introduced channel loss (table-top mode).
    LossSweep(LossSweepArgs),
}

#[derive(Args)]
struct PassArgs {
    /// Parameter config file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Emit only t_s, elevation_deg, slant_range_km.
    #[arg(long)]
    geometry_only: bool,
    /// Add the per-contribution loss columns.
    #[arg(long)]
    with_link: bool,
    /// Discard samples whose instantaneous QBER exceeds this fraction.
    #[arg(long)]
    qber_cap: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep specification (JSON: axis1, axis2, metric).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output prefix; writes <prefix>.csv and <prefix>_argmax.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FiniteKeyArgs {
    /// Raw (sifted) key size, bits.
    #[arg(long)]
    n: Option<u64>,
    /// Average QBER, fraction.
    #[arg(long)]
    qber: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    eps_cor: f64,
    #[arg(long, default_value_t = 1e-10)]
    eps_sec: f64,
    /// Error-correction inefficiency.
    #[arg(long, default_value_t = 1.1)]
    ec_f: f64,
    /// Emit a CSV grid over n and QBER instead of a single evaluation.
    #[arg(long)]
    map: bool,
    #[arg(long, default_value_t = 1e4)]
    n_min: f64,
    #[arg(long, default_value_t = 1e6)]
    n_max: f64,
    #[arg(long, default_value_t = 25)]
    n_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    qber_min: f64,
    #[arg(long, default_value_t = 0.12)]
    qber_max: f64,
    #[arg(long, default_value_t = 25)]
    qber_steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (params plus sim./clock./beacon. keys).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario duration, s.
    #[arg(long)]
    duration: Option<f64>,
    /// Override with a fixed channel loss, dB.
    #[arg(long)]
    loss_db: Option<f64>,
    #[arg(long)]
    out_space: PathBuf,
    #[arg(long)]
    out_ground: PathBuf,
    /// Sidecar CSV with per-record origins (oracle use only).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct SyncArgs {
    /// Space-side timestamp stream.
    #[arg(long)]
    space: PathBuf,
    /// Ground-side timestamp stream.
    #[arg(long)]
    ground: PathBuf,
    /// Beacon pulse rate, Hz.
    #[arg(long, default_value_t = 1000.0)]
    beacon_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    pulse_width_ns: f64,
    #[arg(long, default_value_t = 5e-3)]
    search_window_s: f64,
    #[arg(long, default_value_t = 10.0)]
    segment_s: f64,
    /// Fit the quadratic (Doppler-like) drift term.
    #[arg(long)]
    quadratic: bool,
    /// Also find coincidences, sift and estimate the QBER.
    #[arg(long)]
    sift: bool,
    /// Parameter config for the coincidence window (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the sifted raw key (packed bits, MSB first).
    #[arg(long)]
    out_key: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChshArgs {
    /// Correlation scan CSV: setting,angle_deg,coincidences[,accidentals].
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DarkcountArgs {
    /// Telemetry CSV: temp_degC,dark_cps[,day].
    #[arg(long = "in")]
    input: PathBuf,
    /// Temperature to extrapolate to, deg C.
    #[arg(long, default_value_t = 10.0)]
    extrapolate: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossSweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    min_db: f64,
    #[arg(long, default_value_t = 50.0)]
    max_db: f64,
    #[arg(long, default_value_t = 26)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn params_from(config: &Option<PathBuf>) -> Result<SystemParams> {
    match config {
        Some(path) => {
            // params files and full scenario files are both accepted
            Ok(load_params(path)
                .or_else(|_| load_scenario(path).map(|s| s.params))
                .with_context(|| format!("loading config {}", path.display()))?)
        }
        None => Ok(SystemParams::default()),
    }
}

fn cmd_pass(args: &PassArgs) -> Result<()> {
    let params = params_from(&args.config)?;
    let report = run_pass_with(
        &params,
        &PassOptions {
            qber_cap: args.qber_cap,
        },
    )?;
    let content = match args.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => {
            let mut csv = String::new();
            if args.geometry_only {
                csv.push_str("t_s,elevation_deg,slant_range_km\n");
                for s in &report.samples {
                    writeln!(csv, "{},{},{}", s.t_s, s.elevation_deg, s.slant_range_km)?;
                }
            } else {
                csv.push_str("t_s,elevation_deg,slant_range_km");
                if args.with_link {
                    csv.push_str(
                        ",geometric_loss_db,pointing_loss_db,atmospheric_loss_db,optics_loss_db",
                    );
                }
                csv.push_str(
                    ",loss_db,singles_space_cps,singles_ground_cps,coinc_true_cps,coinc_acc_cps,coinc_noise_cps,qber,sifted_rate_cps,key_cps,kept\n",
                );
                for s in &report.samples {
                    write!(csv, "{},{},{}", s.t_s, s.elevation_deg, s.slant_range_km)?;
                    if args.with_link {
                        write!(
                            csv,
                            ",{},{},{},{}",
                            s.loss.geometric_loss_db,
                            s.loss.pointing_loss_db,
                            s.loss.atmospheric_loss_db,
                            s.loss.optics_loss_db
                        )?;
                    }
                    writeln!(
                        csv,
                        ",{},{},{},{},{},{},{},{},{},{}",
                        s.loss.total_loss_db,
                        s.rate.singles_space_cps,
                        s.rate.singles_ground_cps,
                        s.rate.coinc_true_cps,
                        s.rate.coinc_acc_cps,
                        s.rate.coinc_noise_cps,
                        s.rate.qber,
                        s.rate.sifted_rate_cps,
                        s.rate.asym_key_rate_cps,
                        s.kept
                    )?;
                }
            }
            csv
        }
    };
    emit(&args.out, &content)?;
    eprintln!(
        "pass: {} samples over {:.0} s; raw {:.0} bits, avg QBER {:.3}%, asymptotic {:.0} bits, finite {} bits ({} AES-256 keys)",
        report.samples.len(),
        report.duration_s,
        report.raw_key_bits,
        100.0 * report.avg_qber,
        report.asym_key_bits,
        report.finite_key_bits,
        report.finite_key_aes256
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let params = params_from(&args.config)?;
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading spec {}", args.spec.display()))?;
    let spec: SweepSpec = serde_json::from_str(&text).context("parsing sweep spec JSON")?;
    let result = qkdlink_core::trade::run_sweep(&spec, &params)?;
    let mut csv = String::new();
    write!(csv, "{}", spec.axis1.path)?;
    for v2 in &result.values2 {
        write!(csv, ",{}={}", spec.axis2.path, v2)?;
    }
    csv.push('\n');
    for (i, v1) in result.values1.iter().enumerate() {
        write!(csv, "{v1}")?;
        for v in &result.matrix[i] {
            write!(csv, ",{v}")?;
        }
        csv.push('\n');
    }
    let argmax = serde_json::json!({
        "metric": spec.metric,
        "axis1_path": spec.axis1.path,
        "axis2_path": spec.axis2.path,
        "argmax_axis1": result.argmax_v1,
        "argmax_axis2": result.argmax_v2,
        "argmax_metric": result.argmax_metric,
        "argmax_mean_pairs_per_window": result.argmax_mean_pairs_per_window,
    });
    match &args.out {
        Some(prefix) => {
            let csv_path = prefix.with_extension("csv");
            std::fs::write(&csv_path, &csv)?;
            let json_path = {
                let mut stem = prefix
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "sweep".into());
                stem.push_str("_argmax.json");
                prefix.with_file_name(stem)
            };
            std::fs::write(&json_path, serde_json::to_string_pretty(&argmax)? + "\n")?;
            eprintln!(
                "sweep: wrote {} and {}",
                csv_path.display(),
                json_path.display()
            );
        }
        None => {
            print!("{csv}");
            eprintln!("{}", serde_json::to_string(&argmax)?);
        }
    }
    Ok(())
}

fn cmd_finite_key(args: &FiniteKeyArgs) -> Result<()> {
    if args.map {
        let n_grid: Vec<u64> = (0..args.n_steps)
            .map(|i| {
                let f = i as f64 / (args.n_steps - 1).max(1) as f64;
                (args.n_min + (args.n_max - args.n_min) * f) as u64
            })
            .collect();
        let q_grid: Vec<f64> = (0..args.qber_steps)
            .map(|i| {
                let f = i as f64 / (args.qber_steps - 1).max(1) as f64;
                args.qber_min + (args.qber_max - args.qber_min) * f
            })
            .collect();
        let map = finite_key_map(&n_grid, &q_grid, args.eps_cor, args.eps_sec, args.ec_f);
        let mut csv = String::from("n_raw");
        for q in &q_grid {
            write!(csv, ",qber={q}")?;
        }
        csv.push('\n');
        for (i, n) in n_grid.iter().enumerate() {
            write!(csv, "{n}")?;
            for v in &map[i] {
                write!(csv, ",{v}")?;
            }
            csv.push('\n');
        }
        emit(&args.out, &csv)?;
        return Ok(());
    }
    let (n, qber) = match (args.n, args.qber) {
        (Some(n), Some(q)) => (n, q),
        _ => bail!("--n and --qber are required unless --map is given"),
    };
    let input = FiniteKeyInput {
        n_raw: n,
        qber_avg: qber,
        eps_cor: args.eps_cor,
        eps_sec: args.eps_sec,
        f: args.ec_f,
    };
    input.validate()?;
    let bits = finite_key_length(&input);
    let json = serde_json::json!({
        "n_raw": n,
        "qber": qber,
        "finite_key_bits": bits,
        "aes256_keys": keys_256(bits),
        "asymptotic_bits": asymptotic_key_bits(n, qber, args.ec_f),
    });
    emit(&args.out, &(serde_json::to_string_pretty(&json)? + "\n"))?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut scenario = load_scenario(&args.config)
        .with_context(|| format!("loading scenario {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(duration) = args.duration {
        scenario.duration_s = duration;
    }
    if let Some(loss) = args.loss_db {
        scenario.loss = LossProfile::Static(loss);
    }
    let out = simulate_scenario(&scenario)?;
    write_timestamps(&out.space, &args.out_space)?;
    write_timestamps(&out.ground, &args.out_ground)?;
    if let Some(truth_path) = &args.truth {
        let mut csv = String::from("stream,index,time_ps,channel,flags,origin,id\n");
        for (label, records, origins) in [
            ("space", &out.space, &out.space_origin),
            ("ground", &out.ground, &out.ground_origin),
        ] {
            for (i, (r, o)) in records.iter().zip(origins).enumerate() {
                let id = match o {
                    qkdlink_core::event_sim::EventOrigin::Pair(id) => id.to_string(),
                    qkdlink_core::event_sim::EventOrigin::Beacon(id) => id.to_string(),
                    _ => String::new(),
                };
                writeln!(
                    csv,
                    "{label},{i},{},{},{},{},{id}",
                    r.time_ps,
                    r.channel,
                    r.flags,
                    o.label()
                )?;
            }
        }
        std::fs::write(truth_path, csv)?;
    }
    eprintln!(
        "simulated {:.1} s: {} space records -> {}, {} ground records -> {}",
        out.duration_s,
        out.space.len(),
        args.out_space.display(),
        out.ground.len(),
        args.out_ground.display()
    );
    Ok(())
}

fn cmd_sync(args: &SyncArgs) -> Result<()> {
    let space = read_timestamps(&args.space)
        .with_context(|| format!("reading {}", args.space.display()))?;
    let ground = read_timestamps(&args.ground)
        .with_context(|| format!("reading {}", args.ground.display()))?;
    let beacon = BeaconParams {
        rate_hz: args.beacon_rate,
        pulse_width_ns: args.pulse_width_ns,
        mean_photons_per_pulse_ground: 1.0,
    };
    let opts = SyncOptions {
        search_window_s: args.search_window_s,
        segment_s: args.segment_s,
        quadratic: args.quadratic,
        ..SyncOptions::default()
    };
    let sync = sync_clocks(&space, &ground, &beacon, &opts)?;
    let mut json = serde_json::json!({ "sync": sync });
    if args.sift {
        let params = params_from(&args.config)?;
        let corrected = apply_correction(&ground, &sync);
        let pairs = find_coincidences(&space, &corrected, params.protocol.tau_c_ns);
        let duration_s = match (space.first(), space.last()) {
            (Some(a), Some(b)) => (b.time_ps - a.time_ps) as f64 * 1e-12,
            _ => 0.0,
        };
        let report = sift_and_estimate(&space, &corrected, &pairs, duration_s);
        json["sift"] = serde_json::to_value(report)?;
        if let Some(key_path) = &args.out_key {
            let bits = raw_key_bits(&space, &corrected, &pairs);
            let mut packed = vec![0u8; bits.len().div_ceil(8)];
            for (i, bit) in bits.iter().enumerate() {
                if *bit {
                    packed[i / 8] |= 0x80 >> (i % 8);
                }
            }
            std::fs::write(key_path, &packed)?;
            json["raw_key_bits"] = serde_json::json!(bits.len());
        }
    }
    emit(&args.out, &(serde_json::to_string_pretty(&json)? + "\n"))?;
    Ok(())
}

fn cmd_chsh(args: &ChshArgs) -> Result<()> {
    let data = read_correlation_csv(&args.input)?;
    let fit = fit_correlation_curves(&data)?;
    emit(&args.out, &(serde_json::to_string_pretty(&fit)? + "\n"))?;
    eprintln!(
        "S = {:.3} ± {:.3} (V_HV {:.4}, V_DA {:.4})",
        fit.s_value, fit.s_err, fit.visibility_hv, fit.visibility_da
    );
    Ok(())
}

fn cmd_darkcount(args: &DarkcountArgs) -> Result<()> {
    let rows = read_darkcount_csv(&args.input)?;
    let fit = darkcount_analysis(&rows, args.extrapolate)?;
    emit(&args.out, &(serde_json::to_string_pretty(&fit)? + "\n"))?;
    Ok(())
}

fn cmd_loss_sweep(args: &LossSweepArgs) -> Result<()> {
    let params = params_from(&args.config)?;
    let losses: Vec<f64> = (0..args.steps)
        .map(|i| {
            let f = i as f64 / (args.steps - 1).max(1) as f64;
            args.min_db + (args.max_db - args.min_db) * f
        })
        .collect();
    let points = loss_sweep(&params, &losses)?;
    let mut csv = String::from(
        "loss_db,heralding_signal,heralding_idler,coincidence_cps,qber,secret_key_rate_cps\n",
    );
    for p in &points {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            p.loss_db,
            p.heralding_signal,
            p.heralding_idler,
            p.coincidence_cps,
            p.qber,
            p.secret_key_rate_cps
        )?;
    }
    emit(&args.out, &csv)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Pass(args) => cmd_pass(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::FiniteKey(args) => cmd_finite_key(args),
        Command::SimulateEvents(args) => cmd_simulate(args),
        Command::Sync(args) => cmd_sync(args),
        Command::ChshFit(args) => cmd_chsh(args),
        Command::DarkcountFit(args) => cmd_darkcount(args),
        Command::LossSweep(args) => cmd_loss_sweep(args),
    }
}
