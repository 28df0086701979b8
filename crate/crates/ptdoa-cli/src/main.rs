use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use ptdoa::analysis::{bound_report, concurrent_tdoa_variance};
use ptdoa::estimator::{build_stds_system, solve_mwls, AnchorPair, PairSet};
use ptdoa::experiment::{
    evaluate_gates, preset, run_experiment, write_outputs, ExperimentResult, ExperimentSpec,
    PRESET_NAMES,
};
use ptdoa::localization::{localize_at_frame, CovarianceMode};
use ptdoa::protocol::{simulate_campaign, CampaignLog};
use ptdoa::scenario::{sample_scenario, true_tdoa, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "ptdoa",
    about = "Instantaneous TDOA estimation and mobile-target localization simulator",
    version
)]
struct Cli {
    /// Master RNG seed.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Monte Carlo trials per sweep point (experiment subcommand).
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Directory for generated files.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario configuration JSON; defaults mirror the reference setup.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the number of frames.
    #[arg(long)]
    frames: Option<usize>,

    /// Replay a stored campaign: base path of `<base>.csv` + `<base>.json`.
    #[arg(long, conflicts_with = "config")]
    input: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CovarianceArg {
    Diagonal,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one campaign and store it as CSV plus a JSON scenario echo.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output base name under the output directory.
        #[arg(long, default_value = "campaign")]
        output: String,
    },
    /// Estimate instantaneous TDOAs for a pair selection.
    Estimate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// set1 | set2 | set3 | comma-separated list like 1-2,3-4
        #[arg(long, default_value = "set1")]
        pairs: String,
        /// Number of polynomial coefficients L.
        #[arg(long, short = 'L', default_value_t = 2)]
        order: usize,
        /// anchor-j | frame-starts | comma-separated local times
        #[arg(long, default_value = "anchor-j")]
        query: String,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Localize the target at frame starts.
    Localize {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, short = 'L', default_value_t = 2)]
        order: usize,
        #[arg(long, value_enum, default_value_t = CovarianceArg::Diagonal)]
        covariance: CovarianceArg,
        /// Reference anchor id.
        #[arg(long, default_value_t = 1)]
        reference: usize,
        /// Frame to solve, or all frames when omitted.
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the per-frame bound table for a configuration.
    Crlb {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, short = 'L', default_value_t = 2)]
        order: usize,
        /// Anchor pair for the theoretical prediction, like 1-2.
        #[arg(long, default_value = "1-2")]
        pair: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named preset or an experiment spec JSON file.
    Experiment {
        /// Preset name or path to a spec JSON.
        target: String,
        /// Evaluate the preset's pass criteria and exit nonzero on failure.
        #[arg(long)]
        check: bool,
        /// List available presets and exit.
        #[arg(long)]
        list: bool,
    },
}

fn load_config(args: &ScenarioArgs) -> Result<ScenarioConfig> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_str(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => ScenarioConfig::default(),
    };
    if let Some(frames) = args.frames {
        config.num_frames = frames;
    }
    Ok(config)
}

/// Sample or replay a campaign depending on the scenario arguments.
fn obtain_campaign(args: &ScenarioArgs, seed: u64) -> Result<CampaignLog> {
    if let Some(base) = &args.input {
        let json = fs::read_to_string(base.with_extension("json"))
            .with_context(|| format!("reading {}.json", base.display()))?;
        let scenario: Scenario = serde_json::from_str(&json)?;
        let csv = fs::File::open(base.with_extension("csv"))
            .with_context(|| format!("opening {}.csv", base.display()))?;
        return Ok(CampaignLog::read_csv(scenario, std::io::BufReader::new(csv))?);
    }
    let config = load_config(args)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scenario = sample_scenario(&config, &mut rng)?;
    Ok(simulate_campaign(&scenario, &mut rng)?)
}

fn parse_pairs(text: &str, num_anchors: usize) -> Result<Vec<AnchorPair>> {
    let set = match text {
        "set1" => PairSet::Set1,
        "set2" => PairSet::Set2,
        "set3" => PairSet::Set3,
        list => {
            let pairs = list
                .split(',')
                .map(|p| {
                    let (a, b) = p
                        .split_once('-')
                        .with_context(|| format!("pair '{p}' is not of the form i-j"))?;
                    Ok(AnchorPair::new(a.trim().parse()?, b.trim().parse()?)?)
                })
                .collect::<Result<Vec<_>>>()?;
            PairSet::Explicit(pairs)
        }
    };
    Ok(set.pairs(num_anchors))
}

fn writer(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            Box::new(fs::File::create(path)?)
        }
        None => Box::new(std::io::stdout()),
    })
}

fn cmd_simulate(cli: &Cli, args: &ScenarioArgs, output: &str) -> Result<()> {
    let log = obtain_campaign(args, cli.seed)?;
    fs::create_dir_all(&cli.out_dir)?;
    let base = cli.out_dir.join(output);
    let mut csv = fs::File::create(base.with_extension("csv"))?;
    log.write_csv(&mut csv)?;
    fs::write(base.with_extension("json"), log.scenario_json()?)?;
    eprintln!(
        "wrote {}.csv and {}.json ({} frames, {} anchors)",
        base.display(),
        base.display(),
        log.num_frames(),
        log.scenario.num_anchors()
    );
    Ok(())
}

fn cmd_estimate(
    cli: &Cli,
    args: &ScenarioArgs,
    pairs: &str,
    order: usize,
    query: &str,
    out: &Option<PathBuf>,
) -> Result<()> {
    let log = obtain_campaign(args, cli.seed)?;
    let sc = &log.scenario;
    let pairs = parse_pairs(pairs, sc.num_anchors())?;
    let mut w = writer(out)?;
    writeln!(w, "pair,t_query,tdoa_est,tdoa_var,tdoa_true,error")?;
    for pair in pairs {
        let model = solve_mwls(&build_stds_system(&log, pair, order)?)?;
        // (local query time, global truth epoch)
        let queries: Vec<(f64, f64)> = match query {
            "anchor-j" => (1..=log.num_frames())
                .map(|m| {
                    let rec = log.reception(m, pair.second)?;
                    Ok((rec.rx_timestamp, rec.true_rx_global))
                })
                .collect::<Result<_>>()?,
            "frame-starts" => (1..=log.num_frames())
                .map(|m| {
                    let t = sc.timing.tx_time(m, 1);
                    (sc.target_clock.local_time(t), t)
                })
                .collect(),
            list => list
                .split(',')
                .map(|t| {
                    let t_local: f64 = t.trim().parse()?;
                    Ok((t_local, sc.target_clock.global_time(t_local)))
                })
                .collect::<Result<_>>()?,
        };
        for (t_local, t_global) in queries {
            let (est, var) = model.evaluate(t_local);
            let truth = true_tdoa(
                sc.anchor(pair.first)?,
                sc.anchor(pair.second)?,
                &sc.trajectory,
                t_global,
            )?;
            writeln!(w, "{pair},{t_local},{est},{var},{truth},{}", est - truth)?;
        }
    }
    Ok(())
}

fn cmd_localize(
    cli: &Cli,
    args: &ScenarioArgs,
    order: usize,
    covariance: CovarianceArg,
    reference: usize,
    frame: Option<usize>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let log = obtain_campaign(args, cli.seed)?;
    let sc = &log.scenario;
    let mode = match covariance {
        CovarianceArg::Diagonal => CovarianceMode::Diagonal,
        CovarianceArg::Structured => CovarianceMode::Structured,
    };
    let frames: Vec<usize> = match frame {
        Some(m) => vec![m],
        None => (1..=log.num_frames()).collect(),
    };
    let dim = sc.dimension;
    let mut w = writer(out)?;
    let coords = |prefix: &str| {
        (0..dim)
            .map(|k| format!("{prefix}_{}", ["x", "y", "z"][k]))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(
        w,
        "frame,t_u,{},{},error_m,nees,stage2_fallback",
        coords("est"),
        coords("true")
    )?;
    for m in frames {
        let fix = localize_at_frame(&log, order, m, mode, reference)?;
        let truth = &log.frame_start_positions[m - 1];
        let err = (&fix.position - truth).norm();
        let nees = ptdoa::metrics::nees(&(&fix.position - truth), &fix.covariance)
            .unwrap_or(f64::NAN);
        let est_cols: Vec<String> = fix.position.iter().map(|x| format!("{x}")).collect();
        let true_cols: Vec<String> = truth.iter().map(|x| format!("{x}")).collect();
        writeln!(
            w,
            "{m},{},{},{},{err},{nees},{}",
            fix.epoch,
            est_cols.join(","),
            true_cols.join(","),
            fix.diagnostics.stage2_fallback as u8,
        )?;
    }
    Ok(())
}

fn cmd_crlb(
    _cli: &Cli,
    args: &ScenarioArgs,
    order: usize,
    pair: &str,
    out: &Option<PathBuf>,
) -> Result<()> {
    let config = load_config(args)?;
    let (a, b) = pair
        .split_once('-')
        .with_context(|| format!("pair '{pair}' is not of the form i-j"))?;
    let pair = AnchorPair::new(a.trim().parse()?, b.trim().parse()?)?;
    let noise = config.noise.to_model()?;
    let report = bound_report(
        pair.slot_offset(),
        config.frame_length_s,
        config.slot_length_s,
        config.num_frames,
        order,
        &noise,
    )?;
    let mut w = writer(out)?;
    writeln!(
        w,
        "# sigma_n^2 = {}, r1 = {}, r2 = {}, |F2|/|F1| = {}",
        concurrent_tdoa_variance(&noise),
        report.r1,
        report.r2,
        report.f_ratio
    )?;
    writeln!(w, "frame,t_query,crlb1_var,crlb2_var,theory_var")?;
    for m in 0..config.num_frames {
        writeln!(
            w,
            "{},{},{},{},{}",
            m + 1,
            report.query_times[m],
            report.crlb1_variance[m],
            report.crlb2_variance[m],
            report.theoretical_variance[m]
        )?;
    }
    Ok(())
}

fn cmd_experiment(cli: &Cli, target: &str, check: bool, list: bool) -> Result<()> {
    if list {
        for name in PRESET_NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let mut specs: Vec<ExperimentSpec> = if target.ends_with(".json") {
        let text = fs::read_to_string(Path::new(target))
            .with_context(|| format!("reading {target}"))?;
        match serde_json::from_str::<Vec<ExperimentSpec>>(&text) {
            Ok(v) => v,
            Err(_) => vec![serde_json::from_str(&text)?],
        }
    } else {
        preset(target)?
    };
    for spec in &mut specs {
        if let Some(trials) = cli.trials {
            spec.trials = trials;
        }
        spec.seed = cli.seed;
    }
    let mut results: Vec<ExperimentResult> = Vec::new();
    for spec in &specs {
        eprintln!(
            "running {} ({} trials per point)...",
            spec.name, spec.trials
        );
        let result = run_experiment(spec)?;
        let path = write_outputs(&result, &cli.out_dir)?;
        eprintln!("  -> {} ({:.1}s)", path.display(), result.runtime_seconds);
        results.push(result);
    }
    if check {
        let gates = evaluate_gates(target, &results);
        if gates.is_empty() {
            eprintln!("no pass criteria attached to '{target}'");
            return Ok(());
        }
        let mut failed = 0;
        for g in &gates {
            println!(
                "{} {} ({})",
                if g.passed { "PASS" } else { "FAIL" },
                g.name,
                g.detail
            );
            if !g.passed {
                failed += 1;
            }
        }
        if failed > 0 {
            bail!("{failed} of {} checks failed", gates.len());
        }
    }
    Ok(())
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(err) => {
            // a closed pipe on stdout is not an error for a CLI filter
            if let Some(io) = err.downcast_ref::<std::io::Error>() {
                if io.kind() == std::io::ErrorKind::BrokenPipe {
                    return;
                }
            }
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Simulate { scenario, output } => cmd_simulate(&cli, scenario, output),
        Command::Estimate {
            scenario,
            pairs,
            order,
            query,
            out,
        } => cmd_estimate(&cli, scenario, pairs, *order, query, out),
        Command::Localize {
            scenario,
            order,
            covariance,
            reference,
            frame,
            out,
        } => cmd_localize(&cli, scenario, *order, *covariance, *reference, *frame, out),
        Command::Crlb {
            scenario,
            order,
            pair,
            out,
        } => cmd_crlb(&cli, scenario, *order, pair, out),
        Command::Experiment {
            target,
            check,
            list,
        } => cmd_experiment(&cli, target, *check, *list),
    }
}
