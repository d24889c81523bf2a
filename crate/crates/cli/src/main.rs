use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uwbed_core::adversary::{enlargement_m, PowerPolicy};
use uwbed_core::analytic::{self, AnalyticParams, Formula};
use uwbed_core::channel::LinkModel;
use uwbed_core::codec::CodeParams;
use uwbed_core::montecarlo::{self, Estimand, EstimateRow, TrialConfig};
use uwbed_core::protocol::{simulate_session, ReplayAttack, SessionScenario, DEFAULT_MAX_RANGE_M, DEFAULT_PRECISION_NS};
use uwbed_core::receiver::ReceiverConfig;
use uwbed_core::walkthrough::{run_example, ExampleInputs};

mod settings;

use settings::{parse_grid, Settings};

const SCHEMA_LINE: &str = "# schema=1";

#[derive(Parser)]
#[command(name = "uwbed", version, about = "UWB distance-enlargement detection lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a closed-form probability over a grid and write CSV.
    Analytic(AnalyticArgs),
    /// Run a Monte Carlo grid or protocol sessions and write CSV.
    Simulate(SimulateArgs),
    /// Compare simulation with the closed form on the reference grid.
    Validate(ValidateArgs),
    /// Print the worked threshold example.
    Example(ExampleArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` file with defaults for any long flag.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyticArgs {
    #[command(flatten)]
    common: Common,
    /// pevade, psa, pnoise, delta or within.
    #[arg(long)]
    formula: Option<String>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Injected pulses: `5`, `0:550`, `0:100:10` or `0,10,20`.
    #[arg(long)]
    k: Option<String>,
    /// High-energy noise intervals, same grid syntax as `--k`.
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    gamma_factor: Option<f64>,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    d1: Option<f64>,
    /// Claimed enlargement; defaults to the replay delay's distance.
    #[arg(long)]
    d2: Option<f64>,
    #[arg(long)]
    d3: Option<f64>,
    /// Extra loss of the received signal, dB.
    #[arg(long, allow_hyphen_values = true)]
    e: Option<f64>,
    #[arg(long)]
    p_sent: Option<f64>,
    #[arg(long)]
    p_adv: Option<f64>,
    /// Per-pulse SNR of the received signal, dB.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    /// Noise variance; overrides `--snr-db`.
    #[arg(long)]
    sigma2: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    link: LinkArgs,
    /// rcv, gated, e2e or session.
    #[arg(long)]
    estimand: Option<String>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    upsilon: Option<usize>,
    /// Pass-ratio cut for robust code verification.
    #[arg(long)]
    cut: Option<f64>,
    #[arg(long)]
    delay: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gain_db: Option<f64>,
    /// Sessions only: `none` or `replay`.
    #[arg(long)]
    attack: Option<String>,
    /// Sessions only: write trace lines here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Exit 1 when any estimate disagrees with the closed form.
    #[arg(long)]
    validate: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Args)]
struct ExampleArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    link: LinkArgs,
}

enum Outcome {
    Done,
    ValidationFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: bad arguments"));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Analytic(a) => cmd_analytic(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Example(a) => cmd_example(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(1),
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn open_out(common: &Common) -> Result<Box<dyn Write>> {
    Ok(match &common.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn grid_or(s: &Settings, key: &str, flag: Option<String>, default: &str) -> Result<Vec<i64>> {
    parse_grid(&s.get(key, flag, default.to_string())?)
}

fn cmd_analytic(a: AnalyticArgs) -> Result<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let formula: Formula = s.get("formula", a.formula, "pevade".into())?.parse()?;
    let alpha = s.get("alpha", a.alpha, 50)?;
    let beta = s.get("beta", a.beta, 100)?;
    let r = s.get("r", a.r, 1)?;
    let n = (alpha + beta).to_string();
    let all_k = format!("0:{n}");
    let mut base = AnalyticParams { alpha, beta, r, k: 0, zeta: f64::INFINITY, kappa: 0 };
    let grid = match formula {
        Formula::Evade => grid_or(&s, "k", a.k, &all_k)?,
        Formula::Success => {
            base.zeta = s.required("zeta", a.zeta)?;
            grid_or(&s, "k", a.k, &all_k)?
        }
        Formula::Noise => grid_or(&s, "kappa", a.kappa, &((alpha + beta) / 2).to_string())?,
        Formula::Delta => {
            let k: usize = s.required("k", a.k)?.trim().parse().map_err(|e| anyhow!("--k must be one count here: {e}"))?;
            base.k = k;
            (-(k as i64)..=k as i64).collect()
        }
        Formula::Within => {
            base.zeta = s.required("gamma-factor", a.gamma_factor)?;
            grid_or(&s, "k", a.k, &all_k)?
        }
    };
    let rows = analytic::sweep(formula, &base, &grid)?;
    let mut out = open_out(&a.common)?;
    writeln!(out, "{SCHEMA_LINE}")?;
    analytic::write_sweep_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(Outcome::Done)
}

fn parse_estimand(s: &str) -> Result<Option<Estimand>> {
    Ok(match s {
        "rcv" => Some(Estimand::RobustCheckEvasion),
        "gated" => Some(Estimand::GatedEvasion),
        "e2e" => Some(Estimand::EndToEnd),
        "session" => None,
        other => bail!("unknown estimand `{other}` (rcv, gated, e2e, session)"),
    })
}

fn build_link(s: &Settings, l: LinkArgs, delay_ns: f64) -> Result<LinkModel> {
    let mut link = LinkModel {
        d1_m: s.get("d1", l.d1, 10.0)?,
        d2_m: s.get("d2", l.d2, enlargement_m(delay_ns))?,
        d3_m: s.get("d3", l.d3, 10.0)?,
        e_db: s.get("e", l.e, -3.0)?,
        p_sent: s.get("p-sent", l.p_sent, 1.0)?,
        p_adv_sent: s.get("p-adv", l.p_adv, 1.0)?,
        sigma_n2: 0.0,
        taps: Vec::new(),
    };
    link.sigma_n2 = match s.opt("sigma2", l.sigma2)? {
        Some(v) => v,
        None => link.lambda_w2()? / 10f64.powf(s.get("snr-db", l.snr_db, 20.0)? / 10.0),
    };
    link.validate()?;
    Ok(link)
}

fn cmd_simulate(a: SimulateArgs) -> Result<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let estimand = parse_estimand(&s.get("estimand", a.estimand, "rcv".into())?)?;
    let params = CodeParams::new(s.get("alpha", a.alpha, 50)?, s.get("beta", a.beta, 50)?, s.get("r", a.r, 1)?)?;
    let ks = grid_or(&s, "k", a.k, "0")?
        .into_iter()
        .map(|k| usize::try_from(k).map_err(|_| anyhow!("negative k {k}")))
        .collect::<Result<Vec<_>>>()?;
    let trials = s.get("trials", a.trials, 10_000)?;
    let seed = s.get("seed", a.common.seed, 1)?;
    let delay = s.get("delay", a.delay, uwbed_core::adversary::DEFAULT_REPLAY_DELAY_NS)?;
    let gain_db = s.get("gain-db", a.gain_db, 2.0)?;
    let receiver = ReceiverConfig {
        upsilon: s.get("upsilon", a.upsilon, 100)?,
        p_noise_threshold: s.get("cut", a.cut, 0.8)?,
        r: params.r,
        ..ReceiverConfig::default()
    };
    let check = s.flag("validate", a.validate)?;

    let Some(estimand) = estimand else {
        let attack = s.get("attack", a.attack, "none".to_string())?;
        let link = build_link(&s, a.link, 0.0)?;
        return run_sessions(&a.common, a.trace, params, link, receiver, &ks, trials, seed, &attack, delay, gain_db);
    };

    let link = match estimand {
        Estimand::EndToEnd => build_link(&s, a.link, delay)?,
        _ => TrialConfig::unity(params, estimand, vec![], 1, 0).link,
    };
    let cfg = TrialConfig {
        params,
        power: PowerPolicy::receiver_matched(&link)?,
        link,
        estimand,
        ks,
        zeta: s.get("zeta", a.zeta, f64::INFINITY)?,
        replay_delay_ns: delay,
        replay_gain_db: gain_db,
        receiver,
        trials,
        base_seed: seed,
    };
    let rows = montecarlo::run_grid(&cfg)?;
    let mut out = open_out(&a.common)?;
    writeln!(out, "{SCHEMA_LINE}")?;
    montecarlo::write_estimates_csv(&rows, &mut out)?;
    out.flush()?;
    let flagged = rows.iter().filter(|r| r.flagged).count();
    if check && flagged > 0 {
        eprintln!("{flagged} of {} grid points disagree with the closed form", rows.len());
        return Ok(Outcome::ValidationFailed);
    }
    Ok(Outcome::Done)
}

#[allow(clippy::too_many_arguments)]
fn run_sessions(
    common: &Common,
    trace: Option<PathBuf>,
    params: CodeParams,
    link: LinkModel,
    receiver: ReceiverConfig,
    ks: &[usize],
    trials: u64,
    seed: u64,
    attack: &str,
    delay: f64,
    gain_db: f64,
) -> Result<Outcome> {
    let replay = match attack {
        "none" => false,
        "replay" => true,
        other => bail!("unknown attack `{other}` (none, replay)"),
    };
    let mut out = open_out(common)?;
    let mut trace_out = trace
        .map(|p| File::create(&p).map(BufWriter::new).with_context(|| format!("creating {}", p.display())))
        .transpose()?;
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "session,k,phase,t_commit_ns,t_verify_ns")?;
    for &k in ks {
        let attack = (replay || k > 0).then(|| -> Result<ReplayAttack> {
            Ok(ReplayAttack { delay_ns: delay, gain_db, k, power: PowerPolicy::receiver_matched(&link)? })
        });
        let scenario = SessionScenario {
            params,
            link: link.clone(),
            receiver: receiver.clone(),
            max_range_m: DEFAULT_MAX_RANGE_M,
            precision_ns: DEFAULT_PRECISION_NS,
            attack: attack.transpose()?,
        };
        for i in 0..trials {
            let report = simulate_session(&scenario, uwbed_core::derive_seed(seed, &[k as u64, i]))?;
            let st = &report.state;
            let fmt = |t: Option<f64>| t.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(out, "{i},{k},{},{},{}", st.phase, fmt(st.t_commit_tof), fmt(st.t_verify_tof))?;
            if let Some(t) = trace_out.as_mut() {
                for line in st.trace() {
                    writeln!(t, "session {i} k {k}: {line}")?;
                }
            }
        }
    }
    out.flush()?;
    if let Some(t) = trace_out.as_mut() {
        t.flush()?;
    }
    Ok(Outcome::Done)
}

fn cmd_validate(a: ValidateArgs) -> Result<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let trials = s.get("trials", a.trials, 100_000)?;
    let seed = s.get("seed", a.common.seed, 2024)?;
    let mut rows: Vec<(CodeParams, EstimateRow)> = Vec::new();
    for beta in [50, 150] {
        for r in [1, 2, 8] {
            let params = CodeParams::new(50, beta, r)?;
            let ks = (0..=50 + beta).step_by(10).collect();
            let cfg = TrialConfig::unity(params, Estimand::RobustCheckEvasion, ks, trials, seed);
            rows.extend(montecarlo::run_grid(&cfg)?.into_iter().map(|row| (params, row)));
        }
    }
    let mut out = open_out(&a.common)?;
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "alpha,beta,r,k,trials,successes,p_hat,ci_low,ci_high,analytic_p,covered,flagged")?;
    for (p, row) in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:e},{:e},{:e},{:e},{},{}",
            p.alpha,
            p.beta,
            p.r,
            row.k,
            row.trials,
            row.successes,
            row.p_hat,
            row.ci_low,
            row.ci_high,
            row.analytic_p.unwrap_or(f64::NAN),
            row.covers_analytic().unwrap_or(false),
            row.flagged
        )?;
    }
    out.flush()?;
    let covered = rows.iter().filter(|(_, r)| r.covers_analytic() == Some(true)).count();
    let flagged = rows.iter().filter(|(_, r)| r.flagged).count();
    eprintln!("{covered}/{} points cover the closed form; {flagged} flagged beyond 4 SE", rows.len());
    if flagged as f64 >= 0.01 * rows.len() as f64 {
        return Ok(Outcome::ValidationFailed);
    }
    Ok(Outcome::Done)
}

fn cmd_example(a: ExampleArgs) -> Result<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let d = ExampleInputs::default();
    let l = a.link;
    let inputs = ExampleInputs {
        d1_m: s.get("d1", l.d1, d.d1_m)?,
        d2_m: s.get("d2", l.d2, d.d2_m)?,
        d3_m: s.get("d3", l.d3, d.d3_m)?,
        e_db: s.get("e", l.e, d.e_db)?,
        p_sent_w: s.get("p-sent", l.p_sent, d.p_sent_w)?,
        p_adv_sent_w: s.get("p-adv", l.p_adv, d.p_adv_sent_w)?,
    };
    let report = run_example(&inputs)?;
    let mut out = open_out(&a.common)?;
    writeln!(out, "{report}")?;
    out.flush()?;
    Ok(Outcome::Done)
}
