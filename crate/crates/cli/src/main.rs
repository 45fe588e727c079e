//! `rmab`: generate instances, run policy experiments, and verify the
//! library's analytical properties on randomized instances.
//!
//! Exit codes: 0 on success, 1 when a `verify` suite finds violations, 2 on
//! usage errors (bad flags, malformed files, invalid instances).

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rmab_core::datasets::{generate_cpap, generate_synthetic, CpapSpec, SyntheticSpec};
use rmab_core::model::{load_instance, save_instance, validate_instance, RmabInstance};
use rmab_core::oracle::{
    bellman_operator, gap_statistics, iterate_to_fixed_point, per_arm_converged_lambda,
    soft_operator, JointQTable, OperatorKind,
};
use rmab_core::rng::{substream, StreamKind};
use rmab_core::sim::{histogram_csv, metrics_csv, run_experiment, ExperimentConfig, PolicySpec};
use rmab_core::softfair::{
    run_softfair_episode_observed, top_k_by_logit, EpisodeStreams, InclusionMode, SoftFairConfig,
    SoftFairState,
};
use rmab_core::whittle::{build_index_table, INDEX_TOL};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rmab", version, about = "Restless bandit experiment driver")]
struct Cli {
    /// Cap on worker threads (falls back to RMAB_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Run policies on an instance and write metrics.
    Run(RunArgs),
    /// Check analytical properties on randomized instances.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator family.
    #[arg(long, value_enum)]
    kind: GenKind,
    /// Number of arms (at least 2).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output instance path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Synthetic,
    Cpap,
}

#[derive(Args, Default)]
struct RunArgs {
    /// Instance file produced by `gen` (or hand-written JSON).
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Comma list: none,random,myopic,fairmyopic,softfair,softfair-greedy,oracle.
    #[arg(long)]
    policies: Option<String>,
    /// Override the instance budget.
    #[arg(long)]
    k: Option<usize>,
    /// Override the instance horizon.
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Softmax multiplier, or a comma list to sweep (one report per value).
    #[arg(long)]
    c: Option<String>,
    /// Episodes per simulation (the value table persists across them).
    #[arg(long)]
    episodes: Option<usize>,
    /// Independent simulations per policy.
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report JSON, metrics CSV, and pull histograms.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Inclusion-probability mode: auto, exact, or mc:<samples>.
    #[arg(long)]
    inclusion: Option<String>,
    /// JSON file with the same fields; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// External form of the run configuration; `--config` files deserialize into
/// this and flags override field by field.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    instance: Option<PathBuf>,
    policies: Option<Vec<String>>,
    k: Option<usize>,
    #[serde(rename = "T")]
    horizon: Option<usize>,
    c: Option<CSweep>,
    episodes: Option<usize>,
    sims: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    inclusion: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CSweep {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Randomized cases per suite.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// Per-epoch decay of the finite-horizon index.
    Decay,
    /// Value-range and softmax-gap inequalities on random tables and instances.
    Bounds,
    /// Advantage/selection/inclusion comonotonicity of the softmax policy.
    Fairness,
    /// Converged per-arm advantage top-k against the joint argmax.
    Theorem2,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("RMAB_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        // Ignore failure: the pool can only be configured once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(&args).map(|()| true),
        Command::Run(args) => cmd_run(&args).map(|()| true),
        Command::Verify(args) => cmd_verify(&args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    if args.n < 2 {
        bail!("--n must be at least 2 (the budget must satisfy 1 <= k < n)");
    }
    let instance = match args.kind {
        GenKind::Synthetic => generate_synthetic(&SyntheticSpec::new(args.n, args.seed))
            .map_err(|e| anyhow!("{e}"))?,
        GenKind::Cpap => generate_cpap(&CpapSpec::new(args.n, args.seed)),
    };
    let issues = validate_instance(&instance, false);
    if !issues.is_empty() {
        bail!("generated instance failed validation: {issues:?}");
    }
    save_instance(&args.out, &instance)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn parse_policies(names: &[String], c: f64) -> Result<Vec<PolicySpec>> {
    let mut specs = Vec::with_capacity(names.len());
    for name in names {
        let spec = match name.trim() {
            "none" => PolicySpec::NoIntervention,
            "random" => PolicySpec::Random,
            "myopic" => PolicySpec::Myopic,
            "fairmyopic" => PolicySpec::FairMyopic { c },
            "softfair" => PolicySpec::SoftFair { c, greedy: false },
            "softfair-greedy" => PolicySpec::SoftFair { c, greedy: true },
            "oracle" => PolicySpec::Oracle,
            other => bail!(
                "unknown policy {other:?}; valid names: none, random, myopic, fairmyopic, \
                 softfair, softfair-greedy, oracle"
            ),
        };
        if specs.contains(&spec) {
            bail!("policy {name:?} listed twice");
        }
        specs.push(spec);
    }
    if specs.is_empty() {
        bail!("--policies lists no policy names");
    }
    Ok(specs)
}

fn parse_inclusion(text: &str) -> Result<InclusionMode> {
    match text {
        "auto" => Ok(InclusionMode::Auto),
        "exact" => Ok(InclusionMode::Exact),
        other => match other.strip_prefix("mc:").and_then(|n| n.parse::<usize>().ok()) {
            Some(samples) if samples > 0 => Ok(InclusionMode::MonteCarlo { samples }),
            _ => bail!("bad inclusion mode {other:?}; use auto, exact, or mc:<samples>"),
        },
    }
}

/// Display a multiplier compactly for file names ("0.5", "2").
fn c_tag(c: f64) -> String {
    format!("{c}")
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let file: RunFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunFile::default(),
    };

    let instance_path = args
        .instance
        .clone()
        .or(file.instance)
        .ok_or_else(|| anyhow!("--instance is required (flag or config file)"))?;
    let mut instance = load_instance(&instance_path)
        .map_err(|e| anyhow!("loading {}: {e}", instance_path.display()))?;

    if let Some(k) = args.k.or(file.k) {
        instance.k = k;
    }
    if let Some(horizon) = args.horizon.or(file.horizon) {
        instance.horizon = horizon;
    }
    if instance.k >= instance.n() {
        bail!("budget k={} must be below n={}", instance.k, instance.n());
    }
    let issues = validate_instance(&instance, false);
    if !issues.is_empty() {
        bail!("instance invalid after overrides: {issues:?}");
    }

    let policy_names: Vec<String> = match &args.policies {
        Some(text) => text.split(',').map(|s| s.trim().to_string()).collect(),
        None => file
            .policies
            .ok_or_else(|| anyhow!("--policies is required (flag or config file)"))?,
    };
    let sweep: Vec<f64> = match &args.c {
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| anyhow!("bad multiplier {:?} in --c", s.trim()))
            })
            .collect::<Result<_>>()?,
        None => match file.c {
            Some(CSweep::One(c)) => vec![c],
            Some(CSweep::Many(cs)) => cs,
            None => vec![instance.c],
        },
    };
    if sweep.is_empty() || sweep.iter().any(|&c| c.is_nan() || c <= 0.0) {
        bail!("multipliers must be positive (got {sweep:?})");
    }
    let inclusion = match args.inclusion.as_deref() {
        Some(text) => parse_inclusion(text)?,
        None => match file.inclusion.as_deref() {
            Some(text) => parse_inclusion(text)?,
            None => InclusionMode::Auto,
        },
    };
    let episodes = args.episodes.or(file.episodes).unwrap_or(1);
    let sims = args.sims.or(file.sims).unwrap_or(1);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out_dir = args
        .out_dir
        .clone()
        .or(file.out_dir)
        .ok_or_else(|| anyhow!("--out-dir is required (flag or config file)"))?;
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    for &c in &sweep {
        let policies = parse_policies(&policy_names, c)?;
        let mut config = ExperimentConfig::new(policies, sims, seed);
        config.episodes = episodes;
        config.inclusion = inclusion;
        let report = run_experiment(&instance, &config).map_err(|e| anyhow!("{e}"))?;

        let tag = c_tag(c);
        write_text(&out_dir.join(format!("report_c{tag}.json")), &report.to_json())?;
        write_text(&out_dir.join(format!("metrics_c{tag}.csv")), &metrics_csv(&report))?;
        for policy in &report.policies {
            let name = format!("pulls_c{tag}_{}.csv", policy.policy);
            write_text(&out_dir.join(name), &histogram_csv(policy))?;
        }
        for policy in &report.policies {
            let benefit = policy
                .intervention_benefit
                .map(|b| format!("{b:.1}"))
                .unwrap_or_else(|| "-".to_string());
            println!(
                "c={tag} {:<16} reward {:8.2} +- {:6.2}  entropy {:5.3}  benefit {benefit:>6}  \
                 never-pulled {:.3}",
                policy.policy,
                policy.mean_reward,
                policy.std_reward,
                policy.mean_entropy,
                policy.never_pulled_fraction,
            );
        }
    }
    println!("wrote reports for {} multiplier(s) to {}", sweep.len(), out_dir.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    if args.trials == 0 {
        bail!("--trials must be positive");
    }
    match args.suite {
        Suite::Decay => verify_decay(args.trials, args.seed),
        Suite::Bounds => verify_bounds(args.trials, args.seed),
        Suite::Fairness => verify_fairness(args.trials, args.seed),
        Suite::Theorem2 => verify_advantage_argmax(args.trials, args.seed),
    }
}

/// Strictly constrained arms, one rejection stream per suite run.
fn strict_arms(trials: usize, seed: u64) -> Vec<rmab_core::TransitionModel> {
    let mut spec = SyntheticSpec::new(trials.max(2), seed);
    spec.k = 1;
    generate_synthetic(&spec).expect("full-range rejection stays under the cap").arms
}

fn verify_decay(trials: usize, seed: u64) -> Result<bool> {
    let (horizon, gamma) = (10, 0.95);
    let resolution = 2.0 * INDEX_TOL;
    let mut rising_models = 0usize;
    let mut ties = 0usize;
    let mut worst = 0.0f64;
    for model in strict_arms(trials, seed).iter().take(trials) {
        let table = build_index_table(model, horizon, gamma, INDEX_TOL)
            .map_err(|e| anyhow!("{e}"))?;
        let mut hit = false;
        for t in 0..horizon {
            for s in 0..2 {
                let diff = table.w[t + 1][s] - table.w[t][s];
                if diff > resolution {
                    hit = true;
                    worst = worst.max(diff);
                } else if diff > -resolution {
                    ties += 1;
                }
            }
        }
        rising_models += usize::from(hit);
    }
    let pass = rising_models == 0 && ties == 0;
    println!(
        "verify decay: {} — {rising_models}/{trials} models rise across epochs \
         (worst +{worst:.4}), {ties} adjacent epochs tied at bisection resolution \
         (T={horizon}, gamma={gamma})",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn verify_bounds(trials: usize, seed: u64) -> Result<bool> {
    let gamma = 0.9;
    let mut rng = substream(seed, StreamKind::Verify, 1);
    let mut sandwich_violations = 0usize;
    use rand::Rng;
    for trial in 0..trials {
        let n = 2 + trial % 3;
        let inst = RmabInstance {
            arms: strict_arms(n, seed ^ 0xB0) // metadata only; values are drawn below
                .into_iter()
                .take(n)
                .collect(),
            k: 1,
            horizon: 1,
            gamma,
            c: 1.0,
        };
        let mut q = JointQTable::zero(&inst).map_err(|e| anyhow!("{e}"))?;
        let range = n as f64 / (1.0 - gamma);
        for row in &mut q.q {
            let base = rng.gen::<f64>() * (range - 1.0);
            for v in row.iter_mut() {
                *v = base + rng.gen::<f64>();
            }
        }
        for c in [0.5, 1.0, 2.0, 5.0] {
            for stat in gap_statistics(&q, c) {
                if stat.gap < stat.lower_bound - 1e-10 || stat.gap > stat.upper_bound + 1e-10 {
                    sandwich_violations += 1;
                }
            }
        }
    }

    // Fixed-point checks on a smaller batch: value range [0, n/(1-gamma)],
    // the optimal-minus-soft gap in [0, (n-1)/((2+c)(1-gamma))], and soft
    // backups never above hard backups along the iteration.
    let instances = (trials / 5).clamp(3, 25);
    let mut fixed_point_violations = 0usize;
    let mut rng2 = substream(seed, StreamKind::Verify, 2);
    for trial in 0..instances {
        let n = 2 + trial % 3;
        let c = [1.0, 2.0, 5.0][trial % 3];
        let arms: Vec<_> = (0..n)
            .map(|i| strict_arms(2, seed ^ (0xC0 + (trial * 8 + i) as u64))[rng2.gen_range(0..2)])
            .collect();
        let inst = RmabInstance { arms, k: 1, horizon: 1, gamma, c };
        let (hard, _) =
            iterate_to_fixed_point(&inst, OperatorKind::Hard, 1e-10).map_err(|e| anyhow!("{e}"))?;
        let cap = n as f64 / (1.0 - gamma);
        if hard.q.iter().flatten().any(|&v| !(0.0..=cap + 1e-8).contains(&v)) {
            fixed_point_violations += 1;
        }
        let mut soft = JointQTable::zero(&inst).map_err(|e| anyhow!("{e}"))?;
        loop {
            let next = soft_operator(&soft, &inst, c).map_err(|e| anyhow!("{e}"))?;
            let hard_backup = bellman_operator(&soft, &inst).map_err(|e| anyhow!("{e}"))?;
            if next
                .q
                .iter()
                .flatten()
                .zip(hard_backup.q.iter().flatten())
                .any(|(s, h)| s > &(h + 1e-12))
            {
                fixed_point_violations += 1;
                break;
            }
            let moved = next.sup_distance(&soft);
            soft = next;
            if moved < 1e-10 {
                break;
            }
        }
        let bound = (n as f64 - 1.0) / ((2.0 + c) * (1.0 - gamma));
        let bad_gap = hard
            .q
            .iter()
            .flatten()
            .zip(soft.q.iter().flatten())
            .any(|(h, s)| h - s < -1e-8 || h - s > bound + 1e-8);
        fixed_point_violations += usize::from(bad_gap);
    }

    let pass = sandwich_violations == 0 && fixed_point_violations == 0;
    println!(
        "verify bounds: {} — softmax-gap sandwich on {trials} random tables x 4 multipliers: \
         {sandwich_violations} violations; value-range and optimality-gap checks on {instances} \
         instances: {fixed_point_violations} violations",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn verify_fairness(trials: usize, seed: u64) -> Result<bool> {
    let mut order_violations = 0usize;
    let mut mass_violations = 0usize;
    for trial in 0..trials {
        // Alternate between a mid-size run with exact inclusion and a small
        // run whose set distribution is enumerated in full.
        let small = trial % 2 == 1;
        let (n, k, horizon) = if small { (6, 2, 10) } else { (20, 3, 25) };
        let mut spec = SyntheticSpec::new(n, seed ^ (trial as u64) << 8);
        spec.k = k;
        spec.horizon = horizon;
        let inst = generate_synthetic(&spec).map_err(|e| anyhow!("{e}"))?;
        let mut config = SoftFairConfig::new(2.0);
        config.inclusion = InclusionMode::Exact;
        let mut state = SoftFairState::new(&inst, config);
        let mut streams = EpisodeStreams::for_sim(seed, trial as u64);
        let initial = vec![0u8; n];
        run_softfair_episode_observed(&mut state, &inst, &initial, &mut streams, |round| {
            for i in 0..n {
                for j in 0..n {
                    if round.lambda[i] > round.lambda[j]
                        && (round.select_prob[i] < round.select_prob[j] - 1e-15
                            || round.inclusion_prob[i] < round.inclusion_prob[j] - 1e-12)
                    {
                        order_violations += 1;
                    }
                }
            }
            if small {
                let w = round.select_prob;
                let mut mass = vec![0.0f64; n];
                for i in 0..n {
                    for j in (i + 1)..n {
                        let p = w[i] * w[j] / (1.0 - w[i]) + w[j] * w[i] / (1.0 - w[j]);
                        mass[i] += p;
                        mass[j] += p;
                    }
                }
                for (m, p) in mass.iter().zip(round.inclusion_prob) {
                    if (m - p).abs() > 1e-12 {
                        mass_violations += 1;
                    }
                }
            }
        })
        .map_err(|e| anyhow!("{e}"))?;
    }
    let pass = order_violations == 0 && mass_violations == 0;
    println!(
        "verify fairness: {} — {trials} seeded episodes: {order_violations} order violations \
         (advantage vs selection/inclusion), {mass_violations} enumerated-mass mismatches",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn verify_advantage_argmax(trials: usize, seed: u64) -> Result<bool> {
    let gamma = 0.9;
    let mut states_checked = 0usize;
    let mut mismatches = 0usize;
    let mut rng = substream(seed, StreamKind::Verify, 3);
    use rand::Rng;
    for trial in 0..trials {
        let n = 2 + trial % 3;
        let k = if n == 2 { 1 } else { 1 + trial % 2 };
        let arms: Vec<_> = (0..n)
            .map(|i| strict_arms(2, seed ^ (0xA0 + (trial * 8 + i) as u64))[rng.gen_range(0..2)])
            .collect();
        let inst = RmabInstance { arms, k, horizon: 1, gamma, c: 1.0 };
        let lambdas: Vec<[f64; 2]> = inst
            .arms
            .iter()
            .map(|arm| per_arm_converged_lambda(arm, gamma, 1e6, 1e-12))
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow!("{e}"))?;
        let (joint, _) =
            iterate_to_fixed_point(&inst, OperatorKind::Hard, 1e-12).map_err(|e| anyhow!("{e}"))?;
        let argmax = joint.argmax_actions();
        for (mask, &best) in argmax.iter().enumerate() {
            let state = rmab_core::oracle::mask_to_state(mask, n);
            let lambda: Vec<f64> = (0..n).map(|i| lambdas[i][state[i] as usize]).collect();
            states_checked += 1;
            if top_k_by_logit(&lambda, k).active_arms() != joint.actions[best] {
                mismatches += 1;
            }
        }
    }
    let rate = 100.0 * (states_checked - mismatches) as f64 / states_checked as f64;
    let pass = mismatches == 0;
    println!(
        "verify theorem2: {} — advantage top-k vs joint argmax on {trials} instances: \
         {mismatches}/{states_checked} joint states disagree (match rate {rate:.1}%)",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}
