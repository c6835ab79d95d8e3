use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kbope::baseline::{is_lower_bound, threshold_sweep, NormalizationSpec};
use kbope::features::QFunction;
use kbope::mdp::{
    average_reward_oracle, exact_q_values, expected_return, read_jsonl, sample_trajectories, sample_transitions,
    write_jsonl, ActionValue, Dataset, EnvSpec, Policy, QTable, State, Trajectory, Transition,
};
use kbope::ope::{
    compute_bounds, debias, encoder_for, feature_map_for, init_state_sample, posthoc_bounds, BoundsConfig,
    BoundsMode, BoundsResult, DebiasResult,
};
use serde::{Deserialize, Serialize};

use crate::config::{load_env, load_policy, read_json, ExperimentConfig};
use crate::sweep::{self, SweepRow};
use crate::{BaselineArgs, BoundsArgs, Cli, CliError, Command, EstimatorArgs, InputArgs};

/// Seed offsets separating the streams one master seed drives.
pub const TRAJECTORY_SALT: u64 = 0x7452_414a;
pub const INIT_SALT: u64 = 0x494e_4954;

/// A bound computation either yields an interval or rejects the hypothesis class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum BoundsOutcome {
    Bounds(BoundsResult),
    Rejected { min_loss: f64, lambda_k: f64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DebiasOutcome {
    Debiased(Box<DebiasResult>),
    Rejected { min_loss: f64, lambda_k: f64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub posthoc: BoundsOutcome,
    pub debias: DebiasOutcome,
}

/// Value oracle written by `simulate` for tabular environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub gamma: f64,
    pub eta: f64,
    pub q: QTable,
    /// Long-run average reward, when the chain admits one.
    pub average_eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QHatFile {
    Weights(Vec<f64>),
    Table { table: Vec<Vec<f64>> },
}

const REJECTED: &str = "hypothesis class rejected at level delta";

pub fn bounds_outcome(r: kbope::Result<BoundsResult>) -> Result<BoundsOutcome, CliError> {
    match r {
        Ok(b) => Ok(BoundsOutcome::Bounds(b)),
        Err(kbope::Error::Rejected { min_loss, lambda_k }) => Ok(BoundsOutcome::Rejected {
            min_loss,
            lambda_k,
            message: REJECTED.into(),
        }),
        Err(e) => Err(e.into()),
    }
}

fn debias_outcome(r: kbope::Result<DebiasResult>) -> Result<DebiasOutcome, CliError> {
    match r {
        Ok(d) => Ok(DebiasOutcome::Debiased(Box::new(d))),
        Err(kbope::Error::Rejected { min_loss, lambda_k }) => Ok(DebiasOutcome::Rejected {
            min_loss,
            lambda_k,
            message: REJECTED.into(),
        }),
        Err(e) => Err(e.into()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { config, out_dir } => simulate(&config, &out_dir, seed),
        Command::Bounds(args) => bounds(&args, seed),
        Command::Diagnose(args) => diagnose(&args, seed, true),
        Command::Debias(args) => diagnose(&args, seed, false),
        Command::BaselineIs(args) => baseline(&args),
        Command::Sweep {
            config,
            out,
            summary,
            jobs,
            no_timing,
        } => {
            if jobs == 0 {
                return Err(CliError::Usage("--jobs must be at least 1".into()));
            }
            let summary = summary.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".summary.json");
                PathBuf::from(s)
            });
            sweep::run(&config, &out, &summary, jobs, seed.unwrap_or(0), !no_timing)
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("results serialize");
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_jsonl(std::io::BufWriter::new(file), items).map_err(|e| io_err(path, e))
}

fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_jsonl(file).map_err(|e| match e {
        kbope::Error::Io(e) => io_err(path, e),
        other => CliError::Parse(format!("{}: {other}", path.display())),
    })
}

fn simulate(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let r = ExperimentConfig::load(config)?;
    let seed = seed.unwrap_or(r.config.seeds[0]);
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let ds = sample_transitions(&r.env, &r.behavior, r.config.n, r.config.sampling, seed)?;
    write_jsonl_file(&out_dir.join("dataset.jsonl"), &ds.transitions)?;
    if let Some(t) = r.config.trajectories {
        let trajs = sample_trajectories(&r.env, &r.behavior, t.count, t.horizon, seed ^ TRAJECTORY_SALT)?;
        write_jsonl_file(&out_dir.join("trajectories.jsonl"), &trajs)?;
    }
    if r.config.bounds.mode == BoundsMode::Discounted {
        let init = init_state_sample(&r.env, &r.target, r.config.bounds.n_init_samples, seed ^ INIT_SALT)?;
        write_jsonl_file(&out_dir.join("init.jsonl"), &init)?;
    }
    write_json(Some(&out_dir.join("env.json")), &r.env)?;
    write_json(Some(&out_dir.join("behavior.json")), &r.behavior)?;
    write_json(Some(&out_dir.join("target.json")), &r.target)?;
    write_json(Some(&out_dir.join("bounds.json")), &r.config.bounds)?;
    if let EnvSpec::Tabular(mdp) = &r.env {
        let oracle = Oracle {
            gamma: mdp.gamma,
            eta: expected_return(mdp, &r.target)?,
            q: exact_q_values(mdp, &r.target)?,
            average_eta: average_reward_oracle(mdp, &r.target).ok().map(|o| o.eta),
        };
        write_json(Some(&out_dir.join("oracle.json")), &oracle)?;
    }
    Ok(())
}

struct Inputs {
    dataset: Dataset,
    policy: Policy,
    cfg: BoundsConfig,
    init: Vec<(State, usize)>,
}

fn load_inputs(a: &InputArgs, seed: Option<u64>) -> Result<Inputs, CliError> {
    let transitions: Vec<Transition> = read_jsonl_file(&a.data)?;
    let dataset = Dataset::from_transitions(transitions).map_err(|e| CliError::Parse(format!("{}: {e}", a.data.display())))?;
    let policy = load_policy(&a.policy)?;
    let cfg: BoundsConfig = read_json(&a.config)?;
    cfg.validate()
        .map_err(|e| CliError::Parse(format!("{}: {e}", a.config.display())))?;
    let init = match (&a.init, &a.env) {
        (Some(p), _) => read_jsonl_file(p)?,
        (None, Some(p)) => {
            let env = load_env(p)?;
            init_state_sample(&env, &policy, cfg.n_init_samples, seed.unwrap_or(0) ^ INIT_SALT)?
        }
        (None, None) if cfg.mode == BoundsMode::Average => Vec::new(),
        (None, None) => {
            return Err(CliError::Usage(
                "discounted bounds need --init or --env for the initial-state sample".into(),
            ))
        }
    };
    Ok(Inputs {
        dataset,
        policy,
        cfg,
        init,
    })
}

fn bounds(args: &BoundsArgs, seed: Option<u64>) -> Result<(), CliError> {
    let inp = load_inputs(&args.input, seed)?;
    let start = Instant::now();
    let outcome = bounds_outcome(compute_bounds(&inp.dataset, &inp.policy, &inp.init, &inp.cfg))?;
    let wall_ms = start.elapsed().as_millis() as u64;
    write_json(args.input.out.as_deref(), &outcome)?;
    if let Some(csv_path) = &args.append_csv {
        let row = SweepRow::from_outcome(
            seed.unwrap_or(0),
            inp.dataset.len(),
            inp.cfg.delta,
            inp.cfg.features.h0,
            &outcome,
            args.eta_true,
            wall_ms,
        );
        sweep::append_rows(csv_path, &[row])?;
    }
    Ok(())
}

fn estimator(q_hat: &Path, inp: &Inputs) -> Result<Box<dyn ActionValue>, CliError> {
    match read_json::<QHatFile>(q_hat)? {
        QHatFile::Weights(theta) => {
            let enc = encoder_for(&inp.dataset, &inp.policy)?;
            let fm = feature_map_for(&inp.cfg, &enc, inp.cfg.features.h0)?;
            let q = QFunction::new(theta, fm, enc).map_err(|e| CliError::Parse(format!("{}: {e}", q_hat.display())))?;
            Ok(Box::new(q))
        }
        QHatFile::Table { table } => {
            let n_actions = inp.policy.n_actions();
            let fits = inp.dataset.transitions.iter().all(|t| {
                matches!((&t.s, &t.sn), (State::Discrete(s), State::Discrete(sn)) if *s < table.len() && *sn < table.len())
            }) && table.iter().all(|row| row.len() == n_actions);
            if !fits {
                return Err(CliError::Parse(format!("{}: table does not cover the dataset", q_hat.display())));
            }
            Ok(Box::new(QTable(table)))
        }
    }
}

fn diagnose(args: &EstimatorArgs, seed: Option<u64>, with_bounds: bool) -> Result<(), CliError> {
    let inp = load_inputs(&args.input, seed)?;
    if inp.init.is_empty() {
        return Err(CliError::Usage("diagnosis needs --init or --env".into()));
    }
    let q = estimator(&args.q_hat, &inp)?;
    let fix = debias_outcome(debias(&inp.dataset, q.as_ref(), &inp.policy, &inp.init, &inp.cfg))?;
    if with_bounds {
        let posthoc = bounds_outcome(posthoc_bounds(&inp.dataset, q.as_ref(), &inp.policy, &inp.init, &inp.cfg))?;
        write_json(args.input.out.as_deref(), &Diagnosis { posthoc, debias: fix })
    } else {
        write_json(args.input.out.as_deref(), &fix)
    }
}

fn baseline(a: &BaselineArgs) -> Result<(), CliError> {
    let trajs: Vec<Trajectory> = read_jsonl_file(&a.trajectories)?;
    let behavior = load_policy(&a.behavior)?;
    let target = load_policy(&a.target)?;
    let horizon = trajs.first().map_or(0, |t| t.steps.len());
    if horizon == 0 || trajs.iter().any(|t| t.steps.len() != horizon) {
        return Err(CliError::Parse(format!(
            "{}: trajectories must be nonempty with one common length",
            a.trajectories.display()
        )));
    }
    let spec = NormalizationSpec::analytic(a.r_max, a.gamma, horizon);
    if let [c] = a.c[..] {
        let est = is_lower_bound(&trajs, &behavior, &target, c, a.delta, &spec)?;
        return write_json(a.out.as_deref(), &est);
    }
    let rows = threshold_sweep(&trajs, &behavior, &target, &a.c, a.delta, &spec)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    match &a.out {
        Some(p) => fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => std::io::stdout().write_all(&bytes).map_err(|e| CliError::Io(e.to_string())),
    }
}
