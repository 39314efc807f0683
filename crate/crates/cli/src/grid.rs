//! Grid runner: every cell × q × seed × sampler pair as a joint run
//! (optionally followed by a fine-tune), plus one BiS run per schedule.

use std::collections::BTreeSet;
use std::sync::Mutex;

use bislab_core::exec::Execution;
use bislab_core::trainer::BisConfig;

use crate::config::{RunConfig, SamplerPair};
use crate::csvio::{read_rows, FailureRow, SummaryRow};
use crate::error::{CliError, Result};
use crate::runner::{
    bis_id, dataset_for, finetune_id, joint_id, run_bis, run_finetune, run_joint, with_schedule, OutDir, RunOutput,
};

/// One unit of work. A joint job with `finetune` produces two runs.
#[derive(Clone, Debug, PartialEq)]
pub enum Job {
    Joint {
        lambda: f64,
        beta: f64,
        q: f64,
        seed: u64,
        pair: SamplerPair,
        finetune: bool,
    },
    Bis {
        lambda: f64,
        beta: f64,
        q: f64,
        seed: u64,
        bis: BisConfig,
    },
}

impl Job {
    pub fn run_ids(&self) -> Vec<String> {
        match *self {
            Job::Joint {
                lambda,
                beta,
                q,
                seed,
                pair,
                finetune,
            } => {
                let id = joint_id(lambda, beta, pair, q, seed);
                if finetune {
                    let ft = finetune_id(&id);
                    vec![id, ft]
                } else {
                    vec![id]
                }
            }
            Job::Bis {
                lambda,
                beta,
                q,
                seed,
                ref bis,
            } => vec![bis_id(lambda, beta, bis, q, seed)],
        }
    }

    fn cell(&self) -> (f64, f64, u64) {
        match *self {
            Job::Joint { lambda, beta, seed, .. } | Job::Bis { lambda, beta, seed, .. } => (lambda, beta, seed),
        }
    }

    fn stages(&self) -> Vec<&'static str> {
        match self {
            Job::Joint { finetune: true, .. } => vec!["joint", "finetune"],
            Job::Joint { .. } => vec!["joint"],
            Job::Bis { .. } => vec!["bis"],
        }
    }
}

/// All jobs of the grid in a fixed order.
pub fn plan(cfg: &RunConfig) -> Vec<Job> {
    let g = &cfg.grid;
    let mut jobs = Vec::new();
    for &(lambda, beta) in &g.cells {
        for &q in &g.qs {
            for &seed in &g.seeds {
                for &pair in &g.pairs {
                    jobs.push(Job::Joint {
                        lambda,
                        beta,
                        q,
                        seed,
                        pair,
                        finetune: g.finetune,
                    });
                }
                for &schedule in &g.schedules {
                    jobs.push(Job::Bis {
                        lambda,
                        beta,
                        q,
                        seed,
                        bis: with_schedule(cfg.bis, schedule),
                    });
                }
            }
        }
    }
    jobs
}

#[derive(Clone, Copy, Debug)]
pub struct GridOptions {
    pub jobs: usize,
    pub resume: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { jobs: 1, resume: false }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GridOutcome {
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<FailureRow>,
}

pub fn run_grid(cfg: &RunConfig, out: &OutDir, opts: GridOptions) -> Result<GridOutcome> {
    cfg.validate()?;
    let jobs = plan(cfg);
    let ids: Vec<String> = jobs.iter().flat_map(Job::run_ids).collect();
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(CliError::Config("grid contains duplicate runs".into()));
    }

    let done: BTreeSet<String> = if opts.resume {
        read_rows::<SummaryRow>(&out.summary())?
            .into_iter()
            .map(|r| r.run_id)
            .collect()
    } else {
        BTreeSet::new()
    };
    let (skip, todo): (Vec<Job>, Vec<Job>) = jobs
        .into_iter()
        .partition(|j| j.run_ids().iter().all(|id| done.contains(id)));

    let writer = Mutex::new(GridOutcome {
        skipped: skip.iter().flat_map(Job::run_ids).collect(),
        ..GridOutcome::default()
    });
    let exec = if opts.jobs > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let results = with_pool(opts.jobs, || {
        exec.map(&todo, |job| -> Result<()> {
            let (outputs, failures) = execute(cfg, job);
            for o in &outputs {
                out.write_json(o)?;
                out.write_checkpoint(o)?;
            }
            // The single writer: CSV merges never interleave.
            let mut state = writer.lock().expect("writer lock");
            out.record_results(&outputs, failures.clone())?;
            state.completed.extend(outputs.iter().map(|o| o.record.run_id.clone()));
            state.failed.extend(failures);
            Ok(())
        })
    })?;
    results.into_iter().collect::<Result<Vec<()>>>()?;

    let mut outcome = writer.into_inner().expect("writer lock");
    outcome.completed.sort();
    outcome.failed.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(outcome)
}

fn execute(cfg: &RunConfig, job: &Job) -> (Vec<RunOutput>, Vec<FailureRow>) {
    let exec = Execution::best();
    let (lambda, beta, seed) = job.cell();
    let ids = job.run_ids();
    let stages = job.stages();
    let fail = |i: usize, status: &str, message: String| FailureRow {
        run_id: ids[i].clone(),
        stage: stages[i].to_string(),
        seed,
        lambda,
        beta,
        status: status.to_string(),
        message,
    };

    let data = match dataset_for(&cfg.data, lambda, beta, seed) {
        Ok(d) => d,
        Err(e) => {
            let failures = (0..ids.len()).map(|i| fail(i, status_of(&e), e.to_string())).collect();
            return (Vec::new(), failures);
        }
    };
    let train = bislab_core::trainer::TrainConfig {
        q: job_q(job),
        ..cfg.train.clone()
    };
    match *job {
        Job::Joint { pair, finetune, .. } => match run_joint(&train, pair, &data, seed, exec) {
            Err(e) => {
                let mut failures = vec![fail(0, status_of(&e), e.to_string())];
                if finetune {
                    failures.push(fail(1, "skipped", format!("source run {} failed", ids[0])));
                }
                (Vec::new(), failures)
            }
            Ok(joint) if finetune => {
                let ft_cfg = cfg.finetune.train_config(&train);
                match run_finetune(&ft_cfg, &joint, &data, seed, exec) {
                    Ok(ft) => (vec![joint, ft], Vec::new()),
                    Err(e) => (vec![joint], vec![fail(1, status_of(&e), e.to_string())]),
                }
            }
            Ok(joint) => (vec![joint], Vec::new()),
        },
        Job::Bis { bis, .. } => match run_bis(&train, bis, &data, seed, exec) {
            Ok(o) => (vec![o], Vec::new()),
            Err(e) => (Vec::new(), vec![fail(0, status_of(&e), e.to_string())]),
        },
    }
}

fn job_q(job: &Job) -> f64 {
    match *job {
        Job::Joint { q, .. } | Job::Bis { q, .. } => q,
    }
}

fn status_of(e: &CliError) -> &'static str {
    match e {
        CliError::Core(bislab_core::Error::Diverged { .. }) => "diverged",
        _ => "error",
    }
}

#[cfg(feature = "parallel")]
fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_pool<R: Send>(_jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(f())
}
