//! Parallel execution of removal runs on a rayon pool sized by
//! `BXAI_THREADS`.

use bxai_core::dsp::EnvelopeSpectrum;
use bxai_core::eval::{self, Importances, JobOutcome, RemovalConfig, RemovalJob};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "BXAI_THREADS";

/// Thread cap from `BXAI_THREADS`; `None` when unset (rayon's default).
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

pub fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit()? {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Usage(format!("cannot start worker threads: {e}")))
}

/// Runs every job; outcomes come back in job order whatever the scheduling.
pub fn run_jobs(
    pool: &rayon::ThreadPool,
    jobs: &[RemovalJob],
    cfg: &RemovalConfig,
    train_set: &[EnvelopeSpectrum],
    test_set: &[EnvelopeSpectrum],
    importances: &Importances,
) -> Vec<JobOutcome> {
    pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let out = eval::run_job(job, cfg, train_set, test_set, importances);
                if let Ok(m) = &out.result {
                    log::info!(
                        "{} fraction {:.2} repeat {}: accuracy {:.4}, loss {:.4} ({} samples, {} epochs)",
                        job.method.map_or("baseline", |m| m.name()),
                        job.fraction,
                        job.repeat,
                        m.accuracy,
                        m.loss,
                        m.n_train,
                        m.epochs
                    );
                }
                out
            })
            .collect()
    })
}
