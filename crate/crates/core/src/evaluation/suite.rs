//! Shared pieces of the ablation and sweep harnesses: the resolved suite
//! configuration, one train-and-evaluate pipeline and a deterministic
//! parallel cell runner.

use super::report::{run_benchmark, OcclusionBenchmark};
use crate::error::{Error, Result};
use crate::estimator::{train_estimator, EstimatorConfig, EstimatorModel};
use crate::evaluation::metrics::pck;
use crate::estimator::PCK_THRESHOLD;
use crate::posedata::{DatasetSplit, Skeleton};
use crate::tokenizer::{train_tokenizer, TokenizerConfig, TokenizerModel, TrainConfig};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Environment variable capping the number of cells trained at once.
pub const THREADS_ENV: &str = "PCT_THREADS";

/// Everything one suite needs, fully resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub skeleton: String,
    pub data_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub tokenizer: TokenizerConfig,
    pub tokenizer_train: TrainConfig,
    pub estimator: EstimatorConfig,
    pub estimator_train: TrainConfig,
    pub benchmark: OcclusionBenchmark,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            skeleton: "mpii16".into(),
            data_seed: 0,
            n_train: 5000,
            n_test: 1000,
            seeds: vec![1, 2, 3],
            tokenizer: TokenizerConfig::default(),
            tokenizer_train: TrainConfig {
                epochs: 24,
                batch_size: 32,
                ..TrainConfig::default()
            },
            estimator: EstimatorConfig::default(),
            estimator_train: TrainConfig {
                epochs: 8,
                ..TrainConfig::stage_two()
            },
            benchmark: OcclusionBenchmark::default(),
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        self.skeleton()?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("suite: n_train and n_test must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("suite: at least one seed".into()));
        }
        self.tokenizer.validate()?;
        self.tokenizer_train.validate()?;
        self.estimator.validate()?;
        self.estimator_train.validate()?;
        self.benchmark.validate()
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        Skeleton::by_name(&self.skeleton)
            .ok_or_else(|| Error::Config(format!("unknown skeleton {:?}", self.skeleton)))
    }

    pub fn dataset(&self) -> Result<DatasetSplit> {
        DatasetSplit::generate(&self.skeleton()?, self.data_seed, self.n_train, 0, self.n_test)
    }
}

/// Train a tokenizer on the suite data; `None` if training diverged.
pub fn fit_tokenizer(
    suite: &SuiteConfig,
    data: &DatasetSplit,
    config: &TokenizerConfig,
    seed: u64,
) -> Result<Option<TokenizerModel>> {
    match train_tokenizer(config, &suite.tokenizer_train, &data.train, Some(&data.skeleton), seed) {
        Ok((m, _)) => Ok(Some(m)),
        Err(Error::Diverged(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Held-out reconstruction PCK@0.05.
pub fn reconstruction_pck(tokenizer: &TokenizerModel, data: &DatasetSplit) -> Result<f64> {
    pck(&tokenizer.reconstruct_batch(&data.test)?, &data.test, PCK_THRESHOLD, None)
}

/// Train a head against `tokenizer` and score it on the benchmark:
/// `(model, standard pck, occluded pck)`, or `None` if training diverged.
pub fn fit_estimator(
    suite: &SuiteConfig,
    data: &DatasetSplit,
    tokenizer: &TokenizerModel,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<Option<(EstimatorModel, f64, f64)>> {
    let model = match train_estimator(config, &suite.estimator_train, tokenizer, &data.train, seed) {
        Ok((m, _)) => m,
        Err(Error::Diverged(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let scores = run_benchmark(&model, &data.test, &suite.benchmark)?;
    Ok(Some((model, scores.pck, scores.occluded_pck)))
}

/// Worker count: [`THREADS_ENV`] if set, else the available parallelism.
pub fn cell_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run `work` on every job with up to `threads` workers. Results come back
/// in job order whatever the scheduling, and each job is itself
/// single-threaded, so the output does not depend on `threads`.
pub fn run_cells<J, T, F>(jobs: &[J], threads: usize, work: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    let slots: Vec<Mutex<Option<Result<T>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = work(&jobs[i]);
                *slots[i].lock().expect("cell slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("cell slot").expect("every cell ran"))
        .collect()
}

/// Mean and sample standard deviation of the finite values; NaN when
/// fewer than one (mean) or two (sd) remain.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let ok: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if ok.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    if ok.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_keep_job_order() {
        let jobs: Vec<u64> = (0..17).collect();
        for threads in [1, 3, 8] {
            let out = run_cells(&jobs, threads, |&j| Ok(j * j)).unwrap();
            assert_eq!(out, jobs.iter().map(|j| j * j).collect::<Vec<_>>());
        }
        let err = run_cells(&jobs, 2, |&j| if j == 5 { Err(Error::Degenerate("x".into())) } else { Ok(j) });
        assert!(err.is_err());
    }

    #[test]
    fn mean_sd_skips_failed_cells() {
        let (m, s) = mean_sd(&[1.0, f64::NAN, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!(mean_sd(&[f64::NAN]).0.is_nan());
        assert!(mean_sd(&[4.0]).1.is_nan());
    }

    #[test]
    fn default_suite_is_valid() {
        SuiteConfig::default().validate().unwrap();
    }
}
