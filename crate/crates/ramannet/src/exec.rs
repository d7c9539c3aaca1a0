use ramannet_core::train::SplitExecutor;
use rayon::prelude::*;

/// Runs independent splits on a dedicated rayon pool.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        Ok(Self {
            pool: rayon::ThreadPoolBuilder::new().num_threads(threads).build()?,
        })
    }
}

impl SplitExecutor for RayonExecutor {
    fn run<T, F>(&self, jobs: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..jobs).into_par_iter().map(job).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_job_order() {
        let ex = RayonExecutor::new(4).unwrap();
        assert_eq!(ex.run(100, |i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
