//! A fixed-size worker pool with a bounded number of jobs in flight.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolFull;

impl std::fmt::Display for PoolFull {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("job queue is full")
    }
}

impl std::error::Error for PoolFull {}

/// Runs jobs on `threads` worker threads and refuses new ones once
/// `capacity` jobs are queued or running.
///
/// Data-parallel work inside a job (for instance the rayon iterators used by
/// subgroup generation) runs on the same threads.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    capacity: usize,
    in_flight: Arc<AtomicUsize>,
}

impl WorkerPool {
    pub fn new(threads: usize, capacity: usize) -> Result<Self> {
        if threads == 0 || capacity == 0 {
            return Err(Error::InvalidConfig("worker pool needs at least one thread and one slot".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("cfprobe-worker-{i}"))
            .panic_handler(|_| log::error!("worker job panicked"))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(WorkerPool { pool, capacity, in_flight: Arc::new(AtomicUsize::new(0)) })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    /// Queues `job`, or returns [`PoolFull`] when `capacity` jobs are already
    /// pending.
    pub fn submit(&self, job: impl FnOnce() + Send + 'static) -> std::result::Result<(), PoolFull> {
        let claimed = self
            .in_flight
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.capacity).then_some(n + 1));
        if claimed.is_err() {
            return Err(PoolFull);
        }
        let in_flight = Arc::clone(&self.in_flight);
        self.pool.spawn(move || {
            struct Release(Arc<AtomicUsize>);
            impl Drop for Release {
                fn drop(&mut self) {
                    self.0.fetch_sub(1, Ordering::SeqCst);
                }
            }
            let _release = Release(in_flight);
            job();
        });
        Ok(())
    }

    /// Runs `f` on the pool's threads and waits for it.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;
    use std::time::Duration;

    #[test]
    fn rejects_when_full() {
        let pool = WorkerPool::new(1, 2).unwrap();
        let (release_tx, release_rx) = mpsc::channel::<()>();
        let release_rx = Arc::new(std::sync::Mutex::new(release_rx));
        for _ in 0..2 {
            let rx = Arc::clone(&release_rx);
            pool.submit(move || {
                rx.lock().unwrap().recv().unwrap();
            })
            .unwrap();
        }
        assert_eq!(pool.submit(|| {}), Err(PoolFull));
        release_tx.send(()).unwrap();
        release_tx.send(()).unwrap();
        for _ in 0..100 {
            if pool.in_flight() == 0 {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        assert_eq!(pool.in_flight(), 0);
        let (tx, rx) = mpsc::channel();
        pool.submit(move || tx.send(7).unwrap()).unwrap();
        assert_eq!(rx.recv_timeout(Duration::from_secs(5)).unwrap(), 7);
    }

    #[test]
    fn panicking_job_releases_its_slot() {
        let pool = WorkerPool::new(1, 1).unwrap();
        pool.submit(|| panic!("boom")).unwrap();
        for _ in 0..200 {
            if pool.in_flight() == 0 {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        assert_eq!(pool.in_flight(), 0);
    }

    #[test]
    fn zero_sizes_are_rejected() {
        assert!(WorkerPool::new(0, 1).is_err());
        assert!(WorkerPool::new(1, 0).is_err());
    }
}
