//! Bounded worker pool whose results are consumed in submission order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::error::Result;

/// Runs `work` on every job with up to `workers` threads and hands results
/// to `sink` in job order, as soon as each prefix is complete. Stops
/// dispatching new jobs once `sink` fails and returns its error.
pub fn run_ordered<J, R, W, S>(jobs: &[J], workers: usize, work: W, mut sink: S) -> Result<()>
where
    J: Sync,
    R: Send,
    W: Fn(usize, &J) -> R + Sync,
    S: FnMut(usize, R) -> Result<()>,
{
    let workers = workers.max(1).min(jobs.len().max(1));
    if workers == 1 {
        for (i, job) in jobs.iter().enumerate() {
            sink(i, work(i, job))?;
        }
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let cancelled = AtomicBool::new(false);
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, R)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, cancelled, work) = (&next, &cancelled, &work);
            scope.spawn(move || loop {
                if cancelled.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                if tx.send((i, work(i, job))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&expected) {
                if let Err(e) = sink(expected, r) {
                    cancelled.store(true, Ordering::Relaxed);
                    return Err(e);
                }
                expected += 1;
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn results_arrive_in_order() {
        let jobs: Vec<u64> = (0..200).collect();
        for workers in [1, 3, 8] {
            let mut seen = Vec::new();
            run_ordered(
                &jobs,
                workers,
                |_, &j| {
                    // uneven work so completion order differs from job order
                    std::thread::sleep(std::time::Duration::from_micros((j * 7919) % 300));
                    j * j
                },
                |i, r| {
                    seen.push((i, r));
                    Ok(())
                },
            )
            .unwrap();
            assert_eq!(
                seen,
                jobs.iter()
                    .map(|&j| (j as usize, j * j))
                    .collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn sink_error_stops_the_run() {
        let jobs: Vec<u32> = (0..50).collect();
        let err = run_ordered(
            &jobs,
            4,
            |_, &j| j,
            |i, _| {
                if i == 10 {
                    Err(Error::Io("disk full".into()))
                } else {
                    Ok(())
                }
            },
        );
        assert_eq!(err, Err(Error::Io("disk full".into())));
    }
}
