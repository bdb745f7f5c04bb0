//! Bounded worker pool with in-order delivery.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

/// Runs `work(i)` for `i in 0..n` on at most `workers` threads and hands
/// results to `deliver` in index order, as soon as each prefix is complete.
pub fn run_ordered<T, W, D>(n: usize, workers: usize, work: W, mut deliver: D)
where
    T: Send,
    W: Fn(usize) -> T + Sync,
    D: FnMut(usize, T),
{
    if n == 0 {
        return;
    }
    let workers = workers.clamp(1, n);
    if workers == 1 {
        for i in 0..n {
            deliver(i, work(i));
        }
        return;
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, T)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let work = &work;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                if tx.send((i, work(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut parked: BTreeMap<usize, T> = BTreeMap::new();
        let mut cursor = 0;
        for (i, v) in rx {
            parked.insert(i, v);
            while let Some(v) = parked.remove(&cursor) {
                deliver(cursor, v);
                cursor += 1;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delivers_in_order_regardless_of_completion() {
        let mut seen = Vec::new();
        run_ordered(
            50,
            8,
            |i| {
                std::thread::sleep(std::time::Duration::from_micros(((50 - i) * 37 % 200) as u64));
                i * i
            },
            |i, v| seen.push((i, v)),
        );
        let expected: Vec<_> = (0..50).map(|i| (i, i * i)).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn bounded_concurrency() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        run_ordered(
            40,
            3,
            |_| {
                let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(2));
                live.fetch_sub(1, Ordering::SeqCst);
            },
            |_, _| {},
        );
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
