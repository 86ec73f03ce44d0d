/// Evaluate `job(state, i)` for `i in 0..n` on up to `workers` threads, each
/// with its own state from `init`. Results come back in index order.
pub(crate) fn map_indexed<S, T, I, F>(n: usize, workers: usize, init: I, job: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize) -> T + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        let mut state = init();
        return (0..n).map(|i| job(&mut state, i)).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (init, job) = (&init, &job);
                scope.spawn(move || {
                    let mut state = init();
                    (w..n).step_by(workers).map(|i| (i, job(&mut state, i))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker thread panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every index evaluated")).collect()
}
