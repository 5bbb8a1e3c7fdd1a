use std::thread;

use crate::error::Error;

/// Bounds of `n` contiguous partitions of `len` items. Some are empty when
/// `n > len`.
pub fn partition_bounds(len: usize, n: usize) -> Vec<(usize, usize)> {
    let n = n.max(1);
    (0..n).map(|i| (i * len / n, (i + 1) * len / n)).collect()
}

/// Applies `f` to `n` contiguous partitions of `data` on scoped threads and
/// concatenates the results in partition order. `f` receives the partition
/// index. The first failing partition (by index) fails the whole call.
pub fn map_partitions<T, U, E, F>(data: &[T], n: usize, f: F) -> Result<Vec<U>, Error>
where
    T: Sync,
    U: Send,
    E: std::fmt::Display + Send,
    F: Fn(usize, &[T]) -> Result<Vec<U>, E> + Sync,
{
    if n == 0 {
        return Err(Error::BadRequest("partition count must be at least 1".into()));
    }
    let bounds = partition_bounds(data.len(), n);
    let results: Vec<thread::Result<Result<Vec<U>, E>>> = if n == 1 {
        vec![Ok(f(0, data))]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = bounds
                .iter()
                .enumerate()
                .map(|(i, &(lo, hi))| {
                    let f = &f;
                    s.spawn(move || f(i, &data[lo..hi]))
                })
                .collect();
            handles.into_iter().map(|h| h.join()).collect()
        })
    };
    let mut out = Vec::with_capacity(data.len());
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(Ok(part)) => out.extend(part),
            Ok(Err(e)) => {
                return Err(Error::Partition {
                    index,
                    message: e.to_string(),
                })
            }
            Err(panic) => {
                return Err(Error::Partition {
                    index,
                    message: super::panic_message(&*panic),
                })
            }
        }
    }
    Ok(out)
}
