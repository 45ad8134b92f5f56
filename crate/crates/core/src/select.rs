//! Top-k selection shared by every scheme's kNN scan.

use std::collections::BinaryHeap;

use rayon::prelude::*;

/// Record identifier of a data point.
pub type RecordId = u64;

/// Ids of the `k` smallest keys, ascending by `(key, id)`.
pub fn top_k<K: Ord>(items: impl IntoIterator<Item = (RecordId, K)>, k: usize) -> Vec<RecordId> {
    smallest(items, k).into_iter().map(|(_, id)| id).collect()
}

fn smallest<K: Ord>(items: impl IntoIterator<Item = (RecordId, K)>, k: usize) -> Vec<(K, RecordId)> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<(K, RecordId)> = BinaryHeap::with_capacity(k + 1);
    for (id, key) in items {
        if heap.len() < k {
            heap.push((key, id));
        } else if let Some(top) = heap.peek() {
            if (&key, id) < (&top.0, top.1) {
                heap.pop();
                heap.push((key, id));
            }
        }
    }
    heap.into_sorted_vec()
}

const SCAN_CHUNK: usize = 2048;

/// Parallel [`top_k`] over `items`, scoring each with `score`.
///
/// Every chunk keeps only its own `k` best, so at most `k` scores per chunk
/// are alive at once instead of one per record. Freeing a full table of
/// big-integer scores in one go left the allocator with a long consolidation
/// that the next caller paid for.
pub fn par_top_k<T, K, E, F>(items: &[T], k: usize, score: F) -> Result<Vec<RecordId>, E>
where
    T: Sync,
    K: Ord + Send,
    E: Send,
    F: Fn(&T) -> Result<(RecordId, K), E> + Sync,
{
    let partial = items
        .par_chunks(SCAN_CHUNK)
        .map(|chunk| {
            let scored = chunk.iter().map(&score).collect::<Result<Vec<_>, E>>()?;
            Ok(smallest(scored, k))
        })
        .collect::<Result<Vec<_>, E>>()?;
    Ok(top_k(partial.into_iter().flatten().map(|(key, id)| (id, key)), k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_ascending_id() {
        let items = vec![(5, 1), (3, 1), (9, 0), (1, 2)];
        assert_eq!(top_k(items.clone(), 3), vec![9, 3, 5]);
        assert_eq!(top_k(items.clone(), 10), vec![9, 3, 5, 1]);
        assert!(top_k(items, 0).is_empty());
    }

    #[test]
    fn agrees_with_full_sort() {
        let items: Vec<(u64, i64)> = (0..500u64).map(|i| (i, ((i * 7919) % 97) as i64)).collect();
        let mut sorted = items.clone();
        sorted.sort_by_key(|&(id, k)| (k, id));
        let want: Vec<u64> = sorted.iter().take(25).map(|&(id, _)| id).collect();
        assert_eq!(top_k(items.clone(), 25), want);
    }

    #[test]
    fn chunked_scan_agrees_with_sequential() {
        let items: Vec<(u64, i64)> = (0..10_000u64).map(|i| (i, ((i * 7919) % 211) as i64)).collect();
        for k in [0, 1, 7, 300] {
            let par = par_top_k(&items, k, |&(id, key)| Ok::<_, ()>((id, key))).unwrap();
            assert_eq!(par, top_k(items.clone(), k));
        }
        let err = par_top_k(&items, 3, |&(id, _)| if id == 4321 { Err(id) } else { Ok((id, 0)) });
        assert_eq!(err, Err(4321));
    }
}
