//! Inclusive prefix/suffix scans over an associative operator.
//!
//! The tree schedule is a work-efficient up-sweep/down-sweep that works on
//! arrays of any length without padding, so the operator needs no identity
//! element. Results of the two schedules agree up to floating-point
//! reassociation; the tree schedule is bit-for-bit identical whether its
//! levels run on one thread or on the rayon pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Association order used to evaluate a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanSchedule {
    /// Left fold, one element at a time.
    Sequential,
    /// Balanced-tree reduction evaluated on the calling thread.
    #[default]
    Tree,
    /// Balanced-tree reduction with each level spread over the rayon pool.
    ParallelTree,
}

/// Inclusive prefix scan: `out[i] = items[0] ⊕ ... ⊕ items[i]`.
pub fn prefix_scan<T, E, F>(items: Vec<T>, schedule: ScanSchedule, op: &F) -> Result<Vec<T>, E>
where
    T: Clone + Send + Sync,
    E: Send,
    F: Fn(&T, &T) -> Result<T, E> + Sync,
{
    match schedule {
        ScanSchedule::Sequential => sequential(items, op),
        ScanSchedule::Tree => tree(items, op, false),
        ScanSchedule::ParallelTree => tree(items, op, true),
    }
}

/// Inclusive suffix scan: `out[i] = items[i] ⊕ ... ⊕ items[n-1]`.
pub fn suffix_scan<T, E, F>(mut items: Vec<T>, schedule: ScanSchedule, op: &F) -> Result<Vec<T>, E>
where
    T: Clone + Send + Sync,
    E: Send,
    F: Fn(&T, &T) -> Result<T, E> + Sync,
{
    items.reverse();
    let flipped = |a: &T, b: &T| op(b, a);
    let mut out = prefix_scan(items, schedule, &flipped)?;
    out.reverse();
    Ok(out)
}

fn sequential<T, E, F>(items: Vec<T>, op: &F) -> Result<Vec<T>, E>
where
    T: Clone,
    F: Fn(&T, &T) -> Result<T, E>,
{
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        let next = match out.last() {
            Some(acc) => op(acc, &item)?,
            None => item,
        };
        out.push(next);
    }
    Ok(out)
}

fn tree<T, E, F>(items: Vec<T>, op: &F, parallel: bool) -> Result<Vec<T>, E>
where
    T: Clone + Send + Sync,
    E: Send,
    F: Fn(&T, &T) -> Result<T, E> + Sync,
{
    let n = items.len();
    if n <= 1 {
        return Ok(items);
    }
    // up-sweep: combine adjacent pairs
    let pairs = n / 2;
    let reduce = |i: usize| op(&items[2 * i], &items[2 * i + 1]);
    let reduced: Vec<T> = if parallel {
        (0..pairs).into_par_iter().map(reduce).collect::<Result<_, E>>()?
    } else {
        (0..pairs).map(reduce).collect::<Result<_, E>>()?
    };
    let scanned = tree(reduced, op, parallel)?;
    // down-sweep: odd positions take the pair prefix, even positions extend
    // the previous pair prefix by one element
    let fill = |i: usize| -> Result<T, E> {
        if i == 0 {
            Ok(items[0].clone())
        } else if i % 2 == 1 {
            Ok(scanned[i / 2].clone())
        } else {
            op(&scanned[i / 2 - 1], &items[i])
        }
    };
    if parallel {
        (0..n).into_par_iter().map(fill).collect()
    } else {
        (0..n).map(fill).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn concat(a: &String, b: &String) -> Result<String, ()> {
        Ok(format!("{a}{b}"))
    }

    const ALL: [ScanSchedule; 3] = [
        ScanSchedule::Sequential,
        ScanSchedule::Tree,
        ScanSchedule::ParallelTree,
    ];

    #[test]
    fn reverse_cumulative_sum_of_eight() {
        let a: Vec<i64> = (0..8).collect();
        for s in ALL {
            let out = suffix_scan(a.clone(), s, &|x: &i64, y: &i64| Ok::<_, ()>(x + y)).unwrap();
            assert_eq!(out, vec![28, 28, 27, 25, 22, 18, 13, 7]);
        }
    }

    #[test]
    fn empty_and_single() {
        for s in ALL {
            assert!(prefix_scan(Vec::<String>::new(), s, &concat).unwrap().is_empty());
            assert_eq!(prefix_scan(vec!["a".to_string()], s, &concat).unwrap(), vec!["a"]);
        }
    }

    #[test]
    fn error_propagates() {
        let op = |a: &i32, b: &i32| if *b == 3 { Err("bad") } else { Ok(a + b) };
        for s in ALL {
            assert_eq!(prefix_scan(vec![1, 2, 3, 4], s, &op), Err("bad"));
        }
    }

    proptest! {
        // string concatenation is associative but not commutative, so any
        // ordering mistake shows up
        #[test]
        fn schedules_agree_on_noncommutative_op(len in 0usize..70) {
            let items: Vec<String> = (0..len).map(|i| format!("{},", i)).collect();
            let want = sequential(items.clone(), &concat).unwrap();
            for s in ALL {
                prop_assert_eq!(&prefix_scan(items.clone(), s, &concat).unwrap(), &want);
            }
            let suf = suffix_scan(items.clone(), ScanSchedule::Tree, &concat).unwrap();
            for (i, v) in suf.iter().enumerate() {
                prop_assert_eq!(v, &items[i..].concat());
            }
        }
    }
}
