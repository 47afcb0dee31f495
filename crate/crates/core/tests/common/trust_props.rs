use overlearn_core::trust::{ideal_matrix, score_matrix, trust_score, weight_matrix, SquareMatrix};
use overlearn_core::{TaskRegistry, TaskSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

fn registry(counts: &[usize]) -> TaskRegistry {
    TaskRegistry(
        counts
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                let names: Vec<String> = (0..n).map(|c| format!("c{c}")).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                TaskSpec::new(&format!("t{t}"), &refs).unwrap()
            })
            .collect(),
    )
}

fn score(tasks: &TaskRegistry, t: &SquareMatrix) -> f64 {
    score_matrix(tasks, t).unwrap().trust_score
}

pub fn ideal_matrix_scores_one() {
    let tasks = TaskRegistry::preserve_task();
    let m = ideal_matrix(&tasks).unwrap();
    assert_eq!(score(&tasks, &m), 1.0);
}

pub fn all_ones_matrix_score_matches_closed_form() {
    let tasks = TaskRegistry::preserve_task();
    let s = score(&tasks, &SquareMatrix::from_fn(5, |_, _| 1.0));
    // Every off-diagonal cell of column j deviates by 1 - 1/n_j; four rows per column, ΣW = 40.
    let gap: f64 = [5.0, 7.0, 3.0, 4.0, 3.0].iter().map(|n| 1.0 - 1.0 / n).sum();
    let expected = 1.0 - 4.0 * gap / 40.0;
    assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
    assert!((s - 0.625_952_380_952).abs() < 1e-12);
}

pub fn one_location_cell_at_one_scores_0_98125() {
    let tasks = TaskRegistry::preserve_task();
    let loc = tasks.position("location").unwrap();
    let mut t = ideal_matrix(&tasks).unwrap();
    t.set(0, loc, 1.0);
    let s = score(&tasks, &t);
    assert!((s - 0.98125).abs() <= 1e-6, "{s}");
}

pub fn single_cell_sensitivity_depends_on_the_column() {
    let tasks = TaskRegistry::preserve_task();
    let ideal = ideal_matrix(&tasks).unwrap();
    let total_w = weight_matrix(5).unwrap().sum();
    for (j, spec) in tasks.tasks().iter().enumerate() {
        let i = (j + 1) % 5;
        let mut t = ideal.clone();
        t.set(i, j, 1.0);
        let drop = 1.0 - score(&tasks, &t);
        let expected = (1.0 - 1.0 / spec.num_classes as f64) / total_w;
        assert!((drop - expected).abs() < 1e-12, "{}: {drop} vs {expected}", spec.name);
    }
}

/// The score is concave in T, so its minimum over the unit box is attained
/// at a {0,1} corner; enumerating every corner bounds the whole box.
pub fn corners_stay_within_unit_interval() {
    let count_sets: &[&[usize]] = &[&[2, 2], &[2, 5], &[3, 7], &[2, 2, 2], &[3, 4, 5], &[7, 3, 2]];
    for counts in count_sets {
        let tasks = registry(counts);
        let n = counts.len();
        let cells = n * n;
        let mut lowest = f64::INFINITY;
        for bits in 0u32..(1 << cells) {
            let t = SquareMatrix::from_fn(n, |i, j| f64::from((bits >> (i * n + j)) & 1));
            let s = score(&tasks, &t);
            assert!((0.0..=1.0).contains(&s), "{counts:?} corner {bits:b}: {s}");
            lowest = lowest.min(s);
        }
        assert!(lowest >= 0.0);
    }
}

fn counts_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..9, 2..6)
}

fn case() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    counts_strategy().prop_flat_map(|counts| {
        let n = counts.len();
        (Just(counts), prop::collection::vec(0.0f64..=1.0, n * n))
    })
}

const CASES: u32 = 512;

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

pub fn score_lies_in_unit_interval() {
    runner()
        .run(&case(), |(counts, cells)| {
            let tasks = registry(&counts);
            let t = SquareMatrix { n: counts.len(), cells };
            let s = score(&tasks, &t);
            prop_assert!((0.0..=1.0).contains(&s));
            Ok(())
        })
        .unwrap();
}

pub fn moving_a_cell_towards_ideal_never_lowers_the_score() {
    let strategy = (case(), any::<prop::sample::Index>(), 0.0f64..=1.0);
    runner()
        .run(&strategy, |((counts, cells), pick, step)| {
            let tasks = registry(&counts);
            let n = counts.len();
            let ideal = ideal_matrix(&tasks).unwrap();
            let t = SquareMatrix { n, cells };
            let k = pick.index(n * n);
            let (i, j) = (k / n, k % n);
            let mut closer = t.clone();
            let v = t.get(i, j);
            closer.set(i, j, v + step * (ideal.get(i, j) - v));
            prop_assert!(score(&tasks, &closer) >= score(&tasks, &t) - 1e-12);
            Ok(())
        })
        .unwrap();
}

pub fn permuting_tasks_preserves_the_score() {
    let strategy = (case(), any::<u64>());
    runner()
        .run(&strategy, |((counts, cells), seed)| {
            let n = counts.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut state = seed;
            for k in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(k, (state >> 33) as usize % (k + 1));
            }
            let tasks = registry(&counts);
            let permuted_counts: Vec<usize> = perm.iter().map(|&p| counts[p]).collect();
            let permuted_tasks = registry(&permuted_counts);
            let t = SquareMatrix { n, cells };
            let a = score(&tasks, &t);
            let b = score(&permuted_tasks, &t.permuted(&perm));
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            Ok(())
        })
        .unwrap();
}

pub fn off_diagonal_sensitivity_matches_formula() {
    let strategy = (counts_strategy(), any::<prop::sample::Index>());
    runner()
        .run(&strategy, |(counts, pick)| {
            let tasks = registry(&counts);
            let n = counts.len();
            let off: Vec<(usize, usize)> =
                (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
            let (i, j) = off[pick.index(off.len())];
            let ideal = ideal_matrix(&tasks).unwrap();
            let weights = weight_matrix(n).unwrap();
            let mut t = ideal.clone();
            t.set(i, j, 1.0);
            let drop = 1.0 - trust_score(&tasks, &t, &ideal, &weights).unwrap().trust_score;
            let expected = (1.0 - 1.0 / counts[j] as f64) / weights.sum();
            prop_assert!((drop - expected).abs() < 1e-12);
            Ok(())
        })
        .unwrap();
}
