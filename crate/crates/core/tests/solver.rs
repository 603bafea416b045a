use std::collections::BTreeMap;

use proptest::prelude::*;
use vinmap_core::allocator::{
    brute_force_optimum, greedy_baseline, multi_start_average, random_init, solve,
    AllocationProblem, SolverConfig,
};
use vinmap_core::synth::{generate, SynthConfig, SynthShape};

const WEIGHTS: [f64; 3] = [1.0, 1.0 / 3.0, 0.25];

/// Caps, per-row weight and the mask as (row, col) pairs.
#[derive(Debug, Clone)]
struct Tiny {
    rows: Vec<u32>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    mask: Vec<(usize, usize)>,
}

impl Tiny {
    fn problem(&self) -> AllocationProblem {
        let rows: BTreeMap<String, f64> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, &c)| (format!("A{i}"), f64::from(c)))
            .collect();
        let cols: BTreeMap<String, f64> = self
            .cols
            .iter()
            .enumerate()
            .map(|(j, &c)| (format!("{:05}", j), f64::from(c)))
            .collect();
        let cells = self
            .mask
            .iter()
            .map(|&(r, c)| (format!("A{r}"), format!("{:05}", c), self.weights[r]));
        AllocationProblem::from_parts(&rows, &cols, cells).unwrap()
    }
}

/// Integer caps up to 5, at most 6 mask cells.
fn tiny() -> impl Strategy<Value = Tiny> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(nr, nc)| {
        let all: Vec<(usize, usize)> = (0..nr).flat_map(|r| (0..nc).map(move |c| (r, c))).collect();
        let max = all.len().min(6);
        (
            prop::collection::vec(0u32..=5, nr),
            prop::collection::vec(0u32..=5, nc),
            prop::collection::vec(prop::sample::select(WEIGHTS.to_vec()), nr),
            prop::sample::subsequence(all, 1..=max),
        )
            .prop_map(|(rows, cols, weights, mask)| Tiny {
                rows,
                cols,
                weights,
                mask,
            })
    })
}

/// Exhaustive search over integer points. With integer caps the constraint
/// matrix is totally unimodular, so an optimal vertex is integral.
fn enumerate_optimum(t: &Tiny) -> f64 {
    fn go(t: &Tiny, i: usize, rows: &mut [u32], cols: &mut [u32]) -> f64 {
        if i == t.mask.len() {
            return 0.0;
        }
        let (r, c) = t.mask[i];
        let mut best = f64::NEG_INFINITY;
        for v in 0..=rows[r].min(cols[c]) {
            rows[r] -= v;
            cols[c] -= v;
            best = best.max(t.weights[r] * f64::from(v) + go(t, i + 1, rows, cols));
            rows[r] += v;
            cols[c] += v;
        }
        best
    }
    go(t, 0, &mut t.rows.clone(), &mut t.cols.clone())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn reaches_the_enumerated_optimum(t in tiny(), seed in any::<u64>()) {
        let p = t.problem();
        let want = enumerate_optimum(&t);
        let got = solve(&p, &random_init(&p, seed), &SolverConfig::default()).unwrap();
        prop_assert!(close(got.objective, want), "solver {} vs enumeration {}", got.objective, want);
        prop_assert!(p.max_violation(&got.values) <= 1e-9);
    }

    #[test]
    fn library_brute_force_agrees_with_enumeration(t in tiny()) {
        let p = t.problem();
        let bf = brute_force_optimum(&p, 1.0).unwrap();
        prop_assert!(close(bf.objective_value, enumerate_optimum(&t)));
    }

    #[test]
    fn greedy_never_beats_the_solver(t in tiny(), seed in any::<u64>()) {
        let p = t.problem();
        let greedy = p.objective_of(&greedy_baseline(&p));
        let got = solve(&p, &random_init(&p, seed), &SolverConfig::default()).unwrap();
        prop_assert!(greedy <= got.objective + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn synthetic_solutions_are_feasible_and_beat_the_truth(
        n_a in 2usize..25,
        n_c in 2usize..60,
        density in 0.05f64..0.6,
        seed in any::<u64>(),
    ) {
        let inst = generate(SynthShape { n_appellations: n_a, n_counties: n_c, density }, &SynthConfig::default(), seed)
            .unwrap();
        let p = &inst.problem;
        let truth = p.objective_of(&p.values_of(&inst.truth).unwrap());
        let ms = multi_start_average(p, 3, seed, &SolverConfig::default()).unwrap();
        for s in &ms.solutions {
            prop_assert!(p.max_violation(s) <= 1e-9);
            prop_assert!(p.objective_of(s) >= truth - 1e-6 * truth);
        }
        // every start reaches the same optimal value, so the average does too
        let best = ms.best_objective();
        for s in &ms.starts {
            prop_assert!(close(s.objective, best));
        }
        prop_assert!(close(ms.objective, best));
        prop_assert!(p.max_violation(&ms.average) <= 1e-9);
    }
}

#[test]
fn fixed_seed_is_reproducible() {
    let inst = generate(
        SynthShape {
            n_appellations: 12,
            n_counties: 50,
            density: 0.1,
        },
        &SynthConfig::default(),
        7,
    )
    .unwrap();
    let a = multi_start_average(&inst.problem, 4, 99, &SolverConfig::default()).unwrap();
    let b = multi_start_average(&inst.problem, 4, 99, &SolverConfig::default()).unwrap();
    assert_eq!(a, b);
}
