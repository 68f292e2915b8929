use bipfit_core::ipfp::cross_ratio_check;
use bipfit_core::matrix::ln_f_s;
use bipfit_core::products::{check_diameter_contraction, random_doubly_stochastic};
use bipfit_core::structure::{
    best_cause, enumerate_causes, maximal_support_by_enumeration, maximal_support_with_witness,
    CauseKind, Feasibility,
};
use bipfit_core::{
    block_structure, f_s, feasible, kl_divergence, l1_error, limit_points, ratio_vectors, run, t_c,
    t_r, Error, FittingProblem, Marginals, Matrix, NonNegMatrix, StopReason, StoppingRule,
    SupportPattern,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pattern(p: usize, q: usize) -> impl Strategy<Value = SupportPattern> {
    proptest::collection::vec(any::<bool>(), p * q)
        .prop_filter_map("pattern has an empty line", move |mask| {
            SupportPattern::new(p, q, mask).ok()
        })
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.05f64..1.0, n)
}

/// Small problem with a random pattern, seed entries and marginals.
fn problem(max: usize) -> impl Strategy<Value = FittingProblem> {
    (2..=max, 2..=max)
        .prop_flat_map(|(p, q)| {
            (
                pattern(p, q),
                proptest::collection::vec(0.1f64..1.0, p * q),
                weights(p),
                weights(q),
            )
        })
        .prop_map(|(s, entries, a, b)| {
            let (p, q) = s.shape();
            let x0 = Matrix::from_fn(p, q, |i, j| {
                if s.contains(i, j) {
                    entries[i * q + j]
                } else {
                    0.0
                }
            });
            FittingProblem::new(
                NonNegMatrix::new(x0).unwrap(),
                Marginals::from_weights(a).unwrap(),
                Marginals::from_weights(b).unwrap(),
            )
            .unwrap()
        })
}

/// Small integer weights, so that ties `a(A) = b(B^c)` occur often.
fn rational_problem(max: usize) -> impl Strategy<Value = (SupportPattern, Vec<u64>, Vec<u64>)> {
    (2..=max, 2..=max).prop_flat_map(|(p, q)| {
        (
            pattern(p, q),
            proptest::collection::vec(1u64..=6, p),
            proptest::collection::vec(1u64..=6, q),
        )
    })
}

fn to_marginals(k: &[u64]) -> Marginals {
    let t: u64 = k.iter().sum();
    Marginals::new(k.iter().map(|&x| x as f64 / t as f64).collect()).unwrap()
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1 << n)).map(move |m| (0..n).filter(|k| m >> k & 1 == 1).collect())
}

/// All `(A, B)` with `A x B` a zero block, both non-empty.
fn zero_blocks(s: &SupportPattern) -> Vec<(Vec<usize>, Vec<usize>)> {
    let (p, q) = s.shape();
    let mut out = Vec::new();
    for a in subsets(p) {
        for b in subsets(q) {
            if s.is_zero_on(&a, &b) {
                out.push((a.clone(), b));
            }
        }
    }
    out
}

fn exact_sign(ka: &[u64], kb: &[u64], a: &[usize], b: &[usize]) -> std::cmp::Ordering {
    let ta: u64 = ka.iter().sum();
    let tb: u64 = kb.iter().sum();
    let am: u64 = a.iter().map(|&i| ka[i]).sum();
    let bc: u64 = (0..kb.len())
        .filter(|j| !b.contains(j))
        .map(|j| kb[j])
        .sum();
    (am * tb).cmp(&(bc * ta))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scaling_steps_fit_one_side_and_keep_support(p in problem(6)) {
        let x1 = t_r(p.x0(), p.a()).unwrap();
        let x2 = t_c(&x1, p.b()).unwrap();
        for (s, a) in x1.matrix().row_sums().iter().zip(p.a().as_slice()) {
            prop_assert!((s - a).abs() <= 1e-12 * a);
        }
        for (s, b) in x2.matrix().col_sums().iter().zip(p.b().as_slice()) {
            prop_assert!((s - b).abs() <= 1e-12 * b);
        }
        prop_assert_eq!(x1.support(), p.support());
        prop_assert_eq!(x2.support(), p.support());
    }

    #[test]
    fn weighted_row_ratio_mean_is_one(p in problem(6)) {
        let rv = ratio_vectors(p.x0(), p.a(), p.b()).unwrap();
        prop_assert!((rv.weighted_row_mean(p.a()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_separates(p in problem(5), q in problem(5)) {
        prop_assert_eq!(kl_divergence(p.x0(), p.x0()).unwrap(), 0.0);
        if p.shape() == q.shape() {
            let d = kl_divergence(q.x0(), p.x0()).unwrap();
            prop_assert!(d >= 0.0);
            if q.support().is_subset_of(&p.support()) {
                prop_assert!(d.is_finite());
                if q.x0().matrix().max_abs_diff(p.x0().matrix()) > 1e-6 {
                    prop_assert!(d > 0.0);
                }
            } else {
                prop_assert_eq!(d, f64::INFINITY);
            }
        }
    }

    #[test]
    fn f_s_identity_and_bound(p in problem(5), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = p.shape();
        // S with the same support, normalized
        let s = Matrix::from_fn(rows, cols, |i, j| {
            if p.support().contains(i, j) { rng.gen_range(0.1..1.0) } else { 0.0 }
        });
        let s = NonNegMatrix::new(s).unwrap().normalized();
        let x = p.x0();
        let lhs = ln_f_s(&s, &s).unwrap() - ln_f_s(&s, x).unwrap();
        prop_assert!((lhs - kl_divergence(&s, x).unwrap()).abs() < 1e-12);
        prop_assert!(f_s(&s, &s).unwrap() >= f_s(&s, x).unwrap());
        let fs = f_s(&s, x).unwrap();
        prop_assert!((0.0..=1.0).contains(&fs));
    }

    #[test]
    fn row_step_raises_f_s_by_a_factor_free_of_s(p in problem(5), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = p.shape();
        let x = t_c(p.x0(), p.b()).unwrap();
        let draw = |rng: &mut ChaCha8Rng| {
            let y = Matrix::from_fn(rows, cols, |i, j| {
                if p.support().contains(i, j) { rng.gen_range(0.1..1.0) } else { 0.0 }
            });
            t_r(&NonNegMatrix::new(y).unwrap(), p.a()).unwrap()
        };
        let (s1, s2) = (draw(&mut rng), draw(&mut rng));
        let tx = t_r(&x, p.a()).unwrap();
        let r = ratio_vectors(&x, p.a(), p.b()).unwrap().r;
        let expected: f64 = r.iter().zip(p.a().as_slice()).map(|(ri, ai)| ai * ri.ln()).sum();
        for s in [&s1, &s2] {
            let gain = ln_f_s(s, &tx).unwrap() - ln_f_s(s, &x).unwrap();
            prop_assert!(gain >= -1e-12);
            prop_assert!((gain + expected).abs() < 1e-10, "gain {} vs {}", gain, -expected);
        }
    }

    #[test]
    fn l1_error_and_intervals_along_traces(p in problem(6)) {
        let trace = run(&p, StoppingRule::default().with_max_iters(500));
        prop_assert!(trace.errors_non_increasing(1e-12));
        prop_assert!(trace.nested_intervals_hold(1e-12));
        let last = trace.final_iterate();
        prop_assert!((l1_error(last, p.a(), p.b()).unwrap() - trace.final_error()).abs() < 1e-15);
    }

    #[test]
    fn f_s_increases_along_feasible_traces(p in problem(5)) {
        if let Feasibility::Witness(w) = feasible(p.a(), p.b(), &p.support()).unwrap() {
            let trace = run(&p, StoppingRule::default().with_max_iters(200));
            let values: Vec<f64> = trace
                .stored()
                .iter()
                .map(|(_, x)| ln_f_s(&w, x).unwrap())
                .collect();
            for pair in values.windows(2) {
                prop_assert!(pair[1] >= pair[0] - 1e-10);
            }
        }
    }

    #[test]
    fn feasibility_matches_block_enumeration((s, ka, kb) in rational_problem(4)) {
        let (a, b) = (to_marginals(&ka), to_marginals(&kb));
        let violating = zero_blocks(&s)
            .into_iter()
            .any(|(x, y)| exact_sign(&ka, &kb, &x, &y) == std::cmp::Ordering::Greater);
        match feasible(&a, &b, &s).unwrap() {
            Feasibility::Witness(w) => {
                prop_assert!(!violating);
                prop_assert!(SupportPattern::of(&w).is_subset_of(&s));
                for (x, y) in w.row_sums().iter().zip(a.as_slice()) {
                    prop_assert!((x - y).abs() < 1e-10);
                }
                for (x, y) in w.col_sums().iter().zip(b.as_slice()) {
                    prop_assert!((x - y).abs() < 1e-10);
                }
            }
            Feasibility::Cause(c) => {
                prop_assert!(violating);
                prop_assert!(s.is_zero_on(&c.rows, &c.cols));
                prop_assert_eq!(exact_sign(&ka, &kb, &c.rows, &c.cols), std::cmp::Ordering::Greater);
            }
        }
    }

    #[test]
    fn maximal_support_matches_critical_blocks((s, ka, kb) in rational_problem(4)) {
        let (a, b) = (to_marginals(&ka), to_marginals(&kb));
        match maximal_support_with_witness(&a, &b, &s) {
            Ok(ms) => {
                // exact oracle: remove A^c x B^c over all tight zero blocks
                let tight: Vec<_> = zero_blocks(&s)
                    .into_iter()
                    .filter(|(x, y)| exact_sign(&ka, &kb, x, y) == std::cmp::Ordering::Equal)
                    .collect();
                let oracle = s.filtered(|i, j| {
                    !tight.iter().any(|(x, y)| !x.contains(&i) && !y.contains(&j))
                });
                prop_assert_eq!(&ms.pattern, &oracle);
                prop_assert_eq!(maximal_support_by_enumeration(&a, &b, &s).unwrap(), oracle);
                for (i, j) in ms.pattern.cells() {
                    prop_assert!(ms.witness[(i, j)] > 0.0);
                }
            }
            Err(Error::Infeasible { .. }) => {
                prop_assert!(matches!(feasible(&a, &b, &s).unwrap(), Feasibility::Cause(_)));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn best_cause_is_the_largest_ratio_maximizer((s, ka, kb) in rational_problem(5)) {
        let (a, b) = (to_marginals(&ka), to_marginals(&kb));
        match best_cause(&a, &b, &s) {
            Err(Error::Feasible) => {
                prop_assert!(matches!(feasible(&a, &b, &s).unwrap(), Feasibility::Witness(_)));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
            Ok(c) => {
                let causes: Vec<_> = enumerate_causes(&a, &b, &s)
                    .unwrap()
                    .into_iter()
                    .filter(|x| x.kind == CauseKind::Incompatibility)
                    .collect();
                let best = causes.iter().map(|x| x.ratio).fold(0.0, f64::max);
                prop_assert!((c.ratio - best).abs() < 1e-12 * best);
                for other in causes.iter().filter(|x| (x.ratio - best).abs() < 1e-12 * best) {
                    prop_assert!(other.rows.iter().all(|i| c.rows.contains(i)));
                    prop_assert!(c.cols.iter().all(|j| other.cols.contains(j)));
                }
            }
        }
    }

    #[test]
    fn block_structure_invariants(p in problem(5)) {
        let bs = block_structure(&p).unwrap();
        let (a, b) = (p.a(), p.b());
        for k in 0..bs.r() {
            let (rows, cols) = (&bs.row_blocks[k], &bs.col_blocks[k]);
            prop_assert!((bs.a_prime.mass(rows) - b.mass(cols)).abs() < 1e-12);
            prop_assert!((a.mass(rows) - bs.b_prime.mass(cols)).abs() < 1e-12);
            for l in k + 1..bs.r() {
                prop_assert!(p.support().is_zero_on(rows, &bs.col_blocks[l]));
            }
        }
        prop_assert!(bs.lambdas.windows(2).all(|w| w[0] < w[1]));
        let mut all_rows: Vec<usize> = bs.row_blocks.concat();
        all_rows.sort_unstable();
        prop_assert_eq!(all_rows, (0..p.shape().0).collect::<Vec<_>>());
    }

    #[test]
    fn limit_pair_invariants(p in problem(5)) {
        let lp = limit_points(&p).unwrap();
        let bs = &lp.structure;
        let (even, odd) = (lp.even_limit.matrix(), lp.odd_limit.matrix());
        for (x, y) in even.row_sums().iter().zip(bs.a_prime.as_slice()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in even.col_sums().iter().zip(p.b().as_slice()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in odd.row_sums().iter().zip(p.a().as_slice()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in odd.col_sums().iter().zip(bs.b_prime.as_slice()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        prop_assert_eq!(lp.even_limit.support(), lp.sigma.clone());
        prop_assert_eq!(lp.odd_limit.support(), lp.sigma.clone());
        prop_assert!(lp.sigma.is_subset_of(&p.support()));
        for (i, j) in lp.sigma.cells() {
            prop_assert_eq!(bs.row_block(i), bs.col_block(j));
        }
    }

    #[test]
    fn positive_seeds_keep_cross_ratios(
        entries in proptest::collection::vec(0.1f64..1.0, 9),
        a in weights(3),
        b in weights(3),
    ) {
        let x0 = Matrix::from_vec(3, 3, entries).unwrap();
        let p = FittingProblem::new(
            NonNegMatrix::new(x0).unwrap(),
            Marginals::from_weights(a).unwrap(),
            Marginals::from_weights(b).unwrap(),
        )
        .unwrap();
        let trace = run(&p, StoppingRule::default().with_max_iters(50));
        let report = cross_ratio_check(&trace);
        prop_assert_eq!(report.checked, 9);
        prop_assert!(report.holds, "deviation {}", report.max_relative_deviation);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn diameter_contraction_on_random_stochastic(
        entries in proptest::collection::vec(0.0f64..1.0, 25),
        v in proptest::collection::vec(-1.0f64..1.0, 5),
    ) {
        let raw = Matrix::from_vec(5, 5, entries).unwrap();
        let sums = raw.row_sums();
        let m = Matrix::from_fn(5, 5, |i, j| {
            if sums[i] > 0.0 { raw[(i, j)] / sums[i] } else { 0.2 }
        });
        let slack = check_diameter_contraction(&m, &v).unwrap();
        prop_assert!(slack.min() >= -1e-12);
    }

    #[test]
    fn doubly_stochastic_generator_is_doubly_stochastic(seed in any::<u64>(), d in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_doubly_stochastic(&mut rng, d, d, 0.25);
        prop_assert!(m.is_doubly_stochastic(1e-12));
        prop_assert!(m.min_diagonal() >= 0.25 - 1e-15);
    }
}

#[test]
fn slow_engine_stops_are_reported_honestly() {
    let p = FittingProblem::from_parts(&[[1.0, 1.0], [1.0, 0.0]], vec![0.5, 0.5], vec![0.5, 0.5])
        .unwrap();
    let trace = run(&p, StoppingRule::default().with_max_iters(1000));
    assert_eq!(trace.stop_reason(), StopReason::IterationCap);
    assert!(trace.final_error() > 1e-4);
}
