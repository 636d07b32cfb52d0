//! Randomized invariants: wherever the library promises an identity for all
//! inputs, generate inputs and hold it to that.

use proptest::prelude::*;

use predbayes_core::{
    credible_interval, data_digest, eppf_crp, eppf_finite_dirichlet, graphon_sample, joint_prob,
    newton_update, py_weights, BaseMeasure, DiscreteDistribution, EvalGrid, Graphon, GraphonMode,
    MixKernel, MixingGrid, OgdState, PartitionCounts, Point, PolyaRule, PolyaState, RandomSource,
    UpdateAccumulator,
};

fn lab(i: u32) -> Point {
    Point::Label(i)
}

/// A categorical base over `k` labels with strictly positive probabilities.
fn base_probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.iter().map(|r| r / total).collect()
    })
}

proptest! {
    // ---------- urn predictives ----------

    #[test]
    fn polya_predictive_is_a_distribution(
        alpha in 0.1f64..5.0,
        probs in base_probs(3),
        seq in prop::collection::vec(0u32..3, 0..30),
    ) {
        let base = BaseMeasure::Categorical(
            DiscreteDistribution::new(vec![lab(0), lab(1), lab(2)], probs).unwrap(),
        );
        let mut state = PolyaState::new(alpha, base).unwrap();
        for s in &seq {
            state.observe(&lab(*s));
        }
        let predictive = state.predictive().unwrap();
        let masses: Vec<f64> = (0..3).map(|j| predictive.point_mass(&lab(j))).collect();
        for m in &masses {
            prop_assert!((0.0..=1.0).contains(m));
        }
        let total: f64 = masses.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "total {total}");
    }

    #[test]
    fn polya_pairs_are_order_free(
        alpha in 0.1f64..5.0,
        probs in base_probs(2),
        a in 0u32..2,
        b in 0u32..2,
    ) {
        let rule = PolyaRule::new(
            alpha,
            BaseMeasure::Categorical(
                DiscreteDistribution::new(vec![lab(0), lab(1)], probs).unwrap(),
            ),
        )
        .unwrap();
        let p_ab = joint_prob(&rule, &[lab(a), lab(b)]).unwrap();
        let p_ba = joint_prob(&rule, &[lab(b), lab(a)]).unwrap();
        prop_assert!((p_ab - p_ba).abs() <= 1e-15);
    }

    // ---------- partition weights ----------

    #[test]
    fn pitman_yor_seat_weights_are_a_distribution(
        alpha in 0.05f64..4.0,
        theta in 0.0f64..0.95,
        sizes in prop::collection::vec(1usize..6, 1..6),
    ) {
        let counts = PartitionCounts::from_sizes(sizes).unwrap();
        let (existing, new_block) = py_weights(&counts, alpha, theta).unwrap();
        let total: f64 = existing.iter().sum::<f64>() + new_block;
        prop_assert!((total - 1.0).abs() <= 1e-12, "total {total}");
        for w in existing {
            prop_assert!(w >= 0.0);
        }
        prop_assert!(new_block >= 0.0);
    }

    #[test]
    fn crp_partition_function_is_additive(
        alpha in 0.1f64..5.0,
        sizes in prop::collection::vec(1usize..5, 1..5),
    ) {
        let counts = PartitionCounts::from_sizes(sizes).unwrap();
        let here = eppf_crp(&counts, alpha).unwrap();
        let mut expanded = 0.0;
        for j in 0..=counts.k() {
            expanded += eppf_crp(&counts.incremented(j).unwrap(), alpha).unwrap();
        }
        prop_assert!((here - expanded).abs() <= 1e-10 * here.max(1e-30));
    }

    #[test]
    fn finite_class_partitions_vanish_beyond_the_class_count(
        alpha in 0.5f64..4.0,
        classes in 1usize..4,
    ) {
        // One more block than classes: impossible.
        let sizes = vec![1usize; classes + 1];
        let p = eppf_finite_dirichlet(
            &PartitionCounts::from_sizes(sizes).unwrap(),
            alpha,
            classes,
        )
        .unwrap();
        prop_assert_eq!(p, 0.0);
    }

    // ---------- the recursive mixture ----------

    #[test]
    fn mixture_recursion_preserves_normalization(
        weights in base_probs(4),
        seq in prop::collection::vec(0u32..2, 1..40),
    ) {
        let grid = MixingGrid::new(
            vec![0.15, 0.4, 0.6, 0.85],
            weights,
            MixKernel::Bernoulli,
            1.0,
        )
        .unwrap();
        let mut g = grid;
        for s in &seq {
            g = newton_update(&g, &lab(*s)).unwrap();
        }
        let total: f64 = g.probs().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9, "total {total}");
        for p in g.probs() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(p));
        }
    }

    // ---------- online gradient descent ----------

    #[test]
    fn descent_steps_respect_the_decay_bound(
        d in 1usize..4,
        seed in 0u64..1_000,
        steps in 1usize..120,
    ) {
        let bound = (d as f64).sqrt() / std::f64::consts::LN_2;
        let mut rng = RandomSource::new(seed);
        let mut s = OgdState::zeros(d).unwrap();
        let mut prev = s.beta().to_vec();
        for n in 1..=steps {
            let x: Vec<f64> = (0..d).map(|_| rng.uniform() * 2.0 - 1.0).collect();
            let y = u8::from(rng.bernoulli(0.5));
            predbayes_core::ogd_update(&mut s, &x, y).unwrap();
            let norm: f64 = s.beta().iter().zip(prev.iter())
                .map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(n as f64 * norm <= bound + 1e-12);
            prev = s.beta().to_vec();
        }
    }

    // ---------- update accumulation ----------

    #[test]
    fn split_accumulation_matches_one_pass(
        dim in 1usize..4,
        seed in 0u64..1_000,
        len_a in 1usize..30,
        len_b in 1usize..30,
    ) {
        let mut rng = RandomSource::new(seed);
        let initial = vec![0.5; dim];
        let draw = |rng: &mut RandomSource| -> Vec<f64> {
            (0..dim).map(|_| rng.uniform()).collect()
        };
        let mut updates = Vec::new();
        for _ in 0..len_a + len_b {
            updates.push(draw(&mut rng));
        }

        let mut whole = UpdateAccumulator::new(initial.clone(), true).unwrap();
        for u in &updates {
            whole.record_update(u).unwrap();
        }
        let mut resumed = UpdateAccumulator::new(initial, true).unwrap();
        for u in &updates[..len_a] {
            resumed.record_update(u).unwrap();
        }
        // Round-trip through the serialized form, then continue.
        let json = serde_json::to_string(&resumed).unwrap();
        let mut resumed: UpdateAccumulator = serde_json::from_str(&json).unwrap();
        for u in &updates[len_a..] {
            resumed.record_update(u).unwrap();
        }
        prop_assert_eq!(whole.vn().unwrap(), resumed.vn().unwrap());
    }

    #[test]
    fn interval_widths_grow_with_the_level(
        dim in 1usize..3,
        seed in 0u64..500,
        steps in 2usize..40,
    ) {
        let mut rng = RandomSource::new(seed);
        let mut acc = UpdateAccumulator::new(vec![0.5; dim], true).unwrap();
        for _ in 0..steps {
            let v: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
            acc.record_update(&v).unwrap();
        }
        let center = acc.current()[0];
        let mut last_width = -1.0;
        for level in [0.5, 0.9, 0.99] {
            let interval = credible_interval(&acc, center, 0, level).unwrap();
            prop_assert!(interval.contains(center));
            prop_assert!(interval.width() >= last_width);
            last_width = interval.width();
        }
    }

    // ---------- reproducibility ----------

    #[test]
    fn branched_streams_replay_bitwise(seed in 0u64..10_000, index in 0u64..64) {
        let root = RandomSource::new(seed);
        let mut a = root.branch(index);
        let mut b = root.branch(index);
        let from_a: Vec<u64> = (0..10).map(|_| a.uniform().to_bits()).collect();
        let from_b: Vec<u64> = (0..10).map(|_| b.uniform().to_bits()).collect();
        prop_assert_eq!(&from_a, &from_b);
        let mut c = root.branch(index + 1);
        let from_c: Vec<u64> = (0..10).map(|_| c.uniform().to_bits()).collect();
        prop_assert_ne!(&from_a, &from_c);
    }

    // ---------- sampling supports ----------

    #[test]
    fn categorical_draws_stay_in_the_support(
        probs in base_probs(4),
        seed in 0u64..1_000,
        draws in 1usize..50,
    ) {
        let labels: Vec<Point> = (0..4).map(lab).collect();
        let dist = DiscreteDistribution::new(labels.clone(), probs).unwrap();
        let mut rng = RandomSource::new(seed);
        for _ in 0..draws {
            let x = dist.sample(&mut rng);
            prop_assert!(labels.contains(&x));
        }
    }

    #[test]
    fn joint_arrays_are_symmetric_with_empty_diagonal(
        p in 0.0f64..1.0,
        n in 1usize..25,
        seed in 0u64..1_000,
    ) {
        let w = Graphon::constant(p).unwrap();
        let mut rng = RandomSource::new(seed);
        let adj = graphon_sample(&w, n, GraphonMode::Joint, &mut rng).unwrap();
        prop_assert!(adj.is_symmetric());
        prop_assert!(adj.zero_diagonal());
    }

    // ---------- provenance digests ----------

    #[test]
    fn digests_are_deterministic_and_order_sensitive(
        seq in prop::collection::vec(0u32..4, 1..20),
    ) {
        let points: Vec<Point> = seq.iter().map(|i| lab(*i)).collect();
        prop_assert_eq!(data_digest(&points), data_digest(&points));
        let mut reversed = points.clone();
        reversed.reverse();
        if reversed != points {
            prop_assert_ne!(data_digest(&points), data_digest(&reversed));
        }
    }

    #[test]
    fn cdf_grids_demand_increasing_thresholds(
        a in -5.0f64..5.0,
        gap in -1.0f64..1.0,
    ) {
        let grid = EvalGrid::Cdf(vec![a, a + gap]);
        prop_assert_eq!(grid.validate().is_ok(), gap > 0.0);
    }
}
