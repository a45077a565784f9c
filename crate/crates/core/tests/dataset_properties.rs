use lacforest::dataset::{make_shift_split, normalize_unit_interval, LabeledSet, ShiftSplitConfig};
use proptest::prelude::*;

fn ten_classes(per_class: usize) -> LabeledSet {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for c in 1..=10 {
        for i in 0..per_class {
            x.push(vec![c as f64, i as f64]);
            y.push(c);
        }
    }
    LabeledSet::new(x, y, 10).unwrap()
}

#[test]
fn split_sizes_and_mixture_fraction() {
    let full = ten_classes(400);
    let mut total = 0.0;
    for seed in 0..200 {
        let cfg = ShiftSplitConfig { seed, ..Default::default() };
        let s = make_shift_split(&full, &cfg).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len(), s.test.len()), (500, 1000, 100));
        assert!(s.labeled.labels.iter().all(|&y| y <= s.num_known()));
        total += s.realized_unlabeled_augmented_fraction;
    }
    let mean = total / 200.0;
    assert!((mean - 0.5).abs() <= 0.05, "mean augmented fraction {mean}");
}

proptest! {
    #[test]
    fn normalization_is_idempotent(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..40)) {
        let mut once = rows.clone();
        normalize_unit_interval(&mut [&mut once], &mut []);
        let mut twice = once.clone();
        normalize_unit_interval(&mut [&mut twice], &mut []);
        for (a, b) in once.iter().flatten().zip(twice.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }
}
