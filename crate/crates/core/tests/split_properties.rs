use std::collections::{BTreeSet, HashMap};

use dejavu_core::split::{plan_splits, verify_plan, CatalogEntry, ExampleCatalog, SplitSizes, Violation};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random catalog: per-class annotated and unannotated counts drawn by proptest.
fn catalog_from(counts: &[(usize, usize)]) -> ExampleCatalog {
    let mut entries = Vec::new();
    for (c, &(bbox, plain)) in counts.iter().enumerate() {
        for i in 0..bbox {
            entries.push(CatalogEntry { example_id: format!("c{c}_b{i}"), class_label: c as u32, has_bbox: true });
        }
        for i in 0..plain {
            entries.push(CatalogEntry { example_id: format!("c{c}_u{i}"), class_label: c as u32, has_bbox: false });
        }
    }
    ExampleCatalog::new(entries).unwrap()
}

fn counts_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((2usize..12, 0usize..15), 1..8)
}

fn membership(plan: &dejavu_core::split::SplitPlan) -> [BTreeSet<String>; 4] {
    let s = |v: &Vec<String>| v.iter().cloned().collect::<BTreeSet<_>>();
    [s(&plan.set_a), s(&plan.set_b), s(&plan.set_x), s(&plan.set_c)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn random_plans_verify_clean(counts in counts_strategy(), seed in any::<u64>(), x_frac in 0.0f64..=1.0) {
        let cat = catalog_from(&counts);
        let classes = counts.len();
        let min_bbox = counts.iter().map(|c| c.0).min().unwrap();
        let per = min_bbox / 2;
        let plain: usize = counts.iter().map(|c| c.1).sum();
        let x = (plain as f64 * x_frac).floor() as usize;
        let plan = plan_splits(&cat, SplitSizes::new(per * classes, per * classes, x), seed, false).unwrap();
        prop_assert_eq!(verify_plan(&plan, &cat), Vec::<Violation>::new());
        prop_assert_eq!(plan.set_x.len(), x);
        for &(a, b) in plan.per_class_counts.values() {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn all_annotated_balances_within_one(counts in counts_strategy(), seed in any::<u64>()) {
        let cat = catalog_from(&counts);
        let plan = plan_splits(&cat, SplitSizes::parse("all,all,0").unwrap(), seed, false).unwrap();
        prop_assert!(verify_plan(&plan, &cat).is_empty());
        for (c, &(a, b)) in &plan.per_class_counts {
            prop_assert_eq!(a + b, counts[*c as usize].0);
            prop_assert!(a == b || a == b + 1);
        }
    }

    #[test]
    fn deterministic_and_order_invariant(counts in counts_strategy(), seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let cat = catalog_from(&counts);
        let per = counts.iter().map(|c| c.0).min().unwrap() / 2;
        let classes = counts.len();
        let plain: usize = counts.iter().map(|c| c.1).sum();
        let sizes = SplitSizes::new(per * classes, per * classes, plain / 2);
        let p1 = plan_splits(&cat, sizes, seed, false).unwrap();
        let p2 = plan_splits(&cat, sizes, seed, false).unwrap();
        prop_assert_eq!(&p1, &p2);

        let mut entries = cat.entries().to_vec();
        entries.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let shuffled = ExampleCatalog::new(entries).unwrap();
        let p3 = plan_splits(&shuffled, sizes, seed, false).unwrap();
        prop_assert_eq!(membership(&p1), membership(&p3));
    }
}

#[test]
fn augmentation_stays_inside_c_without_repeats() {
    let cat = catalog_from(&[(10, 40); 5]);
    let mut sizes = SplitSizes::new(25, 25, 50);
    sizes.augment = 60;
    let plan = plan_splits(&cat, sizes, 3, true).unwrap();
    assert!(verify_plan(&plan, &cat).is_empty());
    let c: BTreeSet<_> = plan.set_c.iter().collect();
    for draw in [&plan.augment_a, &plan.augment_b] {
        assert_eq!(draw.len(), 60);
        let uniq: BTreeSet<_> = draw.iter().collect();
        assert_eq!(uniq.len(), draw.len());
        assert!(uniq.is_subset(&c));
    }
}

#[test]
fn imagenet_shaped_catalog_leaves_324600_in_c() {
    // 1000 classes; annotated and total counts spread as evenly as the totals allow.
    let (total, bbox, classes) = (1_281_167usize, 456_567usize, 1000usize);
    let mut entries = Vec::with_capacity(total);
    for c in 0..classes {
        let nb = bbox / classes + usize::from(c < bbox % classes);
        let nt = total / classes + usize::from(c < total % classes);
        for i in 0..nt {
            entries.push(CatalogEntry { example_id: format!("n{c:04}_{i:05}"), class_label: c as u32, has_bbox: i < nb });
        }
    }
    let cat = ExampleCatalog::new(entries).unwrap();
    let plan = plan_splits(&cat, SplitSizes::parse("all,all,500000").unwrap(), 0, false).unwrap();
    assert_eq!(plan.set_a.len() + plan.set_b.len(), bbox);
    assert_eq!(plan.set_x.len(), 500_000);
    assert_eq!(plan.set_c.len(), 324_600);
    let mut seen: HashMap<&str, u8> = HashMap::new();
    for id in plan.set_a.iter().chain(&plan.set_b).chain(&plan.set_x).chain(&plan.set_c) {
        *seen.entry(id).or_default() += 1;
    }
    assert_eq!(seen.len(), total);
    assert!(seen.values().all(|&n| n == 1));
}
