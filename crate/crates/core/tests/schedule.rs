mod common;

use common::oracle_schedule;
use facedeblur::blur::KERNEL_SIZES;
use facedeblur::trainer::{active_kernel_subset, KernelSchedule};
use proptest::prelude::*;

#[test]
fn default_schedule_matches_boundaries() {
    let s = KernelSchedule::default();
    assert_eq!(s.period, 30_000);
    assert_eq!(s.size_groups, KERNEL_SIZES.to_vec());
    for b in 0..KERNEL_SIZES.len() as u64 + 2 {
        for iter in [b * 30_000, (b * 30_000).saturating_sub(1), b * 30_000 + 1] {
            assert_eq!(active_kernel_subset(&s, iter), oracle_schedule(&KERNEL_SIZES, 30_000, iter), "iter {iter}");
        }
    }
    assert_eq!(active_kernel_subset(&s, 0), vec![13]);
    assert_eq!(active_kernel_subset(&s, 29_999), vec![13]);
    assert_eq!(active_kernel_subset(&s, 30_000), vec![13, 15]);
    assert_eq!(s.saturation_iter(), 210_000);
    assert_eq!(active_kernel_subset(&s, 17_000_000), KERNEL_SIZES.to_vec());
}

#[test]
fn direct_training_activates_everything() {
    let s = KernelSchedule::direct(vec![27, 13, 19]).unwrap();
    assert_eq!(s.active_kernel_subset(0), vec![13, 19, 27]);
    assert!(KernelSchedule::new(vec![], 10).is_err());
}

proptest! {
    #[test]
    fn monotone_and_saturating(period in 1u64..50_000, a in 0u64..2_000_000, b in 0u64..2_000_000) {
        let s = KernelSchedule::new(KERNEL_SIZES.to_vec(), period).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let x = s.active_kernel_subset(lo);
        let y = s.active_kernel_subset(hi);
        prop_assert!(x.len() <= y.len());
        prop_assert_eq!(&y[..x.len()], &x[..]);
        prop_assert_eq!(s.active_kernel_subset(hi), oracle_schedule(&KERNEL_SIZES, period, hi));
        prop_assert_eq!(s.active_kernel_subset(s.saturation_iter() + lo).len(), KERNEL_SIZES.len());
    }
}
