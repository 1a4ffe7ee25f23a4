//! Randomized property tests for the core invariants.

use proptest::prelude::*;

use railsim::analysis::{lpt_bound_check, normalized_mse};
use railsim::scheduling::{lpt_schedule, split_message, AtomicFlow};
use railsim::topology::GpuId;

proptest! {
    #[test]
    fn split_message_conserves_and_sizes(
        message in 1u64..10_000_000,
        chunk in 1u64..100_000,
    ) {
        let flows =
            split_message(GpuId::new(0, 0), GpuId::new(1, 0), message, chunk, 0).unwrap();
        prop_assert_eq!(flows.iter().map(|f| f.bytes).sum::<u64>(), message);
        prop_assert_eq!(flows.len() as u64, message.div_ceil(chunk));
        for (i, f) in flows.iter().enumerate() {
            prop_assert_eq!(f.id, i as u64);
            if i + 1 < flows.len() {
                prop_assert_eq!(f.bytes, chunk);
            } else {
                prop_assert!(f.bytes >= 1 && f.bytes <= chunk);
            }
        }
    }

    #[test]
    fn lpt_bounds_and_conservation(
        weights in prop::collection::vec(1u64..1_000_000, 0..200),
        rails in 1usize..12,
    ) {
        let flows: Vec<AtomicFlow> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| AtomicFlow {
                id: i as u64,
                src: GpuId::new(0, i % 8),
                dst: GpuId::new(1, 0),
                bytes: w,
            })
            .collect();
        let (assignment, state) = lpt_schedule(&flows, rails);
        prop_assert_eq!(state.total(), weights.iter().sum::<u64>());
        prop_assert_eq!(assignment.entries.len(), flows.len());
        prop_assert!(lpt_bound_check(&flows, rails).bound_satisfied);
    }

    #[test]
    fn normalized_mse_is_bounded(
        loads in prop::collection::vec(0u64..1_000_000, 1..64),
    ) {
        let v = normalized_mse(&loads);
        prop_assert!((0.0..=1.0).contains(&v));
        let equal = vec![loads[0].max(1); loads.len()];
        prop_assert_eq!(normalized_mse(&equal), 0.0);
    }
}
