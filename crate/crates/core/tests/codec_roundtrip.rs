mod common;

use common::random_spans;
use g2c_core::bio::{repair, spans_from_tags, tag_inventory, tags_from_spans};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LFS: [&str; 4] = ["Magn", "Oper1", "Real1", "AntiMagn"];

#[test]
fn spans_survive_encoding() {
    let scheme = tag_inventory(&LFS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let len = 1 + case % 30;
        let spans = random_spans(len, &LFS, &mut rng);
        let tags = tags_from_spans(&spans, len, &scheme).unwrap();
        assert_eq!(spans_from_tags(&tags, &scheme), spans);
        assert_eq!(repair(&tags, &scheme), tags);
    }
}

proptest! {
    #[test]
    fn repair_is_idempotent(tags in prop::collection::vec(0usize..17, 0..40)) {
        let scheme = tag_inventory(&LFS).unwrap();
        let once = repair(&tags, &scheme);
        prop_assert_eq!(repair(&once, &scheme), once.clone());
        // decoding never depends on whether repair ran first
        prop_assert_eq!(spans_from_tags(&once, &scheme), spans_from_tags(&tags, &scheme));
        let reencoded = tags_from_spans(&spans_from_tags(&tags, &scheme), tags.len(), &scheme).unwrap();
        prop_assert_eq!(reencoded, once);
    }
}
