use proptest::prelude::*;
use vampnet::prompts::{
    beat_mask, combine, compression_mask, effective_bitrate, inpaint_mask, kept_fraction, periodic_mask,
    PromptContext, PromptSpec,
};
use vampnet::tokens::MaskGrid;

fn spec_strategy() -> impl Strategy<Value = PromptSpec> {
    let leaf = prop_oneof![
        (1usize..9).prop_flat_map(|p| (Just(p), 0..p))
            .prop_map(|(period, offset)| PromptSpec::Periodic { period, offset }),
        (0usize..3).prop_map(|keep| PromptSpec::Compression { keep }),
        (0usize..4, 0usize..4).prop_map(|(prefix, suffix)| PromptSpec::Inpaint { prefix, suffix }),
        (proptest::collection::btree_set(0usize..40, 0..5), 1usize..4).prop_map(|(b, width)| PromptSpec::Beat {
            beats: b.into_iter().collect(),
            width
        }),
    ];
    prop_oneof![
        3 => leaf.clone(),
        1 => proptest::collection::vec(leaf, 2..4).prop_map(PromptSpec::Combined),
    ]
}

proptest! {
    #[test]
    fn periodic_keeps_exactly_the_grid(t in 1usize..80, n in 1usize..5, p in 1usize..10, off in 0usize..10) {
        prop_assume!(off < p);
        let m = periodic_mask(t, n, p, off).unwrap();
        for ti in 0..t {
            let kept = ti >= off && (ti - off) % p == 0;
            for ni in 0..n {
                prop_assert_eq!(m.get(ti, ni), !kept);
            }
        }
    }

    #[test]
    fn combination_keeps_the_union(spec_a in spec_strategy(), spec_b in spec_strategy(), t in 8usize..40) {
        let levels = 3;
        let a = spec_a.mask(t, levels).unwrap();
        let b = spec_b.mask(t, levels).unwrap();
        let c = combine(&a, &b).unwrap();
        for ti in 0..t {
            for n in 0..levels {
                prop_assert_eq!(c.get(ti, n), a.get(ti, n) && b.get(ti, n));
            }
        }
        prop_assert!(c.masked_count() <= a.masked_count().min(b.masked_count()));
        prop_assert_eq!(combine(&a, &b).unwrap(), combine(&b, &a).unwrap());
    }

    #[test]
    fn text_form_round_trips(spec in spec_strategy()) {
        let text = spec.to_string();
        let back = PromptSpec::parse(&text, &PromptContext::new(62.5)).unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn bitrate_is_kept_fraction_times_codec_rate(spec in spec_strategy(), t in 4usize..60, rate in 1.0f64..10_000.0) {
        let m = spec.mask(t, 3).unwrap();
        let b = effective_bitrate(&m, rate).unwrap();
        let kept = m.unmasked_count() as f64 / (t * 3) as f64;
        prop_assert!((b - rate * kept).abs() <= 1e-9 * rate);
        prop_assert!((kept_fraction(&m) - kept).abs() < 1e-15);
    }
}

#[test]
fn periodic_bitrate_scales_as_one_over_p() {
    for p in [1usize, 2, 3, 4, 8, 16] {
        let t = 48 * p;
        let m = periodic_mask(t, 4, p, 0).unwrap();
        let b = effective_bitrate(&m, 8000.0).unwrap();
        assert!((b - 8000.0 / p as f64).abs() < 1e-9, "P={p}: {b}");
    }
}

#[test]
fn compression_bitrate_anchor() {
    let m = compression_mask(100, 14, 1).unwrap();
    let b = effective_bitrate(&m, 8000.0).unwrap();
    assert!((b - 8000.0 / 14.0).abs() < 1e-9);
    assert!((b - 571.43).abs() < 5e-3);
}

#[test]
fn constructors_reject_impossible_shapes() {
    assert!(inpaint_mask(5, 1, 3, 3).is_err());
    assert!(compression_mask(5, 2, 3).is_err());
    assert!(beat_mask(5, 1, &[7], 1).is_err());
    assert!(beat_mask(5, 1, &[3, 1], 1).is_err());
    let all = MaskGrid::filled(3, 1, true).unwrap();
    assert!(combine(&all, &MaskGrid::filled(4, 1, true).unwrap()).is_err());
}
