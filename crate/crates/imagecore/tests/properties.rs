use std::collections::BTreeMap;

use imagecore::{
    encode_color_mask, parse_color_mask, patient_split, slice_volume, stack_slices, standardize_labels,
    DatasetManifest, Image, LabelMask, Palette, SampleRecord, Split, SplitRatios, TaskKind,
};
use proptest::prelude::*;

fn mask_strategy(max_class: u16) -> impl Strategy<Value = LabelMask> {
    (1usize..20, 1usize..20).prop_flat_map(move |(w, h)| {
        proptest::collection::vec(0..=max_class, w * h)
            .prop_map(move |labels| LabelMask::from_vec(w, h, labels).unwrap())
    })
}

proptest! {
    #[test]
    fn codec_round_trip(mask in mask_strategy(7)) {
        let palette = Palette::standard();
        let img = encode_color_mask(&mask, &palette).unwrap();
        prop_assert_eq!(parse_color_mask(&img, &palette, 0.0).unwrap(), mask);
    }

    #[test]
    fn standardize_conserves_pixels(mask in mask_strategy(5)) {
        let parts = standardize_labels(&mask);
        let total: usize = parts.iter().map(|(_, b)| b.count(1)).sum();
        prop_assert_eq!(total, mask.count_nonzero());
        for (class, b) in &parts {
            prop_assert_eq!(b.count(1), mask.count(*class));
        }
    }

    #[test]
    fn split_is_a_partition(patients in 1usize..60, per in 1usize..4, seed in any::<u64>()) {
        let records = (0..patients)
            .flat_map(|p| (0..per).map(move |k| (p, k)))
            .map(|(p, k)| SampleRecord::new(
                format!("{p}-{k}"), format!("patient-{p}"), TaskKind::Segment,
                vec!["a.png".into()], "b.png", "x"))
            .collect();
        let m = DatasetManifest::new(records);
        let a = patient_split(&m, SplitRatios::default(), seed).unwrap();
        prop_assert_eq!(&a, &patient_split(&m, SplitRatios::default(), seed).unwrap());
        let mut seen: BTreeMap<String, Split> = BTreeMap::new();
        for r in &a.records {
            prop_assert!(r.split != Split::Unassigned);
            let s = *seen.entry(r.patient_id.clone()).or_insert(r.split);
            prop_assert_eq!(s, r.split);
        }
        prop_assert_eq!(seen.len(), patients);
    }

    #[test]
    fn slice_stack_inverse(depth in 1usize..5, seed in any::<u32>()) {
        let planes: Vec<Image> = (0..depth)
            .map(|k| {
                let data = (0..48).map(|i| ((i as u32 * 31 + k as u32 * 7 + seed) % 256) as f32 / 255.0).collect();
                Image::from_vec(4, 4, 3, data).unwrap()
            })
            .collect();
        let v = stack_slices(planes).unwrap();
        prop_assert_eq!(stack_slices(slice_volume(&v).unwrap()).unwrap(), v);
    }
}

#[test]
fn thousand_patient_split_has_no_leakage() {
    let records = (0..1000)
        .flat_map(|p| (0..3).map(move |k| (p, k)))
        .map(|(p, k)| {
            SampleRecord::new(format!("{p}-{k}"), format!("p{p}"), TaskKind::Segment, vec![], "t.png", "x")
        })
        .collect();
    let m = patient_split(&DatasetManifest::new(records), SplitRatios::default(), 7).unwrap();
    let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
    let mut counts = [0usize; 3];
    for r in &m.records {
        if seen.insert(&r.patient_id, r.split).is_none() {
            counts[r.split as usize] += 1;
        }
        assert_eq!(seen[r.patient_id.as_str()], r.split);
    }
    assert_eq!(counts, [700, 150, 150]);
}
