use std::collections::VecDeque;

use dataforge::completion::{INPAINT_COVERAGE, OUTPAINT_RETAINED};
use dataforge::phantom::{followup_geometry, DEFAULT_GROWTH};
use dataforge::completion::make_inpaint_rects;
use dataforge::{gen_followup, gen_phantom, make_inpaint, make_outpaint, FollowupCategory, PhantomKind, PhantomSpec};
use imagecore::{Image, LabelMask};
use proptest::prelude::*;

const SEEDS: u64 = 10_000;

#[test]
fn inpaint_coverage_holds_for_every_seed() {
    let img = Image::filled(64, 48, 3, 0.5);
    for seed in 0..SEEDS {
        let (_, holes) = make_inpaint(&img, seed).unwrap();
        let frac = holes.count(1) as f64 / (64 * 48) as f64;
        assert!((INPAINT_COVERAGE.0..=INPAINT_COVERAGE.1).contains(&frac), "seed {seed}: {frac}");
    }
}

#[test]
fn inpaint_rectangle_count_in_range() {
    let img = Image::filled(64, 64, 1, 0.5);
    for seed in 0..SEEDS {
        let (_, holes, rects) = make_inpaint_rects(&img, seed).unwrap();
        assert!((1..=5).contains(&rects.len()), "seed {seed}: {}", rects.len());
        // the rectangles regenerate the hole mask exactly
        let rebuilt = LabelMask::from_fn(64, 64, |x, y| {
            rects.iter().any(|&(x0, y0, w, h)| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
        });
        assert_eq!(rebuilt, holes);
    }
}

#[test]
fn outpaint_retention_holds_for_every_seed() {
    let img = Image::filled(64, 48, 1, 0.5);
    for seed in 0..SEEDS {
        let (_, kept) = make_outpaint(&img, seed).unwrap();
        let frac = kept.count(1) as f64 / (64 * 48) as f64;
        assert!((OUTPAINT_RETAINED.0..=OUTPAINT_RETAINED.1).contains(&frac), "seed {seed}: {frac}");
    }
}

#[test]
fn outpaint_kept_region_is_one_component() {
    let img = Image::filled(48, 48, 1, 0.5);
    for seed in 0..500 {
        let (_, kept) = make_outpaint(&img, seed).unwrap();
        assert_eq!(components(&kept, 1).len(), 1, "seed {seed}");
    }
}

/// 4-connected flood fill oracle.
fn components(mask: &LabelMask, label: u16) -> Vec<usize> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut sizes = Vec::new();
    for start in 0..w * h {
        if seen[start] || mask.labels()[start] != label {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut push = |j: usize| {
                if !seen[j] && mask.labels()[j] == label {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 { push(i - 1); }
            if x + 1 < w { push(i + 1); }
            if y > 0 { push(i - w); }
            if y + 1 < h { push(i + w); }
        }
        sizes.push(size);
    }
    sizes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn followup_changes_stay_inside_lesion_and_hole_region(
        seed in any::<u64>(),
        dt in 0.0f32..12.0,
        cat in 0usize..3,
        bscan in any::<bool>(),
    ) {
        let kind = if bscan { PhantomKind::Bscan } else { PhantomKind::Fundus };
        let spec = PhantomSpec { lesion_count_range: [1, 4], hole_probability: 0.8, ..Default::default() }
            .with_size(64, 64)
            .with_kind(kind);
        let s = gen_phantom(&spec, seed).unwrap();
        let category = FollowupCategory::ALL[cat];
        let (img, change) = gen_followup(&s, category, dt, DEFAULT_GROWTH).unwrap();
        let region = s.mask("lesions").union(s.mask("hole")).union(&change).dilate(1);
        for y in 0..64 {
            for x in 0..64 {
                if region.get(x, y) == 0 {
                    prop_assert_eq!(img.pixel(x, y), s.image.pixel(x, y));
                }
            }
        }
        let g = followup_geometry(&s.geometry, category, dt, DEFAULT_GROWTH);
        prop_assert_eq!(g.lesions().len(), s.geometry.lesions().len());
    }
}
