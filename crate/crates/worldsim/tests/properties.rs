use std::collections::BTreeMap;

use imagecore::TaskKind;
use proptest::prelude::*;
use worldsim::optim::LrSchedule;
use worldsim::scoring::{mine_hard, EvalRow};
use worldsim::train::HardThresholds;
use worldsim::DiffusionSchedule;

fn row(i: usize, task: TaskKind, a: f64, b: f64) -> EvalRow {
    let metrics: BTreeMap<String, f64> = if worldsim::scoring::overlap_task(task) {
        [("dice".to_string(), a), ("miou".to_string(), b)].into_iter().collect()
    } else {
        [("ssim".to_string(), a)].into_iter().collect()
    };
    EvalRow { id: format!("s{i}"), task, metrics }
}

proptest! {
    #[test]
    fn alpha_bar_strictly_decreasing(t in 2usize..400, lo in 1e-5f64..1e-2, span in 1e-4f64..0.2) {
        let s = DiffusionSchedule::linear(t, lo, lo + span).unwrap();
        prop_assert_eq!(s.alpha_bar(0), 1.0);
        for k in 1..=t {
            prop_assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
            prop_assert!(s.alpha_bar(k) > 0.0);
        }
    }

    #[test]
    fn lr_is_piecewise_linear_then_constant(target in 1e-6f64..1e-2, warm in 1u64..1000, k in 0u64..3000) {
        let s = LrSchedule { warmup_start: 1e-18, target, warmup_steps: warm };
        if k >= warm {
            prop_assert_eq!(s.lr(k), target);
        } else {
            let expect = 1e-18 + k as f64 / warm as f64 * (target - 1e-18);
            prop_assert!((s.lr(k) - expect).abs() <= 1e-15 * target);
            prop_assert!(s.lr(k) <= s.lr(k + 1));
        }
    }

    #[test]
    fn mining_is_idempotent(values in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 0..40)) {
        let rows: Vec<EvalRow> = values
            .iter()
            .enumerate()
            .map(|(i, (a, b, seg))| row(i, if *seg { TaskKind::Segment } else { TaskKind::Translate }, *a, *b))
            .collect();
        let th = HardThresholds::default();
        let hits = mine_hard(&rows, &th).unwrap();
        for h in &hits {
            prop_assert!(h.value < 0.5);
        }
        let hard_rows: Vec<EvalRow> = rows.iter().filter(|r| hits.iter().any(|h| h.id == r.id)).cloned().collect();
        prop_assert_eq!(mine_hard(&hard_rows, &th).unwrap(), hits.clone());
        let doubled: Vec<EvalRow> = rows.iter().chain(rows.iter()).cloned().collect();
        prop_assert_eq!(mine_hard(&doubled, &th).unwrap(), hits);
    }
}
