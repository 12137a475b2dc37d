use imagecore::{Image, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldsim::gradcheck::{grad_check, DEFAULT_EPSILON, DEFAULT_PER_GROUP};
use worldsim::scoring::EvalTarget;
use worldsim::train::{example_loss, LossMode, TrainExample};
use worldsim::{Model, ModelConfig, Prompt};

fn noise_image(seed: u64, side: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..side * side * 3).map(|_| rng.gen_range(0.05..0.95)).collect();
    Image::from_vec(side, side, 3, data).unwrap()
}

fn example(side: usize) -> TrainExample {
    let target = noise_image(2, side);
    TrainExample {
        id: "g0".into(),
        task: TaskKind::Enhance,
        prompt: Prompt::new("enhance the quality of this degraded fundus image", 1),
        images: vec![noise_image(1, side)],
        target: target.clone(),
        lesions: None,
        eval: EvalTarget::Image(target),
    }
}

#[test]
fn full_model_backprop_matches_finite_differences() {
    let model = Model::new(ModelConfig::default(), 11).unwrap();
    let ex = example(16);
    let start = std::time::Instant::now();
    let report = grad_check(&model.params, DEFAULT_EPSILON, DEFAULT_PER_GROUP, 5, |g, p| {
        let m = Model { config: model.config.clone(), params: p.clone() };
        Ok(example_loss(&m, g, &ex, LossMode::Undetached, 99)?.0)
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    eprintln!("checked {} values in {secs:.1}s, worst {:?}", report.checked, report.worst());
    for (k, v) in &report.per_group {
        if *v > 1e-3 {
            eprintln!("{k}: {v:e}");
        }
    }
    assert_eq!(report.per_group.len(), model.params.len());
    assert!(report.max_rel_err < 1e-3, "{:?}", report.worst());
}
