//! Shared fixtures for the kernel benchmarks.

use avfuse::annotation::{AnnotationRecord, PriorLabel, STANDARD_SET_CATEGORIES};
use avfuse::features::AudioTrack;
use avfuse::model::ModelInput;
use avfuse::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn noise_track(samples: usize, seed: u64) -> AudioTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioTrack {
        samples: (0..samples).map(|_| rng.random_range(-0.5..0.5)).collect(),
        sample_rate: 44_100,
    }
}

/// Random network input matching a model's `s`, `t`, `crop`, `q` and MFCC width.
pub fn model_input(cfg: &avfuse::model::ModelConfig, seed: u64) -> ModelInput<f32> {
    ModelInput {
        video: random_tensor(&[cfg.s, cfg.t, cfg.crop, cfg.crop, 3], seed),
        audio: random_tensor(&[cfg.s, cfg.q / cfg.s, cfg.mfcc.n_coeffs], seed + 1),
    }
}

/// The nine standard cross-check sets, `m` records each, with noisy labels.
pub fn annotation_records(m: usize, seed: u64) -> Vec<AnnotationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(9 * m);
    for (set, &cat) in STANDARD_SET_CATEGORIES.iter().enumerate() {
        for j in 0..m {
            let labels = (0..3)
                .map(|_| if rng.random_bool(0.8) { cat } else { rng.random_range(0..6) })
                .collect();
            out.push(AnnotationRecord {
                sample_id: format!("s{set}-{j}"),
                group: 0,
                set,
                set_category: cat,
                prior_label: PriorLabel::Category(cat),
                labels,
                annotators: None,
                confidence: None,
                leader_vote: None,
                leader2_vote: None,
                expert_vote: None,
            });
        }
    }
    out
}
