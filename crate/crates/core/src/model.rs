//! The full network: encoder stubs → LISF → GLCF → fusion head, plus the
//! two auxiliary branch classifiers on the pooled modality vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Window;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::features::dataset::Sample;
use crate::features::encoder::{AudioEncoder, VisualEncoder};
use crate::features::{prepare_audio, sample_video_snippets, MfccConfig, SampleMode, VideoClip};
use crate::glcf::{fuse_head, global_complementary_fusion, FusionStrategy, GlobalFusionParams, HeadParams};
use crate::lisf::{LisfParams, Modality, ModalityFeatures};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Snippets per clip.
    pub s: usize,
    /// Frames per video snippet.
    pub t: usize,
    pub crop: usize,
    pub c1: usize,
    /// Pooled width; must equal `c1`.
    pub c2: usize,
    /// Pyramid depth `L`.
    pub layers: usize,
    /// Window half-width `d`; `None` removes the window.
    pub window: Option<usize>,
    pub n_heads: usize,
    pub fusion: FusionStrategy,
    pub num_classes: usize,
    /// Total MFCC frames `q` per clip.
    pub q: usize,
    pub mfcc: MfccConfig,
    pub visual_channels: (usize, usize),
    pub audio_channels: usize,
    /// One layer-scoring projection for all pyramid layers instead of one each.
    pub shared_scoring: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            s: 4,
            t: 2,
            crop: 16,
            c1: 32,
            c2: 32,
            layers: 2,
            window: Some(1),
            n_heads: 4,
            fusion: FusionStrategy::MidConcat,
            num_classes: 6,
            q: 4 * 64,
            mfcc: MfccConfig::default(),
            visual_channels: (8, 16),
            audio_channels: 8,
            shared_scoring: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("s", self.s),
            ("t", self.t),
            ("crop", self.crop),
            ("c1", self.c1),
            ("layers", self.layers),
            ("n_heads", self.n_heads),
            ("num_classes", self.num_classes),
            ("q", self.q),
            ("audio_channels", self.audio_channels),
            ("visual_channels.0", self.visual_channels.0),
            ("visual_channels.1", self.visual_channels.1),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.c2 != self.c1 {
            return Err(Error::Config(format!(
                "model.c2 ({}) must equal model.c1 ({}): the pooled width is the feature width",
                self.c2, self.c1
            )));
        }
        if !self.c1.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model.c1 ({}) must be divisible by model.n_heads ({})",
                self.c1, self.n_heads
            )));
        }
        if !self.q.is_multiple_of(self.s) {
            return Err(Error::Config(format!(
                "model.q ({}) must be a multiple of model.s ({})",
                self.q, self.s
            )));
        }
        Ok(())
    }

    pub fn window_spec(&self) -> Window {
        match self.window {
            Some(d) => Window::band(d),
            None => Window::Full,
        }
    }
}

/// Parameter handles of the whole network; the values live in a
/// [`ParamStore`] built alongside.
#[derive(Clone, Debug)]
pub struct AvModel {
    pub cfg: ModelConfig,
    pub visual: VisualEncoder,
    pub audio: AudioEncoder,
    pub lisf: LisfParams,
    pub glcf: GlobalFusionParams,
    pub head: HeadParams,
    /// Auxiliary linear classifiers on `E⁴_v` and `E⁴_a`.
    pub branch_visual: (ParamId, ParamId),
    pub branch_audio: (ParamId, ParamId),
}

/// Per-clip network input: `s × T × crop × crop × 3` pixels and
/// `s × (q/s) × n_mfcc` audio features.
#[derive(Clone, Debug)]
pub struct ModelInput<T: Scalar> {
    pub video: Tensor<T>,
    pub audio: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub fused: Var,
    pub visual: Var,
    pub audio: Var,
    pub e4_a: Var,
    pub e4_v: Var,
}

impl AvModel {
    /// Build the network and its freshly initialized parameters, seeded
    /// from `cfg.init_seed`.
    pub fn build<T: Scalar>(cfg: &ModelConfig) -> Result<(AvModel, ParamStore<T>)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut ps = ParamStore::new();
        let model = AvModel::with_rng(cfg, &mut ps, &mut rng)?;
        Ok((model, ps))
    }

    pub fn with_rng<T: Scalar, R: Rng>(cfg: &ModelConfig, ps: &mut ParamStore<T>, rng: &mut R) -> Result<AvModel> {
        cfg.validate()?;
        let c = cfg.c1;
        let visual = VisualEncoder::new(ps, cfg.visual_channels, c, rng)?;
        let audio = AudioEncoder::new(ps, cfg.audio_channels, c, rng)?;
        let lisf = LisfParams::new(ps, c, cfg.n_heads, cfg.layers, cfg.window_spec(), cfg.shared_scoring, rng)?;
        let glcf = GlobalFusionParams::new(ps, c, cfg.n_heads, rng)?;
        let head = HeadParams::new(ps, cfg.fusion, c, cfg.num_classes, rng)?;
        let mut branch = |name: &str, ps: &mut ParamStore<T>| -> Result<(ParamId, ParamId)> {
            Ok((
                ps.add_xavier(format!("branch_{name}.w"), c, cfg.num_classes, rng)?,
                ps.add_zeros(format!("branch_{name}.b"), vec![cfg.num_classes])?,
            ))
        };
        let branch_visual = branch("visual", ps)?;
        let branch_audio = branch("audio", ps)?;
        Ok(AvModel {
            cfg: cfg.clone(),
            visual,
            audio,
            lisf,
            glcf,
            head,
            branch_visual,
            branch_audio,
        })
    }

    fn branch<T: Scalar>(tape: &mut Tape<'_, T>, e4: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let n = tape.shape(e4)[0];
        let row = tape.reshape(e4, vec![1, n])?;
        let (w, b) = (tape.param(w)?, tape.param(b)?);
        let y = tape.linear(row, w, Some(b))?;
        let k = tape.shape(y)[1];
        tape.reshape(y, vec![k])
    }

    /// Forward pass for one clip whose inputs are already on the tape.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, video: Var, audio: Var) -> Result<ModelOutput> {
        let f_v = self.visual.forward(tape, video)?;
        let f_a = self.audio.forward(tape, audio)?;
        let f_a = ModalityFeatures {
            modality: Modality::Audio,
            features: f_a,
        };
        let f_v = ModalityFeatures {
            modality: Modality::Visual,
            features: f_v,
        };
        let (e2_a, e2_v) = self.lisf.forward(tape, &f_a, &f_v)?;
        let (e4_a, e4_v) = global_complementary_fusion(tape, e2_a, e2_v, &self.glcf)?;
        let fused = fuse_head(tape, e4_a, e4_v, &self.head)?;
        let visual = Self::branch(tape, e4_v, self.branch_visual)?;
        let audio = Self::branch(tape, e4_a, self.branch_audio)?;
        Ok(ModelOutput {
            fused,
            visual,
            audio,
            e4_a,
            e4_v,
        })
    }

    /// Forward a batch of clips; returns `N × num_classes` logits for the
    /// fused, visual and audio outputs, and the per-clip outputs.
    pub fn forward_batch<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: &[ModelInput<T>],
    ) -> Result<(Var, Var, Var, Vec<ModelOutput>)> {
        if inputs.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let outs = inputs
            .iter()
            .map(|x| {
                let v = tape.constant(x.video.clone());
                let a = tape.constant(x.audio.clone());
                self.forward(tape, v, a)
            })
            .collect::<Result<Vec<_>>>()?;
        let fused: Vec<Var> = outs.iter().map(|o| o.fused).collect();
        let visual: Vec<Var> = outs.iter().map(|o| o.visual).collect();
        let audio: Vec<Var> = outs.iter().map(|o| o.audio).collect();
        Ok((
            tape.stack(&fused, 0)?,
            tape.stack(&visual, 0)?,
            tape.stack(&audio, 0)?,
            outs,
        ))
    }

    /// Checkpoint metadata: the model configuration as JSON.
    pub fn meta(&self) -> String {
        serde_json::to_string(&self.cfg).expect("model config serializes")
    }

    /// Rebuild a model from a checkpoint written with [`AvModel::meta`].
    pub fn load<T: Scalar>(path: &std::path::Path) -> Result<(AvModel, ParamStore<T>)> {
        let (stored, meta) = ParamStore::<T>::load(path)?;
        let cfg: ModelConfig = serde_json::from_str(&meta)
            .map_err(|e| Error::Format(format!("{}: bad model metadata: {e}", path.display())))?;
        let (model, mut ps) = AvModel::build::<T>(&cfg)?;
        ps.load_values(&stored)?;
        Ok((model, ps))
    }
}

/// A clip with its audio features precomputed; video snippets are sampled
/// per use so training can augment them.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub id: String,
    pub label: usize,
    pub video: VideoClip,
    pub audio: Tensor<f64>,
}

pub fn prepare_sample(sample: &Sample, cfg: &ModelConfig) -> Result<PreparedSample> {
    if sample.label >= cfg.num_classes {
        return Err(Error::Input(format!(
            "sample `{}` has label {} outside [0, {})",
            sample.id, sample.label, cfg.num_classes
        )));
    }
    let audio = prepare_audio(&sample.audio, &cfg.mfcc, cfg.q, cfg.s)
        .map_err(|e| Error::Input(format!("sample `{}`: {e}", sample.id)))?;
    Ok(PreparedSample {
        id: sample.id.clone(),
        label: sample.label,
        video: sample.video.clone(),
        audio,
    })
}

pub fn prepare_all(samples: &[Sample], cfg: &ModelConfig) -> Result<Vec<PreparedSample>> {
    samples.iter().map(|s| prepare_sample(s, cfg)).collect()
}

impl PreparedSample {
    /// Network input for this clip; `rng` drives train-mode augmentation.
    pub fn input<T: Scalar, R: Rng>(&self, cfg: &ModelConfig, mode: SampleMode, rng: &mut R) -> Result<ModelInput<T>> {
        let snippets = sample_video_snippets(&self.video, cfg.s, cfg.t, cfg.crop, mode, rng)?;
        let mut data = Vec::with_capacity(cfg.s * cfg.t * cfg.crop * cfg.crop * 3);
        for sn in &snippets {
            data.extend(sn.pixels.data().iter().map(|&v| T::of(v as f64)));
        }
        let video = Tensor::new(vec![cfg.s, cfg.t, cfg.crop, cfg.crop, 3], data)?;
        Ok(ModelInput {
            video,
            audio: self.audio.cast(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatched_widths_rejected() {
        let cfg = ModelConfig { c2: 16, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ModelConfig { n_heads: 5, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn forward_shapes() {
        let cfg = ModelConfig {
            c1: 8,
            c2: 8,
            n_heads: 2,
            crop: 8,
            q: 16,
            mfcc: MfccConfig { n_coeffs: 8, ..Default::default() },
            ..Default::default()
        };
        let (model, ps) = AvModel::build::<f32>(&cfg).unwrap();
        let mut tape = Tape::with_params(&ps);
        let input = ModelInput {
            video: Tensor::full(vec![4, 2, 8, 8, 3], 0.5f32),
            audio: Tensor::full(vec![4, 4, 8], 0.1f32),
        };
        let (fused, visual, audio, outs) = model.forward_batch(&mut tape, &[input.clone(), input]).unwrap();
        assert_eq!(tape.shape(fused), &[2, 6]);
        assert_eq!(tape.shape(visual), &[2, 6]);
        assert_eq!(tape.shape(audio), &[2, 6]);
        assert_eq!(tape.shape(outs[0].e4_a), &[8]);
    }
}
