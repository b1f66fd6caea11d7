//! Media containers, snippet sampling, MFCC extraction, stub encoders,
//! synthetic data, and on-disk datasets.

pub mod dataset;
pub mod encoder;
pub mod mfcc;
pub mod synth;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use mfcc::{mfcc, MfccConfig};

/// Decoded RGB frames, `frames × height × width × 3`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub fps: f32,
}

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>, fps: f32) -> Result<Self> {
        if frames * height * width * 3 != data.len() {
            return Err(Error::Input(format!(
                "video of {frames}x{height}x{width}x3 needs {} values, got {}",
                frames * height * width * 3,
                data.len()
            )));
        }
        Ok(VideoClip {
            frames,
            height,
            width,
            data,
            fps,
        })
    }

    fn frame_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }
}

/// Mono waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioTrack {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

/// Whether sampling draws random offsets/crops/flips or takes the centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}

/// One sampled snippet: `frames × crop × crop × 3` and its source frames.
#[derive(Clone, Debug)]
pub struct VideoSnippet {
    pub frame_indices: Vec<usize>,
    pub pixels: Tensor<f32>,
}

/// Spatial placement shared by every frame of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropSpec {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

/// Source frame indices of each of the `s` snippets.
///
/// The clip is cut into `s` equal segments and `t` consecutive frames are
/// taken from each: a random start in train mode, the centred start in eval
/// mode. Clips shorter than `s·t` frames are looped.
pub fn snippet_frame_indices<R: Rng>(
    total: usize,
    s: usize,
    t: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if total == 0 {
        return Err(Error::Input("video has no frames".into()));
    }
    if s == 0 || t == 0 {
        return Err(Error::Config("snippet count and length must be positive".into()));
    }
    if total < s * t {
        return Ok((0..s)
            .map(|j| (0..t).map(|i| (j * t + i) % total).collect())
            .collect());
    }
    Ok((0..s)
        .map(|j| {
            let start = j * total / s;
            let end = (j + 1) * total / s;
            let slack = end - start - t;
            let offset = match mode {
                SampleMode::Train => rng.random_range(0..=slack),
                SampleMode::Eval => slack / 2,
            };
            (start + offset..start + offset + t).collect()
        })
        .collect())
}

/// Crop placement for a `height × width` clip.
pub fn crop_spec<R: Rng>(
    height: usize,
    width: usize,
    crop: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<CropSpec> {
    if crop == 0 || crop > height || crop > width {
        return Err(Error::Input(format!(
            "crop {crop} does not fit a {height}x{width} frame"
        )));
    }
    Ok(match mode {
        SampleMode::Train => CropSpec {
            top: rng.random_range(0..=height - crop),
            left: rng.random_range(0..=width - crop),
            flip: rng.random_bool(0.5),
        },
        SampleMode::Eval => CropSpec {
            top: (height - crop) / 2,
            left: (width - crop) / 2,
            flip: false,
        },
    })
}

/// Sample `s` snippets of `t` frames, cropped to `crop × crop`.
pub fn sample_video_snippets<R: Rng>(
    clip: &VideoClip,
    s: usize,
    t: usize,
    crop: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<VideoSnippet>> {
    let indices = snippet_frame_indices(clip.frames, s, t, mode, rng)?;
    let spec = crop_spec(clip.height, clip.width, crop, mode, rng)?;
    Ok(indices
        .into_iter()
        .map(|frames| {
            let mut data = Vec::with_capacity(frames.len() * crop * crop * 3);
            for &f in &frames {
                let src = clip.frame(f);
                for y in 0..crop {
                    for x in 0..crop {
                        let sx = if spec.flip { crop - 1 - x } else { x };
                        let at = ((spec.top + y) * clip.width + spec.left + sx) * 3;
                        data.extend_from_slice(&src[at..at + 3]);
                    }
                }
            }
            VideoSnippet {
                pixels: Tensor::new(vec![frames.len(), crop, crop, 3], data).unwrap(),
                frame_indices: frames,
            }
        })
        .collect())
}

/// Centre-crop or zero-pad an MFCC matrix (`frames × n`) to `q` frames and
/// split it into `s` chunks of `q/s` frames. Padding is split evenly, with
/// the odd frame going after the signal.
pub fn chunk_audio(m: &Tensor<f64>, q: usize, s: usize) -> Result<Vec<Tensor<f64>>> {
    if m.rank() != 2 {
        return Err(Error::Dimension(format!("MFCC matrix must be rank 2, got {:?}", m.shape())));
    }
    if q == 0 || s == 0 || !q.is_multiple_of(s) {
        return Err(Error::Config(format!(
            "target length q={q} must be a positive multiple of s={s}"
        )));
    }
    let (frames, n) = (m.shape()[0], m.shape()[1]);
    let mut fixed = vec![0.0; q * n];
    if frames >= q {
        let start = (frames - q) / 2;
        fixed.copy_from_slice(&m.data()[start * n..(start + q) * n]);
    } else {
        let left = (q - frames) / 2;
        fixed[left * n..(left + frames) * n].copy_from_slice(m.data());
    }
    let per = q / s;
    Ok(fixed
        .chunks(per * n)
        .map(|c| Tensor::new(vec![per, n], c.to_vec()).unwrap())
        .collect())
}

/// Zero-mean, unit-variance rescaling of a whole matrix. Constant input is
/// only centred.
pub fn standardize(m: &Tensor<f64>) -> Tensor<f64> {
    let n = m.numel() as f64;
    let mean = m.data().iter().sum::<f64>() / n;
    let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 1e-12 { var.sqrt() } else { 1.0 };
    m.map(|v| (v - mean) / sd)
}

/// MFCC, per-clip standardization, and chunking: `s × (q/s) × n_coeffs`.
pub fn prepare_audio(track: &AudioTrack, cfg: &MfccConfig, q: usize, s: usize) -> Result<Tensor<f64>> {
    let m = standardize(&mfcc(track, cfg)?);
    let chunks = chunk_audio(&m, q, s)?;
    let (per, n) = (chunks[0].shape()[0], chunks[0].shape()[1]);
    let data = chunks.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(vec![s, per, n], data)
}
