//! Small convolutional stand-ins for the pretrained per-modality backbones.
//! Each maps one modality's `s` snippets to an `s × C1` feature matrix.
//!
//! Convolutions are 3×3, stride 2, zero padding 1, lowered to a gather
//! (im2col) followed by a matmul so they run on the ordinary tape.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;

use crate::autodiff::{Tape, Var, GATHER_ZERO};
use crate::error::{dim_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Scalar;

type IndexKey = (usize, usize, usize, usize);

fn im2col_cache() -> &'static Mutex<HashMap<IndexKey, Arc<[u32]>>> {
    static CACHE: OnceLock<Mutex<HashMap<IndexKey, Arc<[u32]>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Output side length of a 3×3 / stride 2 / pad 1 convolution.
pub fn conv_out(len: usize) -> usize {
    len.div_ceil(2)
}

/// Gather indices turning an `n × h × w × c` tensor into
/// `(n·ho·wo) × (9·c)` patches. Out-of-frame taps read zero.
pub fn im2col_index(n: usize, h: usize, w: usize, c: usize) -> Arc<[u32]> {
    let key = (n, h, w, c);
    if let Some(idx) = im2col_cache().lock().unwrap().get(&key) {
        return idx.clone();
    }
    let (ho, wo) = (conv_out(h), conv_out(w));
    let mut idx = Vec::with_capacity(n * ho * wo * 9 * c);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        let ix = (2 * ox + kx) as isize - 1;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        for ch in 0..c {
                            idx.push(if inside {
                                (((b * h + iy as usize) * w + ix as usize) * c + ch) as u32
                            } else {
                                GATHER_ZERO
                            });
                        }
                    }
                }
            }
        }
    }
    let idx: Arc<[u32]> = idx.into();
    im2col_cache().lock().unwrap().insert(key, idx.clone());
    idx
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ConvParams {
            w: ps.add_xavier(format!("{prefix}.w"), 9 * c_in, c_out, rng)?,
            b: ps.add_zeros(format!("{prefix}.b"), vec![c_out])?,
            c_in,
            c_out,
        })
    }

    /// ReLU(conv(x)) for `x` of shape `n × h × w × c_in`; the result is
    /// `n × ho × wo × c_out`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[3] != self.c_in {
            return Err(dim_err!("conv expects n x h x w x {}, got {shape:?}", self.c_in));
        }
        let (n, h, w) = (shape[0], shape[1], shape[2]);
        let (ho, wo) = (conv_out(h), conv_out(w));
        let cols = tape.gather(x, im2col_index(n, h, w, self.c_in), vec![n * ho * wo, 9 * self.c_in])?;
        let (wt, b) = (tape.param(self.w)?, tape.param(self.b)?);
        let y = tape.linear(cols, wt, Some(b))?;
        let y = tape.relu(y)?;
        tape.reshape(y, vec![n, ho, wo, self.c_out])
    }
}

/// Two stride-2 convolutions over every frame, spatio-temporal mean pooling
/// per snippet, and a linear projection to `C1`.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
}

impl VisualEncoder {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        channels: (usize, usize),
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(VisualEncoder {
            conv1: ConvParams::new(ps, "enc_visual.conv1", 3, channels.0, rng)?,
            conv2: ConvParams::new(ps, "enc_visual.conv2", channels.0, channels.1, rng)?,
            fc_w: ps.add_xavier("enc_visual.fc.w", channels.1, dim, rng)?,
            fc_b: ps.add_zeros("enc_visual.fc.b", vec![dim])?,
        })
    }

    /// `x`: `s × T × h × w × 3` → `s × C1`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 5 || shape[4] != 3 {
            return Err(dim_err!("visual encoder expects s x T x h x w x 3, got {shape:?}"));
        }
        let (s, t) = (shape[0], shape[1]);
        let frames = tape.reshape(x, vec![s * t, shape[2], shape[3], 3])?;
        let h1 = self.conv1.forward(tape, frames)?;
        let h2 = self.conv2.forward(tape, h1)?;
        let hs = tape.shape(h2).to_vec();
        let per_snippet = tape.reshape(h2, vec![s, t * hs[1] * hs[2], self.conv2.c_out])?;
        let pooled = tape.mean_axis(per_snippet, 1)?;
        let (w, b) = (tape.param(self.fc_w)?, tape.param(self.fc_b)?);
        tape.linear(pooled, w, Some(b))
    }
}

/// One stride-2 convolution over each MFCC chunk (as a one-channel image),
/// mean pooling, and a linear projection to `C1`.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    pub conv: ConvParams,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
}

impl AudioEncoder {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        channels: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AudioEncoder {
            conv: ConvParams::new(ps, "enc_audio.conv", 1, channels, rng)?,
            fc_w: ps.add_xavier("enc_audio.fc.w", channels, dim, rng)?,
            fc_b: ps.add_zeros("enc_audio.fc.b", vec![dim])?,
        })
    }

    /// `x`: `s × frames × n_mfcc` → `s × C1`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(dim_err!("audio encoder expects s x frames x n_mfcc, got {shape:?}"));
        }
        let (s, f, n) = (shape[0], shape[1], shape[2]);
        let img = tape.reshape(x, vec![s, f, n, 1])?;
        let h = self.conv.forward(tape, img)?;
        let hs = tape.shape(h).to_vec();
        let flat = tape.reshape(h, vec![s, hs[1] * hs[2], self.conv.c_out])?;
        let pooled = tape.mean_axis(flat, 1)?;
        let (w, b) = (tape.param(self.fc_w)?, tape.param(self.fc_b)?);
        tape.linear(pooled, w, Some(b))
    }
}
