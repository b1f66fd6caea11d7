mod common;

use avfuse::features::dataset::write_dataset;
use avfuse::features::encoder::{AudioEncoder, VisualEncoder};
use avfuse::features::synth::{generate, SynthConfig};
use avfuse::features::{chunk_audio, mfcc, snippet_frame_indices, AudioTrack, MfccConfig, SampleMode};
use avfuse::loss::{multitask_loss, PolarityMap};
use avfuse::model::{prepare_all, AvModel, ModelConfig};
use avfuse::{ParamStore, Tape, Tensor};
use common::{rng, uniform};
use proptest::prelude::*;
use rand::Rng;

fn small_mfcc() -> MfccConfig {
    MfccConfig {
        n_fft: 512,
        hop: 128,
        n_mels: 40,
        n_coeffs: 13,
        ..MfccConfig::default()
    }
}

#[test]
fn silence_gives_identical_frames() {
    let track = AudioTrack { samples: vec![0.0; 4000], sample_rate: 16_000 };
    let m = mfcc(&track, &small_mfcc()).unwrap();
    let first = m.row(0).to_vec();
    for f in 1..m.shape()[0] {
        assert_eq!(m.row(f), first.as_slice());
    }
}

/// Dropping exactly one hop of leading samples moves every interior frame
/// back by one. Clip-level dB clipping is off so the comparison is local.
#[test]
fn mfcc_is_shift_covariant_by_one_hop() {
    let cfg = MfccConfig { top_db: None, ..small_mfcc() };
    let mut r = rng(4);
    let samples: Vec<f32> = (0..6000).map(|_| r.random_range(-0.5f32..0.5)).collect();
    let full = mfcc(&AudioTrack { samples: samples.clone(), sample_rate: 16_000 }, &cfg).unwrap();
    let shifted = mfcc(&AudioTrack { samples: samples[cfg.hop..].to_vec(), sample_rate: 16_000 }, &cfg).unwrap();
    let edge = cfg.n_fft / (2 * cfg.hop);
    let interior = shifted.shape()[0] - 2 * edge;
    assert!(interior > 10);
    for f in edge..edge + interior - 1 {
        for (a, b) in shifted.row(f).iter().zip(full.row(f + 1)) {
            assert!((a - b).abs() < 1e-9, "frame {f}: {a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Chunks concatenate back to the centre crop, or to the signal framed
    /// by zero padding.
    #[test]
    fn chunks_reassemble(frames in 1usize..40, n in 1usize..5, s in 1usize..5, per in 1usize..8, seed in 0u64..1000) {
        let q = s * per;
        let m = uniform(&[frames, n], -1.0, 1.0, &mut rng(seed));
        let chunks = chunk_audio(&m, q, s).unwrap();
        prop_assert_eq!(chunks.len(), s);
        let joined: Vec<f64> = chunks.iter().flat_map(|c| c.data().to_vec()).collect();
        prop_assert_eq!(joined.len(), q * n);
        if frames >= q {
            let start = (frames - q) / 2;
            prop_assert_eq!(&joined[..], &m.data()[start * n..(start + q) * n]);
        } else {
            let left = (q - frames) / 2;
            prop_assert!(joined[..left * n].iter().all(|&v| v == 0.0));
            prop_assert_eq!(&joined[left * n..(left + frames) * n], m.data());
            prop_assert!(joined[(left + frames) * n..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn snippets_are_ordered_and_reproducible(total in 1usize..80, s in 1usize..6, t in 1usize..5, seed in 0u64..1000) {
        prop_assume!(total >= s * t);
        let a = snippet_frame_indices(total, s, t, SampleMode::Train, &mut rng(seed)).unwrap();
        let b = snippet_frame_indices(total, s, t, SampleMode::Train, &mut rng(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        let flat: Vec<usize> = a.iter().flatten().copied().collect();
        prop_assert_eq!(flat.len(), s * t);
        prop_assert!(flat.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(flat.iter().all(|&i| i < total));
        for snip in &a {
            prop_assert!(snip.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }
}

#[test]
fn single_snippet_spanning_clip_is_whole_clip() {
    for mode in [SampleMode::Train, SampleMode::Eval] {
        let idx = snippet_frame_indices(9, 1, 9, mode, &mut rng(0)).unwrap();
        assert_eq!(idx, vec![(0..9).collect::<Vec<_>>()]);
    }
}

#[test]
fn zero_snippets_encode_to_zero() {
    let mut ps = ParamStore::<f64>::new();
    let mut r = rng(1);
    let venc = VisualEncoder::new(&mut ps, (4, 8), 6, &mut r).unwrap();
    let aenc = AudioEncoder::new(&mut ps, 4, 6, &mut r).unwrap();
    let mut tape = Tape::with_params(&ps);
    let v = tape.constant(Tensor::zeros(vec![3, 2, 8, 8, 3]));
    let a = tape.constant(Tensor::zeros(vec![3, 5, 13]));
    let fv = venc.forward(&mut tape, v).unwrap();
    let fa = aenc.forward(&mut tape, a).unwrap();
    assert_eq!(tape.shape(fv), &[3, 6]);
    assert_eq!(tape.shape(fa), &[3, 6]);
    assert!(tape.value(fv).data().iter().chain(tape.value(fa).data()).all(|&x| x == 0.0));
}

fn tiny_synth(per_class: usize, signal: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        per_class,
        seed,
        frames: 4,
        height: 8,
        width: 8,
        audio_samples: 4096,
        signal,
        noise: 0.3,
        ..SynthConfig::default()
    }
}

#[test]
fn both_encoders_receive_gradient() {
    let cfg = ModelConfig {
        s: 2,
        t: 2,
        crop: 8,
        c1: 8,
        c2: 8,
        n_heads: 2,
        q: 8,
        mfcc: small_mfcc(),
        ..ModelConfig::default()
    };
    let data = prepare_all(&generate(&tiny_synth(1, 1.0, 0)).unwrap(), &cfg).unwrap();
    let (model, ps) = AvModel::build::<f64>(&cfg).unwrap();
    let inputs: Vec<_> = data
        .iter()
        .map(|d| d.input::<f64, _>(&cfg, SampleMode::Eval, &mut rng(0)).unwrap())
        .collect();
    let labels: Vec<usize> = data.iter().map(|d| d.label).collect();
    let mut tape = Tape::with_params(&ps);
    let (f, v, a, _) = model.forward_batch(&mut tape, &inputs).unwrap();
    let loss = multitask_loss(&mut tape, f, v, a, &labels, &PolarityMap::default(), [1.0; 3]).unwrap();
    let grads = tape.backward(loss).unwrap();
    let norm = |prefix: &str| -> f64 {
        grads
            .params()
            .filter(|(id, _)| ps.name(*id).starts_with(prefix))
            .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
            .sum()
    };
    assert!(norm("enc_visual.") > 0.0);
    assert!(norm("enc_audio.") > 0.0);
}

#[test]
fn dataset_files_are_byte_identical_across_writes() {
    let cfg = tiny_synth(2, 1.0, 7);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(d1.path(), generate(&cfg).unwrap().into_iter().map(Ok)).unwrap();
    write_dataset(d2.path(), generate(&cfg).unwrap().into_iter().map(Ok)).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 1);
    for name in names {
        let (a, b) = (d1.path().join(&name), d2.path().join(&name));
        if a.is_dir() {
            for entry in std::fs::read_dir(&a).unwrap() {
                let n = entry.unwrap().file_name();
                assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap());
            }
        } else {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), "{name:?}");
        }
    }
}

/// Mean colour plus mean MFCC per clip.
fn probe_features(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mc = small_mfcc();
    let samples = generate(cfg).unwrap();
    let feats = samples
        .iter()
        .map(|s| {
            let mut f = vec![0.0; 3];
            for px in s.video.data.chunks(3) {
                for c in 0..3 {
                    f[c] += px[c] as f64;
                }
            }
            let npx = (s.video.data.len() / 3) as f64;
            f.iter_mut().for_each(|v| *v /= npx);
            let m = mfcc(&s.audio, &mc).unwrap();
            let frames = m.shape()[0] as f64;
            for k in 0..mc.n_coeffs {
                f.push((0..m.shape()[0]).map(|t| m.row(t)[k]).sum::<f64>() / frames);
            }
            f
        })
        .collect();
    (feats, samples.iter().map(|s| s.label).collect())
}

/// Nearest-centroid classifier on standardized features, fit on the first
/// 80% and scored on the rest.
fn linear_probe(feats: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = feats[0].len();
    let n_train = feats.len() * 4 / 5;
    let (train, test) = feats.split_at(n_train);
    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for f in train {
        for d in 0..dim {
            mean[d] += f[d] / n_train as f64;
        }
    }
    for f in train {
        for d in 0..dim {
            sd[d] += (f[d] - mean[d]).powi(2) / n_train as f64;
        }
    }
    let z = |f: &[f64]| -> Vec<f64> { (0..dim).map(|d| (f[d] - mean[d]) / sd[d].sqrt().max(1e-12)).collect() };
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (f, &y) in train.iter().zip(labels) {
        for (c, v) in centroids[y].iter_mut().zip(z(f)) {
            *c += v;
        }
        counts[y] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let correct = test
        .iter()
        .zip(&labels[n_train..])
        .filter(|(f, &y)| {
            let zf = z(f);
            let dist = |c: &Vec<f64>| c.iter().zip(&zf).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..k).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == y
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn planted_signal_is_linearly_decodable_and_absent_at_zero() {
    let (f, y) = probe_features(&tiny_synth(40, 1.0, 3));
    let acc = linear_probe(&f, &y, 6);
    assert!(acc > 0.8, "signal present: probe accuracy {acc}");

    let (f, y) = probe_features(&tiny_synth(300, 0.0, 3));
    let acc = linear_probe(&f, &y, 6);
    assert!((acc - 1.0 / 6.0).abs() < 0.05, "signal absent: probe accuracy {acc}");
}
