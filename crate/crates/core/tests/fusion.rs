mod common;

use avfuse::attention::Window;
use avfuse::glcf::{fuse_head, FusionStrategy, HeadParams};
use avfuse::lisf::{layer_scores, weighted_layer_sum, LisfParams, Modality, ModalityFeatures, PyramidStack};
use avfuse::model::{AvModel, ModelConfig};
use avfuse::{ParamStore, Tape, Tensor};
use common::{rng, uniform};
use proptest::prelude::*;

fn stack(tape: &mut Tape<'_, f64>, layers: &[Tensor<f64>]) -> PyramidStack {
    PyramidStack {
        modality: Modality::Audio,
        layers: layers.iter().map(|l| tape.constant(l.clone())).collect(),
    }
}

#[test]
fn single_layer_with_unit_weight_is_identity() {
    let f = uniform(&[5, 4], -1.0, 1.0, &mut rng(1));
    let mut tape = Tape::<f64>::new();
    let st = stack(&mut tape, std::slice::from_ref(&f));
    let w = tape.constant(Tensor::full(vec![5, 1], 1.0));
    let out = weighted_layer_sum(&mut tape, &st, w).unwrap();
    assert_eq!(tape.value(out).data(), f.data());
}

#[test]
fn hand_weights_mix_layers() {
    let mut r = rng(2);
    let (f1, f2) = (uniform(&[3, 4], -1.0, 1.0, &mut r), uniform(&[3, 4], -1.0, 1.0, &mut r));
    let mut tape = Tape::<f64>::new();
    let st = stack(&mut tape, &[f1.clone(), f2.clone()]);
    let w = tape.constant(Tensor::from_f64(vec![3, 2], &[0.25, 0.75, 0.25, 0.75, 0.25, 0.75]).unwrap());
    let out = weighted_layer_sum(&mut tape, &st, w).unwrap();
    for (i, v) in tape.value(out).data().iter().enumerate() {
        assert!((v - (0.25 * f1.data()[i] + 0.75 * f2.data()[i])).abs() < 1e-12);
    }
}

#[test]
fn one_hot_weights_select_a_layer() {
    let mut r = rng(3);
    let layers: Vec<_> = (0..3).map(|_| uniform(&[4, 2], -1.0, 1.0, &mut r)).collect();
    for l in 0..3 {
        let mut tape = Tape::<f64>::new();
        let st = stack(&mut tape, &layers);
        let mut w = vec![0.0; 12];
        for t in 0..4 {
            w[t * 3 + l] = 1.0;
        }
        let w = tape.constant(Tensor::new(vec![4, 3], w).unwrap());
        let out = weighted_layer_sum(&mut tape, &st, w).unwrap();
        assert_eq!(tape.value(out).data(), layers[l].data());
    }
}

fn lisf_setup(depth: usize, seed: u64) -> (LisfParams, ParamStore<f64>) {
    let mut ps = ParamStore::new();
    let p = LisfParams::new(&mut ps, 8, 2, depth, Window::band(1), false, &mut rng(seed)).unwrap();
    (p, ps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn layer_scores_in_open_unit_interval(depth in 1usize..4, s in 1usize..6, seed in 0u64..500) {
        let (p, ps) = lisf_setup(depth, seed);
        let mut r = rng(seed + 1);
        let mut tape = Tape::with_params(&ps);
        let a = ModalityFeatures { modality: Modality::Audio, features: tape.constant(uniform(&[s, 8], -1.0, 1.0, &mut r)) };
        let v = ModalityFeatures { modality: Modality::Visual, features: tape.constant(uniform(&[s, 8], -1.0, 1.0, &mut r)) };
        let (pa, _) = avfuse::lisf::pyramid_forward(&mut tape, &a, &v, p.window, &p.layers).unwrap();
        let e1 = layer_scores(&mut tape, &pa, &p.selective).unwrap();
        prop_assert_eq!(tape.shape(e1), &[s, depth]);
        prop_assert!(tape.value(e1).data().iter().all(|&x| x > 0.0 && x < 1.0));
        let (e2a, e2v) = p.forward(&mut tape, &a, &v).unwrap();
        prop_assert_eq!(tape.shape(e2a), &[s, 8]);
        prop_assert_eq!(tape.shape(e2v), &[s, 8]);
    }

    /// Mean pooling over snippets ignores their order.
    #[test]
    fn pooling_is_permutation_invariant(s in 1usize..8, seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = uniform(&[s, 5], -3.0, 3.0, &mut r);
        let mut order: Vec<usize> = (0..s).collect();
        order.rotate_left(seed as usize % s);
        order.reverse();
        let mut perm = Vec::with_capacity(s * 5);
        for &i in &order {
            perm.extend_from_slice(x.row(i));
        }
        let y = Tensor::new(vec![s, 5], perm).unwrap();
        let mut tape = Tape::<f64>::new();
        let (xv, yv) = (tape.constant(x), tape.constant(y));
        let (mx, my) = (tape.mean_axis(xv, 0).unwrap(), tape.mean_axis(yv, 0).unwrap());
        prop_assert!(tape.value(mx).max_abs_diff(tape.value(my)) < 1e-12);
    }

    /// With a zero bias, the concat head is linear in its inputs.
    #[test]
    fn midconcat_head_is_linear(alpha in -4.0f64..4.0, seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut ps = ParamStore::<f64>::new();
        let head = HeadParams::new(&mut ps, FusionStrategy::MidConcat, 6, 3, &mut r).unwrap();
        let (a, v) = (uniform(&[6], -1.0, 1.0, &mut r), uniform(&[6], -1.0, 1.0, &mut r));
        let run = |k: f64| {
            let mut tape = Tape::with_params(&ps);
            let av = tape.constant(a.map(|x| x * k));
            let vv = tape.constant(v.map(|x| x * k));
            let y = fuse_head(&mut tape, av, vv, &head).unwrap();
            tape.value(y).clone()
        };
        let (base, scaled) = (run(1.0), run(alpha));
        for (b, s) in base.data().iter().zip(scaled.data()) {
            prop_assert!((alpha * b - s).abs() < 1e-6);
        }
    }
}

/// Audio and visual branches run the same code; with identical inputs and
/// parameters mirrored across modalities they must produce identical outputs.
#[test]
fn mirrored_parameters_give_symmetric_outputs() {
    let (p, mut ps) = lisf_setup(2, 4);
    let names: Vec<String> = ps.iter().map(|(n, _)| n.to_string()).filter(|n| n.contains("_visual")).collect();
    assert!(!names.is_empty());
    for name in names {
        let src = ps.get(ps.id(&name.replace("_visual", "_audio")).unwrap()).clone();
        let dst = ps.id(&name).unwrap();
        ps.get_mut(dst).data_mut().copy_from_slice(src.data());
    }
    let x = uniform(&[4, 8], -1.0, 1.0, &mut rng(5));
    let mut tape = Tape::with_params(&ps);
    let a = ModalityFeatures { modality: Modality::Audio, features: tape.constant(x.clone()) };
    let v = ModalityFeatures { modality: Modality::Visual, features: tape.constant(x) };
    let (e2a, e2v) = p.forward(&mut tape, &a, &v).unwrap();
    assert_eq!(tape.value(e2a).data(), tape.value(e2v).data());
}

fn set(ps: &mut ParamStore<f64>, id: avfuse::ParamId, vals: &[f64]) {
    ps.get_mut(id).data_mut().copy_from_slice(vals);
}

#[test]
fn midconcat_selector_returns_audio_vector() {
    let c2 = 3;
    let mut ps = ParamStore::<f64>::new();
    let head = HeadParams::new(&mut ps, FusionStrategy::MidConcat, c2, c2, &mut rng(0)).unwrap();
    let HeadParams::MidConcat { w, b } = head else { unreachable!() };
    // W = [I; 0] (2·c2 × c2)
    let mut wv = vec![0.0; 2 * c2 * c2];
    for i in 0..c2 {
        wv[i * c2 + i] = 1.0;
    }
    set(&mut ps, w, &wv);
    set(&mut ps, b, &[0.0; 3]);
    let mut tape = Tape::with_params(&ps);
    let a = tape.constant(Tensor::from_f64(vec![3], &[0.3, -1.2, 2.0]).unwrap());
    let v = tape.constant(Tensor::from_f64(vec![3], &[9.0, 9.0, 9.0]).unwrap());
    let y = fuse_head(&mut tape, a, v, &head).unwrap();
    assert_eq!(tape.value(y).data(), &[0.3, -1.2, 2.0]);
}

#[test]
fn hand_computed_heads() {
    let mut ps = ParamStore::<f64>::new();
    let cat = HeadParams::new(&mut ps, FusionStrategy::MidConcat, 2, 2, &mut rng(0)).unwrap();
    let HeadParams::MidConcat { w, b } = cat else { unreachable!() };
    // rows: a0, a1, v0, v1; columns: two classes
    set(&mut ps, w, &[1.0, 0.0, 2.0, -1.0, 0.5, 0.5, 0.0, 3.0]);
    set(&mut ps, b, &[0.1, -0.1]);
    let mut tape = Tape::with_params(&ps);
    let a = tape.constant(Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap());
    let v = tape.constant(Tensor::from_f64(vec![2], &[-1.0, 1.0]).unwrap());
    let y = fuse_head(&mut tape, a, v, &cat).unwrap();
    // class 0: 1 + 4 - 0.5 + 0 + 0.1; class 1: 0 - 2 - 0.5 + 3 - 0.1
    let want = [4.6, 0.4];
    for (g, e) in tape.value(y).data().iter().zip(want) {
        assert!((g - e).abs() < 1e-12);
    }

    let mut ps = ParamStore::<f64>::new();
    let sum = HeadParams::new(&mut ps, FusionStrategy::Sum, 2, 2, &mut rng(0)).unwrap();
    let HeadParams::Sum { w, b } = sum else { unreachable!() };
    set(&mut ps, w, &[1.0, 2.0, 3.0, 4.0]);
    set(&mut ps, b, &[0.0, 1.0]);
    let mut tape = Tape::with_params(&ps);
    let a = tape.constant(Tensor::from_f64(vec![2], &[1.0, -1.0]).unwrap());
    let zero = tape.constant(Tensor::zeros(vec![2]));
    let y = fuse_head(&mut tape, a, zero, &sum).unwrap();
    // a·W + b with the visual vector zeroed
    assert_eq!(tape.value(y).data(), &[-2.0, -1.0]);
}

#[test]
fn head_parameter_counts_match_strategy() {
    let (c2, k) = (8, 6);
    let mut totals = Vec::new();
    for strategy in FusionStrategy::ALL {
        let mut ps = ParamStore::<f64>::new();
        HeadParams::new(&mut ps, strategy, c2, k, &mut rng(0)).unwrap();
        assert_eq!(ps.num_scalars(), strategy.head_param_count(c2, k), "{strategy}");
        let cfg = ModelConfig {
            c1: c2,
            c2,
            n_heads: 2,
            fusion: strategy,
            ..ModelConfig::default()
        };
        let (_, full) = AvModel::build::<f32>(&cfg).unwrap();
        totals.push(full.num_scalars() - strategy.head_param_count(c2, k));
    }
    // everything outside the head is strategy-independent
    assert!(totals.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(FusionStrategy::MidConcat.head_param_count(c2, k), 2 * c2 * k + k);
    assert_eq!(FusionStrategy::Sum.head_param_count(c2, k), c2 * k + k);
}

#[test]
fn strategy_names_parse() {
    for s in FusionStrategy::ALL {
        assert_eq!(s.to_string().parse::<FusionStrategy>().unwrap(), s);
    }
    assert!("late".parse::<FusionStrategy>().is_err());
}
