mod common;

use avfuse::attention::{
    att, cma_block, dilated_residual_block, gated_parallel_fusion, sa_block, BlockParams, DilatedResidualParams,
    GateParams, Window, WindowSpec,
};
use avfuse::lisf::{Modality, PyramidLayerParams};
use avfuse::{Error, ParamStore, Tape, Tensor};
use common::{rng, uniform};
use proptest::prelude::*;

#[test]
fn sigmoid_of_zero_is_half() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::zeros(vec![3]));
    let y = tape.sigmoid(x).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
}

#[test]
fn mean_of_constant_and_sum_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::full(vec![4, 5], 2.5));
    let m = tape.mean_axis(x, 0).unwrap();
    assert!(tape.value(m).data().iter().all(|&v| v == 2.5));
    let s = tape.sum_all(x).unwrap();
    let g = tape.backward(s).unwrap().get(x).unwrap();
    assert!(g.data().iter().all(|&v| v == 1.0));
}

#[test]
fn reused_node_accumulates_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.input(Tensor::from_f64(vec![3], &[1.0, -2.0, 0.5]).unwrap());
    let b = tape.add(a, a).unwrap();
    let s = tape.sum_all(b).unwrap();
    let g = tape.backward(s).unwrap().get(a).unwrap();
    assert_eq!(g.data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn backward_from_non_scalar_is_contract_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.input(Tensor::zeros(vec![2, 2]));
    let b = tape.relu(a).unwrap();
    assert!(matches!(tape.backward(b), Err(Error::Contract(_))));
}

#[test]
fn overflow_from_finite_inputs_is_numerical() {
    let mut tape = Tape::<f64>::new();
    let a = tape.input(Tensor::full(vec![2], 1e300));
    let err = tape.scale(a, 1e300).unwrap_err();
    assert!(matches!(err, Error::Numerical { op: "scale", .. }), "{err}");
}

#[test]
fn composite_gradient_matches_finite_difference() {
    let mut r = rng(3);
    let x0 = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let w0 = uniform(&[4, 2], -1.0, 1.0, &mut r);
    let f = |x: &Tensor<f64>| {
        let mut tape = Tape::<f64>::new();
        let xv = tape.input(x.clone());
        let w = tape.constant(w0.clone());
        let y = tape.matmul(xv, w).unwrap();
        let y = tape.sigmoid(y).unwrap();
        let l = tape.sum_all(y).unwrap();
        let g = tape.backward(l).unwrap().get(xv).unwrap();
        (tape.value(l).item(), g)
    };
    let (_, g) = f(&x0);
    let h = 1e-6;
    for i in 0..x0.numel() {
        let mut xp = x0.clone();
        xp.data_mut()[i] += h;
        let mut xm = x0.clone();
        xm.data_mut()[i] -= h;
        let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
        assert!((fd - g.data()[i]).abs() < 1e-8, "coordinate {i}: {fd} vs {}", g.data()[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, seed in 0u64..1000) {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(uniform(&[rows, cols], -30.0, 30.0, &mut rng(seed)));
        let p = tape.softmax(x, 1).unwrap();
        for i in 0..rows {
            let row = tape.value(p).row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// Band-masked weights are exactly zero outside the window and every
    /// row still sums to one.
    #[test]
    fn band_weights_vanish_outside_window(s in 1usize..9, d in 0usize..8, seed in 0u64..1000) {
        let d = d.min(s - 1);
        let mut r = rng(seed);
        let mut tape = Tape::<f64>::new();
        let q = tape.input(uniform(&[s, 3], -2.0, 2.0, &mut r));
        let k = tape.input(uniform(&[s, 3], -2.0, 2.0, &mut r));
        let v = tape.input(uniform(&[s, 3], -2.0, 2.0, &mut r));
        let spec = WindowSpec::new(d);
        let out = att(&mut tape, q, k, v, Some(&spec.mask(s))).unwrap();
        let w = tape.value(out.weights);
        for t in 0..s {
            let row = w.row(t);
            for (j, &x) in row.iter().enumerate() {
                if !spec.allows(t, j) {
                    prop_assert!(x == 0.0);
                }
            }
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// A band of half-width s-1 covers every position, so it must agree with
    /// unrestricted attention.
    #[test]
    fn widest_band_equals_full(s in 1usize..9, seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut ps = ParamStore::<f64>::new();
        let p = BlockParams::new(&mut ps, "b", 8, 2, &mut r).unwrap();
        let x = uniform(&[s, 8], -1.0, 1.0, &mut r);
        let run = |w: Window| {
            let mut tape = Tape::with_params(&ps);
            let xv = tape.constant(x.clone());
            let y = sa_block(&mut tape, xv, w, &p).unwrap();
            tape.value(y).clone()
        };
        prop_assert!(run(Window::band(s - 1)).max_abs_diff(&run(Window::Full)) < 1e-12);
    }

    #[test]
    fn gates_lie_strictly_inside_unit_interval(s in 1usize..6, seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut ps = ParamStore::<f64>::new();
        let g = GateParams::new(&mut ps, "g", 4, &mut r).unwrap();
        let mut tape = Tape::with_params(&ps);
        let a = tape.constant(uniform(&[s, 4], -5.0, 5.0, &mut r));
        let b = tape.constant(uniform(&[s, 4], -5.0, 5.0, &mut r));
        let (gs, gc) = g.gates(&mut tape, a, b).unwrap();
        for v in tape.value(gs).data().iter().chain(tape.value(gc).data()) {
            prop_assert!(*v > 0.0 && *v < 1.0);
        }
    }
}

#[test]
fn blocks_preserve_shape() {
    let mut r = rng(11);
    let mut ps = ParamStore::<f64>::new();
    let sa = BlockParams::new(&mut ps, "sa", 8, 4, &mut r).unwrap();
    let cma = BlockParams::new(&mut ps, "cma", 8, 4, &mut r).unwrap();
    let gate = GateParams::new(&mut ps, "gate", 8, &mut r).unwrap();
    let dil = DilatedResidualParams::new(&mut ps, "dil", 8, &mut r).unwrap();
    for s in [1, 4, 16] {
        let mut tape = Tape::with_params(&ps);
        let a = tape.constant(uniform(&[s, 8], -1.0, 1.0, &mut r));
        let v = tape.constant(uniform(&[s, 8], -1.0, 1.0, &mut r));
        let fs = sa_block(&mut tape, a, Window::band(1), &sa).unwrap();
        let fc = cma_block(&mut tape, a, v, Window::band(1), &cma).unwrap();
        let f = gated_parallel_fusion(&mut tape, fs, fc, &gate).unwrap();
        let y = dilated_residual_block(&mut tape, f, 2, &dil).unwrap();
        for out in [fs, fc, f, y] {
            assert_eq!(tape.shape(out), &[s, 8]);
        }
    }
}

#[test]
fn cma_rejects_mismatched_lengths() {
    let mut r = rng(2);
    let mut ps = ParamStore::<f64>::new();
    let cma = BlockParams::new(&mut ps, "cma", 4, 1, &mut r).unwrap();
    let mut tape = Tape::with_params(&ps);
    let a = tape.constant(Tensor::zeros(vec![3, 4]));
    let v = tape.constant(Tensor::zeros(vec![4, 4]));
    assert!(cma_block(&mut tape, a, v, Window::band(1), &cma).is_err());
}

/// Perturbing one snippet of a dilation-2 block can only move outputs at
/// distance 0 or 2 from it.
#[test]
fn dilated_block_receptive_field() {
    let mut r = rng(5);
    let mut ps = ParamStore::<f64>::new();
    let p = DilatedResidualParams::new(&mut ps, "dil", 3, &mut r).unwrap();
    // positive bias keeps every ReLU active so all taps have influence
    ps.get_mut(p.b).data_mut().iter_mut().for_each(|b| *b = 10.0);
    let x = uniform(&[7, 3], -1.0, 1.0, &mut r);
    let run = |x: &Tensor<f64>| {
        let mut tape = Tape::with_params(&ps);
        let xv = tape.constant(x.clone());
        let y = dilated_residual_block(&mut tape, xv, 2, &p).unwrap();
        tape.value(y).clone()
    };
    let base = run(&x);
    let mut bumped = x.clone();
    for c in 0..3 {
        bumped.data_mut()[3 * 3 + c] += 0.5;
    }
    let moved = run(&bumped);
    for t in 0..7 {
        let changed = base.row(t).iter().zip(moved.row(t)).any(|(a, b)| a != b);
        assert_eq!(changed, [1, 3, 5].contains(&t), "snippet {t}");
    }
}

/// The CMA weights of a pyramid layer are one parameter set: changing them
/// changes both directions.
#[test]
fn cma_parameters_are_shared_between_directions() {
    let mut r = rng(8);
    let mut ps = ParamStore::<f64>::new();
    let layer = PyramidLayerParams::new(&mut ps, "layer", 4, 2, 1, &mut r).unwrap();
    let a = uniform(&[5, 4], -1.0, 1.0, &mut r);
    let v = uniform(&[5, 4], -1.0, 1.0, &mut r);
    let run = |ps: &ParamStore<f64>| {
        let mut tape = Tape::with_params(ps);
        let av = tape.constant(a.clone());
        let vv = tape.constant(v.clone());
        let oa = layer.forward_modality(&mut tape, Modality::Audio, av, vv, Window::band(1)).unwrap();
        let ov = layer.forward_modality(&mut tape, Modality::Visual, vv, av, Window::band(1)).unwrap();
        (tape.value(oa).clone(), tape.value(ov).clone())
    };
    let (a0, v0) = run(&ps);
    ps.get_mut(layer.cma.attn.wv).data_mut()[0] += 0.7;
    let (a1, v1) = run(&ps);
    assert!(a0.max_abs_diff(&a1) > 1e-9);
    assert!(v0.max_abs_diff(&v1) > 1e-9);
    let cma_names = ps.iter().filter(|(n, _)| n.contains(".cma.")).count();
    // wq, wk, wv, wo, ffn (4), norm (2): one block only
    assert_eq!(cma_names, 10);
}

#[test]
fn forward_is_deterministic() {
    let mut r = rng(9);
    let mut ps = ParamStore::<f32>::new();
    let p = BlockParams::new(&mut ps, "b", 8, 4, &mut r).unwrap();
    let x = uniform(&[6, 8], -1.0, 1.0, &mut r).cast::<f32>();
    let run = || {
        let mut tape = Tape::with_params(&ps);
        let xv = tape.constant(x.clone());
        let y = sa_block(&mut tape, xv, Window::band(1), &p).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
