//! Randomised invariants across the library.

mod common;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};
use std::sync::Arc;

use common::*;
use num_complex::Complex64 as C;
use proptest::prelude::*;
use qcsam::circuitlib::{build_qffn, build_qfm, QffnSpec, QfmSpec};
use qcsam::clcu::{clcu_apply_circuit, to_mag_phase, ClcuCoefficients, WeightEncoding};
use qcsam::data::{fit_pca, patchify, PreparedSample, RankPolicy};
use qcsam::experiment::ExperimentConfig;
use qcsam::model::{class_probs, measurement_ops, HeadSpec, Model, ModelParams, ModelSpec};
use qcsam::similarity::{attention_weight_analytic, hadamard_test, weight_from_readout, ComplexOverlap, EncodedState, SimilarityKernel};
use qcsam::simcore::{Circuit, GateKind, GateOp, Statevector};
use qcsam::train::{adam_step, batch_loss, AdamConfig, Adjoint, GradientEstimator, OptimizerState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn spec(n: usize, grids: &[(usize, usize)], classes: usize) -> ModelSpec {
    ModelSpec {
        heads: grids
            .iter()
            .map(|&g| HeadSpec {
                patch_grid: g,
                qfm: QfmSpec::new(n, 2),
            })
            .collect(),
        qffn: QffnSpec::new(n, 2),
        n_classes: classes,
    }
}

fn random_sample<R: Rng>(spec: &ModelSpec, label: usize, r: &mut R) -> PreparedSample {
    PreparedSample {
        heads: spec
            .heads
            .iter()
            .map(|h| (0..h.n_patches()).map(|_| (0..spec.n_qubits()).map(|_| r.random_range(0.0..=PI)).collect()).collect())
            .collect(),
        label,
    }
}

const GRIDS: [(usize, usize); 4] = [(1, 1), (1, 2), (2, 1), (2, 2)];

fn random_model(seed: u64) -> (Model, ModelParams, PreparedSample) {
    let mut r = rng(seed);
    let n = r.random_range(2..=3);
    let heads = r.random_range(1..=2);
    let grids: Vec<_> = (0..heads).map(|_| GRIDS[r.random_range(0..4)]).collect();
    let classes = r.random_range(2..=4);
    let s = spec(n, &grids, classes);
    let model = Model::new(s.clone(), Arc::new(ComplexOverlap)).unwrap();
    let params = ModelParams::init(&s, &mut r);
    let sample = random_sample(&s, 0, &mut r);
    (model, params, sample)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gates_preserve_norm(seed in any::<u64>(), n in 1usize..=5) {
        let mut r = rng(seed);
        let psi = random_state(n, &mut r);
        let g = random_gate(n, &mut r);
        let out = psi.apply_gate(&g).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-12);
        prop_assert!(out.amplitudes().iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn class_distributions_sum_to_one(seed in any::<u64>()) {
        let (model, params, sample) = random_model(seed);
        let fwd = model.forward(&sample.heads, &params).unwrap();
        let p = &fwd.distribution.probs;
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((fwd.output_state().norm() - 1.0).abs() < 1e-9);
        for h in 0..params.heads.len() {
            prop_assert!((fwd.head_state(h).norm() - 1.0).abs() < 1e-9);
            let a = fwd.attention(h);
            for k in 0..a.size() {
                prop_assert!(a.row(k).iter().all(|w| w.norm() <= 1.0 + 1e-9));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gates_are_unitary(seed in any::<u64>(), n in 1usize..=4) {
        let mut r = rng(seed);
        let g = random_gate(n, &mut r);
        let cols: Vec<Statevector> = (0..1 << n).map(|i| Statevector::basis(n, i).unwrap().apply_gate(&g).unwrap()).collect();
        for (i, a) in cols.iter().enumerate() {
            for (j, b) in cols.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((a.inner(b).unwrap() - C::new(want, 0.0)).norm() < 1e-12, "{:?}", g);
            }
        }
    }

    #[test]
    fn inner_product_is_sesquilinear(seed in any::<u64>(), n in 1usize..=4, re in -2.0..2.0f64, im in -2.0..2.0f64) {
        let mut r = rng(seed);
        let (a, b) = (random_state(n, &mut r), random_state(n, &mut r));
        let lambda = C::new(re, im);
        let ab = a.inner(&b).unwrap();
        let scaled: C = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| x.conj() * lambda * y).sum();
        prop_assert!((scaled - lambda * ab).norm() < 1e-12);
        prop_assert!((ab - b.inner(&a).unwrap().conj()).norm() < 1e-12);
    }

    #[test]
    fn projections_recombine_to_the_original(seed in any::<u64>(), n in 2usize..=4) {
        let mut r = rng(seed);
        let psi = random_state(n, &mut r);
        let k = r.random_range(1..n);
        let mut qubits: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = r.random_range(i..n);
            qubits.swap(i, j);
        }
        qubits.truncate(k);
        let mut sum = vec![C::new(0.0, 0.0); psi.dim()];
        for o in 0..1usize << k {
            let outcome: Vec<bool> = (0..k).map(|b| o >> b & 1 == 1).collect();
            let p = psi.outcome_probability(&qubits, &outcome).unwrap();
            if p < 1e-12 {
                continue;
            }
            let (s, q) = psi.project(&qubits, &outcome).unwrap();
            prop_assert!((p - q).abs() < 1e-15);
            for (acc, a) in sum.iter_mut().zip(s.amplitudes()) {
                *acc += a * p.sqrt();
            }
        }
        prop_assert!(max_diff(&sum, psi.amplitudes()) < 1e-12);
    }

    #[test]
    fn hadamard_test_is_hermitian_and_phase_covariant(seed in any::<u64>(), n in 1usize..=3) {
        let mut r = rng(seed);
        let uq = random_circuit(n, 10, &mut r);
        let uk = random_circuit(n, 10, &mut r);
        let w = |a: &Circuit, b: &Circuit| weight_from_readout(&hadamard_test(a, b).unwrap()).unwrap().value();
        prop_assert!((w(&uq, &uk) - w(&uk, &uq).conj()).norm() < 1e-10);
        // S Rz(-pi/2) = e^{i pi/4} I realises a global phase with gates
        let mut shifted = uq.clone();
        shifted.push(GateOp::s(0)).unwrap();
        shifted.push(GateOp::rz(0, -FRAC_PI_2)).unwrap();
        let phase = C::from_polar(1.0, PI / 4.0);
        prop_assert!((w(&shifted, &uk) - phase * w(&uq, &uk)).norm() < 1e-10);
        // arbitrary phase through the kernel interface
        let q = EncodedState::from_circuit(uq.clone()).unwrap();
        let k = EncodedState::from_circuit(uk.clone()).unwrap();
        let phase = C::from_polar(1.0, FRAC_PI_3);
        let q3 = EncodedState { circuit: uq.clone(), state: q.state.clone().with_phase(phase) };
        let base = ComplexOverlap.weight(&k, &q).unwrap();
        prop_assert!((ComplexOverlap.weight(&k, &q3).unwrap() - phase * base).norm() < 1e-10);
        prop_assert!((base - attention_weight_analytic(&uq, &uk).unwrap().value()).norm() < 1e-12);
    }

    #[test]
    fn clcu_output_is_invariant_to_positive_scale(seed in any::<u64>(), scale in 0.01..100.0f64) {
        let mut r = rng(seed);
        let big_n = [2, 3, 4, 8][r.random_range(0..4)];
        let n = r.random_range(1..=2);
        let alphas: Vec<C> = (0..big_n).map(|_| random_complex(&mut r)).collect();
        let us: Vec<Circuit> = (0..big_n).map(|_| random_circuit(n, 6, &mut r)).collect();
        let psi = random_state(n, &mut r);
        let (a, pa) = clcu_apply_circuit(&ClcuCoefficients::new(alphas.clone()).unwrap(), &us, &psi).unwrap();
        let scaled: Vec<C> = alphas.iter().map(|x| x * scale).collect();
        let (b, pb) = clcu_apply_circuit(&ClcuCoefficients::new(scaled).unwrap(), &us, &psi).unwrap();
        prop_assert!(max_diff(a.amplitudes(), b.amplitudes()) < 1e-9);
        prop_assert!((pa - pb).abs() < 1e-9);
    }

    #[test]
    fn mag_phase_and_weight_encoding_reconstruct(seed in any::<u64>(), m in 1usize..=3) {
        let mut r = rng(seed);
        let w: Vec<C> = (0..1 << m).map(|_| random_complex(&mut r)).collect();
        for z in &w {
            let mp = to_mag_phase(*z);
            prop_assert!(mp.phase > -PI && mp.phase <= PI);
            prop_assert!((mp.to_complex() - z).norm() < 1e-12);
        }
        let e = WeightEncoding::new(&w).unwrap();
        for (t, z) in e.thetas.iter().zip(&w) {
            prop_assert!((0.0..=FRAC_PI_2).contains(t));
            prop_assert!((t.cos() - z.norm() / e.scale).abs() < 1e-12);
        }
    }

    #[test]
    fn combination_weights_are_scale_invariant(seed in any::<u64>(), scale in 0.01..100.0f64) {
        let (model, params, sample) = random_model(seed);
        let base = model.predict(&sample.heads, &params).unwrap();
        let mut p = params.clone();
        for h in &mut p.heads {
            h.beta.iter_mut().for_each(|b| *b *= scale);
        }
        let by_beta = model.predict(&sample.heads, &p).unwrap();
        p.gamma.iter_mut().for_each(|g| *g *= scale);
        let by_both = model.predict(&sample.heads, &p).unwrap();
        for ((a, b), c) in base.probs.iter().zip(&by_beta.probs).zip(&by_both.probs) {
            prop_assert!((a - b).abs() < 1e-9 && (a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn readout_ignores_global_phase(seed in any::<u64>(), n in 2usize..=4, phi in -PI..PI, classes in 2usize..=4) {
        let mut r = rng(seed);
        let psi = random_state(n, &mut r);
        let ms = measurement_ops(classes, n).unwrap();
        let a = class_probs(&psi, &ms).unwrap();
        let b = class_probs(&psi.clone().with_phase(C::from_polar(1.0, phi)), &ms).unwrap();
        prop_assert_eq!(a.probs.len(), classes);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn patches_reassemble_the_image(seed in any::<u64>(), g in 0usize..6) {
        let grids = [(1, 1), (2, 2), (4, 4), (7, 7), (2, 7), (14, 1)];
        let grid = grids[g];
        let mut r = rng(seed);
        let img: Vec<u8> = (0..28 * 28).map(|_| r.random()).collect();
        let patches = patchify(&img, 28, 28, grid).unwrap();
        prop_assert_eq!(patches.len(), grid.0 * grid.1);
        let (ph, pw) = (28 / grid.0, 28 / grid.1);
        let mut back = vec![0u8; 28 * 28];
        for (i, p) in patches.iter().enumerate() {
            let (br, bc) = (i / grid.1, i % grid.1);
            for (k, v) in p.iter().enumerate() {
                back[(br * ph + k / pw) * 28 + bc * pw + k % pw] = (v * 255.0).round() as u8;
            }
        }
        prop_assert_eq!(back, img);
    }

    #[test]
    fn pca_components_are_orthonormal_and_features_in_range(seed in any::<u64>(), k in 1usize..=5) {
        let mut r = rng(seed);
        let dim = 8;
        let train: Vec<Vec<f64>> = (0..60).map(|_| (0..dim).map(|j| r.random_range(0.0..1.0) * (j + 1) as f64).collect()).collect();
        let pca = fit_pca(&[train.clone()], k, RankPolicy::Error).unwrap();
        let pos = &pca.positions[0];
        for a in 0..k {
            for b in 0..k {
                let d: f64 = pos.components[a].iter().zip(&pos.components[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-8);
            }
        }
        // projecting a reconstruction gives the same coordinates
        let x = &train[r.random_range(0..train.len())];
        let y = pos.project(x);
        let rec: Vec<f64> = (0..dim).map(|j| pos.mean[j] + (0..k).map(|f| y[f] * pos.components[f][j]).sum::<f64>()).collect();
        for (a, b) in pos.project(&rec).iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        // unseen inputs are clamped into range
        for _ in 0..20 {
            let z: Vec<f64> = (0..dim).map(|_| r.random_range(-10.0..20.0)).collect();
            prop_assert!(pos.features(&z).iter().all(|v| (0.0..=PI).contains(v)));
        }
    }

    #[test]
    fn config_round_trips_through_json(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut c = ExperimentConfig::default();
        c.n_qubits = r.random_range(1..=8);
        c.heads = r.random_range(1..=2);
        c.learning_rate = r.random_range(1e-4..1.0);
        c.seeds = (0..r.random_range(1..5)).map(|_| r.random()).collect();
        c.classes = vec![0, 1, 2][..r.random_range(2..=3)].to_vec();
        c.attention_mode = ["complex", "real_overlap", "complex_hadamard"][r.random_range(0..3)].into();
        c.head_grids = if r.random_bool(0.5) { Some(vec![(2, 2), (4, 4)]) } else { None };
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn bound_feature_circuits_preserve_norm(seed in any::<u64>(), n in 1usize..=6, layers in 1usize..=3) {
        let mut r = rng(seed);
        let qfm = build_qfm(&QfmSpec::new(n, layers)).unwrap();
        let qffn = build_qffn(&QffnSpec::new(n, layers)).unwrap();
        let x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..PI)).collect();
        let p: Vec<f64> = (0..qfm.n_params()).map(|_| r.random_range(-10.0..10.0)).collect();
        let t: Vec<f64> = (0..qffn.n_params()).map(|_| r.random_range(-10.0..10.0)).collect();
        let s = qfm.bind(&x, &p).unwrap().prepare().unwrap();
        prop_assert!((s.norm() - 1.0).abs() < 1e-10);
        let s = qffn.bind(&[], &t).unwrap().apply(&s).unwrap();
        prop_assert!((s.norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn feature_map_gate_counts_match_closed_form() {
    for n in 1..=8 {
        for layers in 1..=3 {
            let qfm = build_qfm(&QfmSpec::new(n, layers)).unwrap();
            assert_eq!(qfm.count(GateKind::Rx), n * (layers + 1));
            assert_eq!(qfm.count(GateKind::Zz), (n - 1) * layers);
            assert_eq!(qfm.count(GateKind::Ry), n * layers);
            assert_eq!(qfm.n_params(), (2 * n - 1) * layers);
            let qffn = build_qffn(&QffnSpec::new(n, layers)).unwrap();
            let pairs = if n >= 3 { n } else { n - 1 };
            assert_eq!(qffn.count(GateKind::Rz), 2 * n * layers);
            assert_eq!(qffn.count(GateKind::Ry), n * layers);
            assert_eq!(qffn.count(GateKind::Cnot), pairs * layers);
            assert_eq!(qffn.n_params(), 3 * n * layers);
        }
    }
}

#[test]
fn amplitudes_vary_smoothly_in_every_slot() {
    let mut r = rng(3);
    let qfm = build_qfm(&QfmSpec::new(3, 2)).unwrap();
    let x: Vec<f64> = (0..3).map(|_| r.random_range(0.0..PI)).collect();
    let p: Vec<f64> = (0..qfm.n_params()).map(|_| r.random_range(-PI..PI)).collect();
    let h = 1e-6;
    for i in 0..p.len() {
        let at = |d: f64| {
            let mut q = p.clone();
            q[i] += d;
            qfm.bind(&x, &q).unwrap().prepare().unwrap()
        };
        let (a, b) = (at(h), at(-h));
        for (u, v) in a.amplitudes().iter().zip(b.amplitudes()) {
            let d = (u - v) / (2.0 * h);
            // each slot enters through one rotation, so |d amp| <= 1/2
            assert!(d.re.is_finite() && d.im.is_finite() && d.norm() <= 0.5 + 1e-6);
        }
    }
}

#[test]
fn loss_decreases_on_a_separable_toy_problem() {
    let s = spec(2, &[(1, 2)], 2);
    let model = Model::new(s.clone(), Arc::new(ComplexOverlap)).unwrap();
    let mut r = rng(5);
    let params = ModelParams::init(&s, &mut r);
    let data = [
        PreparedSample { heads: vec![vec![vec![0.2, 0.3], vec![0.1, 0.4]]], label: 0 },
        PreparedSample { heads: vec![vec![vec![2.9, 2.7], vec![3.0, 2.5]]], label: 1 },
    ];
    let batch: Vec<&PreparedSample> = data.iter().collect();
    let mut flat = params.flatten();
    let mut opt = OptimizerState::new(flat.len(), AdamConfig { learning_rate: 0.01, ..AdamConfig::default() });
    let mut last = f64::INFINITY;
    for step in 0..20 {
        let p = ModelParams::unflatten(&s, &flat).unwrap();
        let (loss, grad) = Adjoint.loss_and_grad(&model, &batch, &p).unwrap();
        assert!((loss - batch_loss(&model, &batch, &p).unwrap()).abs() < 1e-12);
        assert!(loss <= last + 1e-12, "step {step}: {loss} > {last}");
        last = loss;
        adam_step(&mut opt, &mut flat, &grad).unwrap();
    }
}
