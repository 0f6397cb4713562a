//! Self-checks run by the `verify` command: each compares a circuit-level
//! construction against a direct computation on random inputs.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::circuitlib::{QffnSpec, QfmSpec};
use crate::clcu::{block_encode_weights, build_prep, build_prep_transpose, clcu_apply_analytic, clcu_apply_circuit, ClcuCoefficients};
use crate::data::PreparedSample;
use crate::error::Result;
use crate::model::{class_probs, measurement_ops, HeadSpec, Model, ModelParams, ModelSpec};
use crate::similarity::{attention_weight_analytic, hadamard_test, weight_from_readout, ComplexOverlap};
use crate::simcore::{Circuit, ComplexScalar as C, GateOp, Statevector};
use crate::train::{Adjoint, FiniteDifference, GradientEstimator};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(name: &'static str, max_error: f64, tolerance: f64) -> Self {
        CheckResult {
            name,
            passed: max_error <= tolerance,
            max_error,
            tolerance,
        }
    }
}

/// Random circuit over the full gate set, including controlled gates.
pub fn random_circuit<R: Rng>(n: usize, depth: usize, rng: &mut R) -> Circuit {
    let mut c = Circuit::new(n);
    for _ in 0..depth {
        let q = rng.random_range(0..n);
        let t: f64 = rng.random_range(-PI..PI);
        let mut g = match rng.random_range(0..9) {
            0 => GateOp::h(q),
            1 => GateOp::x(q),
            2 => GateOp::s(q),
            3 => GateOp::sdg(q),
            4 => GateOp::rx(q, t),
            5 => GateOp::ry(q, t),
            6 => GateOp::rz(q, t),
            7 if n > 1 => GateOp::zz(q, (q + 1) % n, t),
            8 if n > 1 => GateOp::cnot(q, (q + 1) % n),
            _ => GateOp::ry(q, t),
        };
        if n > 2 && g.kind.arity() == 1 && rng.random_bool(0.2) {
            g = g.controlled_by([(q + 2) % n]);
        }
        c.push(g).expect("qubits in range");
    }
    c
}

fn random_complex<R: Rng>(rng: &mut R) -> C {
    C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_state<R: Rng>(n: usize, rng: &mut R) -> Statevector {
    let (s, _) = Statevector::normalized((0..1 << n).map(|_| random_complex(rng)).collect(), 1e-12).expect("nonzero");
    s
}

pub fn check_hadamard_test(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(1..=3);
        let uq = random_circuit(n, 12, &mut rng);
        let uk = random_circuit(n, 12, &mut rng);
        let direct = attention_weight_analytic(&uq, &uk)?.value();
        let recovered = weight_from_readout(&hadamard_test(&uq, &uk)?)?.value();
        worst = worst.max((direct - recovered).norm());
    }
    Ok(CheckResult::new("hadamard_test_oracle", worst, 1e-9))
}

pub fn check_clcu(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let big_n = [2, 4, 8][t % 3];
        let n = rng.random_range(1..=2);
        let alphas: Vec<C> = (0..big_n).map(|_| random_complex(&mut rng)).collect();
        let us: Vec<Circuit> = (0..big_n).map(|_| random_circuit(n, 8, &mut rng)).collect();
        let psi = random_state(n, &mut rng);
        let coeffs = ClcuCoefficients::new(alphas.clone())?;
        let (out_c, p) = clcu_apply_circuit(&coeffs, &us, &psi)?;
        let states = us.iter().map(|u| u.apply(&psi)).collect::<Result<Vec<_>>>()?;
        let out_a = clcu_apply_analytic(&alphas, &states)?;
        worst = worst.max(1.0 - out_c.inner(&out_a)?.norm());
        // success probability (Omega' / Omega^2)^2
        let mut raw = vec![C::new(0.0, 0.0); psi.dim()];
        for (a, s) in alphas.iter().zip(&states) {
            for (r, v) in raw.iter_mut().zip(s.amplitudes()) {
                *r += a * v;
            }
        }
        let omega_prime = raw.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let expect = (omega_prime / coeffs.omega().powi(2)).powi(2);
        worst = worst.max((p - expect).abs());
    }
    Ok(CheckResult::new("clcu_circuit_vs_analytic", worst, 1e-9))
}

pub fn check_block_encoding(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let m = rng.random_range(1..=3);
        let w: Vec<C> = (0..1 << m).map(|_| random_complex(&mut rng)).collect();
        let b = block_encode_weights(&w)?;
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for (a, x) in b.state.amplitudes().iter().zip(&w) {
            worst = worst.max((a - x / norm).norm());
        }
    }
    Ok(CheckResult::new("block_encoding_round_trip", worst, 1e-9))
}

pub fn check_prep_transpose(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let big_n = 2 + t % 7;
        let alphas: Vec<C> = (0..big_n).map(|_| random_complex(&mut rng)).collect();
        let coeffs = ClcuCoefficients::new(alphas)?;
        let u = build_prep(&coeffs)?.to_matrix();
        let ut = build_prep_transpose(&coeffs)?.to_matrix();
        let dim = u.len();
        for i in 0..dim {
            for j in 0..dim {
                let uu: C = (0..dim).map(|k| u[i][k] * u[j][k].conj()).sum();
                let id = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((uu - id).norm()).max((ut[i][j] - u[j][i]).norm());
            }
        }
        let target = coeffs.prep_amplitudes();
        for (i, a) in target.iter().enumerate() {
            worst = worst.max((u[i][0] - a).norm());
        }
    }
    Ok(CheckResult::new("prep_unitarity_and_transpose", worst, 1e-10))
}

fn random_sample<R: Rng>(spec: &ModelSpec, label: usize, rng: &mut R) -> PreparedSample {
    PreparedSample {
        heads: spec
            .heads
            .iter()
            .map(|h| {
                (0..h.n_patches())
                    .map(|_| (0..spec.n_qubits()).map(|_| rng.random_range(0.0..=PI)).collect())
                    .collect()
            })
            .collect(),
        label,
    }
}

fn small_spec(n: usize, grids: &[(usize, usize)], classes: usize) -> ModelSpec {
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

pub fn check_circuit_path(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let grids = [(1, 1), (1, 2), (1, 3), (2, 2)];
    for t in 0..trials {
        let n = 2 + t % 2;
        let heads = 1 + t % 2;
        let g: Vec<(usize, usize)> = (0..heads).map(|_| grids[rng.random_range(0..grids.len())]).collect();
        let classes = 2 + t % 3;
        let spec = small_spec(n, &g, classes);
        let model = Model::new(spec.clone(), Arc::new(ComplexOverlap))?;
        let params = ModelParams::init(&spec, &mut rng);
        let s = random_sample(&spec, 0, &mut rng);
        let a = model.predict(&s.heads, &params)?;
        let c = model.forward_circuit(&s.heads, &params)?;
        for (x, y) in a.probs.iter().zip(&c.probs) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(CheckResult::new("circuit_path_consistency", worst, 1e-6))
}

/// Relative error per coordinate where the gradient exceeds `1e-6`,
/// absolute (scaled to the relative budget) elsewhere.
pub fn check_gradient(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = small_spec(2, &[(1, 2)], 2);
    let model = Model::new(spec.clone(), Arc::new(ComplexOverlap))?;
    let params = ModelParams::init(&spec, &mut rng);
    let data: Vec<PreparedSample> = (0..4).map(|i| random_sample(&spec, i % 2, &mut rng)).collect();
    let batch: Vec<&PreparedSample> = data.iter().collect();
    let (_, ga) = Adjoint.loss_and_grad(&model, &batch, &params)?;
    let (_, gf) = FiniteDifference::default().loss_and_grad(&model, &batch, &params)?;
    let mut worst: f64 = 0.0;
    for (a, f) in ga.iter().zip(&gf) {
        let e = if f.abs() > 1e-6 {
            ((a - f) / f).abs()
        } else {
            (a - f).abs() / 1e-7 * 1e-4
        };
        worst = worst.max(e);
    }
    Ok(CheckResult::new("gradient_finite_difference", worst, 1e-4))
}

pub fn check_readout(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let zero = Statevector::zero(2)?;
    let p = class_probs(&zero, &measurement_ops(3, 2)?)?;
    worst = worst.max((p.probs[0] - 0.25).abs() + (p.probs[1] - 0.25).abs() + (p.probs[2] - 0.5).abs());
    let p = class_probs(&zero, &measurement_ops(2, 2)?)?;
    worst = worst.max((p.probs[0] - 1.0).abs() + p.probs[1].abs());
    for t in 0..trials {
        let classes = 2 + t % 3;
        let psi = random_state(3, &mut rng);
        let d = class_probs(&psi, &measurement_ops(classes, 3)?)?;
        worst = worst.max((d.probs.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(CheckResult::new("readout_sanity", worst, 1e-9))
}

/// The full suite at the sizes the command line runs.
pub fn run_checks(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_hadamard_test(500, seed)?,
        check_clcu(300, seed)?,
        check_block_encoding(200, seed)?,
        check_prep_transpose(28, seed)?,
        check_circuit_path(20, seed)?,
        check_gradient(seed)?,
        check_readout(1000, seed)?,
    ])
}
