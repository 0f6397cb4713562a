//! Dense-matrix reference implementations shared by the integration tests.
//! Everything here is built from Kronecker products, independently of the
//! simulator's stride kernels.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use qcsam::simcore::{Circuit, GateKind, GateOp, Pauli, PauliString, Statevector};
use rand::Rng;

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn m2(a: C, b: C, cc: C, d: C) -> DMatrix<C> {
    DMatrix::from_row_slice(2, 2, &[a, b, cc, d])
}

pub fn pauli_matrix(p: Pauli) -> DMatrix<C> {
    let (o, z, i) = (c(1., 0.), c(0., 0.), c(0., 1.));
    match p {
        Pauli::I => m2(o, z, z, o),
        Pauli::X => m2(z, o, o, z),
        Pauli::Y => m2(z, -i, i, z),
        Pauli::Z => m2(o, z, z, -o),
    }
}

/// `exp(-i t P / 2)` from `cos(t/2) I - i sin(t/2) P`.
fn rotation(p: &DMatrix<C>, t: f64) -> DMatrix<C> {
    let id = DMatrix::<C>::identity(p.nrows(), p.ncols());
    id * c((t / 2.0).cos(), 0.0) + p * c(0.0, -(t / 2.0).sin())
}

/// `ops[q]` on qubit `q` (identity elsewhere), qubit 0 leftmost.
pub fn kron_all(ops: &[DMatrix<C>]) -> DMatrix<C> {
    let mut acc = DMatrix::from_element(1, 1, c(1., 0.));
    for o in ops {
        acc = acc.kronecker(o);
    }
    acc
}

pub fn embed(n: usize, q: usize, m: &DMatrix<C>) -> DMatrix<C> {
    let ops: Vec<DMatrix<C>> = (0..n).map(|k| if k == q { m.clone() } else { pauli_matrix(Pauli::I) }).collect();
    kron_all(&ops)
}

fn target_matrix(g: &GateOp) -> DMatrix<C> {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let (o, z) = (c(1., 0.), c(0., 0.));
    match g.kind {
        GateKind::H => m2(c(s2, 0.), c(s2, 0.), c(s2, 0.), c(-s2, 0.)),
        GateKind::X => pauli_matrix(Pauli::X),
        GateKind::S => m2(o, z, z, c(0., 1.)),
        GateKind::Sdg => m2(o, z, z, c(0., -1.)),
        GateKind::Rx => rotation(&pauli_matrix(Pauli::X), g.angle.unwrap()),
        GateKind::Ry => rotation(&pauli_matrix(Pauli::Y), g.angle.unwrap()),
        GateKind::Rz => rotation(&pauli_matrix(Pauli::Z), g.angle.unwrap()),
        _ => unreachable!(),
    }
}

/// Full `2^n x 2^n` matrix of one gate.
pub fn gate_matrix(n: usize, g: &GateOp) -> DMatrix<C> {
    let dim = 1 << n;
    let id = DMatrix::<C>::identity(dim, dim);
    let (mut controls, u) = match g.kind {
        GateKind::Zz => {
            let zz = embed(n, g.targets[0], &pauli_matrix(Pauli::Z)) * embed(n, g.targets[1], &pauli_matrix(Pauli::Z));
            (Vec::new(), rotation(&zz, g.angle.unwrap()))
        }
        GateKind::Cnot => (vec![g.targets[0]], embed(n, g.targets[1], &pauli_matrix(Pauli::X))),
        _ => (Vec::new(), embed(n, g.targets[0], &target_matrix(g))),
    };
    controls.extend(&g.controls);
    if controls.is_empty() {
        return u;
    }
    let p1 = m2(c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.));
    let mut proj = id.clone();
    for &q in &controls {
        proj *= embed(n, q, &p1);
    }
    &id + &proj * (u - &id)
}

pub fn circuit_matrix(circ: &Circuit) -> DMatrix<C> {
    let n = circ.n_qubits();
    let mut m = DMatrix::<C>::identity(1 << n, 1 << n);
    for g in circ.ops() {
        m = gate_matrix(n, g) * m;
    }
    m
}

pub fn pauli_string_matrix(p: &PauliString) -> DMatrix<C> {
    let ops: Vec<DMatrix<C>> = p.factors().iter().map(|&f| pauli_matrix(f)).collect();
    kron_all(&ops) * c(p.sign(), 0.0)
}

pub fn vector(s: &Statevector) -> DVector<C> {
    DVector::from_column_slice(s.amplitudes())
}

pub fn zero_vector(n: usize) -> DVector<C> {
    let mut v = DVector::from_element(1 << n, c(0., 0.));
    v[0] = c(1., 0.);
    v
}

pub fn max_diff(a: &[C], b: &[C]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn random_complex<R: Rng>(rng: &mut R) -> C {
    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

pub fn random_state<R: Rng>(n: usize, rng: &mut R) -> Statevector {
    let v: Vec<C> = (0..1usize << n).map(|_| random_complex(rng)).collect();
    Statevector::normalized(v, 1e-12).unwrap().0
}

/// Random gate drawn from every kind, occasionally with extra controls.
pub fn random_gate<R: Rng>(n: usize, rng: &mut R) -> GateOp {
    let q = rng.random_range(0..n);
    let t = rng.random_range(-4.0..4.0);
    let other = (q + 1 + rng.random_range(0..n.max(2) - 1)) % n;
    let g = match rng.random_range(0..9) {
        0 => GateOp::h(q),
        1 => GateOp::x(q),
        2 => GateOp::s(q),
        3 => GateOp::sdg(q),
        4 => GateOp::rx(q, t),
        5 => GateOp::ry(q, t),
        6 => GateOp::rz(q, t),
        7 if n > 1 => GateOp::zz(q, other, t),
        8 if n > 1 => GateOp::cnot(q, other),
        _ => GateOp::rx(q, t),
    };
    let used: Vec<usize> = g.qubits().collect();
    let free: Vec<usize> = (0..n).filter(|k| !used.contains(k)).collect();
    if !free.is_empty() && rng.random_bool(0.25) {
        g.controlled_by([free[rng.random_range(0..free.len())]])
    } else {
        g
    }
}

pub fn random_circuit<R: Rng>(n: usize, depth: usize, rng: &mut R) -> Circuit {
    let mut circ = Circuit::new(n);
    for _ in 0..depth {
        circ.push(random_gate(n, rng)).unwrap();
    }
    circ
}
