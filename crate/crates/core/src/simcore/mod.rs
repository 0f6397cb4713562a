//! Dense complex statevector engine.
//!
//! Qubit 0 is the most significant bit of the amplitude index: on a 3-qubit
//! register the basis state `|q0 q1 q2> = |100>` sits at index 4.

mod circuit;
mod gate;
mod pauli;
mod state;

pub use circuit::Circuit;
pub use gate::{GateKind, GateOp};
pub use pauli::{Pauli, PauliString};
pub use state::Statevector;
pub(crate) use state::apply_unchecked as apply_gate_raw;

/// Complex amplitude type used throughout the crate.
pub type ComplexScalar = num_complex::Complex64;

/// Largest register the dense engine will allocate.
pub const MAX_QUBITS: usize = 24;

/// Probability below which a post-selection branch is treated as impossible.
pub const POST_SELECTION_THRESHOLD: f64 = 1e-12;

#[inline]
pub(crate) fn bit_of(qubit: usize, n_qubits: usize) -> usize {
    1usize << (n_qubits - 1 - qubit)
}

/// `sum_k conj(a_k) * b_k` over raw amplitude slices.
#[inline]
pub fn dot(a: &[ComplexScalar], b: &[ComplexScalar]) -> ComplexScalar {
    a.iter()
        .zip(b)
        .fold(ComplexScalar::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

pub(crate) fn norm_sqr(a: &[ComplexScalar]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}
