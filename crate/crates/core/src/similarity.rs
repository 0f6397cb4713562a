//! Complex attention weights `<K|Q>`.
//!
//! Two routes compute the same number: the analytic inner product of the
//! simulated states, and an exact simulation of the three-register Hadamard
//! test (selection qubit, auxiliary qubit, working register). The
//! [`SimilarityKernel`] trait puts both, plus the real-valued overlap used for
//! ablations, behind one interface selected by name.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::simcore::{Circuit, ComplexScalar as C, GateOp, Statevector};

const MAGNITUDE_SLACK: f64 = 1e-9;
const READOUT_SLACK: f64 = 1e-6;

/// `<K|Q>`, bounded in magnitude by 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexWeight {
    value: C,
}

impl ComplexWeight {
    pub fn new(value: C) -> Result<Self> {
        if !value.re.is_finite() || !value.im.is_finite() || value.norm() > 1.0 + MAGNITUDE_SLACK {
            return Err(Error::Inconsistent(value.norm()));
        }
        Ok(ComplexWeight { value })
    }

    pub fn value(&self) -> C {
        self.value
    }
}

/// Joint probabilities `P(q0=0, q1=0)` and `P(q0=1, q1=0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HadamardTestReadout {
    pub p0_real_branch: f64,
    pub p0_imag_branch: f64,
}

fn same_width(uq: &Circuit, uk: &Circuit) -> Result<usize> {
    if uq.n_qubits() != uk.n_qubits() {
        return Err(Error::Shape(format!(
            "query circuit on {} qubits, key circuit on {}",
            uq.n_qubits(),
            uk.n_qubits()
        )));
    }
    Ok(uq.n_qubits())
}

/// `<0|U_K^† U_Q|0>` from the two prepared states.
pub fn attention_weight_analytic(uq: &Circuit, uk: &Circuit) -> Result<ComplexWeight> {
    same_width(uq, uk)?;
    let q = uq.prepare()?;
    let k = uk.prepare()?;
    ComplexWeight::new(k.inner(&q)?)
}

/// Builds the Hadamard-test circuit on `n + 2` qubits: qubit 0 selects the
/// component, qubit 1 is the interfering auxiliary, qubits `2..` hold the
/// working register.
///
/// `H(q0) H(q1)`, controlled-`S` from q0 onto q1 (the factor `i` on the
/// imaginary branch), `U_K^† U_Q` controlled on q1, closing `H(q1)`.
pub fn hadamard_test_circuit(uq: &Circuit, uk: &Circuit) -> Result<Circuit> {
    let n = same_width(uq, uk)?;
    let total = n + 2;
    let mut c = Circuit::new(total);
    c.push(GateOp::h(0))?;
    c.push(GateOp::h(1))?;
    c.push(GateOp::s(1).controlled_by([0]))?;
    let mut product = uq.clone();
    product.extend(&uk.dagger())?;
    c.extend(&product.embed(2, total)?.controlled_by(&[1])?)?;
    c.push(GateOp::h(1))?;
    Ok(c)
}

pub fn hadamard_test(uq: &Circuit, uk: &Circuit) -> Result<HadamardTestReadout> {
    let c = hadamard_test_circuit(uq, uk)?;
    let out = c.prepare()?;
    Ok(HadamardTestReadout {
        p0_real_branch: out.outcome_probability(&[0, 1], &[false, false])?,
        p0_imag_branch: out.outcome_probability(&[0, 1], &[true, false])?,
    })
}

/// Inverts `P_re = (1 + Re)/4`, `P_im = (1 - Im)/4`.
pub fn weight_from_readout(r: &HadamardTestReadout) -> Result<ComplexWeight> {
    for p in [r.p0_real_branch, r.p0_imag_branch] {
        if !(-READOUT_SLACK..=0.5 + READOUT_SLACK).contains(&p) {
            return Err(Error::Inconsistent(p));
        }
    }
    let mut value = C::new(4.0 * r.p0_real_branch - 1.0, 1.0 - 4.0 * r.p0_imag_branch);
    let mag = value.norm();
    if mag > 1.0 + READOUT_SLACK {
        return Err(Error::Inconsistent(mag));
    }
    if mag > 1.0 {
        value /= mag;
    }
    ComplexWeight::new(value)
}

/// A patch state together with the circuit that prepared it from `|0>`.
#[derive(Clone, Debug)]
pub struct EncodedState {
    pub circuit: Circuit,
    pub state: Statevector,
}

impl EncodedState {
    pub fn from_circuit(circuit: Circuit) -> Result<Self> {
        let state = circuit.prepare()?;
        Ok(EncodedState { circuit, state })
    }
}

/// One way of turning a (key, query) pair into an attention coefficient.
pub trait SimilarityKernel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Maps the raw overlap `<K|Q>` to the attention coefficient.
    fn map_overlap(&self, overlap: C) -> C;

    /// Attention coefficient for key `k` and query `q`.
    fn weight(&self, key: &EncodedState, query: &EncodedState) -> Result<C> {
        Ok(self.map_overlap(key.state.inner(&query.state)?))
    }

    /// Chain rule through the kernel. `overlap` is the raw `<K|Q>` and
    /// `upstream` is `z` with `dL = Re(z * dA)`; returns `c` with
    /// `dL = Re(c * d<K|Q>)`.
    fn pullback(&self, overlap: C, upstream: C) -> C;
}

/// Analytic `<K|Q>`.
pub struct ComplexOverlap;

impl SimilarityKernel for ComplexOverlap {
    fn name(&self) -> &'static str {
        "complex"
    }

    fn map_overlap(&self, overlap: C) -> C {
        overlap
    }

    fn pullback(&self, _overlap: C, upstream: C) -> C {
        upstream
    }
}

/// `<K|Q>` recovered from the simulated Hadamard test.
pub struct HadamardTestKernel;

impl SimilarityKernel for HadamardTestKernel {
    fn name(&self) -> &'static str {
        "complex_hadamard"
    }

    fn map_overlap(&self, overlap: C) -> C {
        overlap
    }

    fn weight(&self, key: &EncodedState, query: &EncodedState) -> Result<C> {
        let r = hadamard_test(&query.circuit, &key.circuit)?;
        Ok(weight_from_readout(&r)?.value())
    }

    fn pullback(&self, _overlap: C, upstream: C) -> C {
        upstream
    }
}

/// `|<K|Q>|^2`, the phase-blind overlap used for ablations.
pub struct RealOverlap;

impl SimilarityKernel for RealOverlap {
    fn name(&self) -> &'static str {
        "real_overlap"
    }

    fn map_overlap(&self, overlap: C) -> C {
        C::new(overlap.norm_sqr(), 0.0)
    }

    fn pullback(&self, overlap: C, upstream: C) -> C {
        // dA = 2 Re(conj(w) dw), A real
        overlap.conj() * (2.0 * upstream.re)
    }
}

/// Registry with every built-in kernel.
pub fn kernels() -> Registry<dyn SimilarityKernel> {
    let mut r: Registry<dyn SimilarityKernel> = Registry::new("attention_mode");
    r.register("complex", Arc::new(ComplexOverlap));
    r.register("complex_hadamard", Arc::new(HadamardTestKernel));
    r.register("real_overlap", Arc::new(RealOverlap));
    r
}
