use std::fmt;

use super::state::apply_unchecked;
use super::{ComplexScalar as C, GateOp, Statevector};
use crate::error::{Error, Result};

/// Ordered list of concrete gates on a fixed-width register.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    ops: Vec<GateOp>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Circuit {
            n_qubits,
            ops: Vec::new(),
        }
    }

    pub fn from_ops(n_qubits: usize, ops: Vec<GateOp>) -> Result<Self> {
        for g in &ops {
            g.validate(n_qubits)?;
        }
        Ok(Circuit { n_qubits, ops })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn ops(&self) -> &[GateOp] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn push(&mut self, g: GateOp) -> Result<()> {
        g.validate(self.n_qubits)?;
        self.ops.push(g);
        Ok(())
    }

    pub fn extend(&mut self, other: &Circuit) -> Result<()> {
        if other.n_qubits != self.n_qubits {
            return Err(Error::Shape(format!(
                "cannot append {}-qubit circuit to {}-qubit circuit",
                other.n_qubits, self.n_qubits
            )));
        }
        self.ops.extend(other.ops.iter().cloned());
        Ok(())
    }

    pub fn apply(&self, input: &Statevector) -> Result<Statevector> {
        let mut s = input.clone();
        self.apply_in_place(&mut s)?;
        Ok(s)
    }

    pub fn apply_in_place(&self, state: &mut Statevector) -> Result<()> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::Shape(format!(
                "{}-qubit circuit on {}-qubit state",
                self.n_qubits,
                state.n_qubits()
            )));
        }
        for g in &self.ops {
            state.apply_in_place(g)?;
        }
        Ok(())
    }

    /// Applies the circuit to an arbitrary (not necessarily normalised) vector.
    pub(crate) fn apply_raw(&self, amps: &mut [C]) {
        debug_assert_eq!(amps.len(), 1 << self.n_qubits);
        for g in &self.ops {
            apply_unchecked(amps, self.n_qubits, g);
        }
    }

    /// `|psi> = U |0...0>`.
    pub fn prepare(&self) -> Result<Statevector> {
        self.apply(&Statevector::zero(self.n_qubits)?)
    }

    pub fn dagger(&self) -> Circuit {
        Circuit {
            n_qubits: self.n_qubits,
            ops: self.ops.iter().rev().map(GateOp::dagger).collect(),
        }
    }

    /// Gate-level transpose: reversed order, each gate transposed.
    pub fn transpose(&self) -> Circuit {
        Circuit {
            n_qubits: self.n_qubits,
            ops: self.ops.iter().rev().map(GateOp::transpose).collect(),
        }
    }

    /// Relabels qubit `q` as `offset + q` inside a `total`-qubit register.
    pub fn embed(&self, offset: usize, total: usize) -> Result<Circuit> {
        if offset + self.n_qubits > total {
            return Err(Error::Shape(format!(
                "cannot embed {} qubits at offset {offset} in {total}",
                self.n_qubits
            )));
        }
        let ops = self
            .ops
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.targets.iter_mut().for_each(|q| *q += offset);
                g.controls.iter_mut().for_each(|q| *q += offset);
                g
            })
            .collect();
        Circuit::from_ops(total, ops)
    }

    /// Adds `controls` to every gate.
    pub fn controlled_by(&self, controls: &[usize]) -> Result<Circuit> {
        let ops = self
            .ops
            .iter()
            .map(|g| g.clone().controlled_by(controls.iter().copied()))
            .collect();
        Circuit::from_ops(self.n_qubits, ops)
    }

    /// Dense matrix, column `j` = `U|j>`. Row-major `dim x dim`.
    pub fn to_matrix(&self) -> Vec<Vec<C>> {
        let dim = 1usize << self.n_qubits;
        let mut m = vec![vec![C::new(0.0, 0.0); dim]; dim];
        for j in 0..dim {
            let mut col = vec![C::new(0.0, 0.0); dim];
            col[j] = C::new(1.0, 0.0);
            self.apply_raw(&mut col);
            for (i, v) in col.into_iter().enumerate() {
                m[i][j] = v;
            }
        }
        m
    }
}

/// One gate per line: kind, targets, optional controls, optional angle.
impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "qubits {}", self.n_qubits)?;
        for g in &self.ops {
            writeln!(f, "{g}")?;
        }
        Ok(())
    }
}
