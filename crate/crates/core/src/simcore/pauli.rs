use std::fmt;

use serde::{Deserialize, Serialize};

use super::{bit_of, ComplexScalar as C};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

/// Signed tensor product of single-qubit Paulis, one factor per qubit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliString {
    factors: Vec<Pauli>,
    negative: bool,
}

impl PauliString {
    pub fn new(factors: Vec<Pauli>, sign: i8) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Size(0));
        }
        let negative = match sign {
            1 => false,
            -1 => true,
            other => return Err(Error::Shape(format!("Pauli sign must be +1 or -1, got {other}"))),
        };
        Ok(PauliString { factors, negative })
    }

    /// Identity everywhere except the listed `(qubit, pauli)` pairs.
    pub fn sparse(n_qubits: usize, terms: &[(usize, Pauli)], sign: i8) -> Result<Self> {
        let mut factors = vec![Pauli::I; n_qubits];
        for &(q, p) in terms {
            if q >= n_qubits {
                return Err(Error::Index {
                    index: q,
                    n_qubits,
                });
            }
            factors[q] = p;
        }
        Self::new(factors, sign)
    }

    pub fn n_qubits(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Pauli] {
        &self.factors
    }

    pub fn sign(&self) -> f64 {
        if self.negative {
            -1.0
        } else {
            1.0
        }
    }

    /// `sign * P` applied to raw amplitudes.
    pub(crate) fn apply_to(&self, amps: &[C]) -> Vec<C> {
        let n = self.factors.len();
        let mut flip = 0usize;
        let mut y_mask = 0usize;
        let mut z_mask = 0usize;
        for (q, p) in self.factors.iter().enumerate() {
            let b = bit_of(q, n);
            match p {
                Pauli::I => {}
                Pauli::X => flip |= b,
                Pauli::Y => {
                    flip |= b;
                    y_mask |= b;
                }
                Pauli::Z => z_mask |= b,
            }
        }
        // Y|0> = i|1>, Y|1> = -i|0>: each Y contributes i * (-1)^bit.
        let n_y = y_mask.count_ones();
        let y_phase = match n_y % 4 {
            0 => C::new(1.0, 0.0),
            1 => C::new(0.0, 1.0),
            2 => C::new(-1.0, 0.0),
            _ => C::new(0.0, -1.0),
        } * self.sign();
        let mut out = vec![C::new(0.0, 0.0); amps.len()];
        for (i, a) in amps.iter().enumerate() {
            let parity = ((i & z_mask).count_ones() + (i & y_mask).count_ones()) & 1;
            let v = if parity == 1 { -*a } else { *a };
            out[i ^ flip] = v * y_phase;
        }
        out
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", if self.negative { '-' } else { '+' })?;
        for p in &self.factors {
            let c = match p {
                Pauli::I => 'I',
                Pauli::X => 'X',
                Pauli::Y => 'Y',
                Pauli::Z => 'Z',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}
