use super::{bit_of, dot, norm_sqr, ComplexScalar as C, GateKind, GateOp, PauliString};
use super::{MAX_QUBITS, POST_SELECTION_THRESHOLD};
use crate::error::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-9;

/// Unit-norm pure state over `n_qubits`, `2^n` amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<C>,
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        Err(Error::Size(n))
    } else {
        Ok(())
    }
}

impl Statevector {
    /// `|0...0>`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_size(n_qubits)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::Index {
                index,
                n_qubits,
            });
        }
        let mut amps = vec![C::new(0.0, 0.0); dim];
        amps[index] = C::new(1.0, 0.0);
        Ok(Statevector { n_qubits, amps })
    }

    /// Wraps amplitudes that are already unit norm (within 1e-9).
    pub fn from_amplitudes(amps: Vec<C>) -> Result<Self> {
        let n_qubits = Self::width_of(amps.len())?;
        let norm = norm_sqr(&amps).sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE || !norm.is_finite() {
            return Err(Error::Shape(format!("amplitudes have norm {norm}, expected 1")));
        }
        Ok(Statevector { n_qubits, amps })
    }

    /// Normalises arbitrary amplitudes. Fails when the vector norm is below `min_norm`.
    pub fn normalized(amps: Vec<C>, min_norm: f64) -> Result<(Self, f64)> {
        let n_qubits = Self::width_of(amps.len())?;
        let norm = norm_sqr(&amps).sqrt();
        if !(norm >= min_norm) {
            return Err(Error::DestructiveCancellation(norm));
        }
        let inv = 1.0 / norm;
        let amps = amps.into_iter().map(|a| a * inv).collect();
        Ok((Statevector { n_qubits, amps }, norm))
    }

    fn width_of(len: usize) -> Result<usize> {
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Shape(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let n = len.trailing_zeros() as usize;
        check_size(n)?;
        Ok(n)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C> {
        self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.amps).sqrt()
    }

    /// Multiplies every amplitude by a unit-modulus phase.
    pub fn with_phase(mut self, phase: C) -> Self {
        let phase = phase / phase.norm();
        for a in &mut self.amps {
            *a *= phase;
        }
        self
    }

    /// `self ⊗ other`; `self` occupies the leading (most significant) qubits.
    pub fn tensor(&self, other: &Statevector) -> Result<Statevector> {
        check_size(self.n_qubits + other.n_qubits)?;
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ok(Statevector {
            n_qubits: self.n_qubits + other.n_qubits,
            amps,
        })
    }

    /// Returns `U_g |self>`.
    pub fn apply_gate(&self, g: &GateOp) -> Result<Statevector> {
        let mut out = self.clone();
        out.apply_in_place(g)?;
        Ok(out)
    }

    pub fn apply_in_place(&mut self, g: &GateOp) -> Result<()> {
        g.validate(self.n_qubits)?;
        apply_unchecked(&mut self.amps, self.n_qubits, g);
        Ok(())
    }

    /// `<self|ket>`, conjugating `self`.
    pub fn inner(&self, ket: &Statevector) -> Result<C> {
        if self.n_qubits != ket.n_qubits {
            return Err(Error::Shape(format!(
                "inner product of {}-qubit bra with {}-qubit ket",
                self.n_qubits, ket.n_qubits
            )));
        }
        Ok(dot(&self.amps, &ket.amps))
    }

    /// `sign * <psi|P|psi>`.
    pub fn expectation(&self, m: &PauliString) -> Result<f64> {
        if m.n_qubits() != self.n_qubits {
            return Err(Error::Shape(format!(
                "{}-qubit observable on {}-qubit state",
                m.n_qubits(),
                self.n_qubits
            )));
        }
        let pa = m.apply_to(&self.amps);
        let v = dot(&self.amps, &pa);
        debug_assert!(v.im.abs() < 1e-9, "Pauli expectation has imaginary part {}", v.im);
        Ok(v.re)
    }

    /// `sign * P |psi>` on raw amplitudes; used by gradient code.
    pub fn apply_pauli(&self, m: &PauliString) -> Result<Vec<C>> {
        if m.n_qubits() != self.n_qubits {
            return Err(Error::Shape("observable width".into()));
        }
        Ok(m.apply_to(&self.amps))
    }

    fn outcome_mask(&self, qubits: &[usize], outcome: &[bool]) -> Result<(usize, usize)> {
        if qubits.len() != outcome.len() {
            return Err(Error::Shape(format!(
                "{} qubits but {} outcome bits",
                qubits.len(),
                outcome.len()
            )));
        }
        let mut mask = 0;
        let mut want = 0;
        for (&q, &b) in qubits.iter().zip(outcome) {
            if q >= self.n_qubits {
                return Err(Error::Index {
                    index: q,
                    n_qubits: self.n_qubits,
                });
            }
            let bit = bit_of(q, self.n_qubits);
            if mask & bit != 0 {
                return Err(Error::Shape(format!("qubit {q} listed twice")));
            }
            mask |= bit;
            if b {
                want |= bit;
            }
        }
        Ok((mask, want))
    }

    /// Probability of measuring `outcome` on `qubits`.
    pub fn outcome_probability(&self, qubits: &[usize], outcome: &[bool]) -> Result<f64> {
        let (mask, want) = self.outcome_mask(qubits, outcome)?;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == want)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Projects onto `outcome` and renormalises, keeping the full register.
    pub fn project(&self, qubits: &[usize], outcome: &[bool]) -> Result<(Statevector, f64)> {
        let (mask, want) = self.outcome_mask(qubits, outcome)?;
        let prob = self.outcome_probability(qubits, outcome)?;
        if prob < POST_SELECTION_THRESHOLD {
            return Err(Error::PostSelection(prob));
        }
        let inv = 1.0 / prob.sqrt();
        let amps = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == want { a * inv } else { C::new(0.0, 0.0) })
            .collect();
        Ok((
            Statevector {
                n_qubits: self.n_qubits,
                amps,
            },
            prob,
        ))
    }

    /// Projects onto `outcome` and returns the renormalised state of the
    /// remaining qubits (original relative order kept).
    pub fn post_select(&self, qubits: &[usize], outcome: &[bool]) -> Result<(Statevector, f64)> {
        let (mask, want) = self.outcome_mask(qubits, outcome)?;
        let remaining = self.n_qubits - qubits.len();
        check_size(remaining)?;
        let prob = self.outcome_probability(qubits, outcome)?;
        if prob < POST_SELECTION_THRESHOLD {
            return Err(Error::PostSelection(prob));
        }
        let inv = 1.0 / prob.sqrt();
        let amps = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == want)
            .map(|(_, a)| a * inv)
            .collect();
        Ok((
            Statevector {
                n_qubits: remaining,
                amps,
            },
            prob,
        ))
    }
}

/// Stride kernel: visits each amplitude pair `(i, i | target_bit)` once.
pub(crate) fn apply_unchecked(amps: &mut [C], n: usize, g: &GateOp) {
    let mut cmask = 0usize;
    for &c in &g.controls {
        cmask |= bit_of(c, n);
    }
    match g.kind {
        GateKind::Zz => {
            let (a, b) = (bit_of(g.targets[0], n), bit_of(g.targets[1], n));
            let half = g.angle.unwrap_or(0.0) / 2.0;
            let same = C::new(half.cos(), -half.sin());
            let diff = same.conj();
            for (i, amp) in amps.iter_mut().enumerate() {
                if i & cmask != cmask {
                    continue;
                }
                let parity = ((i & a) != 0) ^ ((i & b) != 0);
                *amp *= if parity { diff } else { same };
            }
        }
        GateKind::Cnot => {
            cmask |= bit_of(g.targets[0], n);
            let t = bit_of(g.targets[1], n);
            for base in (0..amps.len()).step_by(2 * t) {
                for i in base..base + t {
                    if i & cmask == cmask {
                        amps.swap(i, i | t);
                    }
                }
            }
        }
        _ => {
            let m = g
                .single_qubit_matrix()
                .expect("single-target gate kinds have a 2x2 matrix");
            let t = bit_of(g.targets[0], n);
            let diagonal = m[1] == C::new(0.0, 0.0) && m[2] == C::new(0.0, 0.0);
            for base in (0..amps.len()).step_by(2 * t) {
                for i in base..base + t {
                    if i & cmask != cmask {
                        continue;
                    }
                    let j = i | t;
                    if diagonal {
                        amps[i] *= m[0];
                        amps[j] *= m[3];
                    } else {
                        let (a0, a1) = (amps[i], amps[j]);
                        amps[i] = m[0] * a0 + m[1] * a1;
                        amps[j] = m[2] * a0 + m[3] * a1;
                    }
                }
            }
        }
    }
}
