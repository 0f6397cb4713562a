use std::fmt;

use serde::{Deserialize, Serialize};

use super::ComplexScalar as C;
use crate::error::{Error, Result};

/// Gate alphabet. Rotations follow `R_P(t) = exp(-i t P / 2)`, `Zz(t) = exp(-i t Z⊗Z / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    H,
    X,
    S,
    Sdg,
    Rx,
    Ry,
    Rz,
    Zz,
    /// `targets = [control, target]`.
    Cnot,
}

impl GateKind {
    pub fn is_rotation(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::Zz)
    }

    pub fn arity(self) -> usize {
        match self {
            GateKind::Zz | GateKind::Cnot => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::X => "x",
            GateKind::S => "s",
            GateKind::Sdg => "sdg",
            GateKind::Rx => "rx",
            GateKind::Ry => "ry",
            GateKind::Rz => "rz",
            GateKind::Zz => "zz",
            GateKind::Cnot => "cnot",
        }
    }
}

/// A concrete gate. A non-empty `controls` set makes it the controlled
/// version of `kind`, active when every control qubit is `|1>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
}

impl GateOp {
    fn fixed(kind: GateKind, targets: Vec<usize>) -> Self {
        GateOp {
            kind,
            targets,
            controls: Vec::new(),
            angle: None,
        }
    }

    fn rotation(kind: GateKind, targets: Vec<usize>, angle: f64) -> Self {
        GateOp {
            kind,
            targets,
            controls: Vec::new(),
            angle: Some(angle),
        }
    }

    pub fn h(q: usize) -> Self {
        Self::fixed(GateKind::H, vec![q])
    }

    pub fn x(q: usize) -> Self {
        Self::fixed(GateKind::X, vec![q])
    }

    pub fn s(q: usize) -> Self {
        Self::fixed(GateKind::S, vec![q])
    }

    pub fn sdg(q: usize) -> Self {
        Self::fixed(GateKind::Sdg, vec![q])
    }

    pub fn rx(q: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Rx, vec![q], angle)
    }

    pub fn ry(q: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Ry, vec![q], angle)
    }

    pub fn rz(q: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Rz, vec![q], angle)
    }

    pub fn zz(a: usize, b: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Zz, vec![a, b], angle)
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self::fixed(GateKind::Cnot, vec![control, target])
    }

    /// Adds control qubits on top of any existing ones.
    pub fn controlled_by(mut self, controls: impl IntoIterator<Item = usize>) -> Self {
        self.controls.extend(controls);
        self
    }

    /// Every qubit the gate touches, controls included.
    pub fn qubits(&self) -> impl Iterator<Item = usize> + '_ {
        self.targets.iter().chain(self.controls.iter()).copied()
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.targets.len() != self.kind.arity() {
            return Err(Error::Gate(format!(
                "{} expects {} target(s), got {}",
                self.kind.name(),
                self.kind.arity(),
                self.targets.len()
            )));
        }
        if self.kind.is_rotation() != self.angle.is_some() {
            return Err(Error::Gate(format!(
                "{}: angle must be present exactly for rotations",
                self.kind.name()
            )));
        }
        if let Some(a) = self.angle {
            if !a.is_finite() {
                return Err(Error::Gate(format!("{}: non-finite angle", self.kind.name())));
            }
        }
        let mut seen = 0u64;
        for q in self.qubits() {
            if q >= n_qubits {
                return Err(Error::Index {
                    index: q,
                    n_qubits,
                });
            }
            if seen & (1 << q) != 0 {
                return Err(Error::Gate(format!(
                    "{}: qubit {q} used more than once",
                    self.kind.name()
                )));
            }
            seen |= 1 << q;
        }
        Ok(())
    }

    /// Hermitian adjoint.
    pub fn dagger(&self) -> Self {
        let mut g = self.clone();
        match g.kind {
            GateKind::S => g.kind = GateKind::Sdg,
            GateKind::Sdg => g.kind = GateKind::S,
            _ => {}
        }
        if let Some(a) = g.angle.as_mut() {
            *a = -*a;
        }
        g
    }

    /// Elementwise matrix transpose. Only `Ry` is antisymmetric off the diagonal;
    /// every other gate in the alphabet is a symmetric matrix. Control
    /// projectors are diagonal, so controls carry over unchanged.
    pub fn transpose(&self) -> Self {
        let mut g = self.clone();
        if g.kind == GateKind::Ry {
            g.angle = g.angle.map(|a| -a);
        }
        g
    }

    /// 2x2 matrix `[[m00, m01], [m10, m11]]` for single-target kinds.
    pub(crate) fn single_qubit_matrix(&self) -> Option<[C; 4]> {
        let half = self.angle.unwrap_or(0.0) / 2.0;
        let (c, s) = (half.cos(), half.sin());
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let m = match self.kind {
            GateKind::H => [C::new(r, 0.0), C::new(r, 0.0), C::new(r, 0.0), C::new(-r, 0.0)],
            GateKind::X => [C::new(0.0, 0.0), C::new(1.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 0.0)],
            GateKind::S => [C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 1.0)],
            GateKind::Sdg => [C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(0.0, -1.0)],
            GateKind::Rx => [C::new(c, 0.0), C::new(0.0, -s), C::new(0.0, -s), C::new(c, 0.0)],
            GateKind::Ry => [C::new(c, 0.0), C::new(-s, 0.0), C::new(s, 0.0), C::new(c, 0.0)],
            GateKind::Rz => [C::new(c, -s), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(c, s)],
            GateKind::Zz | GateKind::Cnot => return None,
        };
        Some(m)
    }
}

impl fmt::Display for GateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.name())?;
        let targets: Vec<String> = self.targets.iter().map(|q| q.to_string()).collect();
        write!(f, " {}", targets.join(","))?;
        if !self.controls.is_empty() {
            let ctrls: Vec<String> = self.controls.iter().map(|q| q.to_string()).collect();
            write!(f, " ctrl={}", ctrls.join(","))?;
        }
        if let Some(a) = self.angle {
            write!(f, " {a:.12}")?;
        }
        Ok(())
    }
}
