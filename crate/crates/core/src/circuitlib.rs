//! Parameterised circuit builders: the quantum feature map (QFM) and the
//! hardware-efficient feed-forward layer (QFFN).
//!
//! A [`ParamCircuit`] keeps two disjoint slot families: *data* slots, filled
//! from the input feature vector, and *trainable* slots. Binding both yields a
//! concrete [`Circuit`]. [`ParamCircuit::backprop`] runs adjoint
//! differentiation through the trainable slots.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{apply_gate_raw, dot, Circuit, ComplexScalar as C, GateKind, GateOp, Pauli, PauliString};
use crate::simcore::Statevector;

/// Where a rotation angle comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AngleSource {
    Fixed(f64),
    Data(usize),
    Param(usize),
}

/// `angle = scale * source`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Angle {
    pub source: AngleSource,
    pub scale: f64,
}

impl Angle {
    pub fn data(i: usize) -> Self {
        Angle {
            source: AngleSource::Data(i),
            scale: 1.0,
        }
    }

    pub fn param(i: usize) -> Self {
        Angle {
            source: AngleSource::Param(i),
            scale: 1.0,
        }
    }

    pub fn fixed(v: f64) -> Self {
        Angle {
            source: AngleSource::Fixed(v),
            scale: 1.0,
        }
    }

    fn resolve(&self, data: &[f64], params: &[f64]) -> f64 {
        let v = match self.source {
            AngleSource::Fixed(v) => v,
            AngleSource::Data(i) => data[i],
            AngleSource::Param(i) => params[i],
        };
        self.scale * v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub controls: Vec<usize>,
    pub angle: Option<Angle>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCircuit {
    n_qubits: usize,
    ops: Vec<ParamOp>,
    n_data: usize,
    n_params: usize,
}

impl ParamCircuit {
    pub fn new(n_qubits: usize, n_data: usize, n_params: usize) -> Self {
        ParamCircuit {
            n_qubits,
            ops: Vec::new(),
            n_data,
            n_params,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_data(&self) -> usize {
        self.n_data
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn ops(&self) -> &[ParamOp] {
        &self.ops
    }

    /// Appends a gate whose angle (if any) is fixed.
    pub fn push_gate(&mut self, g: GateOp) -> Result<()> {
        g.validate(self.n_qubits)?;
        self.ops.push(ParamOp {
            kind: g.kind,
            targets: g.targets,
            controls: g.controls,
            angle: g.angle.map(Angle::fixed),
        });
        Ok(())
    }

    pub fn push_rotation(&mut self, kind: GateKind, targets: Vec<usize>, angle: Angle) -> Result<()> {
        match angle.source {
            AngleSource::Data(i) if i >= self.n_data => {
                return Err(Error::Binding(format!("data slot {i} >= {}", self.n_data)))
            }
            AngleSource::Param(i) if i >= self.n_params => {
                return Err(Error::Binding(format!("param slot {i} >= {}", self.n_params)))
            }
            _ => {}
        }
        let probe = GateOp {
            kind,
            targets: targets.clone(),
            controls: Vec::new(),
            angle: Some(0.0),
        };
        probe.validate(self.n_qubits)?;
        self.ops.push(ParamOp {
            kind,
            targets,
            controls: Vec::new(),
            angle: Some(angle),
        });
        Ok(())
    }

    /// Gate count by kind, for structure checks.
    pub fn count(&self, kind: GateKind) -> usize {
        self.ops.iter().filter(|o| o.kind == kind).count()
    }

    fn check_lengths(&self, data: &[f64], params: &[f64]) -> Result<()> {
        if data.len() != self.n_data {
            return Err(Error::Binding(format!(
                "expected {} data values, got {}",
                self.n_data,
                data.len()
            )));
        }
        if params.len() != self.n_params {
            return Err(Error::Binding(format!(
                "expected {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        Ok(())
    }

    pub fn bind(&self, data: &[f64], params: &[f64]) -> Result<Circuit> {
        self.check_lengths(data, params)?;
        let ops = self
            .ops
            .iter()
            .map(|o| GateOp {
                kind: o.kind,
                targets: o.targets.clone(),
                controls: o.controls.clone(),
                angle: o.angle.map(|a| a.resolve(data, params)),
            })
            .collect();
        Circuit::from_ops(self.n_qubits, ops)
    }

    pub fn bind_and_run(&self, data: &[f64], params: &[f64], input: &Statevector) -> Result<Statevector> {
        self.bind(data, params)?.apply(input)
    }

    /// Adjoint differentiation.
    ///
    /// `output` is the state this circuit produced from some input and
    /// `output_adjoint` is `dL/d<output>` in the convention
    /// `dL = Re <adjoint, d output>`. Accumulates `dL/dparam` into `grad` and
    /// returns the adjoint with respect to the circuit input.
    pub fn backprop(
        &self,
        data: &[f64],
        params: &[f64],
        output: &Statevector,
        output_adjoint: Vec<C>,
        grad: &mut [f64],
    ) -> Result<Vec<C>> {
        self.check_lengths(data, params)?;
        if grad.len() != self.n_params || output_adjoint.len() != output.dim() {
            return Err(Error::Shape("backprop buffer length".into()));
        }
        let bound = self.bind(data, params)?;
        let n = self.n_qubits;
        let mut phi = output.amplitudes().to_vec();
        let mut lam = output_adjoint;
        for (op, g) in self.ops.iter().zip(bound.ops()).rev() {
            if let Some(Angle {
                source: AngleSource::Param(slot),
                scale,
            }) = op.angle
            {
                if !op.controls.is_empty() {
                    return Err(Error::Gate("gradient through controlled rotation".into()));
                }
                // d/dt exp(-i t P/2) = -i/2 P exp(-i t P/2)
                let generator = generator_of(op, n);
                let p_phi = generator.apply_to(&phi);
                let v = dot(&lam, &p_phi) * C::new(0.0, -0.5);
                grad[slot] += scale * v.re;
            }
            let inv = g.dagger();
            apply_gate_raw(&mut phi, n, &inv);
            apply_gate_raw(&mut lam, n, &inv);
        }
        Ok(lam)
    }
}

fn generator_of(op: &ParamOp, n: usize) -> PauliString {
    let terms: Vec<(usize, Pauli)> = match op.kind {
        GateKind::Rx => vec![(op.targets[0], Pauli::X)],
        GateKind::Ry => vec![(op.targets[0], Pauli::Y)],
        GateKind::Rz => vec![(op.targets[0], Pauli::Z)],
        GateKind::Zz => vec![(op.targets[0], Pauli::Z), (op.targets[1], Pauli::Z)],
        _ => unreachable!("only rotations carry parameter slots"),
    };
    PauliString::sparse(n, &terms, 1).expect("generator qubits validated at build time")
}

impl fmt::Display for ParamCircuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "qubits {} data {} params {}", self.n_qubits, self.n_data, self.n_params)?;
        for o in &self.ops {
            let targets: Vec<String> = o.targets.iter().map(|q| q.to_string()).collect();
            write!(f, "{:?} {}", o.kind, targets.join(","))?;
            match o.angle.map(|a| a.source) {
                Some(AngleSource::Data(i)) => write!(f, " x[{i}]")?,
                Some(AngleSource::Param(i)) => write!(f, " theta[{i}]")?,
                Some(AngleSource::Fixed(v)) => write!(f, " {v}")?,
                None => {}
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Two-qubit coupling pattern.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Pairs `(q, q+1)`.
    #[default]
    Chain,
    /// Chain plus `(n-1, 0)` when `n >= 3`.
    Ring,
}

impl Topology {
    fn pairs(self, n: usize) -> Vec<(usize, usize)> {
        let mut p: Vec<_> = (0..n.saturating_sub(1)).map(|q| (q, q + 1)).collect();
        if self == Topology::Ring && n >= 3 {
            p.push((n - 1, 0));
        }
        p
    }
}

/// Order of the two trainable sublayers inside one QFM layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QfmLayerOrder {
    #[default]
    ZzThenRy,
    RyThenZz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QfmSpec {
    pub n_qubits: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub order: QfmLayerOrder,
}

impl QfmSpec {
    pub fn new(n_qubits: usize, n_layers: usize) -> Self {
        QfmSpec {
            n_qubits,
            n_layers,
            topology: Topology::Chain,
            order: QfmLayerOrder::ZzThenRy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > crate::simcore::MAX_QUBITS {
            return Err(Error::Size(self.n_qubits));
        }
        if self.n_layers == 0 {
            return Err(Error::config("qfm.n_layers", "must be >= 1"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.n_layers * (self.topology.pairs(self.n_qubits).len() + self.n_qubits)
    }
}

/// Per layer: `Rx(x_q)` on every qubit, trainable `ZZ` on each coupled pair,
/// trainable `Ry` on every qubit; then a closing `Rx(x_q)` layer.
pub fn build_qfm(spec: &QfmSpec) -> Result<ParamCircuit> {
    spec.validate()?;
    let n = spec.n_qubits;
    let pairs = spec.topology.pairs(n);
    let mut c = ParamCircuit::new(n, n, spec.n_params());
    let mut slot = 0;
    for _ in 0..spec.n_layers {
        for q in 0..n {
            c.push_rotation(GateKind::Rx, vec![q], Angle::data(q))?;
        }
        let zz = |c: &mut ParamCircuit, slot: &mut usize| -> Result<()> {
            for &(a, b) in &pairs {
                c.push_rotation(GateKind::Zz, vec![a, b], Angle::param(*slot))?;
                *slot += 1;
            }
            Ok(())
        };
        let ry = |c: &mut ParamCircuit, slot: &mut usize| -> Result<()> {
            for q in 0..n {
                c.push_rotation(GateKind::Ry, vec![q], Angle::param(*slot))?;
                *slot += 1;
            }
            Ok(())
        };
        match spec.order {
            QfmLayerOrder::ZzThenRy => {
                zz(&mut c, &mut slot)?;
                ry(&mut c, &mut slot)?;
            }
            QfmLayerOrder::RyThenZz => {
                ry(&mut c, &mut slot)?;
                zz(&mut c, &mut slot)?;
            }
        }
    }
    for q in 0..n {
        c.push_rotation(GateKind::Rx, vec![q], Angle::data(q))?;
    }
    debug_assert_eq!(slot, c.n_params());
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QffnSpec {
    pub n_qubits: usize,
    pub n_layers: usize,
    #[serde(default = "ring")]
    pub topology: Topology,
}

fn ring() -> Topology {
    Topology::Ring
}

impl QffnSpec {
    pub fn new(n_qubits: usize, n_layers: usize) -> Self {
        QffnSpec {
            n_qubits,
            n_layers,
            topology: Topology::Ring,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > crate::simcore::MAX_QUBITS {
            return Err(Error::Size(self.n_qubits));
        }
        if self.n_layers == 0 {
            return Err(Error::config("qffn.n_layers", "must be >= 1"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        3 * self.n_qubits * self.n_layers
    }
}

/// Per layer: `Rz Ry Rz` on every qubit (slots `3q`, `3q+1`, `3q+2` in time
/// order), then a CNOT entangler over the topology's pairs.
pub fn build_qffn(spec: &QffnSpec) -> Result<ParamCircuit> {
    spec.validate()?;
    let n = spec.n_qubits;
    let mut c = ParamCircuit::new(n, 0, spec.n_params());
    let mut slot = 0;
    for _ in 0..spec.n_layers {
        for q in 0..n {
            for kind in [GateKind::Rz, GateKind::Ry, GateKind::Rz] {
                c.push_rotation(kind, vec![q], Angle::param(slot))?;
                slot += 1;
            }
        }
        for (a, b) in spec.topology.pairs(n) {
            c.push_gate(GateOp::cnot(a, b))?;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;

    #[test]
    fn qfm_four_qubit_counts() {
        let c = build_qfm(&QfmSpec::new(4, 1)).unwrap();
        assert_eq!(c.n_params(), 7);
        assert_eq!(c.n_data(), 4);
        assert_eq!(c.count(GateKind::Rx), 8);
        assert_eq!(c.count(GateKind::Zz), 3);
        assert_eq!(c.count(GateKind::Ry), 4);
    }

    #[test]
    fn closed_form_counts_over_grid() {
        for n in 1..=8 {
            for l in 1..=3 {
                let qfm = build_qfm(&QfmSpec::new(n, l)).unwrap();
                assert_eq!(qfm.n_params(), l * (2 * n - 1));
                assert_eq!(qfm.count(GateKind::Rx), (l + 1) * n);
                assert_eq!(qfm.count(GateKind::Zz), l * (n - 1));
                assert_eq!(qfm.count(GateKind::Ry), l * n);
                let qffn = build_qffn(&QffnSpec::new(n, l)).unwrap();
                assert_eq!(qffn.n_params(), 3 * n * l);
                let cnots = if n >= 3 { n } else { n - 1 };
                assert_eq!(qffn.count(GateKind::Cnot), l * cnots);
            }
        }
    }

    #[test]
    fn qfm_single_qubit_examples() {
        let c = build_qfm(&QfmSpec::new(1, 1)).unwrap();
        let zero = Statevector::zero(1).unwrap();
        let out = c.bind_and_run(&[0.0], &[0.0], &zero).unwrap();
        assert!((out.amplitudes()[0] - C::new(1.0, 0.0)).norm() < 1e-15);
        let out = c.bind_and_run(&[PI], &[0.0], &zero).unwrap();
        assert!((out.amplitudes()[0] - C::new(-1.0, 0.0)).norm() < 1e-15);
        assert!(out.amplitudes()[1].norm() < 1e-15);
    }

    #[test]
    fn qffn_examples() {
        let spec = QffnSpec::new(4, 1);
        let c = build_qffn(&spec).unwrap();
        assert_eq!(c.n_params(), 12);
        let zero = Statevector::zero(4).unwrap();
        let out = c.bind_and_run(&[], &[0.0; 12], &zero).unwrap();
        assert!((out.amplitudes()[0] - C::new(1.0, 0.0)).norm() < 1e-15);

        // Ry(pi/2) on qubit 0 makes |+>, the CNOT then yields a Bell pair.
        let c = build_qffn(&QffnSpec::new(2, 1)).unwrap();
        let mut p = vec![0.0; 6];
        p[1] = FRAC_PI_2;
        let out = c.bind_and_run(&[], &p, &Statevector::zero(2).unwrap()).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let a = out.amplitudes();
        assert!((a[0] - C::new(r, 0.0)).norm() < 1e-15);
        assert!((a[3] - C::new(r, 0.0)).norm() < 1e-15);
        assert!(a[1].norm() < 1e-15 && a[2].norm() < 1e-15);
    }

    #[test]
    fn binding_errors() {
        let c = build_qfm(&QfmSpec::new(2, 1)).unwrap();
        assert!(matches!(c.bind(&[0.0], &[0.0; 3]), Err(Error::Binding(_))));
        assert!(matches!(c.bind(&[0.0; 2], &[0.0; 2]), Err(Error::Binding(_))));
        assert!(build_qfm(&QfmSpec::new(2, 0)).is_err());
    }

    #[test]
    fn empty_and_single_gate_circuits() {
        let empty = ParamCircuit::new(1, 0, 0);
        let s = Statevector::basis(1, 1).unwrap();
        assert_eq!(empty.bind_and_run(&[], &[], &s).unwrap(), s);
        let mut h = ParamCircuit::new(1, 0, 0);
        h.push_gate(GateOp::h(0)).unwrap();
        let out = h.bind_and_run(&[], &[], &Statevector::zero(1).unwrap()).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.amplitudes()[1] - C::new(r, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ring_topology_option_on_qfm() {
        let mut spec = QfmSpec::new(4, 2);
        spec.topology = Topology::Ring;
        let c = build_qfm(&spec).unwrap();
        assert_eq!(c.n_params(), 2 * 8);
        spec.order = QfmLayerOrder::RyThenZz;
        assert_eq!(build_qfm(&spec).unwrap().n_params(), 16);
    }

    #[test]
    fn dump_lists_every_gate() {
        let c = build_qfm(&QfmSpec::new(2, 1)).unwrap();
        let text = c.to_string();
        assert_eq!(text.lines().count(), 1 + c.ops().len());
        assert!(text.contains("Zz 0,1 theta[0]"));
    }

    #[test]
    fn backprop_matches_finite_difference() {
        let spec = QfmSpec::new(3, 2);
        let c = build_qfm(&spec).unwrap();
        let data = [0.3, 1.2, 2.5];
        let params: Vec<f64> = (0..c.n_params()).map(|i| 0.1 * i as f64 - 0.4).collect();
        // L = Re <target | out> for a fixed target.
        let target: Vec<C> = (0..8).map(|i| C::new((i as f64).cos(), (i as f64 * 0.7).sin())).collect();
        let zero = Statevector::zero(3).unwrap();
        let loss = |p: &[f64]| {
            let out = c.bind_and_run(&data, p, &zero).unwrap();
            dot(&target, out.amplitudes()).re
        };
        let out = c.bind_and_run(&data, &params, &zero).unwrap();
        let mut grad = vec![0.0; c.n_params()];
        c.backprop(&data, &params, &out, target.clone(), &mut grad).unwrap();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += 1e-6;
            let up = loss(&p);
            p[i] -= 2e-6;
            let down = loss(&p);
            let fd = (up - down) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-8, "slot {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
