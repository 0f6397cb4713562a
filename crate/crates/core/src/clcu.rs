//! Complex linear combination of unitaries.
//!
//! The circuit route prepares the ancilla register with amplitudes
//! `sqrt|a_j| e^{i arg(a_j)/2}`, applies each `U_j` controlled on ancilla
//! basis state `|j>`, un-prepares with the *transpose* of the preparation and
//! post-selects the ancillas on `|0...0>`. The amplitude of `|0>|.>` is then
//! `sum_j a_j U_j |psi> / sum_j |a_j|`, phases included. The analytic route
//! forms the same normalised combination directly.
//!
//! Also here: the diagonal block encoding that writes a vector of complex
//! weights into the computational-basis amplitudes of a post-selected
//! register.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{Circuit, ComplexScalar as C, GateOp, Statevector};

/// Below this relative norm a linear combination counts as fully cancelled.
const CANCELLATION_TOLERANCE: f64 = 1e-12;

/// Magnitude/phase form, phase in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagPhase {
    pub magnitude: f64,
    pub phase: f64,
}

impl MagPhase {
    pub fn to_complex(self) -> C {
        C::from_polar(self.magnitude, self.phase)
    }
}

pub fn to_mag_phase(c: C) -> MagPhase {
    let magnitude = c.norm();
    if magnitude < 1e-15 {
        return MagPhase {
            magnitude,
            phase: 0.0,
        };
    }
    let mut phase = c.im.atan2(c.re);
    if phase <= -PI {
        phase += 2.0 * PI;
    }
    MagPhase { magnitude, phase }
}

/// Coefficients of one combination, zero-padded to a power of two.
#[derive(Clone, Debug, PartialEq)]
pub struct ClcuCoefficients {
    alphas: Vec<C>,
    omega: f64,
    n_ancilla: usize,
}

impl ClcuCoefficients {
    pub fn new(alphas: Vec<C>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::DegenerateCoefficients("no coefficients".into()));
        }
        if alphas.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::DegenerateCoefficients("non-finite coefficient".into()));
        }
        let l1: f64 = alphas.iter().map(|a| a.norm()).sum();
        if l1 == 0.0 {
            return Err(Error::DegenerateCoefficients("all coefficients are zero".into()));
        }
        let n_ancilla = alphas.len().next_power_of_two().trailing_zeros() as usize;
        Ok(ClcuCoefficients {
            alphas,
            omega: l1.sqrt(),
            n_ancilla,
        })
    }

    pub fn alphas(&self) -> &[C] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Normaliser of the prepared ancilla state: `Omega^2 = sum_j |a_j|`.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn n_ancilla(&self) -> usize {
        self.n_ancilla
    }

    /// Target ancilla amplitudes `sqrt|a_j| e^{i theta_j / 2} / Omega`, padded.
    pub fn prep_amplitudes(&self) -> Vec<C> {
        let mut amps = vec![C::new(0.0, 0.0); 1 << self.n_ancilla];
        for (slot, a) in amps.iter_mut().zip(&self.alphas) {
            let mp = to_mag_phase(*a);
            *slot = C::from_polar(mp.magnitude.sqrt() / self.omega, mp.phase / 2.0);
        }
        amps
    }
}

fn weight(amps: &[C], lo: usize, hi: usize) -> f64 {
    amps[lo..hi].iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// Wraps `g` so it fires when qubits `0..level` read `prefix` (MSB first).
fn push_prefix_controlled(c: &mut Circuit, level: usize, prefix: usize, g: GateOp) -> Result<()> {
    let zeros: Vec<usize> = (0..level).filter(|&q| prefix >> (level - 1 - q) & 1 == 0).collect();
    for &q in &zeros {
        c.push(GateOp::x(q))?;
    }
    c.push(g.controlled_by(0..level))?;
    for &q in &zeros {
        c.push(GateOp::x(q))?;
    }
    Ok(())
}

/// Binary-tree state preparation: `U|0> = amps / |amps|` exactly, global
/// phase included. Uses `H`/`Ry` splits for magnitudes and `Rz` for phases,
/// each uniformly controlled on the higher-order qubits.
pub fn state_preparation(amps: &[C]) -> Result<Circuit> {
    let len = amps.len();
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::Shape(format!("state preparation needs 2^m >= 2 amplitudes, got {len}")));
    }
    let total = weight(amps, 0, len);
    if !(total > 0.0) {
        return Err(Error::DegenerateCoefficients("zero target state".into()));
    }
    let m = len.trailing_zeros() as usize;
    let mut c = Circuit::new(m);

    // leaf phases, averaged up the tree
    let mut phases: Vec<Vec<f64>> = vec![amps
        .iter()
        .map(|a| if a.norm() / total < 1e-15 { 0.0 } else { a.im.atan2(a.re) })
        .collect()];
    for _ in 0..m {
        let last = phases.last().expect("non-empty");
        let up = last.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        phases.push(up);
    }
    phases.reverse(); // phases[l] has 2^l entries
    let root = phases[0][0];
    if root != 0.0 {
        c.push(GateOp::rz(0, -2.0 * root))?;
    }

    for level in 0..m {
        let span = len >> level;
        for prefix in 0..(1usize << level) {
            let lo = prefix * span;
            let w0 = weight(amps, lo, lo + span / 2);
            let w1 = weight(amps, lo + span / 2, lo + span);
            if w1 == 0.0 {
                continue;
            }
            let theta = 2.0 * w1.atan2(w0);
            let g = if (theta - FRAC_PI_2).abs() < 1e-14 {
                GateOp::h(level)
            } else {
                GateOp::ry(level, theta)
            };
            push_prefix_controlled(&mut c, level, prefix, g)?;
        }
    }
    for level in 0..m {
        for prefix in 0..(1usize << level) {
            let lambda = phases[level + 1][2 * prefix + 1] - phases[level + 1][2 * prefix];
            if lambda != 0.0 {
                push_prefix_controlled(&mut c, level, prefix, GateOp::rz(level, lambda))?;
            }
        }
    }
    Ok(c)
}

/// `U_PREP` on `n_ancilla` qubits. For a single coefficient the register is
/// empty and the returned circuit has zero width.
pub fn build_prep(c: &ClcuCoefficients) -> Result<Circuit> {
    if c.n_ancilla == 0 {
        return Ok(Circuit::new(0));
    }
    state_preparation(&c.prep_amplitudes())
}

/// Gate-level transpose of [`build_prep`].
pub fn build_prep_transpose(c: &ClcuCoefficients) -> Result<Circuit> {
    Ok(build_prep(c)?.transpose())
}

/// Full PREP, SELECT, PREP^T circuit: ancillas on qubits `0..a`, working
/// register on `a..a+n`.
pub fn clcu_circuit(c: &ClcuCoefficients, us: &[Circuit]) -> Result<Circuit> {
    if us.len() != c.len() {
        return Err(Error::Shape(format!("{} coefficients but {} unitaries", c.len(), us.len())));
    }
    let n = us[0].n_qubits();
    if us.iter().any(|u| u.n_qubits() != n) {
        return Err(Error::Shape("unitaries act on different widths".into()));
    }
    let a = c.n_ancilla;
    let total = a + n;
    let mut circ = Circuit::new(total);
    circ.extend(&build_prep(c)?.embed(0, total)?)?;
    for (j, u) in us.iter().enumerate() {
        if c.alphas[j] == C::new(0.0, 0.0) {
            continue;
        }
        let zeros: Vec<usize> = (0..a).filter(|&q| j >> (a - 1 - q) & 1 == 0).collect();
        for &q in &zeros {
            circ.push(GateOp::x(q))?;
        }
        let controls: Vec<usize> = (0..a).collect();
        circ.extend(&u.embed(a, total)?.controlled_by(&controls)?)?;
        for &q in &zeros {
            circ.push(GateOp::x(q))?;
        }
    }
    circ.extend(&build_prep_transpose(c)?.embed(0, total)?)?;
    Ok(circ)
}

/// Runs the circuit route and post-selects the ancillas on `|0...0>`.
/// Returns the normalised working-register state and the success probability.
pub fn clcu_apply_circuit(c: &ClcuCoefficients, us: &[Circuit], psi: &Statevector) -> Result<(Statevector, f64)> {
    if us.iter().any(|u| u.n_qubits() != psi.n_qubits()) {
        return Err(Error::Shape("unitary width differs from input state".into()));
    }
    if c.n_ancilla == 0 {
        let phase = c.alphas[0] / c.alphas[0].norm();
        let out = us
            .first()
            .ok_or_else(|| Error::Shape("no unitaries".into()))?
            .apply(psi)?
            .with_phase(phase);
        if us.len() != 1 {
            return Err(Error::Shape(format!("1 coefficient but {} unitaries", us.len())));
        }
        return Ok((out, 1.0));
    }
    let circ = clcu_circuit(c, us)?;
    let input = Statevector::zero(c.n_ancilla)?.tensor(psi)?;
    let out = circ.apply(&input)?;
    let ancillas: Vec<usize> = (0..c.n_ancilla).collect();
    let zeros = vec![false; c.n_ancilla];
    match out.post_select(&ancillas, &zeros) {
        Ok(r) => Ok(r),
        Err(Error::PostSelection(p)) => Err(Error::DestructiveCancellation(p.sqrt())),
        Err(e) => Err(e),
    }
}

/// `sum_j a_j |s_j>` together with its norm, before normalisation.
pub(crate) fn combine_raw(alphas: &[C], states: &[Statevector]) -> Result<(Vec<C>, f64)> {
    if alphas.len() != states.len() || states.is_empty() {
        return Err(Error::Shape(format!("{} coefficients but {} states", alphas.len(), states.len())));
    }
    let dim = states[0].dim();
    if states.iter().any(|s| s.dim() != dim) {
        return Err(Error::Shape("states of different widths".into()));
    }
    let mut acc = vec![C::new(0.0, 0.0); dim];
    for (a, s) in alphas.iter().zip(states) {
        for (x, y) in acc.iter_mut().zip(s.amplitudes()) {
            *x += a * y;
        }
    }
    let norm = acc.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let scale: f64 = alphas.iter().map(|a| a.norm()).sum();
    if !(norm > CANCELLATION_TOLERANCE * scale) {
        return Err(Error::DestructiveCancellation(norm));
    }
    Ok((acc, norm))
}

/// Normalised `sum_j a_j |s_j>`.
pub fn clcu_apply_analytic(alphas: &[C], states: &[Statevector]) -> Result<Statevector> {
    let (acc, norm) = combine_raw(alphas, states)?;
    let inv = 1.0 / norm;
    Statevector::from_amplitudes(acc.into_iter().map(|z| z * inv).collect())
}

/// Rotation angles of the diagonal block encoding, after scaling the weights
/// by `1 / scale` with `scale = max_j |w_j|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEncoding {
    /// `theta_j = arccos(|w_j| / scale)`, in `[0, pi/2]`.
    pub thetas: Vec<f64>,
    /// Chosen so that `cos(theta_j) e^{-i phi_j} = w_j / scale`.
    pub phis: Vec<f64>,
    pub n_work: usize,
    pub scale: f64,
}

impl WeightEncoding {
    pub fn new(weights: &[C]) -> Result<Self> {
        let len = weights.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Shape(format!("block encoding needs 2^m >= 2 weights, got {len}")));
        }
        let scale = weights.iter().map(|w| w.norm()).fold(0.0, f64::max);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::DegenerateCoefficients("all weights are zero".into()));
        }
        let mut thetas = Vec::with_capacity(len);
        let mut phis = Vec::with_capacity(len);
        for w in weights {
            let mp = to_mag_phase(*w);
            thetas.push((mp.magnitude / scale).clamp(0.0, 1.0).acos());
            phis.push(-mp.phase);
        }
        Ok(WeightEncoding {
            thetas,
            phis,
            n_work: len.trailing_zeros() as usize,
            scale,
        })
    }

    /// Flag qubit 0, work qubits `1..=m`: `H` on the work register, then for
    /// each basis index `j` a `C^m Ry(2 theta_j)` and `C^m Rz(2 phi_j)` on the
    /// flag.
    pub fn circuit(&self) -> Result<Circuit> {
        let m = self.n_work;
        let mut c = Circuit::new(m + 1);
        for q in 1..=m {
            c.push(GateOp::h(q))?;
        }
        let controls: Vec<usize> = (1..=m).collect();
        for j in 0..self.thetas.len() {
            let zeros: Vec<usize> = (0..m).filter(|&b| j >> (m - 1 - b) & 1 == 0).map(|b| b + 1).collect();
            let (theta, phi) = (self.thetas[j], self.phis[j]);
            if theta == 0.0 && phi == 0.0 {
                continue;
            }
            for &q in &zeros {
                c.push(GateOp::x(q))?;
            }
            if theta != 0.0 {
                c.push(GateOp::ry(0, 2.0 * theta).controlled_by(controls.iter().copied()))?;
            }
            if phi != 0.0 {
                c.push(GateOp::rz(0, 2.0 * phi).controlled_by(controls.iter().copied()))?;
            }
            for &q in &zeros {
                c.push(GateOp::x(q))?;
            }
        }
        Ok(c)
    }
}

/// Post-selected output of the weight block encoding.
#[derive(Clone, Debug)]
pub struct BlockEncoded {
    /// Amplitudes proportional to the input weights.
    pub state: Statevector,
    pub success_prob: f64,
    pub encoding: WeightEncoding,
}

impl BlockEncoded {
    /// The encoded weights at their original scale.
    pub fn weights(&self) -> Vec<C> {
        let factor = self.encoding.scale * ((1usize << self.encoding.n_work) as f64 * self.success_prob).sqrt();
        self.state.amplitudes().iter().map(|a| a * factor).collect()
    }
}

pub fn block_encode_weights(weights: &[C]) -> Result<BlockEncoded> {
    let encoding = WeightEncoding::new(weights)?;
    let circ = encoding.circuit()?;
    let out = circ.prepare()?;
    let (state, success_prob) = out.post_select(&[0], &[false])?;
    Ok(BlockEncoded {
        state,
        success_prob,
        encoding,
    })
}
