//! The attention model: per-patch Q/K/V states, complex attention, trainable
//! combinations, the feed-forward circuit and Pauli readout.
//!
//! [`Model::forward`] runs the analytic pipeline and keeps what
//! [`Model::backward`] needs for reverse-mode gradients. [`Model::forward_circuit`]
//! realises every stage as a simulated circuit (Hadamard tests, block-encoded
//! weights, CLCU combinations) and should agree with the analytic path to
//! rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::circuitlib::{build_qffn, build_qfm, ParamCircuit, QffnSpec, QfmSpec};
use crate::clcu::{block_encode_weights, clcu_apply_circuit, combine_raw, state_preparation, ClcuCoefficients};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::similarity::{hadamard_test, weight_from_readout, EncodedState, SimilarityKernel};
use crate::simcore::{dot, Circuit, ComplexScalar as C, Pauli, PauliString, Statevector};

/// Per-head features: `features[patch][qubit]`, every value in `[0, pi]`.
pub type HeadFeatures = Vec<Vec<f64>>;

const ZERO: C = C::new(0.0, 0.0);
const PROB_FLOOR: f64 = 1e-12;
const READOUT_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub patch_grid: (usize, usize),
    pub qfm: QfmSpec,
}

impl HeadSpec {
    pub fn n_patches(&self) -> usize {
        self.patch_grid.0 * self.patch_grid.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub heads: Vec<HeadSpec>,
    pub qffn: QffnSpec,
    pub n_classes: usize,
}

impl ModelSpec {
    pub fn n_qubits(&self) -> usize {
        self.qffn.n_qubits
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::config("heads", "at least one head is required"));
        }
        self.qffn.validate()?;
        for (h, head) in self.heads.iter().enumerate() {
            head.qfm.validate()?;
            if head.qfm.n_qubits != self.qffn.n_qubits {
                return Err(Error::config(
                    format!("heads[{h}].qfm.n_qubits"),
                    "must equal the feed-forward width",
                ));
            }
            if head.n_patches() == 0 {
                return Err(Error::config(format!("heads[{h}].patch_grid"), "empty grid"));
            }
        }
        measurement_ops(self.n_classes, self.n_qubits())?;
        Ok(())
    }

    /// Length of [`ModelParams::flatten`].
    pub fn n_params(&self) -> usize {
        let heads: usize = self.heads.iter().map(|h| 3 * h.qfm.n_params() + 2 * h.n_patches()).sum();
        heads + 2 * self.heads.len() + self.qffn.n_params()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub qfm_q: Vec<f64>,
    pub qfm_k: Vec<f64>,
    pub qfm_v: Vec<f64>,
    pub beta: Vec<C>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub heads: Vec<HeadParams>,
    pub gamma: Vec<C>,
    pub qffn: Vec<f64>,
}

fn complex_init<R: Rng + ?Sized>(rng: &mut R, noise: &Normal<f64>, n: usize) -> Vec<C> {
    (0..n)
        .map(|_| C::new(1.0 + noise.sample(rng), noise.sample(rng)))
        .collect()
}

fn angle_init<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.1..=0.1)).collect()
}

impl ModelParams {
    /// Rotation angles uniform in `[-0.1, 0.1]`; complex weights
    /// `1 + 0i` plus independent `N(0, 0.1)` noise on both parts.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Self {
        let noise = Normal::new(0.0, 0.1).expect("valid sigma");
        let heads = spec
            .heads
            .iter()
            .map(|h| {
                let p = h.qfm.n_params();
                HeadParams {
                    qfm_q: angle_init(rng, p),
                    qfm_k: angle_init(rng, p),
                    qfm_v: angle_init(rng, p),
                    beta: complex_init(rng, &noise, h.n_patches()),
                }
            })
            .collect();
        let gamma = complex_init(rng, &noise, spec.heads.len());
        let qffn = angle_init(rng, spec.qffn.n_params());
        ModelParams { heads, gamma, qffn }
    }

    /// Per head `[qfm_q, qfm_k, qfm_v, (Re, Im) of beta]`, then `(Re, Im)` of
    /// gamma, then the feed-forward angles.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for h in &self.heads {
            out.extend(&h.qfm_q);
            out.extend(&h.qfm_k);
            out.extend(&h.qfm_v);
            out.extend(h.beta.iter().flat_map(|b| [b.re, b.im]));
        }
        out.extend(self.gamma.iter().flat_map(|g| [g.re, g.im]));
        out.extend(&self.qffn);
        out
    }

    pub fn unflatten(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.n_params() {
            return Err(Error::Shape(format!("{} parameters, spec needs {}", flat.len(), spec.n_params())));
        }
        let mut it = flat.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let pairs = |v: Vec<f64>| -> Vec<C> { v.chunks(2).map(|p| C::new(p[0], p[1])).collect() };
        let mut heads = Vec::with_capacity(spec.heads.len());
        for h in &spec.heads {
            let p = h.qfm.n_params();
            heads.push(HeadParams {
                qfm_q: take(p),
                qfm_k: take(p),
                qfm_v: take(p),
                beta: pairs(take(2 * h.n_patches())),
            });
        }
        let gamma = pairs(take(2 * spec.heads.len()));
        let qffn = take(spec.qffn.n_params());
        Ok(ModelParams { heads, gamma, qffn })
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.heads.len() != spec.heads.len() || self.gamma.len() != spec.heads.len() {
            return Err(Error::Shape("head count differs from spec".into()));
        }
        for (hp, hs) in self.heads.iter().zip(&spec.heads) {
            let p = hs.qfm.n_params();
            if hp.qfm_q.len() != p || hp.qfm_k.len() != p || hp.qfm_v.len() != p {
                return Err(Error::Shape("feature-map parameter length".into()));
            }
            if hp.beta.len() != hs.n_patches() {
                return Err(Error::Shape("beta length differs from patch count".into()));
            }
            if hp.beta.iter().all(|b| *b == ZERO) {
                return Err(Error::DegenerateCoefficients("beta all zero".into()));
            }
        }
        if self.gamma.iter().all(|g| *g == ZERO) {
            return Err(Error::DegenerateCoefficients("gamma all zero".into()));
        }
        if self.qffn.len() != spec.qffn.n_params() {
            return Err(Error::Shape("feed-forward parameter length".into()));
        }
        Ok(())
    }
}

/// `entries[k][j] = <K_j|Q_k>` (after the kernel's mapping).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    entries: Vec<Vec<C>>,
}

impl AttentionMatrix {
    pub fn new(entries: Vec<Vec<C>>) -> Result<Self> {
        let m = entries.len();
        if entries.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("attention matrix must be square".into()));
        }
        Ok(AttentionMatrix { entries })
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, k: usize, j: usize) -> C {
        self.entries[k][j]
    }

    pub fn row(&self, k: usize) -> &[C] {
        &self.entries[k]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub probs: Vec<f64>,
}

impl ClassDistribution {
    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

fn check_features(features: &[f64], n: usize) -> Result<()> {
    if features.len() != n {
        return Err(Error::Shape(format!("feature vector of length {}, expected {n}", features.len())));
    }
    if let Some(x) = features.iter().find(|x| !(0.0..=PI).contains(*x)) {
        return Err(Error::InputDomain(format!("feature {x} outside [0, pi]")));
    }
    Ok(())
}

/// Binds and runs the feature map for each patch.
pub fn encode_patches_with_circuits(
    features: &[Vec<f64>],
    role_params: &[f64],
    qfm: &ParamCircuit,
) -> Result<Vec<EncodedState>> {
    features
        .iter()
        .map(|x| {
            check_features(x, qfm.n_qubits())?;
            EncodedState::from_circuit(qfm.bind(x, role_params)?)
        })
        .collect()
}

pub fn encode_patches(features: &[Vec<f64>], role_params: &[f64], qfm: &ParamCircuit) -> Result<Vec<Statevector>> {
    Ok(encode_patches_with_circuits(features, role_params, qfm)?
        .into_iter()
        .map(|e| e.state)
        .collect())
}

/// Plain `<K_j|Q_k>` grid.
pub fn attention_matrix(qs: &[Statevector], ks: &[Statevector]) -> Result<AttentionMatrix> {
    if qs.len() != ks.len() {
        return Err(Error::Shape(format!("{} queries, {} keys", qs.len(), ks.len())));
    }
    let entries = qs
        .iter()
        .map(|q| ks.iter().map(|k| k.inner(q)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    AttentionMatrix::new(entries)
}

/// Attention grid through a similarity kernel.
pub fn attention_matrix_with(
    kernel: &dyn SimilarityKernel,
    qs: &[EncodedState],
    ks: &[EncodedState],
) -> Result<AttentionMatrix> {
    if qs.len() != ks.len() {
        return Err(Error::Shape(format!("{} queries, {} keys", qs.len(), ks.len())));
    }
    let entries = qs
        .iter()
        .map(|q| ks.iter().map(|k| kernel.weight(k, q)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    AttentionMatrix::new(entries)
}

fn normalize(raw: Vec<C>, norm: f64) -> Result<Statevector> {
    let inv = 1.0 / norm;
    Statevector::from_amplitudes(raw.into_iter().map(|z| z * inv).collect())
}

/// `|S_k> ~ sum_j A[k][j] |V_j>`, normalised.
pub fn weighted_values(a: &AttentionMatrix, vs: &[Statevector]) -> Result<Vec<Statevector>> {
    (0..a.size())
        .map(|k| {
            let (raw, norm) = combine_raw(a.row(k), vs)?;
            normalize(raw, norm)
        })
        .collect()
}

/// `|G> ~ sum_k beta_k |S_k>`.
pub fn attention_output(a: &AttentionMatrix, vs: &[Statevector], beta: &[C]) -> Result<Statevector> {
    let ss = weighted_values(a, vs)?;
    let (raw, norm) = combine_raw(beta, &ss)?;
    normalize(raw, norm)
}

/// `|F> ~ sum_h gamma_h |G_h>`.
pub fn multi_head_combine(gs: &[Statevector], gamma: &[C]) -> Result<Statevector> {
    let (raw, norm) = combine_raw(gamma, gs)?;
    normalize(raw, norm)
}

/// Readout observables: two classes use `+Z0` and `-Z0`; three use
/// `X0, Y0, Z0`; four use `X0X1, Y0X1, Z0X1, X0Y1`.
pub fn measurement_ops(n_classes: usize, n_qubits: usize) -> Result<Vec<PauliString>> {
    use Pauli::*;
    let need = if n_classes == 4 { 2 } else { 1 };
    if n_qubits < need {
        return Err(Error::config("n_qubits", format!("{n_classes} classes need at least {need} qubits")));
    }
    let s = |terms: &[(usize, Pauli)], sign| PauliString::sparse(n_qubits, terms, sign);
    match n_classes {
        2 => Ok(vec![s(&[(0, Z)], 1)?, s(&[(0, Z)], -1)?]),
        3 => Ok(vec![s(&[(0, X)], 1)?, s(&[(0, Y)], 1)?, s(&[(0, Z)], 1)?]),
        4 => Ok(vec![
            s(&[(0, X), (1, X)], 1)?,
            s(&[(0, Y), (1, X)], 1)?,
            s(&[(0, Z), (1, X)], 1)?,
            s(&[(0, X), (1, Y)], 1)?,
        ]),
        c => Err(Error::config("classes", format!("{c} classes unsupported, expected 2, 3 or 4"))),
    }
}

fn probs_from_expectations(e: &[f64]) -> Result<ClassDistribution> {
    let denom: f64 = e.iter().map(|x| 1.0 + x).sum();
    if !(denom > READOUT_FLOOR) {
        return Err(Error::DegenerateReadout(denom));
    }
    Ok(ClassDistribution {
        probs: e.iter().map(|x| ((1.0 + x) / denom).clamp(0.0, 1.0)).collect(),
    })
}

/// `y_k = (1 + <M_k>) / sum_j (1 + <M_j>)`.
pub fn class_probs(psi: &Statevector, ms: &[PauliString]) -> Result<ClassDistribution> {
    let e = ms.iter().map(|m| psi.expectation(m)).collect::<Result<Vec<_>>>()?;
    probs_from_expectations(&e)
}

pub fn cross_entropy(yhat: &ClassDistribution, label: usize) -> f64 {
    -yhat.probs[label].max(PROB_FLOOR).ln()
}

struct HeadCache {
    q: Vec<EncodedState>,
    k: Vec<EncodedState>,
    v: Vec<EncodedState>,
    overlaps: Vec<Vec<C>>,
    weights: AttentionMatrix,
    s: Vec<Statevector>,
    s_norm: Vec<f64>,
    g: Statevector,
    g_norm: f64,
}

/// Intermediate values of one analytic forward pass.
pub struct Forward {
    heads: Vec<HeadCache>,
    f: Statevector,
    f_norm: f64,
    psi: Statevector,
    expectations: Vec<f64>,
    pub distribution: ClassDistribution,
}

impl Forward {
    pub fn output_state(&self) -> &Statevector {
        &self.psi
    }

    pub fn head_state(&self, h: usize) -> &Statevector {
        &self.heads[h].g
    }

    pub fn attention(&self, h: usize) -> &AttentionMatrix {
        &self.heads[h].weights
    }
}

/// Compiled circuits plus the attention kernel.
pub struct Model {
    spec: ModelSpec,
    qfms: Vec<ParamCircuit>,
    qffn: ParamCircuit,
    readout: Vec<PauliString>,
    kernel: Arc<dyn SimilarityKernel>,
}

fn axpy(acc: &mut [C], a: C, x: &[C]) {
    for (y, v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

/// Adjoint of `x -> x / |x|` at `X = x / |x|`.
fn unnormalize_adjoint(unit: &Statevector, norm: f64, adj: &[C]) -> Vec<C> {
    let r = dot(unit.amplitudes(), adj).re;
    unit.amplitudes()
        .iter()
        .zip(adj)
        .map(|(u, a)| (a - u * r) / norm)
        .collect()
}

impl Model {
    pub fn new(spec: ModelSpec, kernel: Arc<dyn SimilarityKernel>) -> Result<Self> {
        spec.validate()?;
        let qfms = spec.heads.iter().map(|h| build_qfm(&h.qfm)).collect::<Result<Vec<_>>>()?;
        let qffn = build_qffn(&spec.qffn)?;
        let readout = measurement_ops(spec.n_classes, spec.n_qubits())?;
        Ok(Model {
            spec,
            qfms,
            qffn,
            readout,
            kernel,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kernel(&self) -> &dyn SimilarityKernel {
        self.kernel.as_ref()
    }

    pub fn readout(&self) -> &[PauliString] {
        &self.readout
    }

    pub fn qffn_circuit(&self) -> &ParamCircuit {
        &self.qffn
    }

    pub fn qfm_circuit(&self, head: usize) -> &ParamCircuit {
        &self.qfms[head]
    }

    fn check_sample(&self, sample: &[HeadFeatures]) -> Result<()> {
        if sample.len() != self.spec.heads.len() {
            return Err(Error::Shape(format!(
                "sample has {} heads, model has {}",
                sample.len(),
                self.spec.heads.len()
            )));
        }
        for (h, (x, hs)) in sample.iter().zip(&self.spec.heads).enumerate() {
            if x.len() != hs.n_patches() {
                return Err(Error::Shape(format!(
                    "head {h}: {} patches, expected {}",
                    x.len(),
                    hs.n_patches()
                )));
            }
        }
        Ok(())
    }

    fn head_forward(&self, h: usize, x: &HeadFeatures, p: &HeadParams) -> Result<HeadCache> {
        let qfm = &self.qfms[h];
        let q = encode_patches_with_circuits(x, &p.qfm_q, qfm)?;
        let k = encode_patches_with_circuits(x, &p.qfm_k, qfm)?;
        let v = encode_patches_with_circuits(x, &p.qfm_v, qfm)?;
        let overlaps: Vec<Vec<C>> = q
            .iter()
            .map(|qk| k.iter().map(|kj| dot(kj.state.amplitudes(), qk.state.amplitudes())).collect())
            .collect();
        let weights = attention_matrix_with(self.kernel.as_ref(), &q, &k)?;
        let vs: Vec<Statevector> = v.iter().map(|e| e.state.clone()).collect();
        let mut s = Vec::with_capacity(q.len());
        let mut s_norm = Vec::with_capacity(q.len());
        for row in 0..weights.size() {
            let (raw, norm) = combine_raw(weights.row(row), &vs)?;
            s.push(normalize(raw, norm)?);
            s_norm.push(norm);
        }
        let (raw, g_norm) = combine_raw(&p.beta, &s)?;
        let g = normalize(raw, g_norm)?;
        Ok(HeadCache {
            q,
            k,
            v,
            overlaps,
            weights,
            s,
            s_norm,
            g,
            g_norm,
        })
    }

    /// Analytic forward pass for one sample.
    pub fn forward(&self, sample: &[HeadFeatures], params: &ModelParams) -> Result<Forward> {
        self.check_sample(sample)?;
        params.validate(&self.spec)?;
        let heads = sample
            .iter()
            .zip(&params.heads)
            .enumerate()
            .map(|(h, (x, p))| self.head_forward(h, x, p))
            .collect::<Result<Vec<_>>>()?;
        let gs: Vec<Statevector> = heads.iter().map(|c| c.g.clone()).collect();
        let (raw, f_norm) = combine_raw(&params.gamma, &gs)?;
        let f = normalize(raw, f_norm)?;
        let psi = self.qffn.bind_and_run(&[], &params.qffn, &f)?;
        let expectations = self
            .readout
            .iter()
            .map(|m| psi.expectation(m))
            .collect::<Result<Vec<_>>>()?;
        let distribution = probs_from_expectations(&expectations)?;
        Ok(Forward {
            heads,
            f,
            f_norm,
            psi,
            expectations,
            distribution,
        })
    }

    pub fn predict(&self, sample: &[HeadFeatures], params: &ModelParams) -> Result<ClassDistribution> {
        Ok(self.forward(sample, params)?.distribution)
    }

    /// Cross-entropy and its gradient, aligned with [`ModelParams::flatten`].
    pub fn backward(&self, sample: &[HeadFeatures], params: &ModelParams, fwd: &Forward, label: usize) -> Result<(f64, Vec<f64>)> {
        let n_classes = self.readout.len();
        if label >= n_classes {
            return Err(Error::Shape(format!("label {label} for {n_classes} classes")));
        }
        let loss = cross_entropy(&fwd.distribution, label);
        let mut grad = vec![0.0; self.spec.n_params()];
        if fwd.distribution.probs[label] < PROB_FLOOR {
            return Ok((loss, grad));
        }

        // readout: dL/de_c = -[c = l] / (1 + e_l) + 1 / D
        let denom: f64 = fwd.expectations.iter().map(|e| 1.0 + e).sum();
        let dim = fwd.psi.dim();
        let mut psi_adj = vec![ZERO; dim];
        for (c, m) in self.readout.iter().enumerate() {
            let mut de = 1.0 / denom;
            if c == label {
                de -= 1.0 / (1.0 + fwd.expectations[c]);
            }
            let pm = m.apply_to(fwd.psi.amplitudes());
            axpy(&mut psi_adj, C::new(2.0 * de, 0.0), &pm);
        }

        let qffn_off = grad.len() - self.spec.qffn.n_params();
        let f_adj = self
            .qffn
            .backprop(&[], &params.qffn, &fwd.psi, psi_adj, &mut grad[qffn_off..])?;
        let f_raw_adj = unnormalize_adjoint(&fwd.f, fwd.f_norm, &f_adj);

        let gamma_off = qffn_off - 2 * self.spec.heads.len();
        let mut offset = 0;
        for (h, (cache, hp)) in fwd.heads.iter().zip(&params.heads).enumerate() {
            let z = dot(&f_raw_adj, cache.g.amplitudes());
            grad[gamma_off + 2 * h] += z.re;
            grad[gamma_off + 2 * h + 1] -= z.im;
            let g_adj: Vec<C> = f_raw_adj.iter().map(|a| params.gamma[h].conj() * a).collect();
            let n_head = 3 * self.spec.heads[h].qfm.n_params() + 2 * self.spec.heads[h].n_patches();
            self.head_backward(h, &sample[h], hp, cache, &g_adj, &mut grad[offset..offset + n_head])?;
            offset += n_head;
        }
        Ok((loss, grad))
    }

    fn head_backward(&self, h: usize, x: &HeadFeatures, p: &HeadParams, c: &HeadCache, g_adj: &[C], grad: &mut [f64]) -> Result<()> {
        let m = c.s.len();
        let dim = c.g.dim();
        let np = self.spec.heads[h].qfm.n_params();
        let g_raw_adj = unnormalize_adjoint(&c.g, c.g_norm, g_adj);

        let beta_off = 3 * np;
        let mut q_adj = vec![vec![ZERO; dim]; m];
        let mut k_adj = vec![vec![ZERO; dim]; m];
        let mut v_adj = vec![vec![ZERO; dim]; m];
        for kq in 0..m {
            let z = dot(&g_raw_adj, c.s[kq].amplitudes());
            grad[beta_off + 2 * kq] += z.re;
            grad[beta_off + 2 * kq + 1] -= z.im;
            let s_adj: Vec<C> = g_raw_adj.iter().map(|a| p.beta[kq].conj() * a).collect();
            let s_raw_adj = unnormalize_adjoint(&c.s[kq], c.s_norm[kq], &s_adj);
            for j in 0..m {
                let w = c.weights.get(kq, j);
                axpy(&mut v_adj[j], w.conj(), &s_raw_adj);
                let z = dot(&s_raw_adj, c.v[j].state.amplitudes());
                let cw = self.kernel.pullback(c.overlaps[kq][j], z);
                axpy(&mut q_adj[kq], cw.conj(), c.k[j].state.amplitudes());
                axpy(&mut k_adj[j], cw, c.q[kq].state.amplitudes());
            }
        }
        let qfm = &self.qfms[h];
        let (gq, rest) = grad.split_at_mut(np);
        let (gk, rest) = rest.split_at_mut(np);
        let gv = &mut rest[..np];
        for j in 0..m {
            qfm.backprop(&x[j], &p.qfm_q, &c.q[j].state, std::mem::take(&mut q_adj[j]), gq)?;
            qfm.backprop(&x[j], &p.qfm_k, &c.k[j].state, std::mem::take(&mut k_adj[j]), gk)?;
            qfm.backprop(&x[j], &p.qfm_v, &c.v[j].state, std::mem::take(&mut v_adj[j]), gv)?;
        }
        Ok(())
    }

    /// Loss only, via the analytic forward.
    pub fn loss(&self, sample: &[HeadFeatures], params: &ModelParams, label: usize) -> Result<f64> {
        Ok(cross_entropy(&self.forward(sample, params)?.distribution, label))
    }

    /// Every stage realised as a circuit: Hadamard tests for the attention
    /// grid, block-encoded weights read back as CLCU coefficients, CLCU
    /// circuits for `S_k`, `G` and the head combination.
    pub fn forward_circuit(&self, sample: &[HeadFeatures], params: &ModelParams) -> Result<ClassDistribution> {
        self.check_sample(sample)?;
        params.validate(&self.spec)?;
        let n = self.spec.n_qubits();
        let zero = Statevector::zero(n)?;
        let mut gs = Vec::with_capacity(sample.len());
        for (h, (x, p)) in sample.iter().zip(&params.heads).enumerate() {
            let qfm = &self.qfms[h];
            let q = encode_patches_with_circuits(x, &p.qfm_q, qfm)?;
            let k = encode_patches_with_circuits(x, &p.qfm_k, qfm)?;
            let v = encode_patches_with_circuits(x, &p.qfm_v, qfm)?;
            let v_circuits: Vec<Circuit> = v.iter().map(|e| e.circuit.clone()).collect();
            let mut s_circuits = Vec::with_capacity(q.len());
            for qk in &q {
                let mut row = Vec::with_capacity(k.len());
                for kj in &k {
                    let w = weight_from_readout(&hadamard_test(&qk.circuit, &kj.circuit)?)?.value();
                    row.push(self.kernel.map_overlap(w));
                }
                let coeffs = ClcuCoefficients::new(block_encoded_row(&row)?)?;
                let (s, _) = clcu_apply_circuit(&coeffs, &v_circuits, &zero)?;
                s_circuits.push(prep_circuit(&s)?);
            }
            let (g, _) = clcu_apply_circuit(&ClcuCoefficients::new(p.beta.clone())?, &s_circuits, &zero)?;
            gs.push(prep_circuit(&g)?);
        }
        let (f, _) = clcu_apply_circuit(&ClcuCoefficients::new(params.gamma.clone())?, &gs, &zero)?;
        let psi = self.qffn.bind_and_run(&[], &params.qffn, &f)?;
        class_probs(&psi, &self.readout)
    }
}

/// Routes a weight row through the diagonal block encoding and reads it back
/// from the post-selected amplitudes (scale is irrelevant downstream).
fn block_encoded_row(row: &[C]) -> Result<Vec<C>> {
    let len = row.len().next_power_of_two().max(2);
    let mut padded = row.to_vec();
    padded.resize(len, ZERO);
    let b = block_encode_weights(&padded)?;
    Ok(b.state.amplitudes()[..row.len()].to_vec())
}

/// Circuit preparing `s` from `|0>`.
fn prep_circuit(s: &Statevector) -> Result<Circuit> {
    state_preparation(s.amplitudes())
}

/// How a forward pass is evaluated, selected by name.
pub trait ForwardPath: Send + Sync {
    fn name(&self) -> &'static str;
    fn distribution(&self, model: &Model, sample: &[HeadFeatures], params: &ModelParams) -> Result<ClassDistribution>;
}

pub struct AnalyticPath;

impl ForwardPath for AnalyticPath {
    fn name(&self) -> &'static str {
        "analytic"
    }

    fn distribution(&self, model: &Model, sample: &[HeadFeatures], params: &ModelParams) -> Result<ClassDistribution> {
        model.predict(sample, params)
    }
}

pub struct CircuitPath;

impl ForwardPath for CircuitPath {
    fn name(&self) -> &'static str {
        "circuit"
    }

    fn distribution(&self, model: &Model, sample: &[HeadFeatures], params: &ModelParams) -> Result<ClassDistribution> {
        model.forward_circuit(sample, params)
    }
}

pub fn forward_paths() -> Registry<dyn ForwardPath> {
    let mut r: Registry<dyn ForwardPath> = Registry::new("forward_path");
    r.register("analytic", Arc::new(AnalyticPath));
    r.register("circuit", Arc::new(CircuitPath));
    r
}
