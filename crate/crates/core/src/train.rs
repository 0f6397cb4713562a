//! Gradients, Adam and the epoch loop.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PreparedSample;
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::registry::Registry;

/// Mean loss and gradient over a batch, gradient aligned with
/// [`ModelParams::flatten`].
pub trait GradientEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn loss_and_grad(&self, model: &Model, batch: &[&PreparedSample], params: &ModelParams) -> Result<(f64, Vec<f64>)>;
}

fn check_batch(batch: &[&PreparedSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

fn tag(index: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Sample {
        index,
        source: Box::new(e),
    }
}

/// Reverse-mode accumulation through the analytic forward.
pub struct Adjoint;

impl GradientEstimator for Adjoint {
    fn name(&self) -> &'static str {
        "adjoint"
    }

    fn loss_and_grad(&self, model: &Model, batch: &[&PreparedSample], params: &ModelParams) -> Result<(f64, Vec<f64>)> {
        check_batch(batch)?;
        let mut total = 0.0;
        let mut grad = vec![0.0; model.spec().n_params()];
        for (i, s) in batch.iter().enumerate() {
            let fwd = model.forward(&s.heads, params).map_err(tag(i))?;
            let (l, g) = model.backward(&s.heads, params, &fwd, s.label).map_err(tag(i))?;
            total += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grad))
    }
}

/// Central differences, one coordinate at a time. Slow; for validation.
pub struct FiniteDifference {
    pub step: f64,
}

impl Default for FiniteDifference {
    fn default() -> Self {
        FiniteDifference { step: 1e-5 }
    }
}

pub fn batch_loss(model: &Model, batch: &[&PreparedSample], params: &ModelParams) -> Result<f64> {
    check_batch(batch)?;
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        total += model.loss(&s.heads, params, s.label).map_err(tag(i))?;
    }
    Ok(total / batch.len() as f64)
}

impl GradientEstimator for FiniteDifference {
    fn name(&self) -> &'static str {
        "finite_difference"
    }

    fn loss_and_grad(&self, model: &Model, batch: &[&PreparedSample], params: &ModelParams) -> Result<(f64, Vec<f64>)> {
        let spec = model.spec();
        let loss = batch_loss(model, batch, params)?;
        let flat = params.flatten();
        let mut grad = Vec::with_capacity(flat.len());
        let mut probe = flat.clone();
        for i in 0..flat.len() {
            probe[i] = flat[i] + self.step;
            let up = batch_loss(model, batch, &ModelParams::unflatten(spec, &probe)?)?;
            probe[i] = flat[i] - self.step;
            let down = batch_loss(model, batch, &ModelParams::unflatten(spec, &probe)?)?;
            probe[i] = flat[i];
            grad.push((up - down) / (2.0 * self.step));
        }
        Ok((loss, grad))
    }
}

pub fn gradient_estimators() -> Registry<dyn GradientEstimator> {
    let mut r: Registry<dyn GradientEstimator> = Registry::new("gradient");
    r.register("adjoint", Arc::new(Adjoint));
    r.register("finite_difference", Arc::new(FiniteDifference::default()));
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            config,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut OptimizerState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grad.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "optimizer sized for {}, got {} params and {} grads",
            state.m.len(),
            params.len(),
            grad.len()
        )));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub gradient: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            gradient: "adjoint".into(),
        }
    }
}

/// Metrics after one epoch; epoch 0 evaluates the initial parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochMetrics>,
}

/// Mean loss and accuracy over a full set.
pub fn evaluate(model: &Model, samples: &[PreparedSample], params: &ModelParams) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let d = model.predict(&s.heads, params).map_err(tag(i))?;
        loss += crate::model::cross_entropy(&d, s.label);
        correct += usize::from(d.argmax() == s.label);
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Seeded training run. The seed drives both initialisation and shuffling,
/// so a fixed `(seed, config, data)` reproduces the run exactly.
pub fn train_run(
    model: &Model,
    config: &TrainConfig,
    train: &[PreparedSample],
    test: &[PreparedSample],
    seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if config.batch_size == 0 {
        return Err(Error::config("batch_size", "must be >= 1"));
    }
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let estimator = gradient_estimators().get(&config.gradient)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = model.spec();
    let mut params = ModelParams::init(spec, &mut rng);
    let mut flat = params.flatten();
    let mut opt = OptimizerState::new(flat.len(), config.adam);

    let mut history = Vec::with_capacity(config.epochs + 1);
    let (train_loss, train_acc) = evaluate(model, train, &params)?;
    let (_, test_acc) = evaluate(model, test, &params)?;
    let first = EpochMetrics {
        epoch: 0,
        train_loss,
        train_acc,
        test_acc,
    };
    on_epoch(&first);
    history.push(first);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (_, grad) = estimator.loss_and_grad(model, &batch, &params).map_err(|e| match e {
                Error::Sample { index, source } => Error::Sample {
                    index: chunk[index],
                    source,
                },
                e => e,
            })?;
            adam_step(&mut opt, &mut flat, &grad)?;
            params = ModelParams::unflatten(spec, &flat)?;
        }
        let (train_loss, train_acc) = evaluate(model, train, &params)?;
        let (_, test_acc) = evaluate(model, test, &params)?;
        let m = EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            test_acc,
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::Rng;

    use super::*;
    use crate::circuitlib::{QffnSpec, QfmSpec};
    use crate::model::{HeadSpec, ModelSpec};
    use crate::similarity::ComplexOverlap;

    fn small_model() -> Model {
        let spec = ModelSpec {
            heads: vec![HeadSpec {
                patch_grid: (1, 2),
                qfm: QfmSpec::new(2, 1),
            }],
            qffn: QffnSpec::new(2, 1),
            n_classes: 2,
        };
        Model::new(spec, Arc::new(ComplexOverlap)).unwrap()
    }

    fn samples(n: usize, seed: u64) -> Vec<PreparedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| PreparedSample {
                heads: vec![(0..2).map(|_| vec![rng.random_range(0.0..PI), rng.random_range(0.0..PI)]).collect()],
                label: i % 2,
            })
            .collect()
    }

    #[test]
    fn adam_zero_grad_and_first_step() {
        let mut st = OptimizerState::new(2, AdamConfig::default());
        let mut p = vec![0.5, -0.5];
        adam_step(&mut st, &mut p, &[0.0, 0.0]).unwrap();
        assert_eq!((p.clone(), st.step), (vec![0.5, -0.5], 1));

        let mut st = OptimizerState::new(2, AdamConfig::default());
        adam_step(&mut st, &mut p, &[3.0, -1e-3]).unwrap();
        assert!((p[0] - (0.5 - 0.01)).abs() < 1e-8);
        assert!((p[1] - (-0.5 + 0.01)).abs() < 1e-5);
        assert!(adam_step(&mut st, &mut p, &[1.0]).is_err());
    }

    #[test]
    fn adjoint_matches_finite_difference_on_batch() {
        let model = small_model();
        let data = samples(4, 1);
        let batch: Vec<&PreparedSample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::init(model.spec(), &mut rng);
        let (la, ga) = Adjoint.loss_and_grad(&model, &batch, &params).unwrap();
        let (lf, gf) = FiniteDifference::default().loss_and_grad(&model, &batch, &params).unwrap();
        assert!((la - lf).abs() < 1e-14);
        for (a, f) in ga.iter().zip(&gf) {
            if f.abs() > 1e-6 {
                assert!(((a - f) / f).abs() < 1e-4, "{a} vs {f}");
            } else {
                assert!((a - f).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_zero_epochs_only_evaluates() {
        let model = small_model();
        let train = samples(8, 3);
        let test = samples(4, 4);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let a = train_run(&model, &cfg, &train, &test, 9, |_| {}).unwrap();
        let b = train_run(&model, &cfg, &train, &test, 9, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert_eq!(a.history.len(), 3);

        let zero = TrainConfig {
            epochs: 0,
            ..cfg
        };
        let z = train_run(&model, &zero, &train, &test, 9, |_| {}).unwrap();
        assert_eq!(z.history.len(), 1);
        assert_eq!(z.history[0], a.history[0]);
    }

    #[test]
    fn unknown_estimator_is_config_error() {
        let model = small_model();
        let cfg = TrainConfig {
            gradient: "parameter_shift".into(),
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_run(&model, &cfg, &samples(2, 0), &[], 0, |_| {}),
            Err(Error::Config { .. })
        ));
    }
}
