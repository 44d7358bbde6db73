use super::kernels::{bce_with_logit, sigmoid, Scalar};
use super::net::{self, HeadOut};
use super::{bytes_to, check_shape, frame_bytes, Architecture, PolicyError, PolicyOutput, PolicyParams};
use crate::demo::{Dataset, DemoStep};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub lambda_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_t: 1.0,
            lambda_r: 0.5,
            lambda_g: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let w = [self.lambda_t, self.lambda_r, self.lambda_g];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(PolicyError::InvalidConfig(
                "loss weights must be nonnegative and not all zero".into(),
            ));
        }
        Ok(())
    }
}

/// Weighted total plus the unweighted translation, rotation and grasp terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub t: f64,
    pub r: f64,
    pub g: f64,
}

impl LossTerms {
    fn add(&mut self, o: &LossTerms) {
        self.total += o.total;
        self.t += o.t;
        self.r += o.r;
        self.g += o.g;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.t *= s;
        self.r *= s;
        self.g *= s;
    }

    fn is_finite(&self) -> bool {
        self.total.is_finite() && self.t.is_finite() && self.r.is_finite() && self.g.is_finite()
    }
}

/// One supervised step: packed 5-channel image and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    /// channels-last bytes: R, G, B, object, hand
    pub pixels: Vec<u8>,
    pub action_t: [f64; 3],
    pub action_r: [f64; 3],
    pub grasp: u8,
}

impl Sample {
    pub fn from_step(step: &DemoStep) -> Self {
        Sample {
            height: step.frame.height,
            width: step.frame.width,
            pixels: frame_bytes(&step.frame),
            action_t: step.action.translation.into(),
            action_r: step.action.rotation.into(),
            grasp: step.grasp_label,
        }
    }

    /// All steps of all episodes, in storage order.
    pub fn from_dataset(ds: &Dataset) -> Vec<Sample> {
        ds.step_refs().into_par_iter().map(Sample::from_step).collect()
    }
}

/// Squared-error and logistic terms for one prediction.
pub fn loss(
    pred: &PolicyOutput,
    target_t: &[f64; 3],
    target_r: &[f64; 3],
    grasp: u8,
    w: &LossWeights,
) -> Result<LossTerms, PolicyError> {
    let sq = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum::<f64>();
    let t = sq(&pred.delta_t, target_t);
    let r = sq(&pred.delta_r, target_r);
    let g = bce_with_logit(pred.grasp_logit, grasp as f64);
    let terms = LossTerms {
        total: w.lambda_t * t + w.lambda_r * r + w.lambda_g * g,
        t,
        r,
        g,
    };
    if terms.is_finite() {
        Ok(terms)
    } else {
        Err(PolicyError::NonFiniteLoss)
    }
}

fn sample_terms<T: Scalar>(
    arch: &Architecture,
    layout: &super::Layout,
    p: &[T],
    s: &Sample,
    w: &LossWeights,
    grad: Option<&mut [T]>,
) -> (LossTerms, f64) {
    let x: Vec<T> = bytes_to(&s.pixels);
    let tr = net::forward(layout, p, &x);
    let (tm, rm) = (T::of(arch.t_max), T::of(arch.r_max));
    let (t, r, logit) = net::squash(&tr.raw, tm, rm);
    let y = T::of(s.grasp as f64);
    let mut et = [T::zero(); 3];
    let mut er = [T::zero(); 3];
    for i in 0..3 {
        et[i] = t[i] - T::of(s.action_t[i]);
        er[i] = r[i] - T::of(s.action_r[i]);
    }
    let lt: T = et.iter().map(|&e| e * e).sum();
    let lr: T = er.iter().map(|&e| e * e).sum();
    let lg = bce_with_logit(logit, y);
    let (wt, wr, wg) = (T::of(w.lambda_t), T::of(w.lambda_r), T::of(w.lambda_g));
    if let Some(grad) = grad {
        let two = T::of(2.0);
        let gt = et.map(|e| two * wt * e);
        let gr = er.map(|e| two * wr * e);
        let dt = net::squash3_vjp(&tr.raw[0..3], tm, &gt);
        let dr = net::squash3_vjp(&tr.raw[3..6], rm, &gr);
        let d_raw: HeadOut<T> = [dt[0], dt[1], dt[2], dr[0], dr[1], dr[2], wg * (sigmoid(logit) - y)];
        net::backward(layout, p, &tr, &d_raw, grad);
    }
    let f = |v: T| v.to_f64().unwrap();
    let terms = LossTerms {
        total: f(wt * lt + wr * lr + wg * lg),
        t: f(lt),
        r: f(lr),
        g: f(lg),
    };
    (terms, f(logit))
}

fn check_batch(arch: &Architecture, n_params: usize, batch: &[&Sample]) -> Result<(), PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let total = arch.layout().total;
    if n_params != total {
        return Err(PolicyError::ShapeMismatch(format!("{n_params} parameters, layout needs {total}")));
    }
    for s in batch {
        check_shape(arch, s.height, s.width, s.pixels.len())?;
    }
    Ok(())
}

/// Mean loss and its exact gradient over `batch`. Per-sample gradients may be
/// computed concurrently; they are summed in batch order.
pub fn batch_gradient<T: Scalar>(
    arch: &Architecture,
    params: &[T],
    batch: &[&Sample],
    w: &LossWeights,
) -> Result<(LossTerms, Vec<T>), PolicyError> {
    check_batch(arch, params.len(), batch)?;
    let layout = arch.layout();
    let parts: Vec<(LossTerms, Vec<T>)> = batch
        .par_iter()
        .map(|s| {
            let mut g = vec![T::zero(); params.len()];
            let (terms, _) = sample_terms(arch, &layout, params, s, w, Some(&mut g));
            (terms, g)
        })
        .collect();
    let mut terms = LossTerms::default();
    let mut grad = vec![T::zero(); params.len()];
    for (t, g) in &parts {
        terms.add(t);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += *b;
        }
    }
    let n = batch.len() as f64;
    terms.scale(1.0 / n);
    let inv = T::one() / T::of(n);
    grad.iter_mut().for_each(|v| *v = *v * inv);
    Ok((terms, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            // losses are O(1e-3) at the start, so steps need a large rate
            learning_rate: 0.5,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(PolicyError::InvalidConfig(
                "train: batch_size ≥ 1, learning_rate > 0 and momentum in [0, 1) required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub t: f64,
    pub r: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttotal\tL_t\tL_r\tL_g\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", e.epoch, e.total, e.t, e.r, e.g);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_tsv()).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Minibatch SGD with momentum. Initialization and per-epoch shuffles draw
/// from one generator seeded by `cfg.seed`; logged losses are epoch means of
/// the minibatch losses seen during that epoch.
pub fn train(
    arch: Architecture,
    samples: &[Sample],
    cfg: &TrainConfig,
    w: &LossWeights,
) -> Result<(PolicyParams, TrainingLog), PolicyError> {
    arch.validate()?;
    cfg.validate()?;
    w.validate()?;
    if samples.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    check_batch(&arch, arch.layout().total, &refs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = PolicyParams::init(arch, &mut rng);
    let mut velocity = vec![0.0f32; params.len()];
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let (lr, mom) = (cfg.learning_rate as f32, cfg.momentum as f32);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (mut terms, grad) = batch_gradient(&arch, &params.values, &batch, w)?;
            terms.scale(batch.len() as f64);
            sum.add(&terms);
            for ((p, v), g) in params.values.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = mom * *v + *g;
                *p -= lr * *v;
            }
        }
        sum.scale(1.0 / samples.len() as f64);
        if !sum.is_finite() || !params.is_finite() {
            return Err(PolicyError::DivergedLoss { epoch });
        }
        log::debug!(
            "epoch {epoch}: total {:.6e} t {:.3e} r {:.3e} g {:.3e}",
            sum.total,
            sum.t,
            sum.r,
            sum.g
        );
        log.epochs.push(EpochStats {
            epoch,
            total: sum.total,
            t: sum.t,
            r: sum.r,
            g: sum.g,
        });
    }
    Ok((params, log))
}

/// Loss terms and grasp accuracy (decision at probability 0.5) at fixed
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetMetrics {
    pub mean: LossTerms,
    pub grasp_accuracy: f64,
    pub n: usize,
}

pub fn evaluate_samples(
    params: &PolicyParams,
    samples: &[Sample],
    w: &LossWeights,
) -> Result<DatasetMetrics, PolicyError> {
    let refs: Vec<&Sample> = samples.iter().collect();
    check_batch(&params.arch, params.len(), &refs)?;
    let layout = params.arch.layout();
    let per: Vec<(LossTerms, bool)> = samples
        .par_iter()
        .map(|s| {
            let (terms, logit) = sample_terms(&params.arch, &layout, &params.values, s, w, None);
            (terms, (logit >= 0.0) == (s.grasp == 1))
        })
        .collect();
    let mut mean = LossTerms::default();
    let mut hits = 0;
    for (t, c) in &per {
        mean.add(t);
        hits += *c as usize;
    }
    mean.scale(1.0 / samples.len() as f64);
    Ok(DatasetMetrics {
        mean,
        grasp_accuracy: hits as f64 / samples.len() as f64,
        n: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::forward;
    use crate::policy::PolicyInput;
    use rand::Rng;

    fn tiny_arch() -> Architecture {
        Architecture {
            height: 16,
            width: 12,
            conv_channels: [3, 4, 5],
            hidden: 6,
            pool_grid: 2,
            ..Default::default()
        }
    }

    fn random_samples(arch: &Architecture, n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Sample {
                height: arch.height,
                width: arch.width,
                pixels: (0..arch.height * arch.width * 5).map(|_| rng.gen()).collect(),
                action_t: [rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(0.0..0.02)],
                action_r: [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)],
                grasp: (i % 3 == 0) as u8,
            })
            .collect()
    }

    fn oracle_loss(pred: &PolicyOutput, t: &[f64; 3], r: &[f64; 3], y: u8, w: &LossWeights) -> f64 {
        let mut lt = 0.0;
        let mut lr = 0.0;
        for i in 0..3 {
            lt += (pred.delta_t[i] - t[i]).powi(2);
            lr += (pred.delta_r[i] - r[i]).powi(2);
        }
        let p = 1.0 / (1.0 + (-pred.grasp_logit).exp());
        let bce = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
        w.lambda_t * lt + w.lambda_r * lr + w.lambda_g * bce
    }

    fn out(t: [f64; 3], r: [f64; 3], logit: f64) -> PolicyOutput {
        PolicyOutput {
            delta_t: t,
            delta_r: r,
            grasp_logit: logit,
            grasp_prob: 1.0 / (1.0 + (-logit).exp()),
        }
    }

    #[test]
    fn loss_hand_values() {
        let w = LossWeights::default();
        let l = loss(&out([0.01, 0.0, 0.02], [0.1, 0.0, 0.0], 20.0), &[0.01, 0.0, 0.02], &[0.1, 0.0, 0.0], 1, &w)
            .unwrap();
        assert!(l.total <= w.lambda_g * 2.1e-9);
        let only_t = LossWeights {
            lambda_t: 1.0,
            lambda_r: 0.0,
            lambda_g: 0.0,
        };
        let l = loss(&out([0.01, 0.0, 0.0], [0.0; 3], 0.0), &[0.0; 3], &[0.0; 3], 0, &only_t).unwrap();
        assert!((l.total - 1e-4).abs() < 1e-18);
        assert!(matches!(
            loss(&out([f64::NAN, 0.0, 0.0], [0.0; 3], 0.0), &[0.0; 3], &[0.0; 3], 0, &only_t),
            Err(PolicyError::NonFiniteLoss)
        ));
    }

    #[test]
    fn loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let w = LossWeights {
                lambda_t: rng.gen_range(0.0..2.0),
                lambda_r: rng.gen_range(0.0..2.0),
                lambda_g: rng.gen_range(0.0..2.0),
            };
            let t = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
            let r = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
            let pred = out(
                [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)],
                [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
                rng.gen_range(-8.0..8.0),
            );
            let y = rng.gen_range(0..2u8);
            let got = loss(&pred, &t, &r, y, &w).unwrap().total;
            let want = oracle_loss(&pred, &t, &r, y, &w);
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let arch = tiny_arch();
        let p = PolicyParams::init(arch, &mut ChaCha8Rng::seed_from_u64(1));
        let samples = random_samples(&arch, 4, 2);
        let refs: Vec<&Sample> = samples.iter().collect();
        let w = LossWeights {
            lambda_t: 0.0,
            lambda_r: 0.0,
            lambda_g: 0.0,
        };
        let (_, g) = batch_gradient(&arch, &p.values, &refs, &w).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let arch = tiny_arch();
        let p = PolicyParams::init(arch, &mut ChaCha8Rng::seed_from_u64(5));
        let p64: Vec<f64> = p.values.iter().map(|&v| v as f64).collect();
        let samples = random_samples(&arch, 5, 6);
        let once: Vec<&Sample> = samples.iter().collect();
        let twice: Vec<&Sample> = samples.iter().chain(samples.iter()).collect();
        let w = LossWeights::default();
        let (la, ga) = batch_gradient(&arch, &p64, &once, &w).unwrap();
        let (lb, gb) = batch_gradient(&arch, &p64, &twice, &w).unwrap();
        assert!((la.total - lb.total).abs() < 1e-12);
        for (a, b) in ga.iter().zip(&gb) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = tiny_arch();
        let w = LossWeights::default();
        let samples = random_samples(&arch, 3, 9);
        let refs: Vec<&Sample> = samples.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p: Vec<f64> = PolicyParams::init(arch, &mut rng).values.iter().map(|&v| v as f64 * 2.0).collect();
        let (_, g) = batch_gradient(&arch, &p, &refs, &w).unwrap();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for _ in 0..60 {
            let i = rng.gen_range(0..p.len());
            let mut pp = p.clone();
            pp[i] += h;
            let (lp, _) = batch_gradient(&arch, &pp, &refs, &w).unwrap();
            pp[i] -= 2.0 * h;
            let (lm, _) = batch_gradient(&arch, &pp, &refs, &w).unwrap();
            let fd = (lp.total - lm.total) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn squash_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for scale in [1e-3, 0.03, 0.2, 3.0] {
            let z: [f64; 3] = [rng.gen_range(-1.0..1.0) * scale, rng.gen_range(-1.0..1.0) * scale, rng.gen_range(-1.0..1.0) * scale];
            let g = [0.3, -0.7, 0.2];
            let an = net::squash3_vjp(&z, 0.05, &g);
            for j in 0..3 {
                let h = 1e-6;
                let (mut zp, mut zm) = (z, z);
                zp[j] += h;
                zm[j] -= h;
                let f = |v: &[f64; 3]| {
                    let s = net::squash3(v, 0.05);
                    s[0] * g[0] + s[1] * g[1] + s[2] * g[2]
                };
                let fd = (f(&zp) - f(&zm)) / (2.0 * h);
                assert!((fd - an[j]).abs() < 1e-9, "scale {scale}: {fd} vs {}", an[j]);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let arch = tiny_arch();
        let samples = random_samples(&arch, 12, 1);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 0.05,
            ..Default::default()
        };
        let (a, log_a) = train(arch, &samples, &cfg, &LossWeights::default()).unwrap();
        let (b, log_b) = train(arch, &samples, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.epochs.len(), 30);
        assert!(log_a.epochs.last().unwrap().total < log_a.epochs[0].total);
        let zero = TrainConfig { epochs: 0, ..cfg };
        let (p0, log0) = train(arch, &samples, &zero, &LossWeights::default()).unwrap();
        assert!(log0.epochs.is_empty());
        let init = PolicyParams::init(arch, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        assert_eq!(p0, init);
        assert!(matches!(
            train(arch, &[], &cfg, &LossWeights::default()),
            Err(PolicyError::EmptyDataset)
        ));
    }

    #[test]
    fn evaluation_ignores_order_and_matches_forward() {
        let arch = tiny_arch();
        let p = PolicyParams::init(arch, &mut ChaCha8Rng::seed_from_u64(8));
        let samples = random_samples(&arch, 6, 3);
        let w = LossWeights::default();
        let a = evaluate_samples(&p, &samples, &w).unwrap();
        let mut rev = samples.clone();
        rev.reverse();
        let b = evaluate_samples(&p, &rev, &w).unwrap();
        assert!((a.mean.total - b.mean.total).abs() < 1e-12);
        let s = &samples[0];
        let input = PolicyInput {
            height: s.height,
            width: s.width,
            data: bytes_to(&s.pixels),
        };
        let o = forward(&p, &input).unwrap();
        let direct = loss(&o, &s.action_t, &s.action_r, s.grasp, &w).unwrap();
        let single = evaluate_samples(&p, &samples[..1], &w).unwrap();
        assert!((direct.total - single.mean.total).abs() < 1e-6);
    }
}
