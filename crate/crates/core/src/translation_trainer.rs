//! Alternating critic / generator optimization of the depth-assisted
//! translation objective, checkpointing, and dataset translation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::checkpoint::{read_archive, write_archive, Archive};
use crate::data_model::{DepthTile, DomainRole, DomainSpec, ImageTile, SampleTriple};
use crate::error::{Error, Result};
use crate::ingestion::{load_samples, read_manifest, write_dataset, Split};
use crate::losses::{berhu_node, cycle_node, dccl_node, gen_adv_node, BerhuScope, LossReport, LossWeights};
use crate::networks::{build_drdg, resize_bilinear, Discriminator, Drdg, GeneratorBundle, NetworkConfig};
use crate::params::{stream_rng, Adam, AdamConfig, ParamGrads, ParamStore};
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "translation";
/// Domain name given to translated datasets.
pub const TRANSLATED_DOMAIN: &str = "source→target";

/// How the critic is kept approximately 1-Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Lipschitz {
    /// Penalize `(|grad D(x_hat)| - 1)^2` on interpolates of real and fake.
    GradientPenalty {
        weight: f32,
        /// Step of the finite-difference Hessian-vector product.
        fd_step: f32,
    },
    /// Clamp every critic weight to `[-clip, clip]` after each update.
    WeightClip { clip: f32 },
}

impl Default for Lipschitz {
    fn default() -> Self {
        Lipschitz::GradientPenalty { weight: 10.0, fd_step: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslationConfig {
    pub weights: LossWeights,
    pub steps: u64,
    pub batch_size: usize,
    pub critic_steps_per_gen_step: usize,
    pub critic_lr: f32,
    pub generator_lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub lipschitz: Lipschitz,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
    pub enable_dsl: bool,
    pub enable_dccl: bool,
    pub berhu_scope: BerhuScope,
    pub network: NetworkConfig,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        TranslationConfig {
            weights: LossWeights::default(),
            steps: 2000,
            batch_size: 1,
            critic_steps_per_gen_step: 1,
            critic_lr: 1e-4,
            generator_lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            lipschitz: Lipschitz::default(),
            seed: 0,
            checkpoint_every: 0,
            enable_dsl: true,
            enable_dccl: true,
            berhu_scope: BerhuScope::Batch,
            network: NetworkConfig::default(),
        }
    }
}

impl TranslationConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.network.validate()?;
        if self.critic_steps_per_gen_step < 1 {
            return Err(Error::Config("critic_steps_per_gen_step must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.critic_lr > 0.0 && self.generator_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        match self.lipschitz {
            Lipschitz::GradientPenalty { weight, fd_step } if !(weight >= 0.0 && fd_step > 0.0) => {
                Err(Error::Config("gradient penalty needs weight >= 0 and fd_step > 0".into()))
            }
            Lipschitz::WeightClip { clip } if !(clip > 0.0) => Err(Error::Config("weight clip must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Loss weights with ablated terms set to exactly zero.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            lambda_dsl: if self.enable_dsl { self.weights.lambda_dsl } else { 0.0 },
            lambda_dccl: if self.enable_dccl { self.weights.lambda_dccl } else { 0.0 },
            ..self.weights
        }
    }

    fn adam(&self, lr: f32) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// One logged training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossReport,
    /// Critic objectives (to minimize) including the Lipschitz penalty.
    pub critic_s: f64,
    pub critic_t: f64,
    /// Wasserstein estimates `mean D(real) - mean D(fake)`.
    pub wasserstein_s: f64,
    pub wasserstein_t: f64,
    pub penalty_s: f64,
    pub penalty_t: f64,
}

/// Everything needed to continue training. Batch order and interpolation
/// noise are pure functions of `(seed, step)`, so no generator state is kept.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: u64,
    pub model: Drdg,
    pub adam_g: Adam,
    pub adam_d: Adam,
    /// Exponential moving average of the generator loss terms.
    pub running: Option<LossReport>,
    pub source_domain: DomainSpec,
    pub target_domain: DomainSpec,
}

#[derive(Serialize, Deserialize)]
struct StateExtra {
    source_domain: DomainSpec,
    target_domain: DomainSpec,
    adam_g_step: u64,
    adam_d_step: u64,
    running: Option<LossReport>,
}

const RUNNING_DECAY: f64 = 0.98;

impl TrainState {
    pub fn new(cfg: &TranslationConfig, source: &DomainSpec, target: &DomainSpec) -> Result<Self> {
        cfg.validate()?;
        let model = build_drdg(source, target, &cfg.network, cfg.seed)?;
        let adam_g = Adam::new(cfg.adam(cfg.generator_lr), &model.store, model.generator_params());
        let adam_d = Adam::new(cfg.adam(cfg.critic_lr), &model.store, model.critic_params());
        Ok(TrainState {
            step: 0,
            model,
            adam_g,
            adam_d,
            running: None,
            source_domain: source.clone(),
            target_domain: target.clone(),
        })
    }

    pub fn to_archive(&self, cfg: &TranslationConfig) -> Result<Archive> {
        let config = serde_json::to_value(cfg).map_err(|e| Error::Schema(e.to_string()))?;
        let mut a = Archive::new(CHECKPOINT_KIND, self.step, cfg.seed, config);
        a.extra = serde_json::to_value(StateExtra {
            source_domain: self.source_domain.clone(),
            target_domain: self.target_domain.clone(),
            adam_g_step: self.adam_g.step,
            adam_d_step: self.adam_d.step,
            running: self.running,
        })
        .map_err(|e| Error::Schema(e.to_string()))?;
        a.push_store("param", &self.model.store);
        a.push_adam("adam_g", &self.adam_g, &self.model.store);
        a.push_adam("adam_d", &self.adam_d, &self.model.store);
        Ok(a)
    }

    pub fn save(&self, cfg: &TranslationConfig, path: &Path) -> Result<()> {
        write_archive(path, &self.to_archive(cfg)?)
    }
}

/// Load a translation checkpoint: its config and the full training state.
pub fn resume(path: &Path) -> Result<(TranslationConfig, TrainState)> {
    let a = read_archive(path)?;
    if a.kind != CHECKPOINT_KIND {
        return Err(Error::Schema(format!("{} holds a `{}` checkpoint, not `{CHECKPOINT_KIND}`", path.display(), a.kind)));
    }
    let cfg: TranslationConfig = serde_json::from_value(a.config.clone()).map_err(|e| Error::Schema(e.to_string()))?;
    let extra: StateExtra = serde_json::from_value(a.extra.clone()).map_err(|e| Error::Schema(e.to_string()))?;
    let mut model = build_drdg(&extra.source_domain, &extra.target_domain, &cfg.network, cfg.seed)?;
    a.load_store("param", &mut model.store)?;
    let adam_g = a.load_adam("adam_g", cfg.adam(cfg.generator_lr), extra.adam_g_step, &model.store, model.generator_params())?;
    let adam_d = a.load_adam("adam_d", cfg.adam(cfg.critic_lr), extra.adam_d_step, &model.store, model.critic_params())?;
    let state = TrainState {
        step: a.step,
        model,
        adam_g,
        adam_d,
        running: extra.running,
        source_domain: extra.source_domain,
        target_domain: extra.target_domain,
    };
    Ok((cfg, state))
}

/// Index into `len` items for the `pos`-th draw of an endless stream that is
/// reshuffled every epoch.
fn stream_index(seed: u64, stream: &str, len: usize, pos: u64) -> usize {
    let epoch = pos / len as u64;
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut stream_rng(seed, &format!("order.{stream}.{epoch}")));
    perm[(pos % len as u64) as usize]
}

/// In-memory training set of one domain.
struct Stream {
    name: &'static str,
    images: Vec<Tensor>,
    depths: Vec<Tensor>,
}

impl Stream {
    fn new(name: &'static str, samples: &[SampleTriple], domain: &DomainSpec) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data(format!("{name} dataset is empty")));
        }
        let mut images = Vec::with_capacity(samples.len());
        let mut depths = Vec::with_capacity(samples.len());
        for s in samples {
            if s.image.hw() != domain.tile_hw() {
                return Err(Error::shape(
                    format!("{name} tile {}", s.tile_id),
                    format!("{:?}", domain.tile_hw()),
                    format!("{:?}", s.image.hw()),
                ));
            }
            let depth = s
                .depth
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{name} tile `{}` has no depth", s.tile_id)))?;
            images.push(s.image.to_tensor());
            depths.push(depth.to_tensor());
        }
        Ok(Stream { name, images, depths })
    }

    /// Batch for draw number `draw` (each draw consumes `batch` positions).
    fn batch(&self, seed: u64, draw: u64, batch: usize) -> (Tensor, Tensor) {
        let idx: Vec<usize> = (0..batch as u64)
            .map(|b| stream_index(seed, self.name, self.images.len(), draw * batch as u64 + b))
            .collect();
        let x = Tensor::stack(&idx.iter().map(|&i| self.images[i].clone()).collect::<Vec<_>>());
        let z = Tensor::stack(&idx.iter().map(|&i| self.depths[i].clone()).collect::<Vec<_>>());
        (x, z)
    }
}

fn check_finite(term: &str, v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.into(), step })
    }
}

/// Outcome of one critic's objective on one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticTerms {
    pub loss: f64,
    pub wasserstein: f64,
    pub penalty: f64,
}

fn sum_of_sample_means(g: &mut Graph<'_>, scores: Var) -> Var {
    let n = g.value(scores).n() as f32;
    let m = g.mean(scores);
    g.weighted_sum(&[(m, n)])
}

/// Per-sample input gradients of `D` at `x` (the critic value of a sample is
/// the mean of its score map).
pub fn critic_input_gradient(d: &Discriminator, store: &ParamStore, x: &Tensor) -> Tensor {
    let mut g = Graph::new(store, &[]);
    let xv = g.input_with_grad(x.clone());
    let scores = d.forward(&mut g, xv);
    let root = sum_of_sample_means(&mut g, scores);
    let grads = g.backward(root);
    grads.wrt(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()))
}

/// `mean_i (|grad_x D(x_i)| - 1)^2`.
pub fn gradient_penalty(d: &Discriminator, store: &ParamStore, x: &Tensor) -> f64 {
    let gx = critic_input_gradient(d, store, x);
    (0..gx.n())
        .map(|i| {
            let norm = gx.sample(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            (norm - 1.0).powi(2)
        })
        .sum::<f64>()
        / gx.n() as f64
}

/// Critic objective and its parameter gradient, accumulated into `grads`.
///
/// The penalty gradient needs a Hessian-vector product of `D`; it is taken
/// as a central difference of parameter gradients along the direction
/// `v_i = 2 (|g_i| - 1) / (|g_i| N) g_i`, which is exact to second order.
pub fn critic_objective(
    d: &Discriminator,
    store: &ParamStore,
    real: &Tensor,
    fake: &Tensor,
    lipschitz: Lipschitz,
    eps: &[f32],
    grads: &mut ParamGrads,
) -> CriticTerms {
    let n = real.n();
    let trainable = d.params();
    let mut g = Graph::new(store, &trainable);
    let rv = g.input(real.clone());
    let fv = g.input(fake.clone());
    let rs = d.forward(&mut g, rv);
    let fs = d.forward(&mut g, fv);
    let rm = g.mean(rs);
    let fm = g.mean(fs);
    let mut terms = vec![(fm, 1.0f32), (rm, -1.0f32)];
    let mut penalty = 0.0;
    let mut penalty_weight = 0.0;
    if let Lipschitz::GradientPenalty { weight, fd_step } = lipschitz {
        let mut xhat = real.clone();
        for i in 0..n {
            let e = eps[i];
            for (h, &f) in xhat.sample_mut(i).iter_mut().zip(fake.sample(i)) {
                *h = e * *h + (1.0 - e) * f;
            }
        }
        let gx = critic_input_gradient(d, store, &xhat);
        let mut v = Tensor::zeros(gx.shape());
        for i in 0..n {
            let norm = gx.sample(i).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            penalty += (norm - 1.0).powi(2) / n as f64;
            if norm > 0.0 {
                let c = (2.0 * (norm - 1.0) / (norm * n as f64)) as f32;
                for (o, &gi) in v.sample_mut(i).iter_mut().zip(gx.sample(i)) {
                    *o = c * gi;
                }
            }
        }
        penalty_weight = weight as f64;
        let scale = v.max_abs();
        if weight > 0.0 && scale > 0.0 {
            let mut plus = xhat.clone();
            let mut minus = xhat;
            for ((p, m), &vi) in plus.data_mut().iter_mut().zip(minus.data_mut()).zip(v.data()) {
                let u = fd_step * vi / scale;
                *p += u;
                *m -= u;
            }
            let pv = g.input(plus);
            let mv = g.input(minus);
            let ps = d.forward(&mut g, pv);
            let ms = d.forward(&mut g, mv);
            let ps = sum_of_sample_means(&mut g, ps);
            let ms = sum_of_sample_means(&mut g, ms);
            let c = weight * scale / (2.0 * fd_step);
            terms.push((ps, c));
            terms.push((ms, -c));
        }
    }
    let root = g.weighted_sum(&terms);
    let wasserstein = g.scalar(rm) as f64 - g.scalar(fm) as f64;
    grads.merge(&g.backward(root).params, 1.0);
    CriticTerms {
        loss: -wasserstein + penalty_weight * penalty,
        wasserstein,
        penalty,
    }
}

/// Stage-1 trainer over in-memory source and target tiles.
pub struct TranslationTrainer {
    pub cfg: TranslationConfig,
    pub state: TrainState,
    source: Stream,
    target: Stream,
}

impl TranslationTrainer {
    pub fn new(cfg: TranslationConfig, source: &[SampleTriple], target: &[SampleTriple]) -> Result<Self> {
        let sd = source.first().ok_or_else(|| Error::Data("source dataset is empty".into()))?.domain.clone();
        let td = target.first().ok_or_else(|| Error::Data("target dataset is empty".into()))?.domain.clone();
        let state = TrainState::new(&cfg, &sd, &td)?;
        Self::with_state(cfg, state, source, target)
    }

    pub fn with_state(cfg: TranslationConfig, state: TrainState, source: &[SampleTriple], target: &[SampleTriple]) -> Result<Self> {
        cfg.validate()?;
        Ok(TranslationTrainer {
            source: Stream::new("source", source, &state.source_domain)?,
            target: Stream::new("target", target, &state.target_domain)?,
            cfg,
            state,
        })
    }

    fn draws_per_step(&self) -> u64 {
        self.cfg.critic_steps_per_gen_step as u64 + 1
    }

    fn batches(&self, draw: u64) -> (Tensor, Tensor, Tensor, Tensor) {
        let b = self.cfg.batch_size;
        let (xs, zs) = self.source.batch(self.cfg.seed, draw, b);
        let (xt, zt) = self.target.batch(self.cfg.seed, draw, b);
        (xs, zs, xt, zt)
    }

    fn critic_update(&mut self, xs: &Tensor, xt: &Tensor, tag: &str) -> Result<(CriticTerms, CriticTerms)> {
        let step = self.state.step + 1;
        let m = &self.state.model;
        let fake_t = m.g_st.translate(&m.store, xs)?;
        let fake_s = m.g_ts.translate(&m.store, xt)?;
        let mut rng = stream_rng(self.cfg.seed, &format!("penalty.{tag}"));
        let eps_t: Vec<f32> = (0..xt.n()).map(|_| rng.random::<f32>()).collect();
        let eps_s: Vec<f32> = (0..xs.n()).map(|_| rng.random::<f32>()).collect();
        let mut grads = ParamGrads::new(m.store.len());
        let t = critic_objective(&m.d_t, &m.store, xt, &fake_t, self.cfg.lipschitz, &eps_t, &mut grads);
        let s = critic_objective(&m.d_s, &m.store, xs, &fake_s, self.cfg.lipschitz, &eps_s, &mut grads);
        check_finite("critic_t", t.loss, step)?;
        check_finite("critic_s", s.loss, step)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite { term: "critic gradient".into(), step });
        }
        self.state.adam_d.update(&mut self.state.model.store, &grads);
        if let Lipschitz::WeightClip { clip } = self.cfg.lipschitz {
            for id in self.state.model.critic_params() {
                for v in self.state.model.store.get_mut(id).data_mut() {
                    *v = v.clamp(-clip, clip);
                }
            }
        }
        Ok((s, t))
    }

    fn generator_update(&mut self, xs: &Tensor, zs: &Tensor, xt: &Tensor, zt: &Tensor) -> Result<LossReport> {
        let step = self.state.step + 1;
        let w = self.cfg.effective_weights();
        let scope = self.cfg.berhu_scope;
        let (dsl_on, dccl_on) = (w.lambda_dsl > 0.0, w.lambda_dccl > 0.0);
        let m = &self.state.model;
        let trainable = m.generator_params();
        let mut g = Graph::new(&m.store, &trainable);
        let vs = g.input(xs.clone());
        let vt = g.input(xt.clone());
        let st = m.g_st.forward(&mut g, vs, true, dsl_on);
        let ts = m.g_ts.forward(&mut g, vt, true, dsl_on);
        let x_st = st.translated.expect("image head");
        let x_ts = ts.translated.expect("image head");
        let d_t_fake = m.d_t.forward(&mut g, x_st);
        let d_s_fake = m.d_s.forward(&mut g, x_ts);
        let adv_st = gen_adv_node(&mut g, d_t_fake);
        let adv_ts = gen_adv_node(&mut g, d_s_fake);
        // The reverse pass over a translated image yields both the cycle
        // reconstruction and the depth used for depth cycle consistency.
        let back_s = m.g_ts.forward(&mut g, x_st, true, dccl_on);
        let back_t = m.g_st.forward(&mut g, x_ts, true, dccl_on);
        let cyc_st = cycle_node(&mut g, back_s.translated.expect("image head"), xs)?;
        let cyc_ts = cycle_node(&mut g, back_t.translated.expect("image head"), xt)?;
        let la = w.lambda_adv as f32;
        let lc = w.lambda_cyc as f32;
        let mut terms = vec![(adv_st, la), (adv_ts, la), (cyc_st, lc), (cyc_ts, lc)];
        let mut dsl = (None, None);
        if dsl_on {
            let a = berhu_node(&mut g, st.depth.expect("depth head"), zs, scope)?;
            let b = berhu_node(&mut g, ts.depth.expect("depth head"), zt, scope)?;
            terms.push((a, w.lambda_dsl as f32));
            terms.push((b, w.lambda_dsl as f32));
            dsl = (Some(a), Some(b));
        }
        let mut dccl = (None, None);
        if dccl_on {
            let a = dccl_node(&mut g, back_s.depth.expect("depth head"), zs, scope)?;
            let b = dccl_node(&mut g, back_t.depth.expect("depth head"), zt, scope)?;
            terms.push((a, w.lambda_dccl as f32));
            terms.push((b, w.lambda_dccl as f32));
            dccl = (Some(a), Some(b));
        }
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v) as f64);
        let mut report = LossReport {
            adv_st: val(Some(adv_st)),
            adv_ts: val(Some(adv_ts)),
            cyc_st: val(Some(cyc_st)),
            cyc_ts: val(Some(cyc_ts)),
            dsl_s: val(dsl.0),
            dsl_t: val(dsl.1),
            dccl_st: val(dccl.0),
            dccl_ts: val(dccl.1),
            total: 0.0,
        };
        report.total = report.weighted_total(&w);
        for (name, v) in report.terms() {
            check_finite(name, v, step)?;
        }
        let root = g.weighted_sum(&terms);
        let grads = g.backward(root).params;
        if !grads.is_finite() {
            return Err(Error::NonFinite { term: "generator gradient".into(), step });
        }
        self.state.adam_g.update(&mut self.state.model.store, &grads);
        Ok(report)
    }

    /// Run one full cycle: critic updates, then one generator update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let t = self.state.step;
        let k = self.cfg.critic_steps_per_gen_step as u64;
        let mut last = None;
        for j in 0..k {
            let (xs, _, xt, _) = self.batches(t * self.draws_per_step() + j);
            last = Some(self.critic_update(&xs, &xt, &format!("{t}.{j}"))?);
        }
        let (s, tt) = last.expect("at least one critic step");
        let (xs, zs, xt, zt) = self.batches(t * self.draws_per_step() + k);
        let losses = self.generator_update(&xs, &zs, &xt, &zt)?;
        self.state.step += 1;
        self.state.running = Some(match self.state.running {
            None => losses,
            Some(r) => ema(&r, &losses),
        });
        Ok(StepRecord {
            step: self.state.step,
            losses,
            critic_s: s.loss,
            critic_t: tt.loss,
            wasserstein_s: s.wasserstein,
            wasserstein_t: tt.wasserstein,
            penalty_s: s.penalty,
            penalty_t: tt.penalty,
        })
    }

    /// Train until `cfg.steps`, optionally logging and checkpointing under
    /// `out`. Returns the records of the steps run by this call.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Vec<StepRecord>> {
        self.run_until(self.cfg.steps, out)
    }

    pub fn run_until(&mut self, until: u64, out: Option<&Path>) -> Result<Vec<StepRecord>> {
        let mut log = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(std::fs::OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?)
            }
            None => None,
        };
        let mut records = Vec::new();
        while self.state.step < until {
            let rec = self.step()?;
            if let Some(f) = log.as_mut() {
                let line = serde_json::to_string(&rec).map_err(|e| Error::Schema(e.to_string()))?;
                writeln!(f, "{line}")?;
            }
            if let Some(dir) = out {
                let every = self.cfg.checkpoint_every;
                if every > 0 && rec.step % every == 0 && rec.step < self.cfg.steps {
                    self.state.save(&self.cfg, &checkpoint_path(dir, rec.step))?;
                }
            }
            records.push(rec);
        }
        if let Some(dir) = out {
            self.state.save(&self.cfg, &dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(records)
    }
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "translation.ckpt";

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step:07}.ckpt"))
}

fn ema(r: &LossReport, x: &LossReport) -> LossReport {
    let f = |a: f64, b: f64| RUNNING_DECAY * a + (1.0 - RUNNING_DECAY) * b;
    LossReport {
        adv_st: f(r.adv_st, x.adv_st),
        adv_ts: f(r.adv_ts, x.adv_ts),
        cyc_st: f(r.cyc_st, x.cyc_st),
        cyc_ts: f(r.cyc_ts, x.cyc_ts),
        dsl_s: f(r.dsl_s, x.dsl_s),
        dsl_t: f(r.dsl_t, x.dsl_t),
        dccl_st: f(r.dccl_st, x.dccl_st),
        dccl_ts: f(r.dccl_ts, x.dccl_ts),
        total: f(r.total, x.total),
    }
}

fn load_manifest_samples(path: &Path) -> Result<Vec<SampleTriple>> {
    let m = read_manifest(path)?;
    load_samples(&m, path)
}

/// Train from two manifests and write the log and checkpoints under `out`.
/// Returns the final checkpoint path.
pub fn train_translation(cfg: &TranslationConfig, source_manifest: &Path, target_manifest: &Path, out: &Path) -> Result<PathBuf> {
    let source = load_manifest_samples(source_manifest)?;
    let target = load_manifest_samples(target_manifest)?;
    if let Some(s) = source.iter().find(|s| s.label.is_none()) {
        return Err(Error::Data(format!("source tile `{}` has no label", s.tile_id)));
    }
    let mut trainer = TranslationTrainer::new(cfg.clone(), &source, &target)?;
    trainer.run(Some(out))?;
    Ok(out.join(FINAL_CHECKPOINT))
}

/// Translate source tiles to target style and geometry. Labels follow by
/// nearest-neighbour resampling; the source DSM is returned alongside at its
/// original geometry.
pub fn translate_dataset(
    g: &GeneratorBundle,
    store: &ParamStore,
    source: &[SampleTriple],
    target_domain: &DomainSpec,
) -> Result<(Vec<SampleTriple>, Vec<DepthTile>)> {
    if g.to_hw != target_domain.tile_hw() {
        return Err(Error::shape(
            "generator output",
            format!("{:?}", target_domain.tile_hw()),
            format!("{:?}", g.to_hw),
        ));
    }
    let src = source.first().map(|s| s.domain.clone());
    let domain = Arc::new(DomainSpec {
        name: TRANSLATED_DOMAIN.to_string(),
        role: DomainRole::Translated,
        depth_stats: src.map_or(target_domain.depth_stats, |d| d.depth_stats),
        ..target_domain.clone()
    });
    let (th, tw) = target_domain.tile_hw();
    let mut out = Vec::with_capacity(source.len());
    let mut depths = Vec::with_capacity(source.len());
    for s in source {
        let label = s
            .label
            .as_ref()
            .ok_or_else(|| Error::Data(format!("source tile `{}` has no label", s.tile_id)))?;
        let (image, _) = g.generator_forward(store, &s.image)?;
        out.push(SampleTriple {
            tile_id: s.tile_id.clone(),
            domain: Arc::clone(&domain),
            image,
            label: Some(label.resize_nearest(th, tw)),
            depth: None,
            origin: s.origin.clone(),
        });
        if let Some(d) = &s.depth {
            depths.push(d.clone());
        }
    }
    if depths.len() != out.len() {
        depths.clear();
    }
    Ok((out, depths))
}

/// Translate a labeled source manifest with a stage-1 checkpoint and write
/// the result as a training dataset under `out`. Returns the manifest path.
pub fn translate_manifest(checkpoint: &Path, source_manifest: &Path, out: &Path) -> Result<PathBuf> {
    let (cfg, state) = resume(checkpoint)?;
    let m = read_manifest(source_manifest)?;
    let source = load_samples(&m, source_manifest)?;
    let (translated, depths) = translate_dataset(&state.model.g_st, &state.model.store, &source, &state.target_domain)?;
    let domain = translated
        .first()
        .map(|s| (*s.domain).clone())
        .ok_or_else(|| Error::Data("source manifest lists no tiles".into()))?;
    let depths = (!depths.is_empty()).then_some(depths.as_slice());
    write_dataset(out, Split::Train, cfg.seed, &domain, &m.color_map, &translated, depths)
}

/// Euclidean distance between the per-channel mean colours of two tile sets.
pub fn mean_color_distance(a: &[ImageTile], b: &[ImageTile]) -> f64 {
    let mean = |set: &[ImageTile]| {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for t in set {
            for px in t.data().chunks_exact(3) {
                for c in 0..3 {
                    acc[c] += px[c] as f64;
                }
                n += 1;
            }
        }
        acc.map(|v| v / n.max(1) as f64)
    };
    let (ma, mb) = (mean(a), mean(b));
    (0..3).map(|c| (ma[c] - mb[c]).powi(2)).sum::<f64>().sqrt()
}

pub const HISTOGRAM_BINS: usize = 32;

/// Mean over channels of the L1 distance between normalized colour
/// histograms (range `[0, 2]`).
pub fn histogram_distance(a: &[ImageTile], b: &[ImageTile]) -> f64 {
    let hist = |set: &[ImageTile]| {
        let mut h = vec![[0.0f64; HISTOGRAM_BINS]; 3];
        let mut n = 0usize;
        for t in set {
            for px in t.data().chunks_exact(3) {
                for c in 0..3 {
                    let bin = (((px[c] as f64 + 1.0) * 0.5 * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
                    h[c][bin] += 1.0;
                }
                n += 1;
            }
        }
        for ch in &mut h {
            for v in ch.iter_mut() {
                *v /= n.max(1) as f64;
            }
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    (0..3)
        .map(|c| ha[c].iter().zip(&hb[c]).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum::<f64>()
        / 3.0
}

/// Bilinearly resize source tiles to the target geometry (no translation).
pub fn resize_tiles(tiles: &[ImageTile], hw: (usize, usize)) -> Result<Vec<ImageTile>> {
    tiles
        .iter()
        .map(|t| ImageTile::from_tensor(&resize_bilinear(&t.to_tensor(), hw.0, hw.1), 0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{DepthStats, LabelTile};

    fn domain(name: &str, hw: usize, role: DomainRole) -> Arc<DomainSpec> {
        Arc::new(DomainSpec {
            name: name.into(),
            role,
            tile_height: hw,
            tile_width: hw,
            ground_resolution: 5.0,
            class_count: 6,
            depth_stats: DepthStats { min: 0.0, max: 1.0 },
        })
    }

    fn tiles(d: &Arc<DomainSpec>, n: usize, phase: f32) -> Vec<SampleTriple> {
        let (h, w) = d.tile_hw();
        (0..n)
            .map(|i| {
                let img: Vec<f32> = (0..h * w * 3).map(|k| (k as f32 * 0.37 + i as f32 + phase).sin() * 0.8).collect();
                let dep: Vec<f32> = (0..h * w).map(|k| (k as f32 * 0.11 + i as f32).cos() * 0.5 + 0.5).collect();
                SampleTriple {
                    tile_id: format!("{}{i}", d.name),
                    domain: Arc::clone(d),
                    image: ImageTile::new(h, w, img).unwrap(),
                    label: (d.role != DomainRole::Target).then(|| LabelTile::new(h, w, (0..h * w).map(|k| (k % 6) as u8).collect()).unwrap()),
                    depth: Some(DepthTile::new(h, w, dep).unwrap()),
                    origin: None,
                }
            })
            .collect()
    }

    fn small_cfg() -> TranslationConfig {
        TranslationConfig {
            steps: 3,
            network: NetworkConfig::narrowed(32),
            seed: 4,
            ..TranslationConfig::default()
        }
    }

    fn setup() -> (Vec<SampleTriple>, Vec<SampleTriple>) {
        (tiles(&domain("s", 16, DomainRole::Source), 3, 0.0), tiles(&domain("t", 8, DomainRole::Target), 2, 1.0))
    }

    #[test]
    fn ablated_terms_are_exactly_zero() {
        let (s, t) = setup();
        let cfg = TranslationConfig {
            enable_dsl: false,
            enable_dccl: false,
            ..small_cfg()
        };
        let mut tr = TranslationTrainer::new(cfg.clone(), &s, &t).unwrap();
        let before = tr.state.model.store.checksum(&tr.state.model.depth_decoder_params());
        for r in tr.run(None).unwrap() {
            assert_eq!((r.losses.dsl_s, r.losses.dsl_t, r.losses.dccl_st, r.losses.dccl_ts), (0.0, 0.0, 0.0, 0.0));
            assert!((r.losses.total - r.losses.weighted_total(&cfg.effective_weights())).abs() < 1e-12);
        }
        assert_eq!(before, tr.state.model.store.checksum(&tr.state.model.depth_decoder_params()));
    }

    #[test]
    fn frozen_side_is_untouched_by_each_update() {
        let (s, t) = setup();
        let mut tr = TranslationTrainer::new(small_cfg(), &s, &t).unwrap();
        let (xs, zs, xt, zt) = tr.batches(0);
        let gen = tr.state.model.generator_params();
        let crit = tr.state.model.critic_params();
        let g0 = tr.state.model.store.checksum(&gen);
        let c0 = tr.state.model.store.checksum(&crit);
        tr.critic_update(&xs, &xt, "x").unwrap();
        assert_eq!(g0, tr.state.model.store.checksum(&gen));
        let c1 = tr.state.model.store.checksum(&crit);
        assert_ne!(c0, c1);
        tr.generator_update(&xs, &zs, &xt, &zt).unwrap();
        assert_eq!(c1, tr.state.model.store.checksum(&crit));
        assert_ne!(g0, tr.state.model.store.checksum(&gen));
    }

    #[test]
    fn same_seed_same_losses_and_resume_matches() {
        let (s, t) = setup();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TranslationConfig { steps: 4, ..small_cfg() };
        let full = TranslationTrainer::new(cfg.clone(), &s, &t).unwrap().run(None).unwrap();
        let again = TranslationTrainer::new(cfg.clone(), &s, &t).unwrap().run(None).unwrap();
        assert_eq!(full, again);
        let mut first = TranslationTrainer::new(cfg.clone(), &s, &t).unwrap();
        first.run_until(2, Some(dir.path())).unwrap();
        let (rcfg, state) = resume(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(rcfg, cfg);
        let mut second = TranslationTrainer::with_state(rcfg, state, &s, &t).unwrap();
        let tail = second.run(None).unwrap();
        assert_eq!(tail, full[2..].to_vec());
    }

    #[test]
    fn weight_clipping_bounds_critic() {
        let (s, t) = setup();
        let cfg = TranslationConfig {
            lipschitz: Lipschitz::WeightClip { clip: 0.01 },
            steps: 1,
            ..small_cfg()
        };
        let mut tr = TranslationTrainer::new(cfg, &s, &t).unwrap();
        tr.run(None).unwrap();
        for id in tr.state.model.critic_params() {
            assert!(tr.state.model.store.get(id).max_abs() <= 0.01);
        }
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let (s, t) = setup();
        let mut tr = TranslationTrainer::new(small_cfg(), &s, &t).unwrap();
        let xt = Tensor::stack(&[t[0].image.to_tensor(), t[1].image.to_tensor()]);
        // LeakyReLU masks make the penalty discontinuous in the weights, which
        // defeats a numeric reference; a unit slope keeps the critic smooth.
        let mut d = tr.state.model.d_t.clone();
        d.slope = 1.0;
        // Random critic weights large enough that the penalty is non-trivial.
        let mut rng = stream_rng(2, "fd");
        for id in d.params() {
            for v in tr.state.model.store.get_mut(id).data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        let fake = xt.map(|v| -v * 0.5);
        let eps = [0.3f32, 0.6];
        let store = &tr.state.model.store;
        let lip = Lipschitz::GradientPenalty { weight: 1.0, fd_step: 1e-3 };
        let mut with_pen = ParamGrads::new(store.len());
        critic_objective(&d, store, &xt, &fake, lip, &eps, &mut with_pen);
        let mut without = ParamGrads::new(store.len());
        critic_objective(&d, store, &xt, &fake, Lipschitz::GradientPenalty { weight: 0.0, fd_step: 1e-3 }, &eps, &mut without);
        let mut xhat = xt.clone();
        for i in 0..2 {
            for (h, &f) in xhat.sample_mut(i).iter_mut().zip(fake.sample(i)) {
                *h = eps[i] * *h + (1.0 - eps[i]) * f;
            }
        }
        // Directional derivative of the penalty along a random weight direction.
        let ids = d.params();
        let dirs: Vec<Tensor> = ids
            .iter()
            .map(|&id| {
                let shape = store.get(id).shape();
                Tensor::from_vec(shape, (0..crate::tensor::numel(shape)).map(|_| rng.random_range(-1.0..1.0)).collect())
            })
            .collect();
        let analytic: f64 = ids
            .iter()
            .zip(&dirs)
            .map(|(&id, dv)| {
                let a = with_pen.get(id).unwrap();
                let b = without.get(id).unwrap();
                a.data().iter().zip(b.data()).zip(dv.data()).map(|((x, y), z)| ((x - y) * z) as f64).sum::<f64>()
            })
            .sum();
        let h = 1e-3f32;
        let eval = |sign: f32| {
            let mut st = store.clone();
            for (&id, dv) in ids.iter().zip(&dirs) {
                st.get_mut(id).scaled_add_assign(dv, sign * h);
            }
            gradient_penalty(&d, &st, &xhat)
        };
        let numeric = (eval(1.0) - eval(-1.0)) / (2.0 * h as f64);
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-6);
        assert!(rel < 0.05, "analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn zero_residual_translation_is_plain_resize() {
        let (s, _) = setup();
        let t = domain("t", 8, DomainRole::Target);
        let mut model = build_drdg(&s[0].domain, &t, &NetworkConfig::narrowed(32), 1).unwrap();
        model.g_st.zero_residual(&mut model.store);
        let (out, depths) = translate_dataset(&model.g_st, &model.store, &s, &t).unwrap();
        assert_eq!((out.len(), depths.len()), (3, 3));
        for (a, b) in out.iter().zip(&s) {
            let want = ImageTile::from_tensor(&resize_bilinear(&b.image.to_tensor(), 8, 8), 0).unwrap();
            assert_eq!(a.image, want);
            assert_eq!(a.domain.role, DomainRole::Translated);
            assert_eq!(a.domain.name, TRANSLATED_DOMAIN);
            assert!(a.label.as_ref().unwrap().data().iter().all(|&c| c < 6));
            crate::data_model::validate_sample(a).unwrap();
        }
        assert_eq!(depths[0].hw(), (16, 16));
    }

    #[test]
    fn missing_depth_rejected() {
        let (mut s, t) = setup();
        s[1].depth = None;
        assert!(TranslationTrainer::new(small_cfg(), &s, &t).is_err());
    }

    #[test]
    fn colour_distances() {
        let a = vec![ImageTile::new(1, 2, vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.5]).unwrap()];
        let b = vec![ImageTile::new(1, 1, vec![0.25, 0.25, 0.25]).unwrap()];
        assert!(mean_color_distance(&a, &b) < 1e-12);
        assert!(histogram_distance(&a, &a) < 1e-12);
        let c = vec![ImageTile::new(1, 1, vec![-1.0, -1.0, -1.0]).unwrap()];
        let d = vec![ImageTile::new(1, 1, vec![1.0, 1.0, 1.0]).unwrap()];
        assert!((histogram_distance(&c, &d) - 2.0).abs() < 1e-12);
        assert!((mean_color_distance(&c, &d) - 12f64.sqrt()).abs() < 1e-12);
    }
}
