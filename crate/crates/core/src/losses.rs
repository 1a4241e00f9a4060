//! Training objectives for translation and segmentation.
//!
//! Each loss has a scalar core over `f64` slices returning the value together
//! with its exact gradient, and a graph adapter that wires the core into an
//! autograd [`Graph`] as a custom node.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data_model::{DepthTile, ImageTile};
use crate::error::{Error, Result};
use crate::networks::{resize_bilinear, GeneratorBundle};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Threshold fraction of the largest residual in the reverse Huber loss.
pub const BERHU_FRACTION: f64 = 0.2;

/// Coefficients of the weighted translation objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_cyc: f64,
    pub lambda_dsl: f64,
    pub lambda_dccl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_adv: 5.0,
            lambda_cyc: 10.0,
            lambda_dsl: 2.0,
            lambda_dccl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_adv, self.lambda_cyc, self.lambda_dsl, self.lambda_dccl];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {all:?}")));
        }
        Ok(())
    }
}

/// Granularity of the reverse Huber threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BerhuScope {
    /// One threshold from the largest residual in the whole batch.
    #[default]
    Batch,
    /// One threshold per image; the batch loss is the mean of image losses.
    Image,
}

/// The eight directional terms of the translation objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv_st: Option<f64>,
    pub adv_ts: Option<f64>,
    pub cyc_st: Option<f64>,
    pub cyc_ts: Option<f64>,
    pub dsl_s: Option<f64>,
    pub dsl_t: Option<f64>,
    pub dccl_st: Option<f64>,
    pub dccl_ts: Option<f64>,
}

impl LossComponents {
    pub fn all(v: f64) -> Self {
        LossComponents {
            adv_st: Some(v),
            adv_ts: Some(v),
            cyc_st: Some(v),
            cyc_ts: Some(v),
            dsl_s: Some(v),
            dsl_t: Some(v),
            dccl_st: Some(v),
            dccl_ts: Some(v),
        }
    }
}

/// Per-term values of one generator update and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_st: f64,
    pub adv_ts: f64,
    pub cyc_st: f64,
    pub cyc_ts: f64,
    pub dsl_s: f64,
    pub dsl_t: f64,
    pub dccl_st: f64,
    pub dccl_ts: f64,
    pub total: f64,
}

impl LossReport {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.lambda_adv * (self.adv_st + self.adv_ts)
            + w.lambda_cyc * (self.cyc_st + self.cyc_ts)
            + w.lambda_dsl * (self.dsl_s + self.dsl_t)
            + w.lambda_dccl * (self.dccl_st + self.dccl_ts)
    }

    /// Names and values of every term, for diagnostics.
    pub fn terms(&self) -> [(&'static str, f64); 9] {
        [
            ("adv_st", self.adv_st),
            ("adv_ts", self.adv_ts),
            ("cyc_st", self.cyc_st),
            ("cyc_ts", self.cyc_ts),
            ("dsl_s", self.dsl_s),
            ("dsl_t", self.dsl_t),
            ("dccl_st", self.dccl_st),
            ("dccl_ts", self.dccl_ts),
            ("total", self.total),
        ]
    }
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<LossReport> {
    let get = |name: &str, v: Option<f64>| v.ok_or_else(|| Error::Data(format!("missing loss component `{name}`")));
    let mut report = LossReport {
        adv_st: get("adv_st", c.adv_st)?,
        adv_ts: get("adv_ts", c.adv_ts)?,
        cyc_st: get("cyc_st", c.cyc_st)?,
        cyc_ts: get("cyc_ts", c.cyc_ts)?,
        dsl_s: get("dsl_s", c.dsl_s)?,
        dsl_t: get("dsl_t", c.dsl_t)?,
        dccl_st: get("dccl_st", c.dccl_st)?,
        dccl_ts: get("dccl_ts", c.dccl_ts)?,
        total: 0.0,
    };
    report.total = report.weighted_total(w);
    Ok(report)
}

fn same_len(field: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(field, a, b));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Critic objective (to minimize) without the Lipschitz penalty:
/// `mean(fake) - mean(real)`.
pub fn critic_loss(real_scores: &[f64], fake_scores: &[f64]) -> f64 {
    mean(fake_scores) - mean(real_scores)
}

/// Generator adversarial objective: `-mean(fake)`.
pub fn gen_adv_loss(fake_scores: &[f64]) -> f64 {
    -mean(fake_scores)
}

/// Mean absolute difference and its gradient with respect to `rec`.
pub fn cycle_loss_grad(x: &[f64], rec: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len("cycle reconstruction", x.len(), rec.len())?;
    let n = x.len() as f64;
    let value = x.iter().zip(rec).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let grad = x.iter().zip(rec).map(|(a, b)| sign(b - a) / n).collect();
    Ok((value, grad))
}

pub fn cycle_loss(x: &ImageTile, x_rec: &ImageTile) -> Result<f64> {
    if x.hw() != x_rec.hw() {
        return Err(Error::shape("cycle reconstruction", format!("{:?}", x.hw()), format!("{:?}", x_rec.hw())));
    }
    let a: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = x_rec.data().iter().map(|&v| v as f64).collect();
    Ok(cycle_loss_grad(&a, &b)?.0)
}

/// Reverse Huber penalty of one absolute residual `d` at threshold `l`:
/// linear up to `l`, quadratic beyond.
pub fn berhu_elem(d: f64, l: f64) -> f64 {
    if d <= l {
        d
    } else {
        (d * d + l * l) / (2.0 * l)
    }
}

/// Reverse Huber loss averaged over elements, with its exact gradient
/// with respect to `pred` (including the dependence of the threshold on the
/// largest residual).
pub fn berhu_grad(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len("berhu", pred.len(), gt.len())?;
    let n = pred.len();
    let mut grad = vec![0.0; n];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let diffs: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p - g).collect();
    let (argmax, dmax) = diffs
        .iter()
        .map(|d| d.abs())
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
    if dmax == 0.0 {
        return Ok((0.0, grad));
    }
    let l = BERHU_FRACTION * dmax;
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut d_dl = 0.0;
    for (i, &diff) in diffs.iter().enumerate() {
        let d = diff.abs();
        let sign = sign(diff);
        value += berhu_elem(d, l);
        if d <= l {
            grad[i] = sign * inv_n;
        } else {
            grad[i] = sign * d / l * inv_n;
            d_dl += (l * l - d * d) / (2.0 * l * l);
        }
    }
    grad[argmax] += d_dl * inv_n * BERHU_FRACTION * sign(diffs[argmax]);
    Ok((value * inv_n, grad))
}

pub fn berhu_slices(pred: &[f32], gt: &[f32]) -> Result<f64> {
    let p: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = gt.iter().map(|&v| v as f64).collect();
    Ok(berhu_grad(&p, &g)?.0)
}

pub fn berhu(pred: &DepthTile, gt: &DepthTile) -> Result<f64> {
    if pred.hw() != gt.hw() {
        return Err(Error::shape("berhu", format!("{:?}", gt.hw()), format!("{:?}", pred.hw())));
    }
    berhu_slices(pred.data(), gt.data())
}

/// Berhu over a `[n, 1, H, W]` batch at the given threshold scope.
pub fn berhu_batch_grad(pred: &Tensor, gt: &Tensor, scope: BerhuScope) -> Result<(f64, Tensor)> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("berhu", format!("{:?}", gt.shape()), format!("{:?}", pred.shape())));
    }
    let to64 = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();
    match scope {
        BerhuScope::Batch => {
            let (v, g) = berhu_grad(&to64(pred.data()), &to64(gt.data()))?;
            Ok((v, Tensor::from_vec(pred.shape(), g.into_iter().map(|x| x as f32).collect())))
        }
        BerhuScope::Image => {
            let n = pred.n();
            let mut total = 0.0;
            let mut grad = Vec::with_capacity(pred.len());
            for i in 0..n {
                let (v, g) = berhu_grad(&to64(pred.sample(i)), &to64(gt.sample(i)))?;
                total += v / n as f64;
                grad.extend(g.into_iter().map(|x| (x / n as f64) as f32));
            }
            Ok((total, Tensor::from_vec(pred.shape(), grad)))
        }
    }
}

/// Softmax cross-entropy averaged over pixels, with gradient w.r.t. scores.
/// `scores` holds one image as `C` consecutive planes of `labels.len()` pixels.
pub fn seg_cross_entropy_grad(scores: &[f64], labels: &[u8], classes: usize) -> Result<(f64, Vec<f64>)> {
    let pixels = labels.len();
    same_len("segmentation scores", scores.len(), pixels * classes)?;
    if pixels == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut grad = vec![0.0; scores.len()];
    let mut total = 0.0;
    let inv = 1.0 / pixels as f64;
    let plane = pixels;
    for p in 0..plane {
        let y = labels[p] as usize;
        if y >= classes {
            return Err(Error::Range {
                field: "label".into(),
                value: y as f64,
                min: 0.0,
                max: (classes - 1) as f64,
            });
        }
        let m = (0..classes).map(|c| scores[c * plane + p]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..classes).map(|c| (scores[c * plane + p] - m).exp()).sum();
        let lse = m + z.ln();
        total += lse - scores[y * plane + p];
        for c in 0..classes {
            let prob = (scores[c * plane + p] - lse).exp();
            grad[c * plane + p] = (prob - (c == y) as u8 as f64) * inv;
        }
    }
    Ok((total * inv, grad))
}

/// Cross-entropy for a `[n, C, H, W]` score tensor and `n * H * W` labels.
pub fn seg_cross_entropy_tensor(scores: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let [n, c, h, w] = scores.shape();
    let plane = h * w;
    same_len("segmentation labels", labels.len(), n * plane)?;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for b in 0..n {
        let s: Vec<f64> = scores.sample(b).iter().map(|&v| v as f64).collect();
        let (v, g) = seg_cross_entropy_grad(&s, &labels[b * plane..(b + 1) * plane], c)?;
        total += v / n as f64;
        grad.extend(g.into_iter().map(|x| (x / n as f64) as f32));
    }
    Ok((total, Tensor::from_vec(scores.shape(), grad)))
}

// ---------------------------------------------------------------------------
// Graph adapters

/// `-mean(scores)` as a graph node.
pub fn gen_adv_node(g: &mut Graph<'_>, scores: Var) -> Var {
    let m = g.mean(scores);
    g.weighted_sum(&[(m, -1.0)])
}

pub fn cycle_node(g: &mut Graph<'_>, rec: Var, original: &Tensor) -> Result<Var> {
    let r = g.value(rec);
    if r.shape() != original.shape() {
        return Err(Error::shape("cycle reconstruction", format!("{:?}", original.shape()), format!("{:?}", r.shape())));
    }
    let a: Vec<f64> = original.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
    let (value, grad) = cycle_loss_grad(&a, &b)?;
    let grad = Tensor::from_vec(r.shape(), grad.into_iter().map(|x| x as f32).collect());
    Ok(g.custom(vec![rec], value as f32, vec![grad]))
}

pub fn berhu_node(g: &mut Graph<'_>, pred: Var, gt: &Tensor, scope: BerhuScope) -> Result<Var> {
    let (value, grad) = berhu_batch_grad(g.value(pred), gt, scope)?;
    Ok(g.custom(vec![pred], value as f32, vec![grad]))
}

/// Depth cycle term: resize the prediction to the ground truth's extent, then Berhu.
pub fn dccl_node(g: &mut Graph<'_>, pred: Var, gt: &Tensor, scope: BerhuScope) -> Result<Var> {
    let resized = g.resize(pred, gt.h(), gt.w());
    berhu_node(g, resized, gt, scope)
}

pub fn seg_ce_node(g: &mut Graph<'_>, scores: Var, labels: &[u8]) -> Result<Var> {
    let (value, grad) = seg_cross_entropy_tensor(g.value(scores), labels)?;
    Ok(g.custom(vec![scores], value as f32, vec![grad]))
}

// ---------------------------------------------------------------------------
// Tile-level entry points

/// Depth supervision: Berhu between the generator's depth head and the DSM.
pub fn dsl(gen: &GeneratorBundle, store: &ParamStore, x: &[ImageTile], z: &[DepthTile], scope: BerhuScope) -> Result<f64> {
    same_len("dsl batch", x.len(), z.len())?;
    let xs = Tensor::stack(&x.iter().map(ImageTile::to_tensor).collect::<Vec<_>>());
    let zs = Tensor::stack(&z.iter().map(DepthTile::to_tensor).collect::<Vec<_>>());
    let pred = gen.predict_depth(store, &xs)?;
    Ok(berhu_batch_grad(&pred, &zs, scope)?.0)
}

/// Depth cycle consistency for an already-predicted depth map.
pub fn dccl_from_prediction(pred: &Tensor, z_src: &Tensor, scope: BerhuScope) -> Result<f64> {
    let resized = resize_bilinear(pred, z_src.h(), z_src.w());
    Ok(berhu_batch_grad(&resized, z_src, scope)?.0)
}

/// Depth cycle consistency: predict depth of a translated image with the
/// reverse generator and compare against the original-domain DSM.
pub fn dccl(g_back: &GeneratorBundle, store: &ParamStore, x_translated: &ImageTile, z_src: &DepthTile) -> Result<f64> {
    let pred = g_back.predict_depth(store, &x_translated.to_tensor())?;
    dccl_from_prediction(&pred, &z_src.to_tensor(), BerhuScope::Batch)
}
