//! Mixture-density parameterization and the training losses.
//!
//! A raw MDN head output of width M(2D+1) is split per frame into mixture
//! weights, component means and diagonal variances. The negative
//! log-likelihood and its gradients with respect to the raw outputs drive
//! training; MSE, negative-Pearson and cross-entropy auxiliary losses are
//! combined by a weighted multi-task objective.

use ndarray::{Array1, Array2, Array3, ArrayView1};

use crate::error::{Error, Result};

/// Default floor applied to component variances, shared with MLPG.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

/// Shape of an MDN head: M mixture components over a D-dimensional target.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdnConfig {
    pub n_mix: usize,
    pub target_dim: usize,
    pub variance_floor: f64,
}

impl Default for MdnConfig {
    fn default() -> Self {
        MdnConfig {
            n_mix: 1,
            target_dim: 54,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

impl MdnConfig {
    pub fn new(n_mix: usize, target_dim: usize) -> Result<Self> {
        let cfg = MdnConfig {
            n_mix,
            target_dim,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mix < 1 || self.target_dim < 1 {
            return Err(Error::Config(
                "mdn needs at least one component and one target dimension".into(),
            ));
        }
        if self.variance_floor <= 0.0 {
            return Err(Error::Config("variance_floor must be positive".into()));
        }
        Ok(())
    }

    /// Raw head width M(2D+1): per frame `[y_lambda (M) | y_mu (M*D) |
    /// y_sigma (M*D)]`, both blocks component-major.
    pub fn raw_width(&self) -> usize {
        self.n_mix * (2 * self.target_dim + 1)
    }
}

/// Frame-synchronous mixture parameters produced by [`mdn_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct MdnParams {
    weights: Array2<f64>,
    means: Array3<f64>,
    variances: Array3<f64>,
    variance_floor: f64,
}

impl MdnParams {
    pub fn frames(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_mix(&self) -> usize {
        self.weights.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.means.dim().2
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn means(&self) -> &Array3<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Array3<f64> {
        &self.variances
    }

    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    /// Index of the highest-weight component at frame `t`; ties break to the
    /// lowest index.
    pub fn max_weight_component(&self, t: usize) -> usize {
        let row = self.weights.row(t);
        let mut best = 0;
        for m in 1..row.len() {
            if row[m] > row[best] {
                best = m;
            }
        }
        best
    }
}

/// Multi-task loss weights for (MDN, MSE, Pearson, CE), all 0.25 by default.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtlWeights {
    pub mdn: f64,
    pub mse: f64,
    pub pearson: f64,
    pub ce: f64,
}

impl Default for MtlWeights {
    fn default() -> Self {
        MtlWeights {
            mdn: 0.25,
            mse: 0.25,
            pearson: 0.25,
            ce: 0.25,
        }
    }
}

impl MtlWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.mdn, self.mse, self.pearson, self.ce]
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::Config("mtl weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// The four component losses entering the multi-task objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtlComponents {
    pub mdn: f64,
    pub mse: f64,
    pub pearson: f64,
    pub ce: f64,
}

/// Point-estimate rule for collapsing a mixture to a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointEstimate {
    MixtureMean,
    MaxComponent,
}

/// Split a raw T x M(2D+1) head output into mixture parameters.
///
/// Weights are the per-frame softmax of the lambda block; variances follow
/// sigma = exp(y_sigma), floored at `cfg.variance_floor`.
pub fn mdn_split(raw: &Array2<f64>, cfg: &MdnConfig) -> Result<MdnParams> {
    cfg.validate()?;
    let (t, width) = raw.dim();
    if width != cfg.raw_width() {
        return Err(Error::Config(format!(
            "raw width {width} does not match M(2D+1) = {} for M={} D={}",
            cfg.raw_width(),
            cfg.n_mix,
            cfg.target_dim
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("raw mdn output contains non-finite values".into()));
    }
    let (m, d) = (cfg.n_mix, cfg.target_dim);
    let mut weights = Array2::zeros((t, m));
    let mut means = Array3::zeros((t, m, d));
    let mut variances = Array3::zeros((t, m, d));
    for ti in 0..t {
        let row = raw.row(ti);
        softmax_into(&row.slice(ndarray::s![0..m]), weights.row_mut(ti));
        for mi in 0..m {
            for di in 0..d {
                means[[ti, mi, di]] = row[m + mi * d + di];
                let y_sigma = row[m + m * d + mi * d + di];
                variances[[ti, mi, di]] = (2.0 * y_sigma).exp().max(cfg.variance_floor);
            }
        }
    }
    Ok(MdnParams {
        weights,
        means,
        variances,
        variance_floor: cfg.variance_floor,
    })
}

fn softmax_into(logits: &ArrayView1<f64>, mut out: ndarray::ArrayViewMut1<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits.iter()) {
        *o = (l - max).exp();
        z += *o;
    }
    out.mapv_inplace(|v| v / z);
}

/// Per-frame, per-component diagonal Gaussian log-densities, T x M.
fn component_log_densities(p: &MdnParams, a: &Array2<f64>) -> Array2<f64> {
    let (t, m, d) = p.means.dim();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut out = Array2::zeros((t, m));
    for ti in 0..t {
        for mi in 0..m {
            let mut acc = 0.0;
            for di in 0..d {
                let var = p.variances[[ti, mi, di]];
                let diff = a[[ti, di]] - p.means[[ti, mi, di]];
                acc += ln_2pi + var.ln() + diff * diff / var;
            }
            out[[ti, mi]] = -0.5 * acc;
        }
    }
    out
}

fn validate_nll_inputs(p: &MdnParams, a: &Array2<f64>) -> Result<()> {
    if a.dim() != (p.frames(), p.target_dim()) {
        return Err(Error::Data(format!(
            "target {:?} does not match mdn params {}x{}",
            a.dim(),
            p.frames(),
            p.target_dim()
        )));
    }
    if p.variances.iter().any(|&v| v <= 0.0) {
        return Err(Error::Internal("mdn variances must be positive".into()));
    }
    Ok(())
}

/// Mixture negative log-likelihood, summed over frames, with per-frame terms.
///
/// `L = -sum_t ln sum_m w_tm N(a_t; mu_tm, diag sigma^2_tm)`, evaluated in
/// the log domain with log-sum-exp stabilization.
pub fn mdn_nll(p: &MdnParams, a: &Array2<f64>) -> Result<(f64, Array1<f64>)> {
    validate_nll_inputs(p, a)?;
    let log_dens = component_log_densities(p, a);
    let t = p.frames();
    let mut per_frame = Array1::zeros(t);
    for ti in 0..t {
        let mut max = f64::NEG_INFINITY;
        for mi in 0..p.n_mix() {
            max = max.max(p.weights[[ti, mi]].ln() + log_dens[[ti, mi]]);
        }
        let mut z = 0.0;
        for mi in 0..p.n_mix() {
            z += (p.weights[[ti, mi]].ln() + log_dens[[ti, mi]] - max).exp();
        }
        per_frame[ti] = -(max + z.ln());
    }
    Ok((per_frame.sum(), per_frame))
}

/// NLL gradients with respect to the raw head outputs, in [`mdn_split`]
/// layout. Returns the loss alongside.
///
/// With component posteriors gamma, the gradients are `w - gamma` for the
/// lambda block, `-gamma (a - mu) / sigma^2` for the mean block and
/// `gamma (1 - (a - mu)^2 / sigma^2)` for the log-sigma block. Dimensions
/// whose variance sits at the floor get a zero sigma-gradient, matching the
/// clamp in [`mdn_split`].
pub fn mdn_nll_grad(p: &MdnParams, a: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    validate_nll_inputs(p, a)?;
    let log_dens = component_log_densities(p, a);
    let (t, m, d) = p.means.dim();
    let mut grad = Array2::zeros((t, m * (2 * d + 1)));
    let mut total = 0.0;
    for ti in 0..t {
        // gamma = softmax over ln w + ln N, the component posteriors.
        let mut max = f64::NEG_INFINITY;
        for mi in 0..m {
            max = max.max(p.weights[[ti, mi]].ln() + log_dens[[ti, mi]]);
        }
        let mut z = 0.0;
        let mut gamma = vec![0.0; m];
        for mi in 0..m {
            gamma[mi] = (p.weights[[ti, mi]].ln() + log_dens[[ti, mi]] - max).exp();
            z += gamma[mi];
        }
        for g in gamma.iter_mut() {
            *g /= z;
        }
        total -= max + z.ln();

        for mi in 0..m {
            grad[[ti, mi]] = p.weights[[ti, mi]] - gamma[mi];
            for di in 0..d {
                let var = p.variances[[ti, mi, di]];
                let diff = a[[ti, di]] - p.means[[ti, mi, di]];
                grad[[ti, m + mi * d + di]] = -gamma[mi] * diff / var;
                let at_floor = var <= p.variance_floor;
                grad[[ti, m + m * d + mi * d + di]] = if at_floor {
                    0.0
                } else {
                    gamma[mi] * (1.0 - diff * diff / var)
                };
            }
        }
    }
    Ok((total, grad))
}

/// Collapse mixture parameters to a single T x D trajectory.
pub fn mdn_point_estimate(p: &MdnParams, mode: PointEstimate) -> Array2<f64> {
    let (t, m, d) = p.means.dim();
    let mut out = Array2::zeros((t, d));
    for ti in 0..t {
        match mode {
            PointEstimate::MixtureMean => {
                for mi in 0..m {
                    let w = p.weights[[ti, mi]];
                    for di in 0..d {
                        out[[ti, di]] += w * p.means[[ti, mi, di]];
                    }
                }
            }
            PointEstimate::MaxComponent => {
                let mi = p.max_weight_component(ti);
                for di in 0..d {
                    out[[ti, di]] = p.means[[ti, mi, di]];
                }
            }
        }
    }
    out
}

/// Back-propagate a gradient on the mixture-mean point estimate to the raw
/// head outputs.
///
/// For `point = sum_m w_m mu_m` the chain rule gives
/// `d/dy_mu[m,d] = g[d] * w_m` and, through the softmax,
/// `d/dy_lambda[m] = sum_d g[d] * w_m * (mu[m,d] - point[d])`. The sigma
/// block does not influence the estimate.
pub fn mixture_mean_backward(p: &MdnParams, g: &Array2<f64>) -> Result<Array2<f64>> {
    let (t, m, d) = p.means.dim();
    if g.dim() != (t, d) {
        return Err(Error::Data(format!(
            "upstream gradient {:?} does not match point estimate {t}x{d}",
            g.dim()
        )));
    }
    let point = mdn_point_estimate(p, PointEstimate::MixtureMean);
    let mut grad = Array2::zeros((t, m * (2 * d + 1)));
    for ti in 0..t {
        for mi in 0..m {
            let w = p.weights[[ti, mi]];
            let mut lambda_acc = 0.0;
            for di in 0..d {
                grad[[ti, m + mi * d + di]] = g[[ti, di]] * w;
                lambda_acc += g[[ti, di]] * w * (p.means[[ti, mi, di]] - point[[ti, di]]);
            }
            grad[[ti, mi]] = lambda_acc;
        }
    }
    Ok(grad)
}

fn check_same_shape(pred: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::Data(format!(
            "prediction {:?} and target {:?} shapes disagree",
            pred.dim(),
            target.dim()
        )));
    }
    Ok(())
}

/// Mean squared error over all T*D entries and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_same_shape(pred, target)?;
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, diff.mapv(|v| 2.0 * v / n)))
}

/// Negative mean per-dimension Pearson correlation and its gradient w.r.t.
/// `pred`. Denominators are floored at 1e-8 to survive constant columns.
pub fn pearson_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_same_shape(pred, target)?;
    let (t, d) = pred.dim();
    if t < 2 {
        return Err(Error::Data(format!(
            "pearson correlation needs at least 2 frames, got {t}"
        )));
    }
    const EPS: f64 = 1e-8;
    let tf = t as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((t, d));
    for di in 0..d {
        let pm = pred.column(di).sum() / tf;
        let tm = target.column(di).sum() / tf;
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut num = 0.0;
        for ti in 0..t {
            let u = pred[[ti, di]] - pm;
            let v = target[[ti, di]] - tm;
            su += u * u;
            sv += v * v;
            num += u * v;
        }
        let den = (su * sv).sqrt().max(EPS);
        let r = num / den;
        loss -= r / d as f64;
        let su_f = su.max(EPS);
        for ti in 0..t {
            let u = pred[[ti, di]] - pm;
            let v = target[[ti, di]] - tm;
            grad[[ti, di]] = -(v / den - r * u / su_f) / d as f64;
        }
    }
    Ok((loss, grad))
}

/// Mean frame-level cross entropy of `logits` against integer labels, with
/// the `softmax - onehot` gradient.
pub fn ce_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (t, k) = logits.dim();
    if labels.len() != t {
        return Err(Error::Data(format!(
            "got {} labels for {t} frames",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let tf = t as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((t, k));
    for ti in 0..t {
        let row = logits.row(ti);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        let log_z = max + z.ln();
        loss += (log_z - logits[[ti, labels[ti]]]) / tf;
        for ki in 0..k {
            let p = (logits[[ti, ki]] - log_z).exp();
            grad[[ti, ki]] = (p - if ki == labels[ti] { 1.0 } else { 0.0 }) / tf;
        }
    }
    Ok((loss, grad))
}

/// Weighted multi-task objective
/// `w.mdn * L_MDN + w.mse * L_MSE + w.pearson * L_Pearson + w.ce * L_CE`.
///
/// The gradient of the blend is the identical linear combination of the
/// component gradients; callers scale each per-head gradient by its weight.
pub fn mtl_loss(c: &MtlComponents, w: &MtlWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.mdn * c.mdn + w.mse * c.mse + w.pearson * c.pearson + w.ce * c.ce)
}
