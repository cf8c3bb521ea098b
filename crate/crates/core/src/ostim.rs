//! Transductive InfoMax inference with an implicit outlier prototype.
//!
//! Features and prototypes are compared after center-normalization:
//! `l_ik = tau * <psi(z_i), psi(w_k)>` for the `K` closed-set classes. The
//! open-set variant appends an outlier logit equal to the negative mean of
//! the inlier logits, i.e. the similarity to the implicit prototype
//! `-(1/K) sum_k psi(w_k)`. Prototypes start at the support class centroids
//! and are refined by full-batch gradient descent on
//!
//! ```text
//! CE(support) - H(marginal over queries) + alpha * mean_i H(p_i)
//! ```
//!
//! with the support one-hot labels extended by a zero outlier component.
//! Gradients are analytic: softmax, both entropy terms and the prototype
//! normalization are differentiated by hand. The centering vector is frozen.
//!
//! Two comparison variants share the machinery: `TimClosed` drops the
//! outlier column entirely (K-way throughout) and scores outlierness as the
//! negative maximum probability; `ExplicitDummy` replaces the implicit
//! prototype by a free vector in the normalized space, initialised at the
//! implicit value and optimised alongside the class prototypes.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::prediction::{plogp, softmax_rows, PredictionSheet, PLOGP_FLOOR};
use crate::transforms::{center_normalize, center_normalize_rows, CenteringPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[serde(alias = "ostim", alias = "ostim_implicit")]
    Implicit,
    TimClosed,
    ExplicitDummy,
}

impl Variant {
    pub fn has_outlier_column(self) -> bool {
        !matches!(self, Variant::TimClosed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OstimConfig {
    pub alpha: f64,
    pub n_steps: usize,
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    pub temperature: f64,
}

impl Default for OstimConfig {
    fn default() -> Self {
        Self { alpha: 1.0, n_steps: 200, learning_rate: 1e-3, temperature: 10.0 }
    }
}

impl OstimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("ostim.alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("ostim.lr must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("ostim.temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Optimisation state: raw class prototypes, the frozen center, and for
/// `ExplicitDummy` the outlier prototype (already in normalized space).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub w: Array2<f64>,
    pub mu: Array1<f64>,
    pub variant: Variant,
    pub dummy: Option<Array1<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub marginal_entropy: f64,
    pub conditional_entropy: f64,
    /// `ce - marginal_entropy + alpha * conditional_entropy`
    pub total: f64,
}

/// Gradient of the total loss with respect to the free parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub w: Array2<f64>,
    pub dummy: Option<Array1<f64>>,
}

impl PrototypeSet {
    pub fn n_way(&self) -> usize {
        self.w.nrows()
    }

    fn n_outcomes(&self) -> usize {
        self.n_way() + usize::from(self.variant.has_outlier_column())
    }

    fn validate(&self) -> Result<()> {
        if self.n_way() < 2 {
            return Err(Error::Shape("need at least two prototypes".into()));
        }
        if self.w.ncols() != self.mu.len() {
            return Err(Error::Shape("prototype and center dimensions differ".into()));
        }
        let finite = self.w.iter().chain(self.mu.iter()).all(|v| v.is_finite());
        match (&self.dummy, self.variant) {
            (None, Variant::ExplicitDummy) => {
                Err(Error::InvalidArgument("explicit-dummy variant without a dummy".into()))
            }
            (Some(d), Variant::ExplicitDummy) if !d.iter().all(|v| v.is_finite()) => {
                Err(Error::InvalidArgument("non-finite dummy prototype".into()))
            }
            _ if !finite => Err(Error::InvalidArgument("non-finite prototype state".into())),
            _ => Ok(()),
        }
    }

    /// Center-normalized prototypes (rows) and their pre-normalization norms.
    fn normalized(&self) -> Result<(Array2<f64>, Vec<f64>)> {
        let mut u = Array2::zeros(self.w.raw_dim());
        let mut radii = Vec::with_capacity(self.n_way());
        for (w, mut dst) in self.w.outer_iter().zip(u.outer_iter_mut()) {
            let d = &w - &self.mu;
            radii.push(d.dot(&d).sqrt());
            dst.assign(&center_normalize(w, self.mu.view())?);
        }
        Ok((u, radii))
    }

    /// Logits of the center-normalized rows `x` against this state.
    fn logits_of(&self, u: &Array2<f64>, x: &Array2<f64>, temperature: f64) -> Array2<f64> {
        let k = self.n_way();
        let mut l = Array2::zeros((x.nrows(), self.n_outcomes()));
        l.slice_mut(ndarray::s![.., ..k]).assign(&(x.dot(&u.t()) * temperature));
        match self.variant {
            Variant::Implicit => {
                let outlier = l.slice(ndarray::s![.., ..k]).sum_axis(Axis(1)) / -(k as f64);
                l.column_mut(k).assign(&outlier);
            }
            Variant::ExplicitDummy => {
                let v = self.dummy.as_ref().expect("validated");
                l.column_mut(k).assign(&(x.dot(v) * temperature));
            }
            Variant::TimClosed => {}
        }
        l
    }

    /// Logit vector of a single raw feature vector: `K + 1` entries, or `K`
    /// for `TimClosed`.
    pub fn logits(&self, z: ArrayView1<'_, f64>, temperature: f64) -> Result<Array1<f64>> {
        self.validate()?;
        let x = center_normalize(z, self.mu.view())?.insert_axis(Axis(0));
        let (u, _) = self.normalized()?;
        Ok(self.logits_of(&u, &x, temperature).row(0).to_owned())
    }
}

/// Center-normalized episode features; fixed during refinement.
struct Normalized<'a> {
    support: Array2<f64>,
    labels: &'a [usize],
    query: Array2<f64>,
}

impl<'a> Normalized<'a> {
    fn new(episode: &'a Episode, mu: &Array1<f64>) -> Result<Self> {
        Ok(Self {
            support: center_normalize_rows(&episode.support_vectors, mu.view())?,
            labels: &episode.support_labels,
            query: center_normalize_rows(&episode.query_vectors, mu.view())?,
        })
    }
}

/// Class centroids of the raw support vectors; the dummy (if any) starts at
/// the implicit outlier prototype.
pub fn init_prototypes(episode: &Episode, policy: &CenteringPolicy, variant: Variant) -> Result<PrototypeSet> {
    let mu = policy.resolve(episode)?;
    let k = episode.n_way;
    let mut w = Array2::<f64>::zeros((k, episode.dim()));
    let mut counts = vec![0usize; k];
    for (row, &l) in episode.support_vectors.outer_iter().zip(&episode.support_labels) {
        let mut dst = w.row_mut(l);
        dst += &row;
        counts[l] += 1;
    }
    for (mut row, &c) in w.outer_iter_mut().zip(&counts) {
        row /= c as f64;
    }
    let mut ps = PrototypeSet { w, mu, variant, dummy: None };
    if variant == Variant::ExplicitDummy {
        let (u, _) = ps.normalized()?;
        ps.dummy = Some(u.sum_axis(Axis(0)) / -(k as f64));
    }
    Ok(ps)
}

fn loss_and_gradient_inner(
    ps: &PrototypeSet,
    feats: &Normalized<'_>,
    cfg: &OstimConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradient>)> {
    let k = ps.n_way();
    let c = ps.n_outcomes();
    let tau = cfg.temperature;
    let (u, radii) = ps.normalized()?;

    let ps_prob = softmax_rows(&ps.logits_of(&u, &feats.support, tau));
    let pq = softmax_rows(&ps.logits_of(&u, &feats.query, tau));
    let ns = feats.support.nrows() as f64;
    let nq = feats.query.nrows() as f64;

    let mut ce = 0.0;
    for (row, &y) in ps_prob.outer_iter().zip(feats.labels) {
        ce -= row[y].max(PLOGP_FLOOR).ln();
    }
    ce /= ns;
    let marginal = pq.mean_axis(Axis(0)).expect("non-empty query set");
    let marginal_entropy = -marginal.iter().map(|&p| plogp(p)).sum::<f64>();
    let conditional_entropy = -pq.iter().map(|&p| plogp(p)).sum::<f64>() / nq;
    let total = ce - marginal_entropy + cfg.alpha * conditional_entropy;
    let loss = LossBreakdown { ce, marginal_entropy, conditional_entropy, total };
    if !want_grad {
        return Ok((loss, None));
    }

    // d total / d logits, support rows.
    let mut gs = ps_prob.clone();
    for (mut row, &y) in gs.outer_iter_mut().zip(feats.labels) {
        row[y] -= 1.0;
    }
    gs /= ns;

    // d total / d probs, query rows, then through the softmax.
    let log_marg: Vec<f64> = marginal.iter().map(|&p| if p < PLOGP_FLOOR { 0.0 } else { p.ln() + 1.0 }).collect();
    let mut gq = Array2::zeros(pq.raw_dim());
    for (p, mut g) in pq.outer_iter().zip(gq.outer_iter_mut()) {
        let a: Vec<f64> = (0..c)
            .map(|j| {
                let cond = if p[j] < PLOGP_FLOOR { 0.0 } else { -cfg.alpha * (p[j].ln() + 1.0) };
                (log_marg[j] + cond) / nq
            })
            .collect();
        let mean_a: f64 = (0..c).map(|j| p[j] * a[j]).sum();
        for j in 0..c {
            g[j] = p[j] * (a[j] - mean_a);
        }
    }

    // Fold the implicit outlier column back onto the inlier logits.
    let fold = |g: &Array2<f64>| -> Array2<f64> {
        let mut out = g.slice(ndarray::s![.., ..k]).to_owned();
        if ps.variant == Variant::Implicit {
            let last = g.column(k).to_owned() / k as f64;
            for mut col in out.columns_mut() {
                col -= &last;
            }
        }
        out
    };
    let du = (fold(&gs).t().dot(&feats.support) + fold(&gq).t().dot(&feats.query)) * tau;

    let mut dw = Array2::zeros(ps.w.raw_dim());
    for (kk, &r) in radii.iter().enumerate() {
        let uk = u.row(kk);
        let g = du.row(kk);
        let radial = uk.dot(&g);
        dw.row_mut(kk).assign(&((&g - &(&uk * radial)) / r));
    }
    let dummy = (ps.variant == Variant::ExplicitDummy)
        .then(|| (gs.column(k).dot(&feats.support) + gq.column(k).dot(&feats.query)) * tau);
    Ok((loss, Some(Gradient { w: dw, dummy })))
}

pub fn compute_loss(ps: &PrototypeSet, episode: &Episode, cfg: &OstimConfig) -> Result<LossBreakdown> {
    ps.validate()?;
    let feats = Normalized::new(episode, &ps.mu)?;
    Ok(loss_and_gradient_inner(ps, &feats, cfg, false)?.0)
}

pub fn loss_and_gradient(ps: &PrototypeSet, episode: &Episode, cfg: &OstimConfig) -> Result<(LossBreakdown, Gradient)> {
    ps.validate()?;
    let feats = Normalized::new(episode, &ps.mu)?;
    let (loss, grad) = loss_and_gradient_inner(ps, &feats, cfg, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// `cfg.n_steps` gradient-descent steps. The returned trace holds the loss
/// at every iterate, initial state included (`n_steps + 1` entries).
pub fn refine(ps: &PrototypeSet, episode: &Episode, cfg: &OstimConfig) -> Result<(PrototypeSet, Vec<LossBreakdown>)> {
    refine_with(ps, episode, cfg, |_, _| {})
}

/// Like [`refine`], calling `observe(step, state)` on every iterate.
pub fn refine_with(
    ps: &PrototypeSet,
    episode: &Episode,
    cfg: &OstimConfig,
    mut observe: impl FnMut(usize, &PrototypeSet),
) -> Result<(PrototypeSet, Vec<LossBreakdown>)> {
    cfg.validate()?;
    ps.validate()?;
    let feats = Normalized::new(episode, &ps.mu)?;
    let mut state = ps.clone();
    let mut trace = Vec::with_capacity(cfg.n_steps + 1);
    for step in 0..=cfg.n_steps {
        observe(step, &state);
        let last = step == cfg.n_steps;
        let (loss, grad) = loss_and_gradient_inner(&state, &feats, cfg, !last).map_err(|e| match e {
            Error::Degenerate { .. } if step > 0 => {
                Error::Divergence { step, what: "prototype collapsed onto the center".into() }
            }
            Error::InvalidArgument(msg) if step > 0 => Error::Divergence { step, what: msg },
            other => other,
        })?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence { step, what: "non-finite loss".into() });
        }
        trace.push(loss);
        if let Some(grad) = grad {
            let finite = grad.w.iter().chain(grad.dummy.iter().flatten()).all(|g| g.is_finite());
            if !finite {
                return Err(Error::Divergence { step, what: "non-finite gradient".into() });
            }
            state.w.scaled_add(-cfg.learning_rate, &grad.w);
            if let (Some(d), Some(gd)) = (state.dummy.as_mut(), grad.dummy.as_ref()) {
                d.scaled_add(-cfg.learning_rate, gd);
            }
            let finite = state.w.iter().chain(state.dummy.iter().flatten()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Divergence { step: step + 1, what: "non-finite prototypes".into() });
            }
        }
    }
    Ok((state, trace))
}

/// Softmax predictions for the episode's queries. Open-set variants score
/// outlierness with the last probability; `TimClosed` with the negative
/// maximum probability.
pub fn predict(ps: &PrototypeSet, episode: &Episode, cfg: &OstimConfig) -> Result<PredictionSheet> {
    ps.validate()?;
    let query = center_normalize_rows(&episode.query_vectors, ps.mu.view())?;
    let (u, _) = ps.normalized()?;
    let probs = softmax_rows(&ps.logits_of(&u, &query, cfg.temperature));
    Ok(if ps.variant.has_outlier_column() {
        PredictionSheet::open_set(probs)
    } else {
        PredictionSheet::closed_set(probs)
    })
}

/// Initialise, refine and predict in one go.
pub fn infer(
    episode: &Episode,
    policy: &CenteringPolicy,
    variant: Variant,
    cfg: &OstimConfig,
) -> Result<PredictionSheet> {
    let init = init_prototypes(episode, policy, variant)?;
    let (refined, _) = refine(&init, episode, cfg)?;
    predict(&refined, episode, cfg)
}
