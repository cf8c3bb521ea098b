//! Run orchestration: configuration, the paired episode loop, method
//! dispatch, the alpha validation sweep and report files.
//!
//! Every method of a run sees the same episode for a given index. Episodes
//! are evaluated on a bounded rayon pool and collected in index order, so
//! reports do not depend on the worker count.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{knn_outlier_score, simpleshot_classify, BaselineConfig};
use crate::episode::{sample_episode_from, EpisodeSpec};
use crate::error::{Error, Result};
use crate::feature_store::{base_mean, load_feature_store, FeatureSet, Split};
use crate::metrics::{aggregate, Aggregate, EpisodeReport, Summary};
use crate::ostim::{self, OstimConfig, Variant};
use crate::transforms::{CenteringKind, CenteringPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ostim,
    TimClosed,
    ExplicitDummy,
    Simpleshot,
    Knn,
    StrongBaseline,
}

impl Method {
    pub fn is_transductive(self) -> bool {
        matches!(self, Method::Ostim | Method::TimClosed | Method::ExplicitDummy)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Ostim => "ostim",
            Method::TimClosed => "tim_closed",
            Method::ExplicitDummy => "explicit_dummy",
            Method::Simpleshot => "simpleshot",
            Method::Knn => "knn",
            Method::StrongBaseline => "strong_baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OstimSection {
    pub alpha: f64,
    pub n_steps: usize,
    pub lr: f64,
    pub temperature: f64,
    /// Variant used by the `ostim` method.
    pub variant: Variant,
    pub centering: Option<CenteringKind>,
}

impl Default for OstimSection {
    fn default() -> Self {
        let d = OstimConfig::default();
        Self {
            alpha: d.alpha,
            n_steps: d.n_steps,
            lr: d.learning_rate,
            temperature: d.temperature,
            variant: Variant::Implicit,
            centering: None,
        }
    }
}

impl OstimSection {
    pub fn config(&self) -> OstimConfig {
        OstimConfig { alpha: self.alpha, n_steps: self.n_steps, learning_rate: self.lr, temperature: self.temperature }
    }
}

fn default_n_episodes() -> usize {
    600
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    Acc,
    Auroc,
    Aupr,
    PrecAt90,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Split the sweep samples episodes from.
    pub split: Split,
    /// Mean metric maximized by the sweep.
    pub metric: SweepMetric,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { split: Split::Val, metric: SweepMetric::Auroc }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub store: PathBuf,
    #[serde(default)]
    pub episodes: EpisodeSpec,
    pub methods: Vec<Method>,
    #[serde(default = "default_n_episodes")]
    pub n_episodes: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Applies to every method unless its own section overrides it.
    #[serde(default)]
    pub centering: Option<CenteringKind>,
    #[serde(default)]
    pub ostim: OstimSection,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Minimal config over an in-memory store.
    pub fn new(methods: Vec<Method>) -> Self {
        Self {
            store: PathBuf::new(),
            episodes: EpisodeSpec::default(),
            methods,
            n_episodes: default_n_episodes(),
            workers: default_workers(),
            output_dir: None,
            centering: None,
            ostim: OstimSection::default(),
            baseline: BaselineConfig::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if self.n_episodes == 0 {
            return Err(Error::Config("n_episodes must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.episodes.validate()?;
        self.ostim.config().validate()?;
        self.baseline.validate()?;
        if self.baseline.knn_k > self.episodes.n_support() {
            return Err(Error::Config(format!(
                "baseline.knn_k = {} exceeds the {} support vectors per episode",
                self.baseline.knn_k,
                self.episodes.n_support()
            )));
        }
        Ok(())
    }

    pub fn centering_for(&self, method: Method) -> CenteringKind {
        let own = if method.is_transductive() { self.ostim.centering } else { self.baseline.centering };
        own.or(self.centering).unwrap_or(if method.is_transductive() {
            CenteringKind::Task
        } else {
            CenteringKind::Base
        })
    }

    /// Config as recorded in reports; execution-only keys are dropped so
    /// reports are identical across worker counts and output locations.
    fn snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("workers");
            obj.remove("output_dir");
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub shot: usize,
    pub centering: CenteringKind,
    #[serde(flatten)]
    pub metrics: Aggregate,
    /// CRC32 over the checksums of the episodes this method was scored on.
    pub stream_digest: String,
    #[serde(skip)]
    pub episodes: Vec<EpisodeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub split: Split,
    pub reports: Vec<MethodReport>,
    pub episode_checksums: Vec<String>,
}

/// Resolves per-method centering and runs one method on one episode.
struct Evaluator<'a> {
    cfg: &'a RunConfig,
    base_mu: Option<ndarray::Array1<f64>>,
}

impl<'a> Evaluator<'a> {
    fn new(fs: &FeatureSet, cfg: &'a RunConfig, methods: &[Method]) -> Result<Self> {
        let needs_base = methods.iter().any(|&m| cfg.centering_for(m) == CenteringKind::Base);
        let base_mu = if needs_base { Some(base_mean(fs)?) } else { None };
        Ok(Self { cfg, base_mu })
    }

    fn policy(&self, method: Method) -> CenteringPolicy {
        match self.cfg.centering_for(method) {
            CenteringKind::None => CenteringPolicy::none(),
            CenteringKind::Task => CenteringPolicy::task(),
            CenteringKind::Base => CenteringPolicy::base(self.base_mu.clone().expect("computed when needed")),
        }
    }

    fn evaluate(&self, method: Method, episode: &crate::Episode, ostim_cfg: &OstimConfig) -> Result<EpisodeReport> {
        let policy = self.policy(method);
        let truth = &episode.query_truth;
        let b = &self.cfg.baseline;
        match method {
            Method::Ostim | Method::TimClosed | Method::ExplicitDummy => {
                let variant = match method {
                    Method::Ostim => self.cfg.ostim.variant,
                    Method::TimClosed => Variant::TimClosed,
                    _ => Variant::ExplicitDummy,
                };
                let sheet = ostim::infer(episode, &policy, variant, ostim_cfg)?;
                EpisodeReport::from_sheet(&sheet, truth)
            }
            Method::Simpleshot => {
                let sheet = simpleshot_classify(episode, &policy, b.temperature)?;
                EpisodeReport::from_sheet(&sheet, truth)
            }
            Method::Knn => {
                let scores = knn_outlier_score(episode, &policy, b.knn_k)?;
                EpisodeReport::score(None, &scores, truth)
            }
            Method::StrongBaseline => {
                let sheet = simpleshot_classify(episode, &policy, b.temperature)?;
                let scores = knn_outlier_score(episode, &policy, b.knn_k)?;
                EpisodeReport::score(Some(&sheet), &scores, truth)
            }
        }
    }
}

/// Per-episode checksums and per-method reports, in index order.
type EpisodeResults = (Vec<u32>, Vec<Vec<EpisodeReport>>);

fn run_episodes(
    fs: &FeatureSet,
    cfg: &RunConfig,
    split: Split,
    methods: &[Method],
    ostim_cfg: &OstimConfig,
) -> Result<EpisodeResults> {
    let evaluator = Evaluator::new(fs, cfg, methods)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<(u32, Vec<EpisodeReport>)>> = pool.install(|| {
        (0..cfg.n_episodes as u64)
            .into_par_iter()
            .map(|index| {
                let episode = sample_episode_from(fs, split, &cfg.episodes, index)?;
                let checksum = episode.checksum();
                log::debug!("episode {index} checksum {checksum:08x}");
                let reports = methods
                    .iter()
                    .map(|&m| {
                        evaluator.evaluate(m, &episode, ostim_cfg).map_err(|e| Error::Method {
                            method: m.name().to_string(),
                            episode: index,
                            source: Box::new(e),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((checksum, reports))
            })
            .collect()
    });
    let mut checksums = Vec::with_capacity(results.len());
    let mut per_method = vec![Vec::with_capacity(results.len()); methods.len()];
    // First failure in index order wins, independent of scheduling.
    for r in results {
        let (c, reports) = r?;
        checksums.push(c);
        for (slot, rep) in per_method.iter_mut().zip(reports) {
            slot.push(rep);
        }
    }
    Ok((checksums, per_method))
}

fn digest(checksums: &[u32]) -> String {
    let mut h = crc32fast::Hasher::new();
    for c in checksums {
        h.update(&c.to_le_bytes());
    }
    format!("{:08x}", h.finalize())
}

/// Evaluates every configured method on the shared episode stream of `split`.
pub fn run_on(fs: &FeatureSet, cfg: &RunConfig, split: Split) -> Result<RunReport> {
    cfg.validate()?;
    let (checksums, per_method) = run_episodes(fs, cfg, split, &cfg.methods, &cfg.ostim.config())?;
    let stream = digest(&checksums);
    let reports = cfg
        .methods
        .iter()
        .zip(per_method)
        .map(|(&method, episodes)| {
            Ok(MethodReport {
                method,
                shot: cfg.episodes.n_shot,
                centering: cfg.centering_for(method),
                metrics: aggregate(&episodes)?,
                stream_digest: stream.clone(),
                episodes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        config: cfg.snapshot(),
        split,
        reports,
        episode_checksums: checksums.iter().map(|c| format!("{c:08x}")).collect(),
    })
}

/// Loads the store named in `cfg` and runs on its test split.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let fs = load_feature_store(&cfg.store)?;
    run_on(&fs, cfg, Split::Test)
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

pub fn report_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "shot",
        "acc",
        "acc_pm",
        "auroc",
        "auroc_pm",
        "aupr",
        "aupr_pm",
        "prec_at_90",
        "prec_at_90_pm",
    ])?;
    for r in &report.reports {
        let m = &r.metrics;
        let (acc, acc_pm) = m.acc.map_or((String::new(), String::new()), |a| (pct(a.mean), pct(a.ci95)));
        w.write_record([
            r.method.name().to_string(),
            r.shot.to_string(),
            acc,
            acc_pm,
            pct(m.auroc.mean),
            pct(m.auroc.ci95),
            pct(m.aupr.mean),
            pct(m.aupr.ci95),
            pct(m.prec_at_90.mean),
            pct(m.prec_at_90.ci95),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

/// Writes `run_report.json` and `run_report.csv` into `dir`.
pub fn write_reports(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("run_report.json");
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = dir.join("run_report.csv");
    fs::write(&csv_path, report_csv(report)?).map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub acc: Summary,
    pub auroc: Summary,
    pub aupr: Summary,
    pub prec_at_90: Summary,
}

impl SweepRow {
    fn metric(&self, m: SweepMetric) -> f64 {
        match m {
            SweepMetric::Acc => self.acc.mean,
            SweepMetric::Auroc => self.auroc.mean,
            SweepMetric::Aupr => self.aupr.mean,
            SweepMetric::PrecAt90 => self.prec_at_90.mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub split: Split,
    pub metric: SweepMetric,
    pub best_alpha: f64,
    pub table: Vec<SweepRow>,
}

/// Runs the `ostim` method on `cfg.sweep.split` for each alpha in `grid` and
/// keeps the one with the highest mean `cfg.sweep.metric` (ties go to the
/// smaller alpha).
pub fn sweep_alpha(fs: &FeatureSet, cfg: &RunConfig, grid: &[f64]) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty alpha grid".into()));
    }
    cfg.validate()?;
    let mut table = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let ostim_cfg = OstimConfig { alpha, ..cfg.ostim.config() };
        ostim_cfg.validate()?;
        let (_, mut per) = run_episodes(fs, cfg, cfg.sweep.split, &[Method::Ostim], &ostim_cfg)?;
        let agg = aggregate(&per.remove(0))?;
        table.push(SweepRow {
            alpha,
            acc: agg.acc.expect("ostim predicts classes"),
            auroc: agg.auroc,
            aupr: agg.aupr,
            prec_at_90: agg.prec_at_90,
        });
    }
    let m = cfg.sweep.metric;
    let best = table
        .iter()
        .fold(None::<&SweepRow>, |best, row| match best {
            Some(b) if b.metric(m) > row.metric(m) || (b.metric(m) == row.metric(m) && b.alpha <= row.alpha) => Some(b),
            _ => Some(row),
        })
        .expect("non-empty grid");
    Ok(SweepResult { split: cfg.sweep.split, metric: m, best_alpha: best.alpha, table })
}
