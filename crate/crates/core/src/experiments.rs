//! Seeded comparison studies. Every study returns its raw per-trial records
//! together with a summary computed from them, and can write both as CSV
//! plus a JSON manifest. Trials run on a worker pool whose width is capped
//! by `MFNET_THREADS`; records are kept in trial order so output does not
//! depend on scheduling.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisSpec};
use crate::data_io::{self, error_report, mse, FamilySpec, Problem};
use crate::error::{Error, Result};
use crate::graph::{EdgeSpec, GraphSpec, NodeId, NodeSpec};
use crate::mfnet::MfNet;
use crate::networks;
use crate::objective::{NodeData, RegConfig};
use crate::optimize::{fit, fit_auto, single_fidelity_fit, FitConfig};
use crate::params::ParamVector;

pub const THREADS_ENV: &str = "MFNET_THREADS";

/// Run `f` over `items` on a pool capped by `MFNET_THREADS`, keeping input
/// order in the output.
pub fn run_trials<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Median of the finite entries; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn fraction(flags: impl IntoIterator<Item = bool>) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for f in flags {
        hit += f as usize;
        total += 1;
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

fn with_seed(config: &FitConfig, seed: u64) -> FitConfig {
    FitConfig { seed, ..config.clone() }
}

/// Study outputs: file name to CSV rows.
pub trait Records {
    fn write_csv(&self, dir: &Path) -> Result<()>;
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write `manifest.json` recording the study name and its configuration.
pub fn write_manifest<C: Serialize>(dir: &Path, name: &str, config: &C) -> Result<()> {
    let manifest = serde_json::json!({
        "experiment": name,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    let path = dir.join("manifest.json");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Seeds `master, master + 1, ...`.
pub fn seed_range(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| master.wrapping_add(i)).collect()
}

// ---------------------------------------------------------------------------
// three-source recovery

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThreeModelConfig {
    pub seeds: Vec<u64>,
    pub counts: [usize; 3],
    pub nested: bool,
    pub fit: FitConfig,
}

impl Default for ThreeModelConfig {
    fn default() -> Self {
        ThreeModelConfig {
            seeds: seed_range(0, 20),
            counts: [2, 3, 3],
            nested: true,
            // a faint ridge picks a well-behaved member of the interpolating
            // family when the data cannot pin down every coefficient
            fit: FitConfig {
                reg: RegConfig::gaussian(1e-8),
                max_iters: 5000,
                grad_tol: 1e-12,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeModelTrial {
    pub seed: u64,
    pub mse_true: f64,
    pub mse_hier: f64,
    pub ratio: f64,
    pub rrmse_true: f64,
    pub rrmse_hier: f64,
    pub rrmse_single_deg1: f64,
    pub rrmse_single_deg2: f64,
    pub rrmse_single_deg3: f64,
    /// Monomial coefficients of the learned `f_2` (true graph).
    pub f2_c0: f64,
    pub f2_c1: f64,
    pub f2_c2: f64,
    pub f2_max_rel_error: f64,
    pub converged_true: bool,
    pub converged_hier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub seed: u64,
    pub x: f64,
    pub truth: f64,
    pub abs_err_true: f64,
    pub abs_err_hier: f64,
    pub abs_err_single_deg3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeModelSummary {
    pub trials: usize,
    pub median_ratio: f64,
    pub median_rrmse_true: f64,
    pub median_rrmse_hier: f64,
    pub median_rrmse_single_deg3: f64,
    pub f2_recovered_fraction: f64,
    pub converged_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct ThreeModelReport {
    pub trials: Vec<ThreeModelTrial>,
    pub curves: Vec<CurvePoint>,
    pub summary: ThreeModelSummary,
}

/// Tolerance on relative coefficient error used for the recovery fraction.
pub const F2_TOL: f64 = 1e-2;

impl ThreeModelSummary {
    pub fn from_trials(trials: &[ThreeModelTrial]) -> Self {
        let col = |f: fn(&ThreeModelTrial) -> f64| trials.iter().map(f).collect::<Vec<_>>();
        ThreeModelSummary {
            trials: trials.len(),
            median_ratio: median(&col(|t| t.ratio)),
            median_rrmse_true: median(&col(|t| t.rrmse_true)),
            median_rrmse_hier: median(&col(|t| t.rrmse_hier)),
            median_rrmse_single_deg3: median(&col(|t| t.rrmse_single_deg3)),
            f2_recovered_fraction: fraction(trials.iter().map(|t| t.f2_max_rel_error <= F2_TOL)),
            converged_fraction: fraction(trials.iter().map(|t| t.converged_true && t.converged_hier)),
        }
    }
}

pub fn run_three_model(config: &ThreeModelConfig) -> Result<ThreeModelReport> {
    let (truth_net, truth) = data_io::three_model_truth();
    let f2_true = truth_net.expand_to_polynomial(&truth, 2)?;
    let true_net = MfNet::new(networks::three_model_true())?;
    let hier_net = MfNet::new(networks::three_model_hierarchical())?;
    let results = run_trials(&config.seeds, |&seed| {
        let p = data_io::generate_three_model(&config.counts, config.nested, seed)?;
        let cfg = with_seed(&config.fit, seed);
        let ft = fit(&true_net, &p.datasets, &cfg)?;
        let fh = fit(&hier_net, &p.datasets, &cfg)?;
        let pt = true_net.evaluate(&ft.params, 3, &p.test_x)?;
        let ph = hier_net.evaluate(&fh.params, 3, &p.test_x)?;
        let d3 = &p.datasets[2];
        let mut single = Vec::new();
        for deg in 1..=3 {
            let basis = Basis::new(BasisSpec::monomial(deg, 1))?;
            let theta = single_fidelity_fit(&basis, &d3.x, &d3.y, None)?;
            single.push(basis.eval(&p.test_x)? * theta);
        }
        let f2 = true_net.expand_to_polynomial(&ft.params, 2)?;
        let coeffs: Vec<f64> = (0..3).map(|k| f2.coefficient(&[k])).collect();
        let rel = (0..3)
            .map(|k| {
                let t = f2_true.coefficient(&[k]);
                (coeffs[k] - t).abs() / t.abs()
            })
            .fold(0.0, f64::max);
        let (mt, mh) = (mse(&p.test_y, &pt), mse(&p.test_y, &ph));
        let trial = ThreeModelTrial {
            seed,
            mse_true: mt,
            mse_hier: mh,
            ratio: mt / mh,
            rrmse_true: error_report(&p.test_y, &pt)?.relative_rmse,
            rrmse_hier: error_report(&p.test_y, &ph)?.relative_rmse,
            rrmse_single_deg1: error_report(&p.test_y, &single[0])?.relative_rmse,
            rrmse_single_deg2: error_report(&p.test_y, &single[1])?.relative_rmse,
            rrmse_single_deg3: error_report(&p.test_y, &single[2])?.relative_rmse,
            f2_c0: coeffs[0],
            f2_c1: coeffs[1],
            f2_c2: coeffs[2],
            f2_max_rel_error: rel,
            converged_true: ft.converged,
            converged_hier: fh.converged,
        };
        let curves: Vec<CurvePoint> = (0..p.test_x.nrows())
            .map(|i| CurvePoint {
                seed,
                x: p.test_x[(i, 0)],
                truth: p.test_y[i],
                abs_err_true: (pt[i] - p.test_y[i]).abs(),
                abs_err_hier: (ph[i] - p.test_y[i]).abs(),
                abs_err_single_deg3: (single[2][i] - p.test_y[i]).abs(),
            })
            .collect();
        Ok((trial, curves))
    })?;
    let (trials, curves): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = ThreeModelSummary::from_trials(&trials);
    Ok(ThreeModelReport { trials, curves: curves.concat(), summary })
}

impl Records for ThreeModelReport {
    fn write_csv(&self, dir: &Path) -> Result<()> {
        write_rows(&dir.join("trials.csv"), &self.trials)?;
        write_rows(&dir.join("curves.csv"), &self.curves)?;
        write_rows(&dir.join("summary.csv"), std::slice::from_ref(&self.summary))
    }
}

// ---------------------------------------------------------------------------
// nine noisy sources, three graph orderings

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub seeds: Vec<u64>,
    pub counts: [usize; 9],
    pub node_degree: usize,
    pub edge_degree: usize,
    pub fit: FitConfig,
    /// Write pointwise error surfaces for the first seed.
    pub surfaces: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            seeds: seed_range(0, 10),
            counts: [20; 9],
            node_degree: 5,
            edge_degree: 1,
            fit: FitConfig {
                init: crate::params::InitScheme::ConstantEdgeOne,
                reg: RegConfig::gaussian(1.0),
                max_iters: 1000,
                ..Default::default()
            },
            surfaces: true,
        }
    }
}

pub const NOISE_GRAPHS: [&str; 3] = ["natural", "by_form", "by_count"];

pub fn noise_graphs(node_degree: usize, edge_degree: usize) -> [GraphSpec; 3] {
    let nb = BasisSpec::monomial(node_degree, 2);
    let eb = BasisSpec::monomial(edge_degree, 2);
    [
        networks::noise_natural(nb.clone(), eb.clone()),
        networks::noise_by_form(nb.clone(), eb.clone()),
        networks::noise_by_count(nb, eb),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrial {
    pub seed: u64,
    pub mse_natural: f64,
    pub mse_by_form: f64,
    pub mse_by_count: f64,
    pub ratio_by_form: f64,
    pub ratio_by_count: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub seed: u64,
    pub x1: f64,
    pub x2: f64,
    pub truth: f64,
    pub err_natural: f64,
    pub err_by_form: f64,
    pub err_by_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub trials: usize,
    pub median_ratio_by_form: f64,
    pub median_ratio_by_count: f64,
    pub median_mse_natural: f64,
    pub median_mse_by_form: f64,
    pub median_mse_by_count: f64,
}

impl NoiseSummary {
    pub fn from_trials(trials: &[NoiseTrial]) -> Self {
        let col = |f: fn(&NoiseTrial) -> f64| trials.iter().map(f).collect::<Vec<_>>();
        NoiseSummary {
            trials: trials.len(),
            median_ratio_by_form: median(&col(|t| t.ratio_by_form)),
            median_ratio_by_count: median(&col(|t| t.ratio_by_count)),
            median_mse_natural: median(&col(|t| t.mse_natural)),
            median_mse_by_form: median(&col(|t| t.mse_by_form)),
            median_mse_by_count: median(&col(|t| t.mse_by_count)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub trials: Vec<NoiseTrial>,
    pub surfaces: Vec<SurfacePoint>,
    pub summary: NoiseSummary,
}

pub fn run_noise_orderings(config: &NoiseConfig) -> Result<NoiseReport> {
    let nets = noise_graphs(config.node_degree, config.edge_degree)
        .into_iter()
        .map(MfNet::new)
        .collect::<Result<Vec<_>>>()?;
    let first = config.seeds.first().copied();
    let results = run_trials(&config.seeds, |&seed| {
        let p = data_io::generate_analytical_noise(&config.counts, None, seed)?;
        let cfg = with_seed(&config.fit, seed);
        let mut preds = Vec::new();
        let mut converged = true;
        for net in &nets {
            let r = fit(net, &p.datasets, &cfg)?;
            converged &= r.converged;
            preds.push(net.evaluate(&r.params, 9, &p.test_x)?);
        }
        let m: Vec<f64> = preds.iter().map(|q| mse(&p.test_y, q)).collect();
        let trial = NoiseTrial {
            seed,
            mse_natural: m[0],
            mse_by_form: m[1],
            mse_by_count: m[2],
            ratio_by_form: m[0] / m[1],
            ratio_by_count: m[0] / m[2],
            converged,
        };
        let surfaces = if config.surfaces && Some(seed) == first {
            (0..p.test_x.nrows())
                .map(|i| SurfacePoint {
                    seed,
                    x1: p.test_x[(i, 0)],
                    x2: p.test_x[(i, 1)],
                    truth: p.test_y[i],
                    err_natural: (preds[0][i] - p.test_y[i]).abs(),
                    err_by_form: (preds[1][i] - p.test_y[i]).abs(),
                    err_by_count: (preds[2][i] - p.test_y[i]).abs(),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok((trial, surfaces))
    })?;
    let (trials, surfaces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = NoiseSummary::from_trials(&trials);
    Ok(NoiseReport { trials, surfaces: surfaces.concat(), summary })
}

impl Records for NoiseReport {
    fn write_csv(&self, dir: &Path) -> Result<()> {
        write_rows(&dir.join("trials.csv"), &self.trials)?;
        if !self.surfaces.is_empty() {
            write_rows(&dir.join("surfaces.csv"), &self.surfaces)?;
        }
        write_rows(&dir.join("summary.csv"), std::slice::from_ref(&self.summary))
    }
}

// ---------------------------------------------------------------------------
// topology comparison on subsampled pools

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PoolSource {
    /// A fresh peer-truth pool per trial, seeded by the trial index.
    PeerFamily { pool_size: usize, noise: f64 },
    /// One fixed pool, e.g. loaded from files, used by every trial. The
    /// label names its origin in written manifests.
    Fixed {
        label: String,
        #[serde(skip)]
        data: Vec<NodeData>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub trials: usize,
    pub seed: u64,
    pub counts: [usize; 3],
    pub pool: PoolSource,
    pub fit: FitConfig,
    /// Histogram bins over log10 of each ratio.
    pub bins: usize,
    pub log10_range: [f64; 2],
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            trials: 500,
            seed: 0,
            counts: [20, 5, 2],
            pool: PoolSource::PeerFamily { pool_size: 100, noise: 0.0 },
            // unit prior variance on every coefficient, matching how the
            // peer-truth parameters are drawn
            fit: FitConfig { reg: RegConfig::gaussian(1.0), max_iters: 2000, ..Default::default() },
            bins: 40,
            log10_range: [-4.0, 4.0],
        }
    }
}

pub const TOPOLOGY_GRAPHS: [&str; 3] = ["full", "peer", "hier"];

pub fn topology_graphs() -> [GraphSpec; 3] {
    let (nb, eb) = networks::linear_1d();
    [
        networks::full(3, nb.clone(), eb.clone()),
        networks::peer(3, nb.clone(), eb.clone()),
        networks::chain(&[1, 2, 3], nb, eb),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyTrial {
    pub trial: usize,
    pub mse_full: f64,
    pub mse_peer: f64,
    pub mse_hier: f64,
    pub full_over_hier: f64,
    pub peer_over_hier: f64,
    pub full_over_peer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub pair: String,
    pub log10_lo: f64,
    pub log10_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub trials: usize,
    pub frac_full_beats_hier: f64,
    pub frac_peer_beats_hier: f64,
    pub frac_full_beats_peer: f64,
    pub median_full_over_hier: f64,
    pub median_peer_over_hier: f64,
    pub median_full_over_peer: f64,
}

impl TopologySummary {
    pub fn from_trials(trials: &[TopologyTrial]) -> Self {
        let col = |f: fn(&TopologyTrial) -> f64| trials.iter().map(f).collect::<Vec<_>>();
        TopologySummary {
            trials: trials.len(),
            frac_full_beats_hier: fraction(trials.iter().map(|t| t.full_over_hier < 1.0)),
            frac_peer_beats_hier: fraction(trials.iter().map(|t| t.peer_over_hier < 1.0)),
            frac_full_beats_peer: fraction(trials.iter().map(|t| t.full_over_peer < 1.0)),
            median_full_over_hier: median(&col(|t| t.full_over_hier)),
            median_peer_over_hier: median(&col(|t| t.peer_over_hier)),
            median_full_over_peer: median(&col(|t| t.full_over_peer)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopologyReport {
    pub trials: Vec<TopologyTrial>,
    pub histograms: Vec<HistogramBin>,
    pub summary: TopologySummary,
}

/// Bin `log10(ratio)` into `bins` equal cells over `range`; values outside
/// land in the end cells.
pub fn log_histogram(pair: &str, ratios: &[f64], bins: usize, range: [f64; 2]) -> Vec<HistogramBin> {
    let width = (range[1] - range[0]) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &r in ratios {
        if !(r > 0.0) || !r.is_finite() {
            continue;
        }
        let cell = ((r.log10() - range[0]) / width).floor();
        let cell = cell.clamp(0.0, (bins - 1) as f64) as usize;
        counts[cell] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            pair: pair.to_string(),
            log10_lo: range[0] + i as f64 * width,
            log10_hi: range[0] + (i + 1) as f64 * width,
            count,
        })
        .collect()
}

fn take_rows(d: &NodeData, rows: &[usize]) -> Result<NodeData> {
    let x = DMatrix::from_fn(rows.len(), d.x.ncols(), |i, j| d.x[(rows[i], j)]);
    let y = DVector::from_fn(rows.len(), |i, _| d.y[rows[i]]);
    NodeData::new(d.node, x, y, d.sigma)
}

/// Draw `counts[k]` training rows from each pool without replacement; the
/// remaining rows of the last node form the test set.
pub fn split_pool(pool: &[NodeData], counts: &[usize], seed: u64) -> Result<(Vec<NodeData>, NodeData)> {
    if pool.len() != counts.len() {
        return Err(Error::InvalidConfig(format!("{} pools for {} counts", pool.len(), counts.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = None;
    let last = pool.len() - 1;
    for (k, (d, &n)) in pool.iter().zip(counts).enumerate() {
        let needed = if k == last { n + 1 } else { n };
        if d.len() < needed || n == 0 {
            return Err(Error::PoolTooSmall { node: d.node, needed, available: d.len() });
        }
        let mut chosen = sample(&mut rng, d.len(), n).into_vec();
        chosen.sort_unstable();
        train.push(take_rows(d, &chosen)?);
        if k == last {
            let picked: BTreeSet<usize> = chosen.into_iter().collect();
            let rest: Vec<usize> = (0..d.len()).filter(|i| !picked.contains(i)).collect();
            test = Some(take_rows(d, &rest)?);
        }
    }
    Ok((train, test.expect("at least one pool")))
}

pub fn run_topology(config: &TopologyConfig) -> Result<TopologyReport> {
    if config.bins == 0 || !(config.log10_range[0] < config.log10_range[1]) {
        return Err(Error::InvalidConfig("histogram needs bins and an increasing range".into()));
    }
    let nets = topology_graphs().into_iter().map(MfNet::new).collect::<Result<Vec<_>>>()?;
    let ids: Vec<usize> = (0..config.trials).collect();
    let trials = run_trials(&ids, |&trial| {
        let trial_seed = config.seed.wrapping_add(trial as u64);
        let generated;
        let pool: &[NodeData] = match &config.pool {
            PoolSource::PeerFamily { pool_size, noise } => {
                let spec = FamilySpec {
                    family: data_io::Family::PeerTruth,
                    dim: 1,
                    node_degree: 1,
                    edge_degree: 1,
                    counts: vec![*pool_size; 3],
                    noise: *noise,
                    seed: trial_seed,
                };
                generated = data_io::generate_family(&spec)?.datasets;
                &generated
            }
            PoolSource::Fixed { data, .. } if data.len() == 3 => data,
            PoolSource::Fixed { label, data } => {
                return Err(Error::InvalidConfig(format!("pool '{label}' has {} nodes, expected 3", data.len())))
            }
        };
        let (train, test) = split_pool(pool, &config.counts, trial_seed ^ 0x5bd1_e995)?;
        let cfg = with_seed(&config.fit, trial_seed);
        let mut m = Vec::new();
        for net in &nets {
            let r = fit_auto(net, &train, &cfg)?;
            m.push(mse(&test.y, &net.evaluate(&r.params, 3, &test.x)?));
        }
        Ok(TopologyTrial {
            trial,
            mse_full: m[0],
            mse_peer: m[1],
            mse_hier: m[2],
            full_over_hier: m[0] / m[2],
            peer_over_hier: m[1] / m[2],
            full_over_peer: m[0] / m[1],
        })
    })?;
    let mut histograms = Vec::new();
    for (pair, f) in [
        ("full/hier", (|t: &TopologyTrial| t.full_over_hier) as fn(&TopologyTrial) -> f64),
        ("peer/hier", |t| t.peer_over_hier),
        ("full/peer", |t| t.full_over_peer),
    ] {
        let ratios: Vec<f64> = trials.iter().map(f).collect();
        histograms.extend(log_histogram(pair, &ratios, config.bins, config.log10_range));
    }
    let summary = TopologySummary::from_trials(&trials);
    Ok(TopologyReport { trials, histograms, summary })
}

impl Records for TopologyReport {
    fn write_csv(&self, dir: &Path) -> Result<()> {
        write_rows(&dir.join("trials.csv"), &self.trials)?;
        write_rows(&dir.join("histograms.csv"), &self.histograms)?;
        write_rows(&dir.join("summary.csv"), std::slice::from_ref(&self.summary))
    }
}

// ---------------------------------------------------------------------------
// lasso edge pruning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsityConfig {
    pub seeds: Vec<u64>,
    /// Lasso weights swept at the base counts.
    pub lambda_grid: Vec<f64>,
    /// Weight used for the lasso and ridge rows of the convergence sweep.
    pub lambda: f64,
    pub counts: [usize; 3],
    /// High-fidelity counts for the convergence sweep.
    pub hf_counts: Vec<usize>,
    pub noise: f64,
    /// Node bias degrees; edges are constant.
    pub node_degrees: [usize; 3],
    /// True edge weights have magnitude drawn uniformly from this interval.
    pub edge_magnitude: [f64; 2],
    /// Apply the penalty to node coefficients too, not only to edges.
    pub penalize_nodes: bool,
    pub fit: FitConfig,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        SparsityConfig {
            seeds: seed_range(0, 20),
            lambda_grid: vec![0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            lambda: 1.0,
            counts: [20, 20, 10],
            hf_counts: vec![2, 4, 6, 8],
            noise: 1e-2,
            node_degrees: [3, 3, 1],
            edge_magnitude: [0.5, 1.5],
            penalize_nodes: false,
            fit: FitConfig { max_iters: 5000, grad_tol: 1e-10, ..Default::default() },
        }
    }
}

/// Peer-truth problem for the pruning study: node `k` has a degree
/// `node_degrees[k]` bias, edges `1 -> 3` and `2 -> 3` are constants of
/// random sign, and inputs lie in one dimension. When node 2's degree is at
/// least node 1's, `rho_12 f_1` lies in the span of node 2's bias, so the
/// data leave `rho_12` undetermined and only the penalty settles it.
pub fn sparse_peer_problem(config: &SparsityConfig, counts: &[usize; 3], seed: u64) -> Result<Problem> {
    let [lo, hi] = config.edge_magnitude;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::InvalidConfig("edge magnitude interval must be ordered and nonnegative".into()));
    }
    let node = |id: NodeId| NodeSpec { id, basis: BasisSpec::monomial(config.node_degrees[id as usize - 1], 1) };
    let edge = |from, to| EdgeSpec { from, to, basis: BasisSpec::monomial(0, 1) };
    let graph = GraphSpec { target: 3, nodes: vec![node(1), node(2), node(3)], edges: vec![edge(1, 3), edge(2, 3)] };
    let net = MfNet::new(graph.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = ParamVector::zeros(net.layout().clone());
    for id in 1..=3 {
        for v in truth.slice_mut(crate::params::SlotOwner::Node { id }).expect("node slot") {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    let magnitude = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    for from in [1, 2] {
        let sign = if rand::Rng::random_bool(&mut rng, 0.5) { 1.0 } else { -1.0 };
        truth.slice_mut(crate::params::SlotOwner::Edge { from, to: 3 }).expect("edge slot")[0] = sign * magnitude.sample(&mut rng);
    }
    let sigma = if config.noise > 0.0 { config.noise } else { 1.0 };
    let mut datasets = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        let id = k as NodeId + 1;
        let x = data_io::uniform_points(&mut rng, n, 1);
        let mut y = net.evaluate(&truth, id, &x)?;
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += config.noise * z;
        }
        datasets.push(NodeData::new(id, x, y, sigma)?);
    }
    let test_x = data_io::grid_1d(201);
    let test_y = net.evaluate(&truth, 3, &test_x)?;
    Ok(Problem { graph, truth: Some(truth), datasets, test_x, test_y })
}

/// The full three-node graph matching `sparse_peer_problem`'s bases.
pub fn sparse_full_graph(config: &SparsityConfig) -> GraphSpec {
    let node = |id: NodeId| NodeSpec { id, basis: BasisSpec::monomial(config.node_degrees[id as usize - 1], 1) };
    let edge = |from, to| EdgeSpec { from, to, basis: BasisSpec::monomial(0, 1) };
    GraphSpec { target: 3, nodes: vec![node(1), node(2), node(3)], edges: vec![edge(1, 2), edge(1, 3), edge(2, 3)] }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    L2,
    L1,
}

impl Method {
    fn reg(self, lambda: f64, penalize_nodes: bool) -> RegConfig {
        let mut reg = match self {
            Method::None => RegConfig::none(),
            // a zero lasso weight is the unregularized fit
            _ if lambda == 0.0 => RegConfig::none(),
            Method::L2 => RegConfig::gaussian(lambda),
            Method::L1 => RegConfig::laplace(lambda),
        };
        if !penalize_nodes {
            reg.lambda_node = (1..=3).map(|id| (id, 0.0)).collect();
        }
        reg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRecord {
    pub seed: u64,
    pub method: Method,
    pub lambda: f64,
    pub hf_count: usize,
    pub rho12: f64,
    pub rho13: f64,
    pub rho23: f64,
    pub true_rho13: f64,
    pub true_rho23: f64,
    pub rrmse: f64,
    /// Lasso optimality residual, or the gradient norm for smooth fits.
    pub kkt: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub method: Method,
    pub lambda: f64,
    pub hf_count: usize,
    pub median_abs_rho12: f64,
    pub median_abs_rho13: f64,
    pub median_abs_rho23: f64,
    pub median_rrmse: f64,
    /// Fraction of seeds with `|rho12| <= 1e-2` and both true edges `>= 0.1`.
    pub pruned_fraction: f64,
    pub max_kkt: f64,
}

#[derive(Debug, Clone)]
pub struct SparsityReport {
    pub records: Vec<SparsityRecord>,
    pub rows: Vec<SparsityRow>,
}

pub const PRUNED_MAX: f64 = 1e-2;
pub const KEPT_MIN: f64 = 1e-1;

impl SparsityRecord {
    pub fn pruned(&self) -> bool {
        self.rho12.abs() <= PRUNED_MAX && self.rho13.abs() >= KEPT_MIN && self.rho23.abs() >= KEPT_MIN
    }
}

/// Group records by `(method, lambda, hf_count)` in first-seen order.
pub fn summarize_sparsity(records: &[SparsityRecord]) -> Vec<SparsityRow> {
    let mut keys: Vec<(Method, u64, usize)> = Vec::new();
    for r in records {
        let k = (r.method, r.lambda.to_bits(), r.hf_count);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, bits, hf_count)| {
            let group: Vec<&SparsityRecord> = records
                .iter()
                .filter(|r| r.method == method && r.lambda.to_bits() == bits && r.hf_count == hf_count)
                .collect();
            let col = |f: fn(&SparsityRecord) -> f64| group.iter().map(|r| f(r)).collect::<Vec<_>>();
            SparsityRow {
                method,
                lambda: f64::from_bits(bits),
                hf_count,
                median_abs_rho12: median(&col(|r| r.rho12.abs())),
                median_abs_rho13: median(&col(|r| r.rho13.abs())),
                median_abs_rho23: median(&col(|r| r.rho23.abs())),
                median_rrmse: median(&col(|r| r.rrmse)),
                pruned_fraction: fraction(group.iter().map(|r| r.pruned())),
                max_kkt: col(|r| r.kkt).into_iter().fold(0.0, f64::max),
            }
        })
        .collect()
}

pub fn run_sparsity(config: &SparsityConfig) -> Result<SparsityReport> {
    if config.lambda_grid.iter().chain([&config.lambda]).any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidConfig("lambda values must be nonnegative".into()));
    }
    let full = MfNet::new(sparse_full_graph(config))?;
    // (method, lambda, high-fidelity count) cells
    let mut cells: Vec<(Method, f64, usize)> = Vec::new();
    for &l in &config.lambda_grid {
        cells.push((Method::L1, l, config.counts[2]));
    }
    cells.push((Method::None, 0.0, config.counts[2]));
    cells.push((Method::L2, config.lambda, config.counts[2]));
    for &n in &config.hf_counts {
        for m in [Method::None, Method::L2, Method::L1] {
            let l = if m == Method::None { 0.0 } else { config.lambda };
            if !cells.contains(&(m, l, n)) {
                cells.push((m, l, n));
            }
        }
    }
    let jobs: Vec<(u64, (Method, f64, usize))> =
        config.seeds.iter().flat_map(|&s| cells.iter().map(move |&c| (s, c))).collect();
    let records = run_trials(&jobs, |&(seed, (method, lambda, hf))| {
        let counts = [config.counts[0], config.counts[1], hf];
        let p = sparse_peer_problem(config, &counts, seed)?;
        let truth = p.truth.as_ref().expect("generated truth");
        let mut cfg = with_seed(&config.fit, seed);
        cfg.reg = method.reg(lambda, config.penalize_nodes);
        let r = fit_auto(&full, &p.datasets, &cfg)?;
        let pred = full.evaluate(&r.params, 3, &p.test_x)?;
        let edge = |params: &ParamVector, f, t| params.edge(f, t).map_or(0.0, |s| s[0]);
        Ok(SparsityRecord {
            seed,
            method,
            lambda,
            hf_count: hf,
            rho12: edge(&r.params, 1, 2),
            rho13: edge(&r.params, 1, 3),
            rho23: edge(&r.params, 2, 3),
            true_rho13: edge(truth, 1, 3),
            true_rho23: edge(truth, 2, 3),
            rrmse: error_report(&p.test_y, &pred)?.relative_rmse,
            kkt: r.grad_norm_final,
            converged: r.converged,
        })
    })?;
    let rows = summarize_sparsity(&records);
    Ok(SparsityReport { records, rows })
}

impl Records for SparsityReport {
    fn write_csv(&self, dir: &Path) -> Result<()> {
        write_rows(&dir.join("records.csv"), &self.records)?;
        write_rows(&dir.join("summary.csv"), &self.rows)
    }
}
