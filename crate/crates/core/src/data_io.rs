//! Synthetic problem generators, dataset files and error metrics.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NodeId};
use crate::mfnet::MfNet;
use crate::networks;
use crate::objective::NodeData;
use crate::params::{ParamVector, SlotOwner};

/// Generating parameters of the three-model example as `(owner, [offset, slope])`.
pub const THREE_MODEL_TRUTH: [(SlotOwner, [f64; 2]); 6] = [
    (SlotOwner::Node { id: 1 }, [-0.399999, 0.61917357]),
    (SlotOwner::Node { id: 2 }, [0.69834347, -1.25328053]),
    (SlotOwner::Node { id: 3 }, [0.45912744, 1.31524971]),
    (SlotOwner::Edge { from: 1, to: 2 }, [-0.79113519, -0.34445981]),
    (SlotOwner::Edge { from: 1, to: 3 }, [-0.67351648, -0.32938732]),
    (SlotOwner::Edge { from: 2, to: 3 }, [-1.45728517, 0.59830806]),
];

/// A reference fit of the same problem, reached from different data; its
/// parameters differ from the truth but the `f_2` it defines nearly agrees.
pub const THREE_MODEL_REFERENCE_FIT: [(SlotOwner, [f64; 2]); 6] = [
    (SlotOwner::Node { id: 1 }, [-0.399999, 0.61917357]),
    (SlotOwner::Node { id: 2 }, [0.62987041, -1.1472885]),
    (SlotOwner::Node { id: 3 }, [0.62853275, 1.09869172]),
    (SlotOwner::Edge { from: 1, to: 2 }, [-0.96231826, -0.34445981]),
    (SlotOwner::Edge { from: 1, to: 3 }, [0.42886841, -0.25443088]),
    (SlotOwner::Edge { from: 2, to: 3 }, [-1.18968888, 0.59172251]),
];

/// Build a parameter vector for `net` from per-slot values.
pub fn params_from_slots(net: &MfNet, slots: &[(SlotOwner, [f64; 2])]) -> Result<ParamVector> {
    let mut p = ParamVector::zeros(net.layout().clone());
    for (owner, vals) in slots {
        let s = p
            .slice_mut(*owner)
            .ok_or_else(|| Error::LayoutMismatch(format!("no slot for {owner}")))?;
        if s.len() != vals.len() {
            return Err(Error::LayoutMismatch(format!("{owner} holds {} values, got {}", s.len(), vals.len())));
        }
        s.copy_from_slice(vals);
    }
    Ok(p)
}

/// The generating network of the three-model example with its parameters.
pub fn three_model_truth() -> (MfNet, ParamVector) {
    let net = MfNet::new(networks::three_model_true()).expect("fixed graph is valid");
    let p = params_from_slots(&net, &THREE_MODEL_TRUTH).expect("fixed layout");
    (net, p)
}

/// A generated problem: graph, generating parameters (when known), training
/// data, and noiseless target values on a test set.
#[derive(Debug, Clone)]
pub struct Problem {
    pub graph: GraphSpec,
    pub truth: Option<ParamVector>,
    pub datasets: Vec<NodeData>,
    pub test_x: DMatrix<f64>,
    pub test_y: DVector<f64>,
}

/// `n` evenly spaced points on `[-1, 1]`.
pub fn grid_1d(n: usize) -> DMatrix<f64> {
    let denom = (n.max(2) - 1) as f64;
    DMatrix::from_fn(n, 1, |i, _| -1.0 + 2.0 * i as f64 / denom)
}

/// `n × n` tensor grid on `[-1, 1]^2`, first coordinate varying fastest.
pub fn grid_2d(n: usize) -> DMatrix<f64> {
    let g = grid_1d(n);
    DMatrix::from_fn(n * n, 2, |r, c| if c == 0 { g[r % n] } else { g[r / n] })
}

pub fn uniform_points<R: Rng>(rng: &mut R, n: usize, dim: usize) -> DMatrix<f64> {
    // row-major draw order
    let mut m = DMatrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            m[(i, j)] = rng.random_range(-1.0..1.0);
        }
    }
    m
}

fn check_counts(counts: &[usize], expected: usize) -> Result<()> {
    if counts.len() != expected {
        return Err(Error::InvalidConfig(format!("expected {expected} counts, got {}", counts.len())));
    }
    if counts.contains(&0) {
        return Err(Error::InvalidConfig("counts must be positive".into()));
    }
    Ok(())
}

/// Noiseless data from the three-model truth. Nested data share one draw of
/// points: each node takes a prefix of it. Test set is a 201-point grid.
pub fn generate_three_model(counts: &[usize], nested: bool, seed: u64) -> Result<Problem> {
    check_counts(counts, 3)?;
    let (net, truth) = three_model_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = *counts.iter().max().expect("three counts");
    let pool = nested.then(|| uniform_points(&mut rng, max, 1));
    let mut datasets = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        let node = k as NodeId + 1;
        let x = match &pool {
            Some(p) => p.rows(0, n).into_owned(),
            None => uniform_points(&mut rng, n, 1),
        };
        let y = net.evaluate(&truth, node, &x)?;
        datasets.push(NodeData::new(node, x, y, 1.0)?);
    }
    let test_x = grid_1d(201);
    let test_y = net.evaluate(&truth, 3, &test_x)?;
    Ok(Problem { graph: net.spec().clone(), truth: Some(truth), datasets, test_x, test_y })
}

/// `(model-form switch 1, model-form switch 2, sample count)` of the nine
/// noisy sources.
pub const NOISE_SOURCES: [(f64, f64, usize); 9] = [
    (0.0, 0.0, 5),
    (0.0, 0.0, 10),
    (0.0, 0.0, 100),
    (0.0, 1.0, 5),
    (0.0, 1.0, 10),
    (0.0, 1.0, 100),
    (1.0, 1.0, 5),
    (1.0, 1.0, 10),
    (1.0, 1.0, 100),
];

/// Noiseless analytical model at `(x1, x2)` with model-form switches `d1`, `d2`.
pub fn analytical_model(x1: f64, x2: f64, d1: f64, d2: f64) -> f64 {
    2.0 + (2.0 * x1.powi(5) + 2.0 * x2.powi(5)) * d1
        + 3.0 * x1 * x2
        + (x1 * x1 + x2 * x2 + 5.0 * x1 * x1 * x2 * x2) * d2
        + 0.5 * x1
        + 0.5 * x2
}

/// Default noise level assigned to a source averaging `n_avg` draws.
pub fn analytical_sigma(n_avg: usize) -> f64 {
    1.0 / (n_avg as f64).sqrt()
}

/// Nine noisy sources on `[-1, 1]^2`. Each observation multiplies the model
/// by `1 + mean of N standard normals`, redrawn per point. Node `k` gets
/// `sigma[k]` (default `1/sqrt(N_k)`). Test set: noiseless node 9 on a
/// 41 × 41 grid.
pub fn generate_analytical_noise(counts: &[usize], sigma: Option<&[f64]>, seed: u64) -> Result<Problem> {
    check_counts(counts, 9)?;
    if let Some(s) = sigma {
        if s.len() != 9 {
            return Err(Error::InvalidConfig(format!("expected 9 sigma values, got {}", s.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut datasets = Vec::new();
    for (k, (&n, &(d1, d2, n_avg))) in counts.iter().zip(NOISE_SOURCES.iter()).enumerate() {
        let x = uniform_points(&mut rng, n, 2);
        let y = DVector::from_fn(n, |i, _| {
            let mean: f64 = (0..n_avg).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).sum::<f64>() / n_avg as f64;
            analytical_model(x[(i, 0)], x[(i, 1)], d1, d2) * (1.0 + mean)
        });
        let s = sigma.map_or(analytical_sigma(n_avg), |s| s[k]);
        datasets.push(NodeData::new(k as NodeId + 1, x, y, s)?);
    }
    let test_x = grid_2d(41);
    let test_y = DVector::from_fn(test_x.nrows(), |i, _| analytical_model(test_x[(i, 0)], test_x[(i, 1)], 1.0, 1.0));
    let (nb, eb) = (BasisSpec::monomial(2, 2), BasisSpec::monomial(1, 2));
    Ok(Problem { graph: networks::noise_natural(nb, eb), truth: None, datasets, test_x, test_y })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Nodes `1..n-1` feed node `n`.
    PeerTruth,
    /// `1 -> 2 -> ... -> n`.
    ChainTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilySpec {
    pub family: Family,
    pub dim: usize,
    pub node_degree: usize,
    pub edge_degree: usize,
    /// One count per node; the length sets the node count.
    pub counts: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

impl FamilySpec {
    pub fn graph(&self) -> GraphSpec {
        let nb = BasisSpec::monomial(self.node_degree, self.dim);
        let eb = BasisSpec::monomial(self.edge_degree, self.dim);
        let n = self.counts.len() as NodeId;
        match self.family {
            Family::PeerTruth => networks::peer(n, nb, eb),
            Family::ChainTruth => networks::chain(&(1..=n).collect::<Vec<_>>(), nb, eb),
        }
    }
}

/// Test points used for generated families: a 201-point grid in one
/// dimension, a 41 × 41 grid in two, otherwise 1000 seeded random points.
pub fn family_test_points<R: Rng>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    match dim {
        1 => grid_1d(201),
        2 => grid_2d(41),
        _ => uniform_points(rng, 1000, dim),
    }
}

/// Random standard-normal truth on a peer or chain graph with uniform inputs
/// and additive Gaussian noise.
pub fn generate_family(spec: &FamilySpec) -> Result<Problem> {
    if spec.counts.len() < 2 {
        return Err(Error::InvalidConfig("a family needs at least two nodes".into()));
    }
    check_counts(&spec.counts, spec.counts.len())?;
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise must be nonnegative, got {}", spec.noise)));
    }
    let net = MfNet::new(spec.graph())?;
    let truth = net.init_params(crate::params::InitScheme::Gaussian { scale: 1.0 }, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let sigma = if spec.noise > 0.0 { spec.noise } else { 1.0 };
    let mut datasets = Vec::new();
    for (k, &n) in spec.counts.iter().enumerate() {
        let node = k as NodeId + 1;
        let x = uniform_points(&mut rng, n, spec.dim);
        let mut y = net.evaluate(&truth, node, &x)?;
        if spec.noise > 0.0 {
            for v in y.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += spec.noise * z;
            }
        }
        datasets.push(NodeData::new(node, x, y, sigma)?);
    }
    let test_x = family_test_points(&mut rng, spec.dim);
    let target = net.spec().target;
    let test_y = net.evaluate(&truth, target, &test_x)?;
    Ok(Problem { graph: net.spec().clone(), truth: Some(truth), datasets, test_x, test_y })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖truth - pred‖ / ‖truth‖`.
    pub relative_rmse: f64,
    pub max_abs_error: f64,
    pub points: usize,
}

pub fn error_report(truth: &DVector<f64>, pred: &DVector<f64>) -> Result<ErrorReport> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    let norm = truth.norm();
    if norm == 0.0 {
        return Err(Error::ZeroTruthNorm);
    }
    let diff = truth - pred;
    Ok(ErrorReport { relative_rmse: diff.norm() / norm, max_abs_error: diff.amax(), points: truth.len() })
}

/// Mean squared difference.
pub fn mse(truth: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    (truth - pred).norm_squared() / truth.len().max(1) as f64
}

/// A parsed numeric table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: DMatrix<f64>,
}

/// Read a comma-separated numeric table with a header line.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: u64, reason: String| Error::Parse { path: path.display().to_string(), line, reason };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(parse_err(1, "missing header".into()));
    }
    let width = header.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", record.len())));
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            values.push(v);
        }
        nrows += 1;
    }
    Ok(Table { header, rows: DMatrix::from_row_slice(nrows, width, &values) })
}

fn input_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("x{j}")).collect()
}

/// Load one node's samples from a file with header `x1,...,xd,y`.
pub fn load_dataset(path: &Path, node: NodeId, sigma: f64) -> Result<NodeData> {
    let table = read_table(path)?;
    let width = table.header.len();
    let mut expected = input_header(width.saturating_sub(1));
    expected.push("y".into());
    if width < 2 || table.header != expected {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            reason: format!("header must be {}", expected.join(",")),
        });
    }
    let x = table.rows.columns(0, width - 1).into_owned();
    let y = table.rows.column(width - 1).into_owned();
    NodeData::new(node, x, y, sigma)
}

/// Load evaluation points from a file with header `x1,...,xd`; a trailing
/// `y` column is ignored. An empty body yields zero rows.
pub fn load_points(path: &Path) -> Result<DMatrix<f64>> {
    let table = read_table(path)?;
    let dim = if table.header.last().map(String::as_str) == Some("y") { table.header.len() - 1 } else { table.header.len() };
    if table.header[..dim] != input_header(dim)[..] {
        return Err(Error::Parse { path: path.display().to_string(), line: 1, reason: "header must be x1,...,xd".into() });
    }
    Ok(table.rows.columns(0, dim).into_owned())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Write a numeric table. Values use the shortest text that parses back to
/// the same number.
pub fn write_table(path: &Path, header: &[String], rows: &DMatrix<f64>) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for i in 0..rows.nrows() {
        let line: Vec<String> = rows.row(i).iter().map(|v| v.to_string()).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn save_dataset(path: &Path, data: &NodeData) -> Result<()> {
    let d = data.x.ncols();
    let mut header = input_header(d);
    header.push("y".into());
    let mut rows = DMatrix::zeros(data.len(), d + 1);
    rows.columns_mut(0, d).copy_from(&data.x);
    rows.column_mut(d).copy_from(&data.y);
    write_table(path, &header, &rows)
}

pub fn save_points(path: &Path, x: &DMatrix<f64>, y: Option<&DVector<f64>>) -> Result<()> {
    let d = x.ncols();
    let mut header = input_header(d);
    let mut rows = x.clone();
    if let Some(y) = y {
        header.push("y".into());
        rows = rows.insert_column(d, 0.0);
        rows.column_mut(d).copy_from(y);
    }
    write_table(path, &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn three_model_values() {
        let (net, truth) = three_model_truth();
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let z1 = net.evaluate(&truth, 1, &x).unwrap();
        assert_eq!(z1[0], -0.399999);
        let f2 = net.expand_to_polynomial(&truth, 2).unwrap();
        assert_relative_eq!(f2.coefficient(&[0]), 1.01479675, max_relative = 1e-8);
        assert_eq!(net.expand_to_polynomial(&truth, 3).unwrap().degree(), 3);
    }

    #[test]
    fn three_model_nesting() {
        let p = generate_three_model(&[2, 3, 3], true, 4).unwrap();
        let x1 = &p.datasets[0].x;
        let x3 = &p.datasets[2].x;
        assert_eq!(x1.rows(0, 2), x3.rows(0, 2));
        assert_eq!(p.datasets[1].x, *x3);
        assert_eq!(p.test_x.nrows(), 201);
        let q = generate_three_model(&[2, 3, 3], false, 4).unwrap();
        assert_ne!(q.datasets[1].x, q.datasets[2].x);
        assert!(generate_three_model(&[2, 3], true, 0).is_err());
    }

    #[test]
    fn analytical_values() {
        assert_eq!(analytical_model(0.0, 0.0, 0.0, 0.0), 2.0);
        assert_eq!(analytical_model(0.0, 0.0, 1.0, 1.0), 2.0);
        assert_eq!(analytical_model(1.0, 1.0, 1.0, 1.0), 17.0);
        assert_eq!(NOISE_SOURCES[0], (0.0, 0.0, 5));
        let p = generate_analytical_noise(&[10; 9], None, 1).unwrap();
        assert_eq!(p.datasets.len(), 9);
        assert_eq!(p.test_x.nrows(), 41 * 41);
        assert_relative_eq!(p.datasets[8].sigma, 0.1);
    }

    #[test]
    fn family_degrees() {
        let spec = |family, seed| FamilySpec {
            family,
            dim: 1,
            node_degree: 1,
            edge_degree: 1,
            counts: vec![5, 5, 5],
            noise: 0.0,
            seed,
        };
        let peer = generate_family(&spec(Family::PeerTruth, 3)).unwrap();
        let net = MfNet::new(peer.graph.clone()).unwrap();
        assert_eq!(net.expand_to_polynomial(peer.truth.as_ref().unwrap(), 3).unwrap().degree(), 2);
        let chain = generate_family(&spec(Family::ChainTruth, 3)).unwrap();
        let net = MfNet::new(chain.graph.clone()).unwrap();
        assert_eq!(net.expand_to_polynomial(chain.truth.as_ref().unwrap(), 3).unwrap().degree(), 3);
    }

    #[test]
    fn error_metrics() {
        let t = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        assert_eq!(error_report(&t, &t).unwrap().relative_rmse, 0.0);
        assert_eq!(error_report(&t, &DVector::zeros(3)).unwrap().relative_rmse, 1.0);
        let r = error_report(&t, &(&t * 2.0)).unwrap();
        assert_eq!(r.relative_rmse, 1.0);
        assert_eq!(r.max_abs_error, 2.0);
        assert!(matches!(error_report(&DVector::zeros(2), &DVector::zeros(2)), Err(Error::ZeroTruthNorm)));
    }
}
