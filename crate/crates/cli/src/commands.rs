use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mfnets::data_io::{self, load_points, save_dataset, save_points, ErrorReport, Family, FamilySpec, Problem};
use mfnets::experiments::{self, Records};
use mfnets::optimize::gradient_check;
use mfnets::{fit_auto, FitConfig, GraphSpec, InitScheme, MfNet, ParamVector, RegKind, StopReason};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::manifest::{read_graph, read_text, DataEntry, GraphSource, Manifest, TruthEntry};
use crate::{
    CliError, ExperimentArgs, ExperimentName, FamilyArg, FitArgs, FitFlags, GenerateArgs, GradcheckArgs, InitArg,
    Outcome, PredictArgs, RegArg,
};

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::new(format!("{}: {e}", dir.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| CliError::new(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Parse `a/b/c` into counts.
pub fn parse_counts(text: &str) -> Result<Vec<usize>> {
    text.split('/')
        .map(|t| t.trim().parse::<usize>().map_err(|e| CliError::new(format!("counts '{text}': {e}"))))
        .collect()
}

fn counts_array<const N: usize>(text: &str) -> Result<[usize; N]> {
    let v = parse_counts(text)?;
    v.try_into().map_err(|v: Vec<usize>| CliError::new(format!("expected {N} counts, got {}", v.len())))
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::new(format!("lambda grid '{text}': {e}"))))
        .collect()
}

pub fn apply_flags(mut config: FitConfig, flags: &FitFlags) -> FitConfig {
    if let Some(reg) = flags.reg {
        config.reg.kind = match reg {
            RegArg::None => RegKind::None,
            RegArg::L2 => RegKind::Gaussian,
            RegArg::L1 => RegKind::Laplace,
        };
    }
    if let Some(l) = flags.lambda {
        config.reg.default_lambda = l;
    }
    if let Some(v) = flags.max_iters {
        config.max_iters = v;
    }
    if let Some(v) = flags.grad_tol {
        config.grad_tol = v;
    }
    if let Some(v) = flags.seed {
        config.seed = v;
    }
    if let Some(v) = flags.restarts {
        config.restarts = v;
    }
    if let Some(init) = flags.init {
        config.init = match init {
            InitArg::Zeros => InitScheme::Zeros,
            InitArg::Gaussian => InitScheme::Gaussian { scale: flags.init_scale },
            InitArg::EdgeOne => InitScheme::ConstantEdgeOne,
        };
    }
    config
}

#[derive(Serialize)]
struct FitReport<'a> {
    reason: StopReason,
    converged: bool,
    iterations: usize,
    objective: f64,
    grad_norm: f64,
    config: &'a FitConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorReport>,
}

pub fn fit(args: &FitArgs) -> Result<Outcome> {
    let loaded = Manifest::load(&args.manifest)?;
    let config = apply_flags(loaded.manifest.fit.clone(), &args.flags);
    let net = MfNet::new(loaded.graph.clone())?;
    let result = fit_auto(&net, &loaded.data, &config)?;
    let error = match &loaded.truth {
        Some((node, x, y)) => Some(data_io::error_report(y, &net.evaluate(&result.params, *node, x)?)?),
        None => None,
    };
    let out = match (&args.output, &loaded.manifest.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => loaded.base.join(o),
        (None, None) => loaded.base.join("fit"),
    };
    write_file(&out.join("params.json"), &(result.params.to_json() + "\n"))?;
    let mut trace = String::from("iteration,objective\n");
    for (i, v) in result.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{v}\n"));
    }
    write_file(&out.join("trace.csv"), &trace)?;
    let report = FitReport {
        reason: result.reason,
        converged: result.converged,
        iterations: result.iterations,
        objective: result.objective(),
        grad_norm: result.grad_norm_final,
        config: &config,
        error,
    };
    write_file(&out.join("report.json"), &to_json(&report))?;
    println!(
        "{:?} after {} iterations: objective {:.10e}, gradient norm {:.3e}",
        result.reason,
        result.iterations,
        result.objective(),
        result.grad_norm_final
    );
    if let Some(e) = error {
        println!("relative rmse {:.6e}, max abs error {:.6e} over {} points", e.relative_rmse, e.max_abs_error, e.points);
    }
    println!("wrote {}", out.display());
    Ok(if result.converged { Outcome::Done } else { Outcome::NotConverged })
}

/// A graph file, or the graph of a manifest.
fn graph_from(path: &Path) -> Result<GraphSpec> {
    let text = read_text(path)?;
    if let Ok(g) = GraphSpec::from_toml(&text) {
        return Ok(g);
    }
    let manifest = Manifest::parse(&text, path)?;
    match manifest.graph {
        GraphSource::Inline(g) => Ok(g),
        GraphSource::Path(p) => read_graph(&path.parent().unwrap_or(Path::new("")).join(p)),
    }
}

fn format_table(x: &DMatrix<f64>, y: &[f64]) -> String {
    let mut header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let mut text = header.join(",") + "\n";
    for (i, v) in y.iter().enumerate() {
        let mut row: Vec<String> = x.row(i).iter().map(f64::to_string).collect();
        row.push(v.to_string());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}

pub fn predict(args: &PredictArgs) -> Result<Outcome> {
    let graph = graph_from(&args.graph)?;
    let node = args.node.unwrap_or(graph.target);
    let net = MfNet::new(graph)?;
    let params = ParamVector::from_json(&read_text(&args.params)?)
        .map_err(|e| CliError::new(format!("{}: {e}", args.params.display())))?;
    net.check_layout(&params)?;
    net.index().pos(node)?;
    let x = load_points(&args.points)?;
    if x.nrows() > 0 && x.ncols() != net.dim() {
        return Err(CliError::new(format!("points have {} columns, graph expects {}", x.ncols(), net.dim())));
    }
    let x = if x.nrows() == 0 { DMatrix::zeros(0, net.dim()) } else { x };
    let y = if x.nrows() == 0 { Vec::new() } else { net.evaluate(&params, node, &x)?.as_slice().to_vec() };
    let text = format_table(&x, &y);
    match &args.output {
        Some(path) => write_file(path, &text)?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::new(e.to_string()))?,
    }
    Ok(Outcome::Done)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<Outcome> {
    let loaded = Manifest::load(&args.manifest)?;
    let net = MfNet::new(loaded.graph)?;
    let params = match &args.params {
        Some(p) => ParamVector::from_json(&read_text(p)?).map_err(|e| CliError::new(format!("{}: {e}", p.display())))?,
        None => net.init_params(InitScheme::Gaussian { scale: 1.0 }, args.seed),
    };
    let check = gradient_check(&net, &params, &loaded.data, args.fd_step)?;
    let place = match check.owner {
        Some((owner, k)) => format!(" at {owner}[{k}]"),
        None => String::new(),
    };
    println!("max relative discrepancy {:.3e}{place}", check.max_discrepancy);
    if check.max_discrepancy <= args.threshold {
        Ok(Outcome::Done)
    } else {
        eprintln!("gradient check failed: {:.3e} exceeds threshold {:.3e}", check.max_discrepancy, args.threshold);
        Ok(Outcome::GradCheckFailed)
    }
}

fn write_problem(problem: &Problem, dir: &Path, seed: u64) -> Result<()> {
    write_file(&dir.join("graph.toml"), &problem.graph.to_toml())?;
    let mut data = Vec::new();
    for d in &problem.datasets {
        let name = PathBuf::from(format!("node_{}.csv", d.node));
        save_dataset(&dir.join(&name), d)?;
        data.push(DataEntry { node: d.node, path: name, sigma: d.sigma });
    }
    save_points(&dir.join("truth.csv"), &problem.test_x, Some(&problem.test_y))?;
    if let Some(t) = &problem.truth {
        write_file(&dir.join("truth_params.json"), &(t.to_json() + "\n"))?;
    }
    let manifest = Manifest {
        output_dir: Some(PathBuf::from("fit")),
        graph: GraphSource::Path(PathBuf::from("graph.toml")),
        fit: FitConfig { seed, ..Default::default() },
        truth: Some(TruthEntry { node: problem.graph.target, path: PathBuf::from("truth.csv") }),
        data,
    };
    write_file(&dir.join("manifest.toml"), &manifest.to_toml())
}

pub fn generate(args: &GenerateArgs) -> Result<Outcome> {
    let counts = args.counts.as_deref().map(parse_counts).transpose()?;
    let problem = match args.family {
        FamilyArg::ThreeModel => {
            data_io::generate_three_model(&counts.unwrap_or_else(|| vec![2, 3, 3]), args.nested, args.seed)?
        }
        FamilyArg::AnalyticalNoise => {
            data_io::generate_analytical_noise(&counts.unwrap_or_else(|| vec![20; 9]), None, args.seed)?
        }
        FamilyArg::PeerTruth | FamilyArg::ChainTruth => data_io::generate_family(&FamilySpec {
            family: if args.family == FamilyArg::PeerTruth { Family::PeerTruth } else { Family::ChainTruth },
            dim: args.dim,
            node_degree: args.node_degree,
            edge_degree: args.edge_degree,
            counts: counts.unwrap_or_else(|| vec![20, 5, 2]),
            noise: args.noise,
            seed: args.seed,
        })?,
    };
    write_problem(&problem, &args.output, args.seed)?;
    println!("wrote {} datasets to {}", problem.datasets.len(), args.output.display());
    Ok(Outcome::Done)
}

fn load_config<C: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| CliError::new(format!("{}: {e}", p.display()))),
        None => Ok(C::default()),
    }
}

fn seeds(args: &ExperimentArgs, current: &[u64]) -> Vec<u64> {
    let start = args.seed.unwrap_or_else(|| current.first().copied().unwrap_or(0));
    experiments::seed_range(start, args.seeds.unwrap_or(current.len()))
}

fn finish<C: Serialize, R: Records, S: Serialize>(dir: &Path, name: &str, config: &C, report: &R, summary: &S) -> Result<Outcome> {
    report.write_csv(dir)?;
    experiments::write_manifest(dir, name, config)?;
    println!("{}", serde_json::to_string(summary).expect("serializable"));
    println!("wrote {}", dir.display());
    Ok(Outcome::Done)
}

pub fn experiment(args: &ExperimentArgs) -> Result<Outcome> {
    let config_path = args.config.as_deref();
    let out = &args.output;
    match args.name {
        ExperimentName::ThreeModel => {
            let mut c: experiments::ThreeModelConfig = load_config(config_path)?;
            c.seeds = seeds(args, &c.seeds);
            if let Some(t) = &args.counts {
                c.counts = counts_array(t)?;
            }
            let r = experiments::run_three_model(&c)?;
            finish(out, "three-model", &c, &r, &r.summary)
        }
        ExperimentName::Noise => {
            let mut c: experiments::NoiseConfig = load_config(config_path)?;
            c.seeds = seeds(args, &c.seeds);
            if let Some(t) = &args.counts {
                c.counts = counts_array(t)?;
            }
            let r = experiments::run_noise_orderings(&c)?;
            finish(out, "noise", &c, &r, &r.summary)
        }
        ExperimentName::Topology => {
            let mut c: experiments::TopologyConfig = load_config(config_path)?;
            if let Some(s) = args.seed {
                c.seed = s;
            }
            if let Some(t) = args.trials.or(args.seeds) {
                c.trials = t;
            }
            if let Some(t) = &args.counts {
                c.counts = counts_array(t)?;
            }
            let r = experiments::run_topology(&c)?;
            finish(out, "topology", &c, &r, &r.summary)
        }
        ExperimentName::Sparsity => {
            let mut c: experiments::SparsityConfig = load_config(config_path)?;
            c.seeds = seeds(args, &c.seeds);
            if let Some(t) = &args.counts {
                c.counts = counts_array(t)?;
            }
            if let Some(g) = &args.lambda_grid {
                c.lambda_grid = parse_grid(g)?;
            }
            let r = experiments::run_sparsity(&c)?;
            finish(out, "sparsity", &c, &r, &r.rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfnets::RegConfig;

    #[test]
    fn counts_and_grids() {
        assert_eq!(parse_counts("20/5/2").unwrap(), vec![20, 5, 2]);
        assert!(parse_counts("20/x").is_err());
        assert!(counts_array::<3>("1/2").is_err());
        assert_eq!(parse_grid("0,1e-4").unwrap(), vec![0.0, 1e-4]);
    }

    #[test]
    fn flags_override_the_manifest() {
        let flags = FitFlags { reg: Some(RegArg::L1), lambda: Some(1e-3), init: Some(InitArg::EdgeOne), ..Default::default() };
        let c = apply_flags(FitConfig { reg: RegConfig::gaussian(5.0), ..Default::default() }, &flags);
        assert_eq!(c.reg.kind, RegKind::Laplace);
        assert_eq!(c.reg.default_lambda, 1e-3);
        assert_eq!(c.init, InitScheme::ConstantEdgeOne);
    }
}
