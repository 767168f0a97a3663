//! Training: BFGS for the smooth objectives, accelerated proximal gradient
//! for the lasso objective, a closed-form single-fidelity solve, and a
//! finite-difference audit of the sweep gradients.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::mfnet::MfNet;
use crate::objective::{NodeData, Objective, RegConfig, RegKind};
use crate::params::{InitScheme, ParamVector, SlotOwner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Tolerance on the gradient infinity norm (KKT residual for lasso).
    pub grad_tol: f64,
    /// Relative parameter-change tolerance.
    pub step_tol: f64,
    pub init: InitScheme,
    pub seed: u64,
    /// Extra seeded starts; the best final objective wins.
    pub restarts: usize,
    pub reg: RegConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 500,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            init: InitScheme::Zeros,
            seed: 0,
            restarts: 0,
            reg: RegConfig::none(),
        }
    }
}

impl FitConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if let InitScheme::Gaussian { scale } = self.init {
            if !scale.is_finite() {
                return Err(Error::InvalidConfig("init scale must be finite".into()));
            }
        }
        self.reg.check()
    }

    /// Starting point of start number `start` (0 is the configured scheme).
    pub fn start_point(&self, net: &MfNet, start: usize) -> ParamVector {
        let seed = self.seed.wrapping_add(start as u64);
        let mut p = net.init_params(self.init, seed);
        if start > 0 && !self.init.is_random() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in p.values.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 0.5 * z;
            }
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradTol,
    StepTol,
    MaxIters,
    /// The line search could not decrease the objective any further.
    Stalled,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, StopReason::GradTol | StopReason::StepTol)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ParamVector,
    /// Objective (NLL with constants, plus penalty) at each accepted iterate,
    /// starting with the initial point.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub reason: StopReason,
    /// Gradient infinity norm, or KKT residual for lasso fits.
    pub grad_norm_final: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// Options of the unconstrained quasi-Newton minimizer.
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub x: DVector<f64>,
    pub trace: Vec<f64>,
    pub reason: StopReason,
    pub grad_norm: f64,
    pub iterations: usize,
}

const ARMIJO: f64 = 1e-4;
const CURVATURE: f64 = 0.9;
/// Relative objective change treated as round-off.
const F_ROUNDOFF: f64 = 1e-12;

/// Dense-inverse-Hessian BFGS with a strong-curvature line search.
pub fn bfgs<F>(mut fg: F, x0: DVector<f64>, opts: BfgsOptions) -> Result<MinimizeOutcome>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![f];
    let mut iterations = 0;
    let reason = loop {
        if g.amax() <= opts.grad_tol {
            break StopReason::GradTol;
        }
        if iterations >= opts.max_iters {
            break StopReason::MaxIters;
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h.fill_with_identity();
            fresh = true;
            d = -&g;
            slope = -g.norm_squared();
        }
        let step = match line_search(&mut fg, &x, f, &d, slope) {
            Some(s) => s,
            None if !fresh => {
                // stale curvature; retry once along steepest descent
                h.fill_with_identity();
                fresh = true;
                let d = -&g;
                match line_search(&mut fg, &x, f, &d, -g.norm_squared()) {
                    Some(s) => s,
                    None => break StopReason::Stalled,
                }
            }
            None => break StopReason::Stalled,
        };
        let (x_new, f_new, g_new) = step;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        iterations += 1;
        let small_step = s.amax() <= opts.step_tol * x.amax().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.norm_squared();
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H += ((s'y + y'Hy) ss' ) / (s'y)^2 - (Hy s' + s y'H) / s'y
            h.ger(rho * rho * (sy + yhy), &s, &s, 1.0);
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(-rho, &s, &hy, 1.0);
        }
        if small_step {
            break StopReason::StepTol;
        }
    };
    let grad_norm = g.amax();
    Ok(MinimizeOutcome { x, trace, reason, grad_norm, iterations })
}

type Accepted = (DVector<f64>, f64, DVector<f64>);

/// Line search for a step satisfying sufficient decrease and the strong
/// curvature condition: expansion phase, then safeguarded quadratic
/// interpolation inside the bracket. Falls back to the best
/// sufficient-decrease point when the curvature condition cannot be met.
fn line_search<F>(fg: &mut F, x: &DVector<f64>, f0: f64, d: &DVector<f64>, slope0: f64) -> Option<Accepted>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    struct Probe {
        t: f64,
        f: f64,
        slope: f64,
        x: DVector<f64>,
        g: DVector<f64>,
    }
    let mut eval = |t: f64| -> Probe {
        let xt = x + d * t;
        let (f, g) = fg(&xt);
        let ok = f.is_finite() && g.iter().all(|v| v.is_finite());
        if ok {
            Probe { t, f, slope: g.dot(d), x: xt, g }
        } else {
            Probe { t, f: f64::INFINITY, slope: f64::NAN, x: xt, g }
        }
    };
    let armijo = |p: &Probe| p.f <= f0 + ARMIJO * p.t * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -CURVATURE * slope0;
    // near a minimizer f differences drown in round-off; the approximate
    // Wolfe test of Hager and Zhang judges the step by its slope instead
    let approx_wolfe = |p: &Probe| {
        p.f <= f0 + F_ROUNDOFF * f0.abs()
            && p.slope <= (2.0 * ARMIJO - 1.0) * slope0
            && p.slope >= CURVATURE * slope0
    };
    let accept = |p: Probe| (p.f < f0 || p.x != *x).then_some((p.x, p.f, p.g));

    let origin = Probe { t: 0.0, f: f0, slope: slope0, x: x.clone(), g: DVector::zeros(0) };
    let mut prev = origin;
    let mut t = 1.0;
    let (mut lo, mut hi);
    let mut expansions = 0;
    loop {
        let p = eval(t);
        if approx_wolfe(&p) {
            return accept(p);
        }
        if !armijo(&p) || (prev.t > 0.0 && p.f >= prev.f) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature(&p) {
            return accept(p);
        }
        if p.slope >= 0.0 {
            hi = prev;
            lo = p;
            break;
        }
        expansions += 1;
        if expansions >= 20 {
            return accept(p);
        }
        prev = p;
        t *= 2.0;
    }
    for _ in 0..50 {
        let width = hi.t - lo.t;
        let mut t = lo.t + 0.5 * width;
        if hi.f.is_finite() && lo.slope.is_finite() {
            let denom = 2.0 * (hi.f - lo.f - lo.slope * width);
            if denom > 0.0 {
                let q = lo.t - lo.slope * width * width / denom;
                let (a, b) = if width > 0.0 { (lo.t, hi.t) } else { (hi.t, lo.t) };
                let margin = 0.1 * width.abs();
                t = q.clamp(a + margin, b - margin);
            }
        }
        let p = eval(t);
        if approx_wolfe(&p) {
            return accept(p);
        }
        if !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return accept(p);
            }
            if p.slope * (hi.t - lo.t) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
        if (hi.t - lo.t).abs() <= 1e-16 * lo.t.abs().max(1e-300) {
            break;
        }
    }
    if lo.t > 0.0 {
        accept(lo)
    } else {
        None
    }
}

/// Smooth fit (`none` or `gaussian` regularization) with BFGS.
pub fn fit(net: &MfNet, datasets: &[NodeData], config: &FitConfig) -> Result<FitResult> {
    config.check()?;
    if config.reg.kind == RegKind::Laplace {
        return Err(Error::InvalidConfig("laplace regularization requires fit_sparse".into()));
    }
    let objective = Objective::new(net, datasets)?;
    let weights = match config.reg.kind {
        RegKind::Gaussian => Some(config.reg.weights(net.layout())?),
        _ => None,
    };
    let opts = BfgsOptions { max_iters: config.max_iters, grad_tol: config.grad_tol, step_tol: config.step_tol };
    let run = |start: usize| -> Result<MinimizeOutcome> {
        let x0 = config.start_point(net, start).values;
        bfgs(
            |theta| {
                let (mut v, mut g) = objective.value_and_grad(theta);
                if let Some(w) = &weights {
                    let wt = w.component_mul(theta);
                    v += wt.dot(theta);
                    g += wt * 2.0;
                }
                (v, g)
            },
            x0,
            opts,
        )
    };
    let outcome = best_of(config.restarts, run)?;
    Ok(FitResult {
        params: net.params_from(outcome.x)?,
        converged: outcome.reason.converged(),
        reason: outcome.reason,
        grad_norm_final: outcome.grad_norm,
        iterations: outcome.iterations,
        objective_trace: outcome.trace,
    })
}

/// Run every start (in parallel) and keep the lowest final objective; ties
/// go to the earlier start.
fn best_of<F>(restarts: usize, run: F) -> Result<MinimizeOutcome>
where
    F: Fn(usize) -> Result<MinimizeOutcome> + Sync,
{
    let outcomes: Vec<Result<MinimizeOutcome>> = (0..=restarts).into_par_iter().map(&run).collect();
    let mut best: Option<MinimizeOutcome> = None;
    let mut first_err = None;
    for o in outcomes {
        match o {
            Ok(o) => {
                let better = best.as_ref().is_none_or(|b| {
                    o.trace.last().copied().unwrap_or(f64::INFINITY)
                        < b.trace.last().copied().unwrap_or(f64::INFINITY)
                });
                if better {
                    best = Some(o);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one start ran"))
}

/// Lasso fit: accelerated proximal gradient with backtracking on the local
/// Lipschitz estimate, monotone acceptance and momentum restart, followed by
/// a quasi-Newton polish on the detected support.
pub fn fit_sparse(net: &MfNet, datasets: &[NodeData], config: &FitConfig) -> Result<FitResult> {
    config.check()?;
    if config.reg.kind != RegKind::Laplace {
        return Err(Error::InvalidConfig("fit_sparse requires laplace regularization".into()));
    }
    let objective = Objective::new(net, datasets)?;
    let weights = config.reg.weights(net.layout())?;
    let run = |start: usize| -> Result<MinimizeOutcome> {
        let x0 = config.start_point(net, start).values;
        proximal_lasso(|theta| objective.value_and_grad(theta), &weights, x0, config)
    };
    let outcome = best_of(config.restarts, run)?;
    Ok(FitResult {
        params: net.params_from(outcome.x)?,
        converged: outcome.reason.converged(),
        reason: outcome.reason,
        grad_norm_final: outcome.grad_norm,
        iterations: outcome.iterations,
        objective_trace: outcome.trace,
    })
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Worst violation of the lasso optimality conditions at `x` given the
/// smooth gradient `g` and weights `w`.
pub fn kkt_residual(x: &DVector<f64>, g: &DVector<f64>, w: &DVector<f64>) -> f64 {
    x.iter()
        .zip(g.iter())
        .zip(w.iter())
        .map(|((&xi, &gi), &wi)| {
            if xi != 0.0 {
                (gi + wi * xi.signum()).abs()
            } else {
                (gi.abs() - wi).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn l1(x: &DVector<f64>, w: &DVector<f64>) -> f64 {
    x.iter().zip(w.iter()).map(|(a, b)| a.abs() * b).sum()
}

/// Minimize `f(x) + sum_i w_i |x_i|` where `fg` returns `f` and its gradient.
pub fn proximal_lasso<F>(fg: F, w: &DVector<f64>, x0: DVector<f64>, config: &FitConfig) -> Result<MinimizeOutcome>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let prox = |v: &DVector<f64>, step: f64| -> DVector<f64> {
        DVector::from_iterator(v.len(), v.iter().zip(w.iter()).map(|(&vi, &wi)| soft_threshold(vi, wi * step)))
    };
    let mut x = x0;
    let (mut fx, mut gx) = fg(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut big_f = fx + l1(&x, w);
    let mut trace = vec![big_f];
    let mut y = x.clone();
    let mut momentum: f64 = 1.0;
    let mut lip: f64 = 1.0;
    let mut iterations = 0;
    let polish_every = 50;

    let reason = loop {
        let kkt = kkt_residual(&x, &gx, w);
        if kkt <= config.grad_tol {
            break StopReason::GradTol;
        }
        if iterations >= config.max_iters {
            break StopReason::MaxIters;
        }
        iterations += 1;

        let (fy, gy) = if y == x { (fx, gx.clone()) } else { fg(&y) };
        let mut z;
        let mut fz;
        let mut tries = 0;
        loop {
            z = prox(&(&y - &gy / lip), 1.0 / lip);
            fz = fg(&z).0;
            let dz = &z - &y;
            if fz.is_finite() && fz <= fy + gy.dot(&dz) + 0.5 * lip * dz.norm_squared() + 1e-12 * fy.abs() {
                break;
            }
            lip *= 2.0;
            tries += 1;
            if tries > 80 {
                return Err(Error::NonFiniteObjective);
            }
        }
        let big_fz = fz + l1(&z, w);
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let x_prev = x.clone();
        if big_fz <= big_f {
            let moved = (&z - &x).amax();
            x = z.clone();
            let (f_new, g_new) = fg(&x);
            fx = f_new;
            gx = g_new;
            big_f = big_fz.min(fx + l1(&x, w));
            y = &x + (&x - &x_prev) * ((momentum - 1.0) / next_momentum);
            momentum = next_momentum;
            trace.push(big_f);
            if moved <= config.step_tol * x.amax().max(1.0) && kkt_residual(&x, &gx, w) <= config.grad_tol.sqrt() {
                break StopReason::StepTol;
            }
        } else {
            // no decrease: drop the momentum
            y = x.clone();
            momentum = 1.0;
            trace.push(big_f);
        }
        lip *= 0.9;

        if iterations % polish_every == 0 {
            if let Some((xp, fp, gp)) = polish(&fg, w, &prox(&(&x - &gx / lip), 1.0 / lip), config) {
                if improves(fp + l1(&xp, w), &xp, &gp, big_f, &x, &gx, w) {
                    x = xp;
                    fx = fp;
                    gx = gp;
                    big_f = fx + l1(&x, w);
                    y = x.clone();
                    momentum = 1.0;
                    *trace.last_mut().expect("nonempty") = big_f;
                }
            }
        }
    };
    // final polish when stopped on iteration budget
    if reason == StopReason::MaxIters {
        if let Some((xp, fp, gp)) = polish(&fg, w, &prox(&(&x - &gx / lip), 1.0 / lip), config) {
            if improves(fp + l1(&xp, w), &xp, &gp, big_f, &x, &gx, w) {
                x = xp;
                gx = gp;
                big_f = fp + l1(&x, w);
                trace.push(big_f);
            }
        }
    }
    let grad_norm = kkt_residual(&x, &gx, w);
    let reason = if reason == StopReason::MaxIters && grad_norm <= config.grad_tol { StopReason::GradTol } else { reason };
    Ok(MinimizeOutcome { x, trace, reason, grad_norm, iterations })
}

/// A lower objective, or one equal up to round-off with a smaller
/// optimality residual.
fn improves(
    f_new: f64,
    x_new: &DVector<f64>,
    g_new: &DVector<f64>,
    f_old: f64,
    x_old: &DVector<f64>,
    g_old: &DVector<f64>,
    w: &DVector<f64>,
) -> bool {
    f_new < f_old
        || (f_new <= f_old + F_ROUNDOFF * f_old.abs() && kkt_residual(x_new, g_new, w) < kkt_residual(x_old, g_old, w))
}

/// On the support of `x` with fixed signs the lasso objective is smooth:
/// minimize it there with BFGS. Callers pass a proximal step from the
/// current iterate so that its zeros mark the active set. Unpenalized
/// coordinates are always free.
fn polish<F>(fg: &F, w: &DVector<f64>, x: &DVector<f64>, config: &FitConfig) -> Option<Accepted>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0 || w[i] == 0.0).collect();
    if support.is_empty() {
        return None;
    }
    // zero sign marks a free coordinate
    let signs: Vec<f64> = support.iter().map(|&i| if w[i] == 0.0 { 0.0 } else { x[i].signum() }).collect();
    let embed = |u: &DVector<f64>| {
        let mut full = x.clone();
        for (k, &i) in support.iter().enumerate() {
            full[i] = u[k];
        }
        full
    };
    let u0 = DVector::from_iterator(support.len(), support.iter().map(|&i| x[i]));
    let outcome = bfgs(
        |u| {
            let full = embed(u);
            let (f, g) = fg(&full);
            let mut value = f;
            let mut grad = DVector::zeros(support.len());
            for (k, &i) in support.iter().enumerate() {
                value += w[i] * signs[k] * u[k];
                grad[k] = g[i] + w[i] * signs[k];
            }
            // leaving the orthant is not allowed
            if u.iter().zip(&signs).any(|(v, s)| v * s < 0.0) {
                return (f64::INFINITY, grad);
            }
            (value, grad)
        },
        u0,
        BfgsOptions { max_iters: config.max_iters.max(100), grad_tol: config.grad_tol * 1e-2, step_tol: 1e-15 },
    )
    .ok()?;
    let full = embed(&outcome.x);
    let (f, g) = fg(&full);
    if support.len() > NEWTON_MAX {
        return Some((full, f, g));
    }
    Some(newton_refine(fg, w, full, f, g, config))
}

/// Largest support refined with finite-difference Newton steps.
const NEWTON_MAX: usize = 96;

/// Sign-fixed lasso gradient on the support of `x`, and that support.
fn reduced_gradient(x: &DVector<f64>, g: &DVector<f64>, w: &DVector<f64>) -> (Vec<usize>, DVector<f64>) {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0 || w[i] == 0.0).collect();
    let sign = |v: f64| if v == 0.0 { 0.0 } else { v.signum() };
    let r = DVector::from_iterator(support.len(), support.iter().map(|&i| g[i] + w[i] * sign(x[i])));
    (support, r)
}

/// Damped Newton steps on the support with a Hessian differenced from the
/// gradient. Progress is judged by the gradient, which stays informative
/// after objective differences fall below round-off.
fn newton_refine<F>(fg: &F, w: &DVector<f64>, mut x: DVector<f64>, mut f: f64, mut g: DVector<f64>, config: &FitConfig) -> Accepted
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut damping = 0.0;
    for _ in 0..50 {
        let (support, r) = reduced_gradient(&x, &g, w);
        let norm = r.amax();
        if support.is_empty() || norm <= config.grad_tol * 1e-2 {
            break;
        }
        let m = support.len();
        let mut h = DMatrix::zeros(m, m);
        for (k, &i) in support.iter().enumerate() {
            let step = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            xp[i] += step;
            let mut xm = x.clone();
            xm[i] -= step;
            let (gp, gm) = (fg(&xp).1, fg(&xm).1);
            for (l, &j) in support.iter().enumerate() {
                h[(l, k)] = (gp[j] - gm[j]) / (2.0 * step);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = h.clone();
            for k in 0..m {
                a[(k, k)] += damping * scale;
            }
            let Some(chol) = a.cholesky() else {
                damping = (damping * 10.0).max(1e-12);
                continue;
            };
            let d = chol.solve(&(-&r));
            let mut trial = x.clone();
            for (k, &i) in support.iter().enumerate() {
                let v = x[i] + d[k];
                // a penalized coordinate stops at zero instead of changing sign
                trial[i] = if w[i] > 0.0 && v * x[i] < 0.0 { 0.0 } else { v };
            }
            let (ft, gt) = fg(&trial);
            let big = |x: &DVector<f64>, f: f64| f + l1(x, w);
            let (_, rt) = reduced_gradient(&trial, &gt, w);
            if ft.is_finite() && big(&trial, ft) <= big(&x, f) + F_ROUNDOFF * big(&x, f).abs() && rt.amax() < norm {
                x = trial;
                f = ft;
                g = gt;
                damping *= 0.1;
                accepted = true;
                break;
            }
            damping = (damping * 10.0).max(1e-12);
        }
        if !accepted {
            break;
        }
    }
    (x, f, g)
}

/// `fit_sparse` for `laplace` regularization, `fit` otherwise.
pub fn fit_auto(net: &MfNet, datasets: &[NodeData], config: &FitConfig) -> Result<FitResult> {
    if config.reg.kind == RegKind::Laplace {
        fit_sparse(net, datasets, config)
    } else {
        fit(net, datasets, config)
    }
}

/// Least-squares coefficients of `basis` fitted to `(x, y)`, with optional
/// ridge weight. Solved by SVD; rank-deficient systems yield the
/// minimum-norm solution.
pub fn single_fidelity_fit(basis: &Basis, x: &DMatrix<f64>, y: &DVector<f64>, ridge: Option<f64>) -> Result<DVector<f64>> {
    if y.is_empty() || x.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(x.nrows(), y.len()));
    }
    let v = basis.eval(x)?;
    let p = v.ncols();
    let (a, b) = match ridge {
        Some(lambda) if lambda > 0.0 => {
            let mut a = DMatrix::zeros(v.nrows() + p, p);
            a.rows_mut(0, v.nrows()).copy_from(&v);
            a.rows_mut(v.nrows(), p).fill_diagonal(lambda.sqrt());
            let mut b = DVector::zeros(v.nrows() + p);
            b.rows_mut(0, y.len()).copy_from(y);
            (a, b)
        }
        Some(lambda) if lambda < 0.0 => return Err(Error::NegativeLambda(lambda)),
        _ => (v, y.clone()),
    };
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    svd.solve(&b, eps).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Worst `|analytic - fd| / max(1, |analytic|)`.
    pub max_discrepancy: f64,
    pub coordinate: usize,
    pub owner: Option<(SlotOwner, usize)>,
}

/// Compare the sweep gradient of the total NLL with central differences.
pub fn gradient_check(net: &MfNet, params: &ParamVector, datasets: &[NodeData], fd_step: f64) -> Result<GradCheck> {
    net.check_layout(params)?;
    if !(fd_step > 0.0) {
        return Err(Error::InvalidConfig("fd_step must be positive".into()));
    }
    let objective = Objective::new(net, datasets)?;
    let (_, analytic) = objective.value_and_grad(&params.values);
    let mut check = compare_with_central_differences(|t| objective.value(t), &params.values, &analytic, fd_step);
    check.owner = net.layout().locate(check.coordinate);
    Ok(check)
}

/// Central differences of `f` at `x` against a supplied gradient.
pub fn compare_with_central_differences<F>(f: F, x: &DVector<f64>, analytic: &DVector<f64>, step: f64) -> GradCheck
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut worst = GradCheck { max_discrepancy: 0.0, coordinate: 0, owner: None };
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * step);
        let disc = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        if disc > worst.max_discrepancy || disc.is_nan() {
            worst.max_discrepancy = disc;
            worst.coordinate = i;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::graph::GraphSpec;
    use approx::assert_relative_eq;

    fn col(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(xs.len(), 1, xs)
    }

    #[test]
    fn bfgs_rosenbrock() {
        let out = bfgs(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
                (f, g)
            },
            DVector::from_vec(vec![-1.2, 1.0]),
            BfgsOptions { max_iters: 500, grad_tol: 1e-10, step_tol: 1e-16 },
        )
        .unwrap();
        assert_eq!(out.reason, StopReason::GradTol);
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(out.x[1], 1.0, epsilon = 1e-8);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bfgs_rejects_nonfinite_start() {
        let r = bfgs(|_| (f64::NAN, DVector::zeros(1)), DVector::zeros(1), BfgsOptions {
            max_iters: 10,
            grad_tol: 1e-8,
            step_tol: 1e-10,
        });
        assert!(matches!(r, Err(Error::NonFiniteObjective)));
    }

    #[test]
    fn closed_form_examples() {
        let b = Basis::new(BasisSpec::monomial(0, 1)).unwrap();
        let theta = single_fidelity_fit(&b, &col(&[0.0, 1.0]), &DVector::from_vec(vec![1.0, 3.0]), None).unwrap();
        assert_relative_eq!(theta[0], 2.0, epsilon = 1e-14);

        let b = Basis::new(BasisSpec::monomial(2, 1)).unwrap();
        let x = col(&[-1.0, -0.2, 0.3, 0.8, 1.0]);
        let y = x.map(|t| 1.0 - 2.0 * t + 0.5 * t * t).column(0).into_owned();
        let theta = single_fidelity_fit(&b, &x, &y, None).unwrap();
        let resid = b.eval(&x).unwrap() * &theta - &y;
        assert!(resid.norm() <= 1e-10);

        assert!(matches!(single_fidelity_fit(&b, &col(&[]), &DVector::zeros(0), None), Err(Error::EmptyData)));
    }

    #[test]
    fn underdetermined_gives_minimum_norm() {
        let b = Basis::new(BasisSpec::monomial(3, 1)).unwrap();
        let x = col(&[-0.5, 0.5]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let theta = single_fidelity_fit(&b, &x, &y, None).unwrap();
        let v = b.eval(&x).unwrap();
        assert!((&v * &theta - &y).norm() < 1e-12);
        // minimum norm solutions lie in the row space of V
        let pinv = v.clone().pseudo_inverse(1e-14).unwrap();
        assert_relative_eq!(theta, pinv * y, epsilon = 1e-12);
    }

    #[test]
    fn ridge_shrinks() {
        let b = Basis::new(BasisSpec::monomial(1, 1)).unwrap();
        let x = col(&[-1.0, 0.0, 1.0]);
        let y = DVector::from_vec(vec![-2.0, 0.0, 2.0]);
        let t0 = single_fidelity_fit(&b, &x, &y, None).unwrap();
        let t1 = single_fidelity_fit(&b, &x, &y, Some(1.0)).unwrap();
        // slope: sum x y / (sum x^2 + lambda) = 4 / 3
        assert_relative_eq!(t0[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(t1[1], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn lasso_on_separable_quadratic() {
        // f(x) = 0.5 |x - c|^2 has lasso solution soft_threshold(c, w)
        let c = DVector::from_vec(vec![3.0, -0.2, 0.5, -2.0]);
        let w = DVector::from_vec(vec![1.0, 1.0, 0.25, 0.0]);
        let config = FitConfig { reg: RegConfig::laplace(1.0), ..Default::default() };
        let out = proximal_lasso(|x| (0.5 * (x - &c).norm_squared(), x - &c), &w, DVector::zeros(4), &config).unwrap();
        assert_relative_eq!(out.x, DVector::from_vec(vec![2.0, 0.0, 0.25, -2.0]), epsilon = 1e-9);
        assert!(out.grad_norm <= 1e-8);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn config_validation() {
        let net = MfNet::new(GraphSpec::uniform(&[1], &[], 1, BasisSpec::monomial(1, 1), BasisSpec::monomial(0, 1))).unwrap();
        let data = vec![NodeData::new(1, col(&[0.0, 1.0]), DVector::from_vec(vec![1.0, 2.0]), 1.0).unwrap()];
        let bad = FitConfig { max_iters: 0, ..Default::default() };
        assert!(matches!(fit(&net, &data, &bad), Err(Error::InvalidConfig(_))));
        let lasso = FitConfig { reg: RegConfig::laplace(1.0), ..Default::default() };
        assert!(matches!(fit(&net, &data, &lasso), Err(Error::InvalidConfig(_))));
        assert!(matches!(fit_sparse(&net, &data, &FitConfig::default()), Err(Error::InvalidConfig(_))));
    }
}
