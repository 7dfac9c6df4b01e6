//! Gradient of the discrete nonlocal energy and Dirichlet-constrained descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{sample, AnalyticField, BoxDomain, Grid, SampledField};
use crate::energy::{check_resolution, f_eps, Field, Region};
use crate::error::{Error, Result};
use crate::quad::{DirectionRule, Support};

/// Number of direction chunks whose private gradient buffers are merged in
/// order. Fixed, so results do not depend on the thread count.
pub const GRADIENT_PARTITIONS: usize = 16;

/// `F_ε(u, Ω')` over `u ∈ L⁰` with `u = f` on `Ω' ∖ Ω`.
#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub outer: BoxDomain,
    pub inner: BoxDomain,
    /// Boundary datum `f`; its samples on `Ω' ∖ Ω` are frozen.
    pub datum: AnalyticField,
    /// Optional second starting point for the free cells.
    pub elastic_guess: Option<AnalyticField>,
    pub eps: f64,
    pub p: f64,
    pub grid: Grid,
}

impl DirichletProblem {
    pub fn new(outer: BoxDomain, inner: BoxDomain, datum: AnalyticField, eps: f64, h: f64) -> Result<Self> {
        if !outer.contains_box(&inner) || (0..outer.dim()).any(|a| inner.lower()[a] <= outer.lower()[a] || inner.upper()[a] >= outer.upper()[a]) {
            return Err(Error::Domain("inner domain must lie strictly inside the outer one".into()));
        }
        if datum.dim() != outer.dim() {
            return Err(Error::Dimension {
                expected: outer.dim(),
                got: datum.dim(),
            });
        }
        datum.validate()?;
        let grid = Grid::new(outer.clone(), h)?;
        check_resolution(&grid, eps)?;
        Ok(Self {
            outer,
            inner,
            datum,
            elastic_guess: None,
            eps,
            p: 1.0,
            grid,
        })
    }

    pub fn with_elastic_guess(mut self, guess: AnalyticField) -> Result<Self> {
        if guess.dim() != self.outer.dim() {
            return Err(Error::Dimension {
                expected: self.outer.dim(),
                got: guess.dim(),
            });
        }
        self.elastic_guess = Some(guess);
        Ok(self)
    }

    /// Unit bar `Ω = (0,1)` clamped on grips of width `grip`: the datum is
    /// `0` left of `1/2` and `t` right of it, the elastic guess is `t·x`.
    pub fn bar(t: f64, eps: f64, h: f64, grip: f64) -> Result<Self> {
        let outer = BoxDomain::new(&[-grip], &[1.0 + grip])?;
        let inner = BoxDomain::unit(1)?;
        let datum = AnalyticField::plane_jump(vec![1.0], 0.5, vec![0.0], vec![t])?;
        Self::new(outer, inner, datum, eps, h)?.with_elastic_guess(AnalyticField::affine(vec![vec![t]], vec![0.0])?)
    }

    /// Sampled datum with cells outside `Ω` frozen.
    pub fn initial(&self) -> Result<SampledField> {
        let s = sample(&self.datum, &self.grid)?;
        let mask = s.grid().centers3().iter().map(|c| !self.inner.contains3(c)).collect();
        s.with_dirichlet(mask)
    }

    /// Datum on the frozen cells, `guess` on the free ones.
    pub fn from_guess(&self, guess: &AnalyticField) -> Result<SampledField> {
        let mut u = self.initial()?;
        let g = sample(guess, u.grid())?;
        if g.grid().len() != u.grid().len() || g.grid().center(0) != u.grid().center(0) {
            return Err(Error::Domain("guess and datum need the same sampling grid".into()));
        }
        u.set_free_values(g.values())?;
        Ok(u)
    }

    fn region(&self) -> Region {
        Region::Box(self.outer.clone())
    }
}

/// Energy `F_ε(u, Ω')` and its gradient with respect to the nodal values.
/// Frozen cells get zero gradient.
pub fn energy_and_gradient(u: &SampledField, region: &Region, eps: f64, rule: &DirectionRule) -> Result<(f64, Vec<f64>)> {
    let grid = u.grid();
    check_resolution(grid, eps)?;
    let n = grid.dim();
    if rule.dim() != n {
        return Err(Error::Dimension { expected: n, got: rule.dim() });
    }
    let support: Support = region.difference_support(eps)?;
    let centers = grid.centers3();
    let contains = |x: &[f64; 3]| match region {
        Region::Box(b) => b.contains3(x),
        Region::Ball(b) => {
            let d: f64 = (0..n).map(|a| (x[a] - b.center[a]).powi(2)).sum();
            d < b.radius * b.radius
        }
    };
    let cells: Vec<usize> = (0..grid.len()).filter(|&c| contains(&centers[c])).collect();
    let nodes = rule.nodes3();
    let weights = rule.weights();
    let parts = GRADIENT_PARTITIONS.min(rule.len()).max(1);
    let chunk = rule.len().div_ceil(parts);
    let scale = grid.cell_volume() / eps;
    let partial: Vec<(f64, Vec<f64>)> = (0..parts)
        .into_par_iter()
        .map(|part| {
            let mut energy = 0.0;
            let mut grad = vec![0.0; grid.len() * n];
            for i in part * chunk..((part + 1) * chunk).min(rule.len()) {
                let xi = &nodes[i];
                if !support.contains(xi) {
                    continue;
                }
                let w = weights[i] * scale;
                let shift = [eps * xi[0], eps * xi[1], eps * xi[2]];
                let mut e_dir = 0.0;
                for &c in &cells {
                    let x = &centers[c];
                    let y = [x[0] + shift[0], x[1] + shift[1], x[2] + shift[2]];
                    if !contains(&y) {
                        continue;
                    }
                    let st = grid.stencil(&y);
                    let mut uy = [0.0; 3];
                    for k in 0..st.len {
                        let v = u.value3(st.cells[k]);
                        for a in 0..n {
                            uy[a] += st.weights[k] * v[a];
                        }
                    }
                    let ux = u.value3(c);
                    let mut s = 0.0;
                    for a in 0..n {
                        s += (uy[a] - ux[a]) * xi[a];
                    }
                    let q = s * s / eps;
                    e_dir += q.atan();
                    if s == 0.0 {
                        continue;
                    }
                    // d/ds arctan(s²/ε) = (2s/ε) / (1 + s⁴/ε²)
                    let g = w * (2.0 * s / eps) / (1.0 + q * q);
                    for a in 0..n {
                        grad[c * n + a] -= g * xi[a];
                    }
                    for k in 0..st.len {
                        let gk = g * st.weights[k];
                        for a in 0..n {
                            grad[st.cells[k] * n + a] += gk * xi[a];
                        }
                    }
                }
                energy += w * e_dir;
            }
            (energy, grad)
        })
        .collect();
    let mut energy = 0.0;
    let mut grad = vec![0.0; grid.len() * n];
    for (e, g) in &partial {
        energy += e;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    for (c, frozen) in u.dirichlet_mask().iter().enumerate() {
        if *frozen {
            grad[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((energy, grad))
}

/// Gradient of `F_ε(u, E)` with respect to the nodal values of `u`.
pub fn grad_f_eps(u: &SampledField, region: &Region, eps: f64, rule: &DirectionRule) -> Result<Vec<f64>> {
    Ok(energy_and_gradient(u, region, eps, rule)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Tolerance on the L²-normalized gradient norm.
    pub gtol: f64,
    /// Number of ε-halvings after the first solve (warm-started).
    pub continuation: usize,
    /// Seeded uniform noise of amplitude 0.1 added to the free cells of an extra start.
    pub nucleation_seed: Option<u64>,
    /// Also descend from the elastic guess and keep the lower energy.
    pub multistart: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-6,
            continuation: 0,
            nucleation_seed: None,
            multistart: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DescentTrace {
    pub iterates: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub step_sizes: Vec<f64>,
    /// `ε` in force at each iteration.
    pub eps: Vec<f64>,
    pub final_field: SampledField,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Which starting point produced this trace.
    pub start: String,
    pub final_energy: f64,
}

fn l2_norm(g: &[f64], vol: f64) -> f64 {
    (g.iter().map(|v| v * v).sum::<f64>() / vol).sqrt()
}

/// Backtracking descent from `u` at fixed `eps`, appending to `trace`.
/// The search direction is the L² gradient `-g/h^n`.
fn descend(u: &mut SampledField, region: &Region, eps: f64, rule: &DirectionRule, opts: &MinimizeOptions, trace: &mut DescentTrace) -> Result<()> {
    let vol = u.grid().cell_volume();
    let (mut energy, mut grad) = energy_and_gradient(u, region, eps, rule)?;
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for _ in 0..opts.max_iter {
        let gnorm = l2_norm(&grad, vol);
        if gnorm <= opts.gtol {
            trace.converged = true;
            trace.stop_reason = StopReason::GradientTolerance;
            trace.final_energy = energy;
            return Ok(());
        }
        let dir: Vec<f64> = grad.iter().map(|g| -g / vol).collect();
        if let Some((dx, dg)) = &prev {
            // Barzilai–Borwein step on the L² inner product
            let sy: f64 = dx.iter().zip(dg).map(|(a, b)| a * b).sum();
            let ss: f64 = dx.iter().map(|a| a * a).sum();
            if sy > 0.0 {
                step = (ss * vol / sy).clamp(1e-8, 1e4);
            } else {
                step *= 2.0;
            }
        }
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let base = u.values().to_vec();
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..60 {
            let trial: Vec<f64> = base.iter().zip(&dir).map(|(v, d)| v + trial_step * d).collect();
            let mut cand = u.clone();
            cand.set_free_values(&trial)?;
            let (e, g) = energy_and_gradient(&cand, region, eps, rule)?;
            if e <= energy + 1e-4 * trial_step * slope {
                accepted = Some((cand, e, g));
                break;
            }
            trial_step *= 0.5;
        }
        let Some((cand, e, g)) = accepted else {
            trace.stop_reason = StopReason::LineSearchFailed;
            trace.final_energy = energy;
            return Ok(());
        };
        let dx: Vec<f64> = cand.values().iter().zip(&base).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        prev = Some((dx, dg));
        *u = cand;
        energy = e;
        grad = g;
        step = trial_step;
        trace.iterates.push(energy);
        trace.grad_norms.push(l2_norm(&grad, vol));
        trace.step_sizes.push(trial_step);
        trace.eps.push(eps);
    }
    trace.stop_reason = StopReason::MaxIterations;
    trace.converged = false;
    trace.final_energy = energy;
    Ok(())
}

fn run_from(prob: &DirichletProblem, start: SampledField, label: &str, rule: &DirectionRule, opts: &MinimizeOptions) -> Result<DescentTrace> {
    let region = prob.region();
    let mut u = start;
    let mut trace = DescentTrace {
        iterates: Vec::new(),
        grad_norms: Vec::new(),
        step_sizes: Vec::new(),
        eps: Vec::new(),
        final_field: u.clone(),
        converged: false,
        stop_reason: StopReason::MaxIterations,
        start: label.to_string(),
        final_energy: f64::NAN,
    };
    let schedule: Vec<f64> = (0..=opts.continuation).map(|k| prob.eps / 2f64.powi(k as i32)).collect();
    for &eps in &schedule {
        check_resolution(u.grid(), eps)?;
    }
    for &eps in &schedule {
        trace.converged = false;
        descend(&mut u, &region, eps, rule, opts, &mut trace)?;
    }
    trace.final_field = u;
    Ok(trace)
}

/// Descends from the sampled datum (and, with `multistart`, from the
/// elastic guess and a seeded perturbation) and returns the trace that ends
/// at the lowest energy.
pub fn minimize_dirichlet(prob: &DirichletProblem, rule: &DirectionRule, opts: &MinimizeOptions) -> Result<DescentTrace> {
    if rule.dim() != prob.outer.dim() {
        return Err(Error::Dimension {
            expected: prob.outer.dim(),
            got: rule.dim(),
        });
    }
    let mut starts = vec![("datum".to_string(), prob.initial()?)];
    if opts.multistart {
        if let Some(g) = &prob.elastic_guess {
            starts.push(("elastic".to_string(), prob.from_guess(g)?));
        }
    }
    if let Some(seed) = opts.nucleation_seed {
        let mut u = match &prob.elastic_guess {
            Some(g) => prob.from_guess(g)?,
            None => prob.initial()?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<f64> = u.values().iter().map(|v| v + 0.1 * rng.gen_range(-1.0..1.0)).collect();
        u.set_free_values(&noisy)?;
        starts.push((format!("nucleation:{seed}"), u));
    }
    let mut best: Option<DescentTrace> = None;
    for (label, start) in starts {
        let t = run_from(prob, start, &label, rule, opts)?;
        if best.as_ref().map_or(true, |b| t.final_energy < b.final_energy) {
            best = Some(t);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Candidate set: the elastic guess and, for every interior grid plane
/// orthogonal to `x₁`, the field equal to the guess's value on the lower
/// face of `Ω` below the plane and on the upper face above it.
pub fn candidate_energies(prob: &DirichletProblem, rule: &DirectionRule) -> Result<Vec<(String, f64)>> {
    let region = prob.region();
    let base = prob.initial()?;
    let grid = base.grid().clone();
    let eval = |u: &SampledField| -> Result<f64> { Ok(f_eps(Field::Sampled(u), &region, prob.eps, rule)?.total) };
    let mut out = vec![("datum".to_string(), eval(&base)?)];
    let Some(guess) = &prob.elastic_guess else {
        return Ok(out);
    };
    let elastic = prob.from_guess(guess)?;
    out.push(("elastic".to_string(), eval(&elastic)?));
    let flat = guess.flatten();
    let n = grid.dim();
    let centers = grid.centers3();
    let mask = base.dirichlet_mask();
    let x0 = grid.center(0)[0];
    let h0 = grid.spacing()[0];
    let (lo, hi) = (prob.inner.lower()[0], prob.inner.upper()[0]);
    let mut planes: Vec<usize> = Vec::new();
    for k in 1..grid.counts()[0] {
        let plane = x0 + (k as f64 - 0.5) * h0;
        if plane > lo && plane < hi {
            planes.push(k);
        }
    }
    let energies: Vec<Result<(String, f64)>> = planes
        .par_iter()
        .map(|&k| {
            let plane = x0 + (k as f64 - 0.5) * h0;
            let mut values = base.values().to_vec();
            for (c, x) in centers.iter().enumerate() {
                if mask[c] {
                    continue;
                }
                let mut face = *x;
                face[0] = if x[0] < plane { lo } else { hi };
                values[c * n..(c + 1) * n].copy_from_slice(&flat.eval(&face)[..n]);
            }
            let mut u = base.clone();
            u.set_free_values(&values)?;
            Ok((format!("crack@{plane}"), eval(&u)?))
        })
        .collect();
    for e in energies {
        out.push(e?);
    }
    Ok(out)
}

/// `F(u) − min` over [`candidate_energies`], clamped at zero.
pub fn quasi_min_gap(u: &SampledField, prob: &DirichletProblem, rule: &DirectionRule) -> Result<f64> {
    let e = f_eps(Field::Sampled(u), &prob.region(), prob.eps, rule)?.total;
    let best = candidate_energies(prob, rule)?
        .into_iter()
        .map(|(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    Ok((e - best).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::build_direction_rule;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_smooth(grid: &Grid, seed: u64) -> SampledField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.dim();
        let coef: Vec<f64> = (0..6 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut values = Vec::with_capacity(grid.len() * n);
        for c in 0..grid.len() {
            let x = grid.center(c);
            for a in 0..n {
                let k = &coef[6 * a..6 * a + 6];
                let mut v = k[0] * (3.0 * x[0] + k[1]).sin();
                if n > 1 {
                    v += k[2] * (2.0 * x[1] + k[3]).cos() + k[4] * x[0] * x[1];
                }
                values.push(v + k[5]);
            }
        }
        SampledField::new(grid.clone(), values, vec![false; grid.len()]).unwrap()
    }

    #[test]
    fn energy_matches_f_eps() {
        let rule = build_direction_rule(2, 16, 12, 6.0).unwrap();
        let g = Grid::new(BoxDomain::unit(2).unwrap(), 0.025).unwrap();
        let u = random_smooth(&g, 1);
        let r = Region::Box(BoxDomain::unit(2).unwrap());
        let (e, _) = energy_and_gradient(&u, &r, 0.1, &rule).unwrap();
        let f = f_eps(Field::Sampled(&u), &r, 0.1, &rule).unwrap().total;
        assert!((e - f).abs() <= 1e-12 * f);
    }

    #[test]
    fn gradient_vanishes_on_constants_and_rigid_motions() {
        let rule = build_direction_rule(2, 16, 12, 6.0).unwrap();
        let g = Grid::new(BoxDomain::unit(2).unwrap(), 0.025).unwrap();
        let r = Region::Box(BoxDomain::unit(2).unwrap());
        let c = sample(&AnalyticField::constant(&[1.0, -2.0]), &g).unwrap();
        assert!(grad_f_eps(&c, &r, 0.1, &rule).unwrap().iter().all(|v| v.abs() < 1e-12));
        let w = sample(&AnalyticField::affine(vec![vec![0.0, 0.7], vec![-0.7, 0.0]], vec![0.2, 0.0]).unwrap(), &g).unwrap();
        assert!(grad_f_eps(&w, &r, 0.1, &rule).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let rule = build_direction_rule(2, 16, 8, 6.0).unwrap();
        let g = Grid::new(BoxDomain::unit(2).unwrap(), 0.05).unwrap();
        let r = Region::Box(BoxDomain::unit(2).unwrap());
        let u = random_smooth(&g, 2);
        let grad = grad_f_eps(&u, &r, 0.2, &rule).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let delta = 1e-5;
        for _ in 0..5 {
            let v: Vec<f64> = (0..u.values().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let shifted = |s: f64| {
                let vals: Vec<f64> = u.values().iter().zip(&v).map(|(a, b)| a + s * b).collect();
                let w = SampledField::new(g.clone(), vals, vec![false; g.len()]).unwrap();
                f_eps(Field::Sampled(&w), &r, 0.2, &rule).unwrap().total
            };
            let fd = (shifted(delta) - shifted(-delta)) / (2.0 * delta);
            let an: f64 = grad.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!((an - fd).abs() / (1.0 + an.abs()) <= 1e-5, "{an} vs {fd}");
        }
    }

    #[test]
    fn frozen_cells_have_zero_gradient_and_stay_fixed() {
        let rule = build_direction_rule(1, 32, 2, 6.0).unwrap();
        let prob = DirichletProblem::bar(0.5, 0.05, 0.05 / 8.0, 0.1).unwrap();
        let u = prob.initial().unwrap();
        let (_, g) = energy_and_gradient(&u, &prob.region(), prob.eps, &rule).unwrap();
        for (c, f) in u.dirichlet_mask().iter().enumerate() {
            if *f {
                assert_eq!(g[c], 0.0);
            }
        }
        let opts = MinimizeOptions {
            max_iter: 30,
            multistart: false,
            ..Default::default()
        };
        let t = minimize_dirichlet(&prob, &rule, &opts).unwrap();
        for (c, f) in u.dirichlet_mask().iter().enumerate() {
            if *f {
                assert_eq!(t.final_field.values()[c].to_bits(), u.values()[c].to_bits());
            }
        }
        assert!(t.iterates.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rigid_datum_is_a_minimizer() {
        let rule = build_direction_rule(2, 16, 8, 6.0).unwrap();
        let outer = BoxDomain::new(&[-0.2, -0.2], &[1.2, 1.2]).unwrap();
        let w = AnalyticField::affine(vec![vec![0.0, 0.4], vec![-0.4, 0.0]], vec![1.0, 0.0]).unwrap();
        let prob = DirichletProblem::new(outer, BoxDomain::unit(2).unwrap(), w, 0.2, 0.05).unwrap();
        let t = minimize_dirichlet(&prob, &rule, &MinimizeOptions::default()).unwrap();
        assert!(t.final_energy.abs() < 1e-12);
        assert!(t.converged);
    }

    #[test]
    fn descent_is_equivariant_under_constant_shifts() {
        let rule = build_direction_rule(1, 32, 2, 6.0).unwrap();
        let a = DirichletProblem::bar(0.8, 0.05, 0.05 / 8.0, 0.1).unwrap();
        let mut b = a.clone();
        b.datum = AnalyticField::sum(vec![a.datum.clone(), AnalyticField::constant(&[0.3])]).unwrap();
        b.elastic_guess = Some(AnalyticField::affine(vec![vec![0.8]], vec![0.3]).unwrap());
        let opts = MinimizeOptions {
            max_iter: 40,
            multistart: false,
            ..Default::default()
        };
        let ta = minimize_dirichlet(&a, &rule, &opts).unwrap();
        let tb = minimize_dirichlet(&b, &rule, &opts).unwrap();
        assert_eq!(ta.iterates.len(), tb.iterates.len());
        for (x, y) in ta.final_field.values().iter().zip(tb.final_field.values()) {
            assert!((y - x - 0.3).abs() < 1e-10);
        }
    }

    #[test]
    fn gap_examples() {
        let rule = build_direction_rule(1, 32, 2, 6.0).unwrap();
        // branch formulas are ε→0 limits; at ε = 0.01 both branches are within ~7%
        let eps = 0.01;
        let phi = 0.75 * PI.sqrt();
        for (t, expect) in [(2.0, phi * 4.0 - FRAC_PI_2), (0.5, FRAC_PI_2 - phi * 0.25)] {
            let prob = DirichletProblem::bar(t, eps, eps / 8.0, 0.1).unwrap();
            let u = if t > 1.0 {
                prob.from_guess(prob.elastic_guess.as_ref().unwrap()).unwrap()
            } else {
                prob.initial().unwrap()
            };
            let gap = quasi_min_gap(&u, &prob, &rule).unwrap();
            assert!((gap - expect).abs() < 0.15 * expect, "t={t}: {gap} vs {expect}");
        }
    }

    #[test]
    fn continuation_refuses_unresolved_eps() {
        let rule = build_direction_rule(1, 32, 2, 6.0).unwrap();
        let prob = DirichletProblem::bar(0.5, 0.04, 0.01, 0.1).unwrap();
        let opts = MinimizeOptions {
            continuation: 1,
            ..Default::default()
        };
        assert!(matches!(minimize_dirichlet(&prob, &rule, &opts), Err(Error::GridCapability { .. })));
    }
}
