//! Directional, averaged, double-integral and ball-supremum nonlocal energies.
//!
//! All energies are midpoint sums over the cell centers of a [`Grid`]. The
//! direction integral runs through a [`DirectionRule`]; each direction is an
//! independent task and the weighted reduction is done afterwards in
//! ascending node order, so results do not depend on the thread count.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{dot, minkowski_support, pad, AnalyticField, BoxDomain, FlatField, Grid, SampledField, Vec3, MAX_DIM};
use crate::error::{Error, Result};
use crate::quad::{DirectionRule, RuleMeta, Support};

/// Minimum number of cells per `ε` required by every energy evaluation.
pub const GRID_FACTOR: f64 = 4.0;

/// Displacement argument of the energies.
#[derive(Clone, Copy, Debug)]
pub enum Field<'a> {
    /// Exact evaluation at `x` and `x + εξ`, cells of the given grid.
    Analytic(&'a AnalyticField, &'a Grid),
    /// Nodal values; `u(x + εξ)` by multilinear interpolation.
    Sampled(&'a SampledField),
}

impl<'a> Field<'a> {
    pub fn grid(&self) -> &'a Grid {
        match self {
            Field::Analytic(_, g) => g,
            Field::Sampled(s) => s.grid(),
        }
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }
}

/// Open ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Parameter(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    #[inline]
    fn contains3(&self, c: &Vec3, x: &Vec3) -> bool {
        let d = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
        dot(&d, &d) < self.radius * self.radius
    }

    /// True if the ball lies in the closed box and avoids every precrack.
    pub fn fits_in(&self, domain: &BoxDomain) -> bool {
        (0..domain.dim()).all(|i| {
            self.center[i] - self.radius >= domain.lower()[i] - 1e-12
                && self.center[i] + self.radius <= domain.upper()[i] + 1e-12
        }) && !domain.precrack().iter().any(|s| s.meets_ball(&self.center, self.radius))
    }
}

/// Finite family of pairwise disjoint open balls.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
}

impl BallFamily {
    /// Checks disjointness and containment. Open balls that merely touch are
    /// disjoint, so `dist >= r_i + r_j` is accepted.
    pub fn validate(&self, domain: &BoxDomain) -> Result<()> {
        for (i, b) in self.balls.iter().enumerate() {
            if !b.fits_in(domain) {
                return Err(Error::Parameter(format!("ball {i} is not contained in the domain")));
            }
            for c in &self.balls[..i] {
                let d: f64 = b.center.iter().zip(&c.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if d < b.radius + c.radius - 1e-12 {
                    return Err(Error::Parameter(format!("ball {i} overlaps an earlier ball")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }
}

/// Integration set `E` of the energies.
#[derive(Clone, Debug)]
pub enum Region {
    Box(BoxDomain),
    Ball(Ball),
}

impl From<BoxDomain> for Region {
    fn from(b: BoxDomain) -> Self {
        Region::Box(b)
    }
}

impl From<Ball> for Region {
    fn from(b: Ball) -> Self {
        Region::Ball(b)
    }
}

impl Region {
    /// The box `(E − E)/ε` (for balls, the ball of radius `2r/ε`).
    pub fn difference_support(&self, eps: f64) -> Result<Support> {
        Ok(match self {
            Region::Box(b) => Support::Box(minkowski_support(b, eps)?),
            Region::Ball(b) => Support::Ball(2.0 * b.radius / eps),
        })
    }
}

/// Region prepared against a grid: candidate cells plus a fast membership test.
struct Prepared {
    cells: Vec<usize>,
    kind: PreparedKind,
}

enum PreparedKind {
    Box(BoxDomain),
    Ball(Ball, Vec3),
}

impl Prepared {
    fn new(region: &Region, grid: &Grid) -> Self {
        let centers = grid.centers3();
        match region {
            Region::Box(b) => {
                let lo = pad(b.lower());
                let hi = pad(b.upper());
                let cells = grid
                    .cells_in_bounds(&lo, &hi)
                    .into_iter()
                    .filter(|&c| b.contains3(&centers[c]))
                    .collect();
                Self {
                    cells,
                    kind: PreparedKind::Box(b.clone()),
                }
            }
            Region::Ball(ball) => {
                let c = pad(&ball.center);
                let n = grid.dim();
                let mut lo = c;
                let mut hi = c;
                for a in 0..n {
                    lo[a] -= ball.radius;
                    hi[a] += ball.radius;
                }
                let cells = grid
                    .cells_in_bounds(&lo, &hi)
                    .into_iter()
                    .filter(|&k| ball.contains3(&c, &centers[k]))
                    .collect();
                Self {
                    cells,
                    kind: PreparedKind::Ball(ball.clone(), c),
                }
            }
        }
    }

    #[inline]
    fn contains(&self, x: &Vec3) -> bool {
        match &self.kind {
            PreparedKind::Box(b) => b.contains3(x),
            PreparedKind::Ball(b, c) => b.contains3(c, x),
        }
    }
}

/// Field prepared for repeated evaluation.
pub(crate) struct Evaluator<'a> {
    grid: &'a Grid,
    flat: Option<FlatField>,
    sampled: Option<&'a SampledField>,
    cell_values: Vec<Vec3>,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(field: Field<'a>) -> Result<Self> {
        match field {
            Field::Analytic(f, grid) => {
                if f.dim() != grid.dim() {
                    return Err(Error::Dimension {
                        expected: grid.dim(),
                        got: f.dim(),
                    });
                }
                let flat = f.flatten();
                let cell_values = grid.centers3().iter().map(|c| flat.eval(c)).collect();
                Ok(Self {
                    grid,
                    flat: Some(flat),
                    sampled: None,
                    cell_values,
                })
            }
            Field::Sampled(s) => Ok(Self {
                grid: s.grid(),
                flat: None,
                sampled: Some(s),
                cell_values: (0..s.grid().len()).map(|c| s.value3(c)).collect(),
            }),
        }
    }

    #[inline]
    fn at_point(&self, y: &Vec3) -> Vec3 {
        match (&self.flat, self.sampled) {
            (Some(f), _) => f.eval(y),
            (None, Some(s)) => s.interpolate(y),
            _ => unreachable!(),
        }
    }
}

pub(crate) fn check_resolution(grid: &Grid, eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let h = grid.spacing().iter().cloned().fold(0.0, f64::max);
    if h > eps / GRID_FACTOR * (1.0 + 1e-9) {
        return Err(Error::GridCapability {
            h,
            eps,
            factor: GRID_FACTOR,
        });
    }
    Ok(())
}

/// `(1/ε) Σ_{x ∈ E, x+εξ ∈ E} h^n arctan(((u(x+εξ) − u(x))·ξ)² / ε)`.
fn directional(ev: &Evaluator, region: &Prepared, eps: f64, xi: &Vec3) -> f64 {
    let centers = ev.grid.centers3();
    let shift = [eps * xi[0], eps * xi[1], eps * xi[2]];
    let mut sum = 0.0;
    for &c in &region.cells {
        let x = &centers[c];
        let y = [x[0] + shift[0], x[1] + shift[1], x[2] + shift[2]];
        if !region.contains(&y) {
            continue;
        }
        let uy = ev.at_point(&y);
        let ux = &ev.cell_values[c];
        let s = (uy[0] - ux[0]) * xi[0] + (uy[1] - ux[1]) * xi[1] + (uy[2] - ux[2]) * xi[2];
        sum += (s * s / eps).atan();
    }
    sum * ev.grid.cell_volume() / eps
}

/// Directional energy `F_{ε,ξ}(u, E)`.
pub fn f_eps_xi(field: Field, region: &Region, eps: f64, xi: &[f64]) -> Result<f64> {
    check_resolution(field.grid(), eps)?;
    if xi.len() != field.dim() || xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("direction must be a finite vector of the field dimension".into()));
    }
    let ev = Evaluator::new(field)?;
    let prep = Prepared::new(region, field.grid());
    Ok(directional(&ev, &prep, eps, &pad(xi)))
}

/// Result of an energy evaluation with its breakdown.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub total: f64,
    pub eps: f64,
    pub p: f64,
    /// `F_{ε,ξ_i}` per rule node (zero outside the support). For the
    /// ball functional: summed over the balls of the reported family.
    pub per_direction: Vec<f64>,
    /// Per-ball terms `(∫ F_{ε,ξ}(u,B)^p)^{1/p}`; `total` is their sum.
    pub per_ball: Option<Vec<f64>>,
    pub family: Option<BallFamily>,
    pub grid_h: f64,
    pub rule_meta: RuleMeta,
    /// Number of independent reduction partitions (one per direction node).
    pub partitions: usize,
    /// Number of candidate families examined.
    pub families_examined: usize,
}

fn per_direction_values(ev: &Evaluator, prep: &Prepared, eps: f64, rule: &DirectionRule, support: &Support) -> Vec<f64> {
    rule.nodes3()
        .par_iter()
        .map(|xi| if support.contains(xi) { directional(ev, prep, eps, xi) } else { 0.0 })
        .collect()
}

fn weighted_sum(rule: &DirectionRule, values: &[f64], power: f64) -> f64 {
    rule.weights()
        .iter()
        .zip(values)
        .map(|(w, v)| if power == 1.0 { w * v } else { w * v.powf(power) })
        .sum()
}

/// Averaged energy `F_ε(u, E) = ∫_{(E−E)/ε} F_{ε,ξ}(u, E) e^{-|ξ|²} dξ`.
pub fn f_eps(field: Field, region: &Region, eps: f64, rule: &DirectionRule) -> Result<EnergyReport> {
    check_resolution(field.grid(), eps)?;
    if rule.dim() != field.dim() {
        return Err(Error::Dimension {
            expected: field.dim(),
            got: rule.dim(),
        });
    }
    let ev = Evaluator::new(field)?;
    let prep = Prepared::new(region, field.grid());
    let support = region.difference_support(eps)?;
    let per_direction = per_direction_values(&ev, &prep, eps, rule, &support);
    for (i, v) in per_direction.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
    }
    let total = weighted_sum(rule, &per_direction, 1.0);
    Ok(EnergyReport {
        total,
        eps,
        p: 1.0,
        partitions: per_direction.len(),
        per_direction,
        per_ball: None,
        family: None,
        grid_h: field.grid().h(),
        rule_meta: rule.meta(),
        families_examined: 0,
    })
}

/// Double-integral form
/// `ε^{-(n+1)} ∬ arctan(((u(x')−u(x))·(x'−x))²/ε³) e^{−|x'−x|²/ε²}`
/// over cell pairs in `domain`, with pair cutoff `|x' − x| <= cutoff·ε`.
pub fn f_eps_double(field: Field, domain: &BoxDomain, eps: f64, cutoff: f64) -> Result<f64> {
    check_resolution(field.grid(), eps)?;
    let ev = Evaluator::new(field)?;
    let grid = field.grid();
    let n = grid.dim();
    let prep = Prepared::new(&Region::Box(domain.clone()), grid);
    let centers = grid.centers3();
    let spacing = grid.spacing3();
    let counts = grid.counts3();
    let reach = cutoff * eps;
    let mut span = [0i64; MAX_DIM];
    for a in 0..n {
        span[a] = (reach / spacing[a]).floor() as i64;
    }
    let eps3 = eps * eps * eps;
    let inv_eps2 = 1.0 / (eps * eps);
    let partial: Vec<f64> = prep
        .cells
        .par_iter()
        .map(|&c| {
            let x = &centers[c];
            let ux = &ev.cell_values[c];
            let idx = grid.multi_index(c);
            let mut s = 0.0;
            for dk in -span[2]..=span[2] {
                let k = idx[2] as i64 + dk;
                if k < 0 || k >= counts[2] as i64 {
                    continue;
                }
                for dj in -span[1]..=span[1] {
                    let j = idx[1] as i64 + dj;
                    if j < 0 || j >= counts[1] as i64 {
                        continue;
                    }
                    for di in -span[0]..=span[0] {
                        let i = idx[0] as i64 + di;
                        if i < 0 || i >= counts[0] as i64 || (di == 0 && dj == 0 && dk == 0) {
                            continue;
                        }
                        let c2 = grid.linear_index([i as usize, j as usize, k as usize]);
                        let y = &centers[c2];
                        let d = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
                        let r2 = dot(&d, &d);
                        if r2 > reach * reach || !prep.contains(y) {
                            continue;
                        }
                        let uy = &ev.cell_values[c2];
                        let t = (uy[0] - ux[0]) * d[0] + (uy[1] - ux[1]) * d[1] + (uy[2] - ux[2]) * d[2];
                        s += (t * t / eps3).atan() * (-r2 * inv_eps2).exp();
                    }
                }
            }
            s
        })
        .collect();
    let vol = grid.cell_volume();
    Ok(partial.iter().sum::<f64>() * vol * vol / eps.powi(n as i32 + 1))
}

/// Candidate search for the supremum over ball families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BallStrategy {
    /// Inscribed balls of the `2^{ℓn}` dyadic subcubes, `ℓ = 0..=levels`.
    Dyadic { levels: usize },
    /// Largest balls first on shrinking radii, up to `count` balls.
    Greedy { count: usize },
}

impl FromStr for BallStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("strategy must look like dyadic:L or greedy:K, got {s:?}")))?;
        let value: usize = arg
            .parse()
            .map_err(|_| Error::Parameter(format!("bad strategy argument {arg:?}")))?;
        match kind {
            "dyadic" => Ok(BallStrategy::Dyadic { levels: value }),
            "greedy" if value > 0 => Ok(BallStrategy::Greedy { count: value }),
            _ => Err(Error::Parameter(format!("unknown strategy {s:?}"))),
        }
    }
}

impl std::fmt::Display for BallStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BallStrategy::Dyadic { levels } => write!(f, "dyadic:{levels}"),
            BallStrategy::Greedy { count } => write!(f, "greedy:{count}"),
        }
    }
}

/// Candidate families generated by `strategy`, all valid for `domain`.
pub fn ball_candidates(domain: &BoxDomain, strategy: BallStrategy) -> Vec<BallFamily> {
    let n = domain.dim();
    match strategy {
        BallStrategy::Dyadic { levels } => {
            let mut out = Vec::new();
            for level in 0..=levels {
                let per_axis = 1usize << level;
                let sub: Vec<f64> = (0..n).map(|a| domain.extent(a) / per_axis as f64).collect();
                let radius = 0.5 * sub.iter().cloned().fold(f64::INFINITY, f64::min);
                let total = per_axis.pow(n as u32);
                let mut balls = Vec::new();
                for k in 0..total {
                    let mut rem = k;
                    let center: Vec<f64> = (0..n)
                        .map(|a| {
                            let i = rem % per_axis;
                            rem /= per_axis;
                            domain.lower()[a] + (i as f64 + 0.5) * sub[a]
                        })
                        .collect();
                    let ball = Ball { center, radius };
                    if ball.fits_in(domain) {
                        balls.push(ball);
                    }
                }
                if !balls.is_empty() {
                    out.push(BallFamily { balls });
                }
            }
            out
        }
        BallStrategy::Greedy { count } => {
            let r0 = 0.5 * (0..n).map(|a| domain.extent(a)).fold(f64::INFINITY, f64::min);
            let mut accepted: Vec<Ball> = Vec::new();
            let mut radius = r0;
            while accepted.len() < count && radius >= r0 / 64.0 {
                let step = 0.5 * radius;
                let per_axis: Vec<usize> = (0..n)
                    .map(|a| ((domain.extent(a) - 2.0 * radius) / step + 1e-9).floor() as usize + 1)
                    .collect();
                let total: usize = per_axis.iter().product();
                for k in 0..total {
                    if accepted.len() >= count {
                        break;
                    }
                    let mut rem = k;
                    let center: Vec<f64> = (0..n)
                        .map(|a| {
                            let i = rem % per_axis[a];
                            rem /= per_axis[a];
                            domain.lower()[a] + radius + i as f64 * step
                        })
                        .collect();
                    let ball = Ball {
                        center: center.clone(),
                        radius,
                    };
                    if !ball.fits_in(domain) {
                        continue;
                    }
                    let disjoint = accepted.iter().all(|b| {
                        let d: f64 = b.center.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                        d >= b.radius + radius - 1e-12
                    });
                    if disjoint {
                        accepted.push(ball);
                    }
                }
                radius *= 0.7;
            }
            (1..=accepted.len())
                .map(|k| BallFamily {
                    balls: accepted[..k].to_vec(),
                })
                .collect()
        }
    }
}

/// Which ξ-support the ball functional integrates over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportVariant {
    /// `(Ω − Ω)/ε` for every ball.
    #[default]
    Domain,
    /// `(B − B)/ε` per ball.
    PerBall,
}

/// Ball-supremum functional `F^p_ε`, maximized over the candidate families of
/// `strategy`. The result is a lower bound for the true supremum; the
/// achieving family is returned in the report.
pub fn fp_eps(
    field: Field,
    domain: &BoxDomain,
    eps: f64,
    p: f64,
    rule: &DirectionRule,
    strategy: BallStrategy,
    variant: SupportVariant,
) -> Result<EnergyReport> {
    let families = ball_candidates(domain, strategy);
    fp_eps_families(field, domain, eps, p, rule, &families, variant)
}

/// `F^p_ε` maximized over an explicit list of families.
pub fn fp_eps_families(
    field: Field,
    domain: &BoxDomain,
    eps: f64,
    p: f64,
    rule: &DirectionRule,
    families: &[BallFamily],
    variant: SupportVariant,
) -> Result<EnergyReport> {
    check_resolution(field.grid(), eps)?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p must be >= 1, got {p}")));
    }
    if families.is_empty() {
        return Err(Error::Parameter("no candidate ball families".into()));
    }
    if rule.dim() != field.dim() {
        return Err(Error::Dimension {
            expected: field.dim(),
            got: rule.dim(),
        });
    }
    let ev = Evaluator::new(field)?;
    let domain_support = Support::Box(minkowski_support(domain, eps)?);
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, &BallFamily)> = None;
    for family in families {
        family.validate(domain)?;
        let mut terms = Vec::with_capacity(family.len());
        let mut summed = vec![0.0; rule.len()];
        for ball in &family.balls {
            let region = Region::Ball(ball.clone());
            let prep = Prepared::new(&region, field.grid());
            let support = match variant {
                SupportVariant::Domain => domain_support.clone(),
                SupportVariant::PerBall => region.difference_support(eps)?,
            };
            let values = per_direction_values(&ev, &prep, eps, rule, &support);
            let term = weighted_sum(rule, &values, p).powf(1.0 / p);
            if !term.is_finite() {
                return Err(Error::NonFinite { index: terms.len() });
            }
            terms.push(term);
            summed.iter_mut().zip(&values).for_each(|(s, v)| *s += v);
        }
        let value: f64 = terms.iter().sum();
        if best.as_ref().map_or(true, |b| value > b.0) {
            best = Some((value, terms, summed, family));
        }
    }
    let (total, terms, summed, family) = best.expect("families is non-empty");
    Ok(EnergyReport {
        total,
        eps,
        p,
        partitions: rule.len(),
        per_direction: summed,
        per_ball: Some(terms),
        family: Some(family.clone()),
        grid_h: field.grid().h(),
        rule_meta: rule.meta(),
        families_examined: families.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::sample;
    use crate::quad::build_direction_rule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit(n: usize) -> BoxDomain {
        BoxDomain::unit(n).unwrap()
    }

    fn skew(w: f64) -> Vec<Vec<f64>> {
        vec![vec![0.0, w], vec![-w, 0.0]]
    }

    fn step(s: f64) -> AnalyticField {
        AnalyticField::plane_jump(vec![1.0], 0.5, vec![0.0], vec![s]).unwrap()
    }

    /// Brute-force oracle for the 1D directional energy of a step field:
    /// fine midpoint sum of the defining integral.
    fn step_oracle(s: f64, eps: f64, xi: f64, m: usize) -> f64 {
        let h = 1.0 / m as f64;
        let mut sum = 0.0;
        for k in 0..m {
            let x = (k as f64 + 0.5) * h;
            let y = x + eps * xi;
            if y <= 0.0 || y >= 1.0 {
                continue;
            }
            let d = if (x < 0.5) != (y < 0.5) { s * xi } else { 0.0 };
            sum += (d * d * xi * xi / eps).atan() * h;
        }
        sum / eps
    }

    #[test]
    fn directional_examples() {
        let g = Grid::new(unit(2), 0.02).unwrap();
        let c = AnalyticField::constant(&[1.0, -3.0]);
        let r = Region::Box(unit(2));
        assert_eq!(f_eps_xi(Field::Analytic(&c, &g), &r, 0.1, &[0.3, 0.9]).unwrap(), 0.0);
        let w = AnalyticField::affine(skew(0.8), vec![0.1, 0.2]).unwrap();
        let v = f_eps_xi(Field::Analytic(&w, &g), &r, 0.1, &[0.3, 0.9]).unwrap();
        assert!(v.abs() < 1e-12);

        let eps = 0.01;
        let g1 = Grid::new(unit(1), eps / 20.0).unwrap();
        let f = step(10.0);
        let v = f_eps_xi(Field::Analytic(&f, &g1), &Region::Box(unit(1)), eps, &[1.0]).unwrap();
        let oracle = step_oracle(10.0, eps, 1.0, 200_000);
        assert!((oracle - (1e4f64 / 0.01).atan()).abs() < 1e-3);
        assert!((v - oracle).abs() < 0.05 * oracle, "{v} vs {oracle}");
        assert!((v - PI / 2.0).abs() < 0.05);
    }

    #[test]
    fn resolution_and_parameter_errors() {
        let g = Grid::new(unit(1), 0.1).unwrap();
        let f = step(1.0);
        let r = Region::Box(unit(1));
        assert!(matches!(f_eps_xi(Field::Analytic(&f, &g), &r, 0.2, &[1.0]), Err(Error::GridCapability { .. })));
        assert!(f_eps_xi(Field::Analytic(&f, &g), &r, -1.0, &[1.0]).is_err());
        let rule = build_direction_rule(1, 16, 2, 6.0).unwrap();
        let empty: Vec<BallFamily> = Vec::new();
        let g = Grid::new(unit(1), 0.01).unwrap();
        assert!(fp_eps_families(Field::Analytic(&f, &g), &unit(1), 0.1, 1.0, &rule, &empty, SupportVariant::Domain).is_err());
    }

    #[test]
    fn averaged_energy_constant_and_rigid() {
        let rule = build_direction_rule(2, 16, 16, 6.0).unwrap();
        let g = Grid::new(unit(2), 0.025).unwrap();
        let r = Region::Box(unit(2));
        let c = AnalyticField::constant(&[2.0, 1.0]);
        assert_eq!(f_eps(Field::Analytic(&c, &g), &r, 0.1, &rule).unwrap().total, 0.0);
        let w = AnalyticField::affine(skew(-1.7), vec![0.3, 0.0]).unwrap();
        assert!(f_eps(Field::Analytic(&w, &g), &r, 0.1, &rule).unwrap().total.abs() < 1e-12);
        let s = sample(&w, &g).unwrap();
        assert!(f_eps(Field::Sampled(&s), &r, 0.1, &rule).unwrap().total.abs() < 1e-12);
    }

    #[test]
    fn report_total_is_weighted_direction_sum() {
        let rule = build_direction_rule(1, 24, 2, 6.0).unwrap();
        let g = Grid::new(unit(1), 0.005).unwrap();
        let f = AnalyticField::affine(vec![vec![1.3]], vec![0.0]).unwrap();
        let rep = f_eps(Field::Analytic(&f, &g), &Region::Box(unit(1)), 0.04, &rule).unwrap();
        let s: f64 = rule.weights().iter().zip(&rep.per_direction).map(|(w, v)| w * v).sum();
        assert_eq!(s, rep.total);
        assert_eq!(rep.partitions, rule.len());
    }

    #[test]
    fn translation_in_values_changes_nothing() {
        let rule = build_direction_rule(2, 16, 12, 6.0).unwrap();
        let g = Grid::new(unit(2), 0.025).unwrap();
        let r = Region::Box(unit(2));
        let base = AnalyticField::sum(vec![
            AnalyticField::affine(vec![vec![0.5, 0.2], vec![0.1, -0.4]], vec![0.0, 0.0]).unwrap(),
            AnalyticField::plane_jump(vec![0.0, 1.0], 0.43, vec![0.0, 0.0], vec![0.0, 2.0]).unwrap(),
        ])
        .unwrap();
        let shifted = AnalyticField::sum(vec![base.clone(), AnalyticField::constant(&[0.25, -0.5])]).unwrap();
        let a = f_eps(Field::Analytic(&base, &g), &r, 0.1, &rule).unwrap().total;
        let b = f_eps(Field::Analytic(&shifted, &g), &r, 0.1, &rule).unwrap().total;
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn set_monotonicity_and_saturation_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid::new(unit(2), 0.02).unwrap();
        let big = Region::Box(unit(2));
        let small = Region::Box(BoxDomain::new(&[0.1, 0.2], &[0.8, 0.9]).unwrap());
        for _ in 0..5 {
            let n = g.len();
            let values: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = SampledField::new(g.clone(), values, vec![false; n]).unwrap();
            let xi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let eps = 0.1;
            let e_small = f_eps_xi(Field::Sampled(&s), &small, eps, &xi).unwrap();
            let e_big = f_eps_xi(Field::Sampled(&s), &big, eps, &xi).unwrap();
            assert!(e_small <= e_big);
            // |E ∩ (E − εξ)| for the unit square
            let overlap = (1.0 - eps * xi[0].abs()).max(0.0) * (1.0 - eps * xi[1].abs()).max(0.0);
            assert!(e_big <= PI / 2.0 * (overlap + 4.0 * 0.02) / eps);
        }
    }

    #[test]
    fn double_form_vanishes_on_constants_and_rigid_motions() {
        let g = Grid::new(unit(2), 0.025).unwrap();
        let c = AnalyticField::constant(&[1.0, 1.0]);
        assert_eq!(f_eps_double(Field::Analytic(&c, &g), &unit(2), 0.1, 6.0).unwrap(), 0.0);
        let w = AnalyticField::affine(skew(2.0), vec![0.0, 1.0]).unwrap();
        assert!(f_eps_double(Field::Analytic(&w, &g), &unit(2), 0.1, 6.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn double_form_agrees_with_average_1d_affine() {
        let eps = 0.05;
        let g = Grid::new(unit(1), eps / 8.0).unwrap();
        let rule = build_direction_rule(1, 96, 2, 6.0).unwrap();
        let f = AnalyticField::affine(vec![vec![1.5]], vec![0.0]).unwrap();
        let a = f_eps(Field::Analytic(&f, &g), &Region::Box(unit(1)), eps, &rule).unwrap().total;
        let b = f_eps_double(Field::Analytic(&f, &g), &unit(1), eps, 6.0).unwrap();
        assert!((a - b).abs() <= 0.03 * a, "{a} vs {b}");
    }

    #[test]
    fn dyadic_candidates() {
        let fams = ball_candidates(&unit(2), BallStrategy::Dyadic { levels: 1 });
        assert_eq!(fams.len(), 2);
        assert_eq!(fams[0].balls, vec![Ball { center: vec![0.5, 0.5], radius: 0.5 }]);
        assert_eq!(fams[1].len(), 4);
        assert!(fams[1].balls.iter().all(|b| b.radius == 0.25));
        for f in &fams {
            f.validate(&unit(2)).unwrap();
        }
    }

    #[test]
    fn dyadic_candidates_with_precrack() {
        use crate::domain::PlaneSegment;
        let seg = PlaneSegment {
            axis: 0,
            offset: 0.4,
            lower: vec![0.0, 0.3],
            upper: vec![0.0, 0.7],
        };
        let d = unit(2).with_precrack(vec![seg]).unwrap();
        let fams = ball_candidates(&d, BallStrategy::Dyadic { levels: 1 });
        assert_eq!(fams.len(), 1, "level-0 ball must be rejected");
        assert_eq!(fams[0].len(), 2);
        assert!(fams[0].balls.iter().all(|b| b.center[0] == 0.75));
    }

    #[test]
    fn greedy_candidates_are_valid_and_growing() {
        let d = BoxDomain::new(&[0.0, 0.0], &[2.0, 1.0]).unwrap();
        let fams = ball_candidates(&d, BallStrategy::Greedy { count: 6 });
        assert_eq!(fams.len(), 6);
        assert_eq!(fams[0].balls[0].radius, 0.5);
        for (k, f) in fams.iter().enumerate() {
            assert_eq!(f.len(), k + 1);
            f.validate(&d).unwrap();
        }
        let radii: Vec<f64> = fams[5].balls.iter().map(|b| b.radius).collect();
        assert!(radii.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("dyadic:3".parse::<BallStrategy>().unwrap(), BallStrategy::Dyadic { levels: 3 });
        assert_eq!("greedy:5".parse::<BallStrategy>().unwrap(), BallStrategy::Greedy { count: 5 });
        assert!("greedy:0".parse::<BallStrategy>().is_err());
        assert!("spiral:2".parse::<BallStrategy>().is_err());
        assert_eq!(BallStrategy::Dyadic { levels: 2 }.to_string(), "dyadic:2");
    }

    #[test]
    fn single_ball_p1_equals_averaged_energy_on_the_ball() {
        let rule = build_direction_rule(2, 16, 16, 6.0).unwrap();
        let g = Grid::new(unit(2), 0.02).unwrap();
        let f = AnalyticField::affine(vec![vec![0.7, 0.1], vec![0.3, -0.2]], vec![0.0, 0.0]).unwrap();
        let fams = ball_candidates(&unit(2), BallStrategy::Dyadic { levels: 0 });
        let ball = fams[0].balls[0].clone();
        for variant in [SupportVariant::Domain, SupportVariant::PerBall] {
            let rep = fp_eps_families(Field::Analytic(&f, &g), &unit(2), 0.1, 1.0, &rule, &fams, variant).unwrap();
            let direct = f_eps(Field::Analytic(&f, &g), &Region::Ball(ball.clone()), 0.1, &rule).unwrap();
            assert!((rep.total - direct.total).abs() <= 1e-12 * direct.total);
        }
    }

    #[test]
    fn ball_functional_is_monotone_in_candidate_set_and_hoelder_bounded() {
        let rule = build_direction_rule(2, 16, 16, 6.0).unwrap();
        let g = Grid::new(unit(2), 0.02).unwrap();
        let f = AnalyticField::sum(vec![
            AnalyticField::affine(vec![vec![0.8, 0.0], vec![0.0, 0.3]], vec![0.0, 0.0]).unwrap(),
            AnalyticField::plane_jump(vec![1.0, 0.0], 0.27, vec![0.0, 0.0], vec![3.0, 0.0]).unwrap(),
        ])
        .unwrap();
        let field = Field::Analytic(&f, &g);
        let mut prev = 0.0;
        for levels in 0..=2 {
            let rep = fp_eps(field, &unit(2), 0.1, 1.0, &rule, BallStrategy::Dyadic { levels }, SupportVariant::Domain).unwrap();
            assert!(rep.total >= prev);
            prev = rep.total;
        }
        let c = AnalyticField::constant(&[1.0, 2.0]);
        for p in [1.0, 2.0, 3.5] {
            let rep = fp_eps(Field::Analytic(&c, &g), &unit(2), 0.1, p, &rule, BallStrategy::Greedy { count: 3 }, SupportVariant::Domain).unwrap();
            assert_eq!(rep.total, 0.0);
        }
        // F^1 <= C(n,p) F^p on the same family with C = (Σ w)^{1 - 1/p}
        let fams = ball_candidates(&unit(2), BallStrategy::Dyadic { levels: 1 });
        let wsum: f64 = rule.weights().iter().sum();
        for fam in &fams {
            let one = std::slice::from_ref(fam);
            let f1 = fp_eps_families(field, &unit(2), 0.1, 1.0, &rule, one, SupportVariant::Domain).unwrap().total;
            for p in [1.5, 2.0, 4.0] {
                let fp = fp_eps_families(field, &unit(2), 0.1, p, &rule, one, SupportVariant::Domain).unwrap().total;
                assert!(f1 <= wsum.powf(1.0 - 1.0 / p) * fp * (1.0 + 1e-12));
            }
        }
    }
}
