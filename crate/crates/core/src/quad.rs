//! Quadrature for `∫_{R^n} f(ξ) e^{-|ξ|²} dξ` and closed-form Gaussian moments.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::domain::{BoxDomain, Vec3, MAX_DIM};
use crate::error::{Error, Result};

/// Construction parameters, as read from the `"quad"` block of a config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub radial_order: usize,
    pub angular_order: usize,
    pub r_max: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self {
            radial_order: 64,
            angular_order: 32,
            r_max: 6.0,
        }
    }
}

pub type RuleMeta = RuleParams;

/// Nodes and positive weights approximating the Gaussian-weighted integral
/// over `R^n`, truncated at `|ξ| <= truncation_radius`.
#[derive(Clone, Debug)]
pub struct DirectionRule {
    dim: usize,
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    truncation_radius: f64,
    meta: RuleMeta,
}

/// Region of ξ-space outside which nodes are dropped.
#[derive(Clone, Debug)]
pub enum Support {
    Box(BoxDomain),
    /// Open ball of the given radius centered at the origin.
    Ball(f64),
}

impl From<BoxDomain> for Support {
    fn from(b: BoxDomain) -> Self {
        Support::Box(b)
    }
}

impl Support {
    #[inline]
    pub(crate) fn contains(&self, xi: &Vec3) -> bool {
        match self {
            Support::Box(b) => b.contains3(xi),
            Support::Ball(r) => xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] < r * r,
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on the three-term
/// recurrence).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if m == 0 { 1.0 } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// Surface measure of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0)
}

/// Which Gaussian moment to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub enum Moment {
    /// `∫ |ξ|^k e^{-|ξ|²} dξ`, any real `k >= 0`.
    Radial(f64),
    /// `∫ ∏ ξ_i^{α_i} e^{-|ξ|²} dξ`.
    Tensor(Vec<u32>),
}

/// Exact Gaussian moments over `R^n`.
pub fn gaussian_moment(n: usize, moment: &Moment) -> f64 {
    match moment {
        Moment::Radial(k) => sphere_area(n) * gamma((k + n as f64) / 2.0) / 2.0,
        Moment::Tensor(alpha) => {
            let one_d = |m: u32| if m % 2 == 1 { 0.0 } else { gamma((m as f64 + 1.0) / 2.0) };
            (0..n).map(|i| one_d(alpha.get(i).copied().unwrap_or(0))).product()
        }
    }
}

/// Builds the direction rule: Gauss–Legendre in `r` on `(0, r_max)` against
/// `r^{n-1} e^{-r²}`, times an equal-weight angular rule.
pub fn build_direction_rule(n: usize, radial_order: usize, angular_order: usize, r_max: f64) -> Result<DirectionRule> {
    if !(1..=MAX_DIM).contains(&n) {
        return Err(Error::Parameter(format!("direction rules support n in 1..=3, got {n}")));
    }
    if radial_order < 2 || angular_order < 2 {
        return Err(Error::Parameter("quadrature orders must be >= 2".into()));
    }
    if !(r_max >= 3.0) {
        return Err(Error::Parameter(format!("r_max must be >= 3, got {r_max}")));
    }
    let (gx, gw) = gauss_legendre(radial_order);
    let radial: Vec<(f64, f64)> = gx
        .iter()
        .zip(&gw)
        .map(|(x, w)| {
            let r = 0.5 * r_max * (x + 1.0);
            (r, 0.5 * r_max * w * r.powi(n as i32 - 1) * (-r * r).exp())
        })
        .collect();
    let sphere = build_sphere_rule(n, angular_order)?;
    let mut nodes = Vec::with_capacity(radial.len() * sphere.len());
    let mut weights = Vec::with_capacity(radial.len() * sphere.len());
    for (dir, sw) in sphere.nodes.iter().zip(&sphere.weights) {
        for &(r, rw) in &radial {
            nodes.push([r * dir[0], r * dir[1], r * dir[2]]);
            weights.push(rw * sw);
        }
    }
    let rule = DirectionRule {
        dim: n,
        nodes,
        weights,
        truncation_radius: r_max,
        meta: RuleMeta {
            radial_order,
            angular_order,
            r_max,
        },
    };
    rule.check()?;
    Ok(rule)
}

impl DirectionRule {
    pub fn from_params(n: usize, p: &RuleParams) -> Result<Self> {
        build_direction_rule(n, p.radial_order, p.angular_order, p.r_max)
    }

    fn check(&self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        let target = PI.powf(self.dim as f64 / 2.0);
        if (total - target).abs() > 1e-6 * target {
            return Err(Error::RuleQuality(format!(
                "sum of weights {total} differs from pi^(n/2) = {target}"
            )));
        }
        let max_degree = self.meta.radial_order.min(4);
        for k in (2..=max_degree).step_by(2) {
            let exact = gaussian_moment(self.dim, &Moment::Radial(k as f64));
            let approx: f64 = self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| w * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).powi(k as i32 / 2))
                .sum();
            if (approx - exact).abs() > 1e-6 * exact {
                return Err(Error::RuleQuality(format!("radial moment {k}: {approx} vs exact {exact}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim]
    }

    pub(crate) fn nodes3(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    pub fn meta(&self) -> RuleMeta {
        self.meta
    }

    /// Copy with all nodes rotated by `angle` in the `(ξ₁, ξ₂)` plane.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let mut out = self.clone();
        if self.dim >= 2 {
            for x in &mut out.nodes {
                let (a, b) = (x[0], x[1]);
                x[0] = c * a - s * b;
                x[1] = s * a + c * b;
            }
        }
        out
    }
}

/// `Σ_{ξ_i ∈ support} w_i f(ξ_i)`, summed in ascending node order.
pub fn integrate<F>(rule: &DirectionRule, f: F, support: Option<&Support>) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut total = 0.0;
    for (i, (x, w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        if support.is_some_and(|s| !s.contains(x)) {
            continue;
        }
        let v = f(&x[..rule.dim]);
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        total += w * v;
    }
    Ok(total)
}

/// Equal-weight (in the azimuth) rule for `∫_{S^{n-1}} g dℋ^{n-1}`.
#[derive(Clone, Debug)]
pub struct SphereRule {
    dim: usize,
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
}

/// `n = 1`: the two points `±1`; `n = 2`: `order` equally spaced angles;
/// `n = 3`: Gauss–Legendre in `cos θ` times `2·order` equally spaced azimuths.
pub fn build_sphere_rule(n: usize, order: usize) -> Result<SphereRule> {
    if order < 2 {
        return Err(Error::Parameter("sphere rule order must be >= 2".into()));
    }
    let (nodes, weights) = match n {
        1 => (vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], vec![1.0, 1.0]),
        2 => {
            let w = 2.0 * PI / order as f64;
            let nodes = (0..order)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / order as f64;
                    [t.cos(), t.sin(), 0.0]
                })
                .collect();
            (nodes, vec![w; order])
        }
        3 => {
            let (cx, cw) = gauss_legendre(order);
            let m = 2 * order;
            let dphi = 2.0 * PI / m as f64;
            let mut nodes = Vec::with_capacity(order * m);
            let mut weights = Vec::with_capacity(order * m);
            for (ct, w) in cx.iter().zip(&cw) {
                let st = (1.0 - ct * ct).sqrt();
                for j in 0..m {
                    let phi = dphi * j as f64;
                    nodes.push([st * phi.cos(), st * phi.sin(), *ct]);
                    weights.push(w * dphi);
                }
            }
            (nodes, weights)
        }
        _ => return Err(Error::Parameter(format!("sphere rules support n in 1..=3, got {n}"))),
    };
    Ok(SphereRule { dim: n, nodes, weights })
}

impl SphereRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(&x[..self.dim]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson on `[a, b]`, test-only oracle.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: usize) -> f64 {
        let m = m + m % 2;
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for i in 1..m {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn legendre_nodes_integrate_polynomials() {
        let (x, w) = gauss_legendre(7);
        for k in 0..14u32 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "k={k}: {q} vs {exact}");
        }
    }

    #[test]
    fn moment_oracle_examples() {
        let sp = PI.sqrt();
        assert!((gaussian_moment(1, &Moment::Radial(0.0)) - sp).abs() < 1e-14);
        assert!((gaussian_moment(1, &Moment::Radial(2.0)) - sp / 2.0).abs() < 1e-14);
        assert_eq!(gaussian_moment(1, &Moment::Tensor(vec![3])), 0.0);
        // brute-force cross-check of the Gamma identity
        let bf = simpson(|x| x * x * (-x * x).exp(), -12.0, 12.0, 4000);
        assert!((bf - sp / 2.0).abs() < 1e-12);
        let bf4 = simpson(|x| x.powi(4) * (-x * x).exp(), -12.0, 12.0, 4000);
        assert!((gaussian_moment(1, &Moment::Tensor(vec![4])) - bf4).abs() < 1e-12);
        assert!((gaussian_moment(2, &Moment::Radial(4.0)) - 2.0 * PI).abs() < 1e-12);
        assert!((gaussian_moment(3, &Moment::Radial(0.0)) - PI.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn rule_normalization_and_fourth_moment() {
        let r1 = build_direction_rule(1, 32, 2, 6.0).unwrap();
        let s1: f64 = r1.weights().iter().sum();
        assert!((s1 - PI.sqrt()).abs() < 1e-10);
        let m4 = integrate(&r1, |x| x[0].powi(4), None).unwrap();
        assert!((m4 - 0.75 * PI.sqrt()).abs() < 1e-10);
        let r2 = build_direction_rule(2, 32, 16, 6.0).unwrap();
        let s2: f64 = r2.weights().iter().sum();
        assert!((s2 - PI).abs() < 1e-10);
        let r3 = build_direction_rule(3, 32, 8, 6.0).unwrap();
        let s3: f64 = r3.weights().iter().sum();
        assert!((s3 - PI.powf(1.5)).abs() < 1e-9);
        assert!(r1.nodes3().iter().all(|x| x[0].abs() <= 6.0));
    }

    #[test]
    fn truncated_support_matches_erf() {
        let rule = build_direction_rule(1, 64, 2, 6.0).unwrap();
        let support = Support::Box(BoxDomain::new(&[-1.0], &[1.0]).unwrap());
        let v = integrate(&rule, |_| 1.0, Some(&support)).unwrap();
        let oracle = simpson(|x| (-x * x).exp(), -1.0, 1.0, 2000);
        assert!((oracle - 1.493648).abs() < 1e-6);
        // a hard cut through a smooth integrand: accuracy limited by node spacing
        assert!((v - oracle).abs() < 0.02, "{v} vs {oracle}");
    }

    #[test]
    fn rule_errors() {
        assert!(matches!(build_direction_rule(1, 16, 2, 3.0), Err(Error::RuleQuality(_))));
        assert!(build_direction_rule(4, 16, 2, 6.0).is_err());
        assert!(build_direction_rule(2, 1, 8, 6.0).is_err());
        let rule = build_direction_rule(1, 16, 2, 6.0).unwrap();
        assert!(matches!(
            integrate(&rule, |x| 1.0 / x[0].abs().min(0.0), None),
            Err(Error::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn rotation_invariance_of_radial_integrands() {
        let rule = build_direction_rule(2, 24, 16, 6.0).unwrap();
        let g = |x: &[f64]| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            (r * 1.3).atan() + r * r
        };
        let a = integrate(&rule, g, None).unwrap();
        let b = integrate(&rule.rotated(0.37), g, None).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn truncation_radius_is_irrelevant_beyond_five() {
        let a = [[1.2, 0.3], [-0.7, 0.4]];
        let f = |x: &[f64]| {
            let q = x[0] * (a[0][0] * x[0] + a[0][1] * x[1]) + x[1] * (a[1][0] * x[0] + a[1][1] * x[1]);
            q * q
        };
        let r5 = build_direction_rule(2, 48, 16, 5.0).unwrap();
        let r8 = build_direction_rule(2, 48, 16, 8.0).unwrap();
        let v5 = integrate(&r5, f, None).unwrap();
        let v8 = integrate(&r8, f, None).unwrap();
        assert!((v5 - v8).abs() <= 1e-6 * v8.abs());
    }

    #[test]
    fn sphere_rules_have_correct_area() {
        for n in 1..=3 {
            let s = build_sphere_rule(n, 12).unwrap();
            let total: f64 = s.weights().iter().sum();
            assert!((total - sphere_area(n)).abs() < 1e-12, "n={n}");
        }
        let s3 = build_sphere_rule(3, 10).unwrap();
        let z2 = s3.integrate(|x| x[2] * x[2]);
        assert!((z2 - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn polynomial_moments_are_reproduced(n in 1usize..=3, a0 in 0u32..4, a1 in 0u32..4, a2 in 0u32..3) {
            let alpha = [2 * a0, 2 * a1, 2 * a2];
            let degree = alpha[..n].iter().sum::<u32>() as usize;
            let radial_order = 24;
            prop_assume!(degree <= 12);
            let rule = build_direction_rule(n, radial_order, 16, 6.0).unwrap();
            let q = integrate(&rule, |x| (0..n).map(|i| x[i].powi(alpha[i] as i32)).product(), None).unwrap();
            let exact = gaussian_moment(n, &Moment::Tensor(alpha[..n].to_vec()));
            prop_assert!((q - exact).abs() <= 1e-8 * (1.0 + exact.abs()), "{q} vs {exact}");
        }
    }
}
