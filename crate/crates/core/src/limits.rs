//! Limit densities and the Griffith energy of analytic fields.
//!
//! Two normalizations of the densities are carried side by side. The
//! `WeightedSlice` one keeps an extra `|ξ|^p` factor in both the bulk and the
//! surface integrals; the `Calibrated` one drops it and is the normalization
//! that the small-ε behavior of the nonlocal energies converges to.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::domain::{dot, pad, AnalyticField, BoxDomain, Vec3, MAX_DIM};
use crate::error::{Error, Result};
use crate::quad::{integrate, DirectionRule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// Densities with the extra `|ξ|^p` weight.
    WeightedSlice,
    /// Densities without it; matches the ε→0 limit of the energies.
    #[default]
    Calibrated,
}

impl Convention {
    pub const ALL: [Convention; 2] = [Convention::WeightedSlice, Convention::Calibrated];

    pub fn name(&self) -> &'static str {
        match self {
            Convention::WeightedSlice => "weighted-slice",
            Convention::Calibrated => "calibrated",
        }
    }

    fn radial_power(&self, p: f64) -> f64 {
        match self {
            Convention::WeightedSlice => p,
            Convention::Calibrated => 0.0,
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("p must be >= 1, got {p}")))
    }
}

fn matrix3(a: &[Vec<f64>], n: usize) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension { expected: n, got: a.len() });
    }
    let mut m = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[i][j];
        }
    }
    Ok(m)
}

#[inline]
fn quadratic_form(a: &[[f64; MAX_DIM]; MAX_DIM], xi: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..xi.len() {
        for j in 0..xi.len() {
            s += a[i][j] * xi[i] * xi[j];
        }
    }
    s
}

/// Bulk density `φ_p(A)`, evaluated on `sym A`:
/// `φ_p(A) = (∫ |Aξ·ξ|^{2p} w(ξ) e^{-|ξ|²} dξ)^{1/p}` with
/// `w = |ξ|^p` or `1` according to `convention`.
pub fn phi_p(a: &[Vec<f64>], p: f64, rule: &DirectionRule, convention: Convention) -> Result<f64> {
    check_p(p)?;
    let raw = matrix3(a, rule.dim())?;
    let mut m = raw;
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            m[i][j] = 0.5 * (raw[i][j] + raw[j][i]);
        }
    }
    let k = convention.radial_power(p);
    let v = integrate(
        rule,
        |xi| {
            let q = quadratic_form(&m, xi).abs().powf(2.0 * p);
            if k == 0.0 {
                q
            } else {
                q * dot(&pad(xi), &pad(xi)).powf(0.5 * k)
            }
        },
        None,
    )?;
    Ok(v.powf(1.0 / p))
}

/// Surface constant `β_p = (π/2)(∫ |ν·ξ|^p w(ξ) e^{-|ξ|²} dξ)^{1/p}` by quadrature.
pub fn beta_p(p: f64, nu: &[f64], rule: &DirectionRule, convention: Convention) -> Result<f64> {
    check_p(p)?;
    if nu.len() != rule.dim() {
        return Err(Error::Dimension {
            expected: rule.dim(),
            got: nu.len(),
        });
    }
    let nu3 = pad(nu);
    if (dot(&nu3, &nu3).sqrt() - 1.0).abs() > 1e-12 {
        return Err(Error::Parameter("normal must be a unit vector".into()));
    }
    let k = convention.radial_power(p);
    let v = integrate(
        rule,
        |xi| {
            let x = pad(xi);
            dot(&nu3, &x).abs().powf(p) * dot(&x, &x).powf(0.5 * k)
        },
        None,
    )?;
    Ok(FRAC_PI_2 * v.powf(1.0 / p))
}

/// `β_p` from the product of the radial and angular Gamma integrals.
pub fn beta_p_closed(p: f64, n: usize, convention: Convention) -> Result<f64> {
    check_p(p)?;
    if !(1..=MAX_DIM).contains(&n) {
        return Err(Error::Parameter(format!("n must be in 1..=3, got {n}")));
    }
    let nf = n as f64;
    let k = convention.radial_power(p);
    // ∫_{S^{n-1}} |ω₁|^p  ×  ∫_0^∞ r^{p+k+n-1} e^{-r²} dr
    let angular = 2.0 * PI.powf((nf - 1.0) / 2.0) * gamma((p + 1.0) / 2.0) / gamma((nf + p) / 2.0);
    let radial = 0.5 * gamma((p + k + nf) / 2.0);
    Ok(FRAC_PI_2 * (angular * radial).powf(1.0 / p))
}

/// `(π^{n/2}/2)(|sym A|² + ½ tr(A)²)`.
pub fn p1_bulk_density(a: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    if !(1..=MAX_DIM).contains(&n) {
        return Err(Error::Parameter(format!("matrix dimension must be in 1..=3, got {n}")));
    }
    let m = matrix3(a, n)?;
    let mut frob = 0.0;
    let mut tr = 0.0;
    for i in 0..n {
        tr += m[i][i];
        for j in 0..n {
            let s = 0.5 * (m[i][j] + m[j][i]);
            frob += s * s;
        }
    }
    Ok(PI.powf(n as f64 / 2.0) / 2.0 * (frob + 0.5 * tr * tr))
}

/// `(n−1)`-dimensional measure of `{x·ν = c}` inside the box.
pub fn plane_area_in_box(normal: &[f64], offset: f64, domain: &BoxDomain) -> f64 {
    let n = domain.dim();
    let nu = pad(normal);
    let (lo, hi) = (domain.lower(), domain.upper());
    match n {
        1 => {
            let x = offset / nu[0];
            if x > lo[0] && x < hi[0] {
                1.0
            } else {
                0.0
            }
        }
        _ => {
            // vertices: intersections of the plane with the box edges
            let corners = 1usize << n;
            let corner = |k: usize| -> Vec3 {
                let mut c = [0.0; 3];
                for a in 0..n {
                    c[a] = if k >> a & 1 == 1 { hi[a] } else { lo[a] };
                }
                c
            };
            let mut pts: Vec<Vec3> = Vec::new();
            for k in 0..corners {
                for a in 0..n {
                    if k >> a & 1 == 1 {
                        continue;
                    }
                    let p0 = corner(k);
                    let p1 = corner(k | 1 << a);
                    let f0 = dot(&nu, &p0) - offset;
                    let f1 = dot(&nu, &p1) - offset;
                    if f0 == 0.0 && f1 == 0.0 {
                        pts.push(p0);
                        pts.push(p1);
                    } else if (f0 <= 0.0 && f1 >= 0.0) || (f0 >= 0.0 && f1 <= 0.0) {
                        let s = f0 / (f0 - f1);
                        pts.push([p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1]), p0[2] + s * (p1[2] - p0[2])]);
                    }
                }
            }
            if pts.len() < 2 {
                return 0.0;
            }
            let dist = |a: &Vec3, b: &Vec3| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            if n == 2 {
                let mut best: f64 = 0.0;
                for i in 0..pts.len() {
                    for j in 0..i {
                        best = best.max(dist(&pts[i], &pts[j]));
                    }
                }
                return best;
            }
            // n = 3: convex polygon, vertices ordered by angle about the centroid
            let m = pts.len() as f64;
            let c = pts.iter().fold([0.0; 3], |acc, p| [acc[0] + p[0] / m, acc[1] + p[1] / m, acc[2] + p[2] / m]);
            let axis = (0..3).min_by(|&a, &b| nu[a].abs().total_cmp(&nu[b].abs())).unwrap();
            let mut e = [0.0; 3];
            e[axis] = 1.0;
            let d = dot(&e, &nu);
            let mut u = [e[0] - d * nu[0], e[1] - d * nu[1], e[2] - d * nu[2]];
            let un = dot(&u, &u).sqrt();
            u.iter_mut().for_each(|x| *x /= un);
            let v = [nu[1] * u[2] - nu[2] * u[1], nu[2] * u[0] - nu[0] * u[2], nu[0] * u[1] - nu[1] * u[0]];
            let mut planar: Vec<(f64, f64)> = pts
                .iter()
                .map(|p| {
                    let q = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                    (dot(&q, &u), dot(&q, &v))
                })
                .collect();
            planar.sort_by(|a, b| a.1.atan2(a.0).total_cmp(&b.1.atan2(b.0)));
            let mut area = 0.0;
            for i in 0..planar.len() {
                let (x0, y0) = planar[i];
                let (x1, y1) = planar[(i + 1) % planar.len()];
                area += x0 * y1 - x1 * y0;
            }
            0.5 * area.abs()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GriffithValue {
    pub bulk: f64,
    pub surface: f64,
    pub total: f64,
    pub convention: Convention,
}

/// `∫_Ω φ_p(e(u)) + β_p ℋ^{n-1}(J_u ∩ Ω)` for an analytic field.
pub fn griffith_energy(u: &AnalyticField, domain: &BoxDomain, p: f64, rule: &DirectionRule, convention: Convention) -> Result<GriffithValue> {
    check_p(p)?;
    let n = domain.dim();
    if u.dim() != n || rule.dim() != n {
        return Err(Error::Dimension { expected: n, got: u.dim() });
    }
    let flat = u.flatten();
    let a: Vec<Vec<f64>> = (0..n).map(|i| flat.a[i][..n].to_vec()).collect();
    let density = if p == 1.0 && convention == Convention::Calibrated {
        p1_bulk_density(&a)?
    } else {
        phi_p(&a, p, rule, convention)?
    };
    let bulk = density * domain.volume();
    let mut area = 0.0;
    for jump in &flat.jumps {
        let amp = jump.amplitude();
        if amp.iter().all(|v| *v == 0.0) {
            continue;
        }
        area += plane_area_in_box(&jump.normal[..n], jump.offset, domain);
    }
    let surface = if area > 0.0 { beta_p_closed(p, n, convention)? * area } else { 0.0 };
    Ok(GriffithValue {
        bulk,
        surface,
        total: bulk + surface,
        convention,
    })
}

/// Load at which the cracked and elastic branches of a unit bar cost the
/// same: `sqrt(β_p / φ_p(1))`.
pub fn bar_threshold(p: f64, rule: &DirectionRule, convention: Convention) -> Result<f64> {
    if rule.dim() != 1 {
        return Err(Error::Dimension { expected: 1, got: rule.dim() });
    }
    let phi = phi_p(&[vec![1.0]], p, rule, convention)?;
    Ok((beta_p_closed(p, 1, convention)? / phi).sqrt())
}
