//! One-dimensional sections `t ↦ u(y + tξ)·ξ`, the 1D nonlocal energy, 1D
//! Mumford–Shah energies and slice measures of analytic fields.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use serde::Serialize;

use crate::domain::{dot, pad, AnalyticField, BoxDomain, Vec3};
use crate::energy::{ball_candidates, BallFamily, BallStrategy, Region};
use crate::error::{Error, Result};
use crate::quad::SphereRule;

/// Piecewise-affine function with jumps on an interval.
///
/// Piece `k` lives on `[t_{k-1}, t_k)` (with `t_{-1} = lo`, `t_K = hi`);
/// the value at a breakpoint is the right limit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiecewiseAffine {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub jumps: Vec<f64>,
    intercepts: Vec<f64>,
}

impl PiecewiseAffine {
    /// `start_value` is the value at `lo`; `slopes.len() == breakpoints.len() + 1`.
    pub fn new(lo: f64, start_value: f64, breakpoints: Vec<f64>, slopes: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if slopes.is_empty() {
            return Err(Error::Parameter("need at least one slope".into()));
        }
        let intercept = start_value - slopes[0] * lo;
        Self::with_intercept(lo, intercept, breakpoints, slopes, jumps)
    }

    /// Same as [`PiecewiseAffine::new`] with the first piece given as
    /// `intercept + slopes[0]·t`.
    fn with_intercept(lo: f64, intercept: f64, breakpoints: Vec<f64>, slopes: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 || jumps.len() != breakpoints.len() {
            return Err(Error::Parameter("need one slope per piece and one jump per breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) || breakpoints.first().is_some_and(|&t| !(t > lo)) {
            return Err(Error::Parameter("breakpoints must be strictly increasing and above the left end".into()));
        }
        if slopes.iter().chain(&jumps).any(|v| !v.is_finite()) || !intercept.is_finite() {
            return Err(Error::Parameter("slopes and jumps must be finite".into()));
        }
        let mut intercepts = Vec::with_capacity(slopes.len());
        intercepts.push(intercept);
        for (k, &t) in breakpoints.iter().enumerate() {
            let left = intercepts[k] + slopes[k] * t;
            intercepts.push(left + jumps[k] - slopes[k + 1] * t);
        }
        Ok(Self {
            breakpoints,
            slopes,
            jumps,
            intercepts,
        })
    }

    #[inline]
    fn piece(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= t)
    }

    #[inline]
    fn eval(&self, t: f64) -> f64 {
        let k = self.piece(t);
        self.intercepts[k] + self.slopes[k] * t
    }
}

/// Uniformly sampled values with linear interpolation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampledSection {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SectionKind {
    Piecewise(PiecewiseAffine),
    Sampled(SampledSection),
}

/// Scalar function on the open interval `domain`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Section1D {
    pub domain: (f64, f64),
    pub kind: SectionKind,
    /// The slice runs inside a jump plane; its measure contribution is zero.
    pub degenerate: bool,
}

impl Section1D {
    pub fn piecewise(domain: (f64, f64), start_value: f64, breakpoints: Vec<f64>, slopes: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if !(domain.0 < domain.1) {
            return Err(Error::Domain(format!("empty section domain {domain:?}")));
        }
        if breakpoints.last().is_some_and(|&t| t >= domain.1) {
            return Err(Error::Parameter("breakpoint outside the section domain".into()));
        }
        Ok(Self {
            domain,
            kind: SectionKind::Piecewise(PiecewiseAffine::new(domain.0, start_value, breakpoints, slopes, jumps)?),
            degenerate: false,
        })
    }

    pub fn sampled(start: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || !(step > 0.0) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("sampled section needs >= 2 finite values and a positive step".into()));
        }
        let end = start + step * (values.len() - 1) as f64;
        Ok(Self {
            domain: (start, end),
            kind: SectionKind::Sampled(SampledSection { start, step, values }),
            degenerate: false,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            SectionKind::Piecewise(p) => p.eval(t),
            SectionKind::Sampled(s) => {
                let x = ((t - s.start) / s.step).clamp(0.0, (s.values.len() - 1) as f64);
                let i = (x.floor() as usize).min(s.values.len() - 2);
                let f = x - i as f64;
                s.values[i] * (1.0 - f) + s.values[i + 1] * f
            }
        }
    }

    pub fn as_piecewise(&self) -> Option<&PiecewiseAffine> {
        match &self.kind {
            SectionKind::Piecewise(p) => Some(p),
            SectionKind::Sampled(_) => None,
        }
    }

    pub(crate) fn breakpoints(&self) -> &[f64] {
        match &self.kind {
            SectionKind::Piecewise(p) => &p.breakpoints,
            SectionKind::Sampled(_) => &[],
        }
    }
}

/// Orthonormal basis of the hyperplane orthogonal to the unit vector `xi`.
fn transverse_basis(n: usize, xi: &Vec3) -> Vec<Vec3> {
    match n {
        1 => Vec::new(),
        2 => vec![[-xi[1], xi[0], 0.0]],
        _ => {
            let axis = (0..3).min_by(|&a, &b| xi[a].abs().total_cmp(&xi[b].abs())).unwrap();
            let mut e = [0.0; 3];
            e[axis] = 1.0;
            let d = dot(&e, xi);
            let mut v = [e[0] - d * xi[0], e[1] - d * xi[1], e[2] - d * xi[2]];
            let nv = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|c| *c /= nv);
            let w = [
                xi[1] * v[2] - xi[2] * v[1],
                xi[2] * v[0] - xi[0] * v[2],
                xi[0] * v[1] - xi[1] * v[0],
            ];
            vec![v, w]
        }
    }
}

/// `{t : y + tξ ∈ region}` as an open interval, or `None` if empty.
fn line_interval(region: &Region, y: &Vec3, xi: &Vec3, n: usize) -> Option<(f64, f64)> {
    match region {
        Region::Box(b) => {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for a in 0..n {
                if xi[a] == 0.0 {
                    if !(y[a] > b.lower()[a] && y[a] < b.upper()[a]) {
                        return None;
                    }
                    continue;
                }
                let t0 = (b.lower()[a] - y[a]) / xi[a];
                let t1 = (b.upper()[a] - y[a]) / xi[a];
                lo = lo.max(t0.min(t1));
                hi = hi.min(t0.max(t1));
            }
            (lo < hi).then_some((lo, hi))
        }
        Region::Ball(ball) => {
            let c = pad(&ball.center);
            let d = [y[0] - c[0], y[1] - c[1], y[2] - c[2]];
            let a = dot(xi, xi);
            let bb = dot(&d, xi);
            let disc = bb * bb - a * (dot(&d, &d) - ball.radius * ball.radius);
            if disc <= 0.0 {
                return None;
            }
            let s = disc.sqrt();
            Some(((-bb - s) / a, (-bb + s) / a))
        }
    }
}

/// Exact section of an analytic field along the line through `y` in
/// direction `xi`, restricted to `region` (the whole line if `None`; then
/// the domain is `(-1e6, 1e6)`).
pub fn section(u: &AnalyticField, xi: &[f64], y: &[f64], region: Option<&Region>) -> Result<Section1D> {
    let n = u.dim();
    if xi.len() != n || y.len() != n {
        return Err(Error::Dimension { expected: n, got: xi.len() });
    }
    let xi3 = pad(xi);
    if dot(&xi3, &xi3) == 0.0 {
        return Err(Error::Parameter("section direction must be nonzero".into()));
    }
    let y3 = pad(y);
    let domain = match region {
        Some(r) => line_interval(r, &y3, &xi3, n).ok_or_else(|| Error::Domain("line misses the region".into()))?,
        None => (-1e6, 1e6),
    };
    section3(u, &xi3, &y3, domain)
}

fn section3(u: &AnalyticField, xi: &Vec3, y: &Vec3, domain: (f64, f64)) -> Result<Section1D> {
    let flat = u.flatten();
    let mut ay = flat.b;
    let mut axi = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            ay[i] += flat.a[i][j] * y[j];
            axi[i] += flat.a[i][j] * xi[j];
        }
    }
    let slope = dot(&axi, xi);
    // value at t = 0 of the affine part plus the state of every plane at t = lo
    let mut base = dot(&ay, xi);
    let mut degenerate = false;
    let mut events: Vec<(f64, f64)> = Vec::new();
    for jump in &flat.jumps {
        let nx = dot(&jump.normal, xi);
        let ny = dot(&jump.normal, y);
        let plus = dot(&jump.plus, xi);
        let minus = dot(&jump.minus, xi);
        if nx == 0.0 {
            degenerate |= ny == jump.offset;
            base += if ny >= jump.offset { plus } else { minus };
            continue;
        }
        let t = (jump.offset - ny) / nx;
        let (left, right) = if nx > 0.0 { (minus, plus) } else { (plus, minus) };
        if t <= domain.0 {
            base += right;
        } else if t >= domain.1 {
            base += left;
        } else {
            base += left;
            events.push((t, right - left));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breakpoints: Vec<f64> = Vec::new();
    let mut jumps: Vec<f64> = Vec::new();
    for (t, j) in events {
        if breakpoints.last() == Some(&t) {
            *jumps.last_mut().unwrap() += j;
        } else {
            breakpoints.push(t);
            jumps.push(j);
        }
    }
    let slopes = vec![slope; breakpoints.len() + 1];
    if breakpoints.last().is_some_and(|&t| t >= domain.1) || !(domain.0 < domain.1) {
        return Err(Error::Domain(format!("bad section domain {domain:?}")));
    }
    Ok(Section1D {
        domain,
        kind: SectionKind::Piecewise(PiecewiseAffine::with_intercept(domain.0, base, breakpoints, slopes, jumps)?),
        degenerate,
    })
}

/// `∫ x²/(x⁴+1) dx`.
fn quartic_primitive(x: f64) -> f64 {
    let log = 0.5 * ((x * x - SQRT_2 * x + 1.0) / (x * x + SQRT_2 * x + 1.0)).ln();
    (log + (SQRT_2 * x + 1.0).atan() + (SQRT_2 * x - 1.0).atan()) / (2.0 * SQRT_2)
}

/// `∫ arctan(y²/c) dy`.
fn arctan_square_primitive(y: f64, c: f64) -> f64 {
    let a = c.sqrt();
    y * (y * y / c).atan() - 2.0 * a * quartic_primitive(y / a)
}

/// `∫_{t0}^{t1} arctan((α + βt)²/c) dt`.
fn arctan_affine_integral(alpha: f64, beta: f64, t0: f64, t1: f64, c: f64) -> f64 {
    let y0 = alpha + beta * t0;
    let y1 = alpha + beta * t1;
    if (y1 - y0).abs() <= 1e-9 * (1.0 + y0.abs().max(y1.abs())) {
        let ym = 0.5 * (y0 + y1);
        return (t1 - t0) * (ym * ym / c).atan();
    }
    (arctan_square_primitive(y1, c) - arctan_square_primitive(y0, c)) / beta
}

/// `∫_a^b arctan((v(t + shift) − v(t))²/scale) dt`, exact for piecewise
/// sections and a fine midpoint rule for sampled ones.
pub fn shifted_arctan_integral(v: &Section1D, a: f64, b: f64, shift: f64, scale: f64) -> Result<f64> {
    let (lo, hi) = v.domain;
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    if a < lo - tol || b > hi + tol || a + shift < lo - tol || b + shift > hi + tol || a > b {
        return Err(Error::Domain(format!(
            "interval ({a}, {b}) shifted by {shift} leaves the section domain {:?}",
            v.domain
        )));
    }
    if !(scale > 0.0) {
        return Err(Error::Parameter("scale must be positive".into()));
    }
    match &v.kind {
        SectionKind::Piecewise(p) => {
            let mut cuts: Vec<f64> = vec![a, b];
            for &t in &p.breakpoints {
                for c in [t, t - shift] {
                    if c > a && c < b {
                        cuts.push(c);
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut total = 0.0;
            for w in cuts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let k0 = p.piece(mid);
                let k1 = p.piece(mid + shift);
                // D(t) = v(t + shift) − v(t) = alpha + beta t on this cell
                let alpha = p.intercepts[k1] + p.slopes[k1] * shift - p.intercepts[k0];
                let beta = p.slopes[k1] - p.slopes[k0];
                total += arctan_affine_integral(alpha, beta, w[0], w[1], scale);
            }
            Ok(total)
        }
        SectionKind::Sampled(s) => {
            let m = (((b - a) / s.step).ceil() as usize).max(1) * 16;
            let dt = (b - a) / m as f64;
            Ok((0..m)
                .map(|i| {
                    let t = a + (i as f64 + 0.5) * dt;
                    let d = v.eval(t + shift) - v.eval(t);
                    (d * d / scale).atan()
                })
                .sum::<f64>()
                * dt)
        }
    }
}

/// 1D nonlocal energy `(1/ε)∫_A arctan((v(t+ε) − v(t))²/ε) dt`, `A = (a, b)`.
pub fn f1d(v: &Section1D, a: f64, b: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    Ok(shifted_arctan_integral(v, a, b, eps, eps)? / eps)
}

/// `γ Σ slope²·|piece ∩ I| + #{nonzero jumps in I}` on the open interval `I = (a, b)`.
pub fn ms_1d(v: &Section1D, a: f64, b: f64, gamma: f64) -> Result<f64> {
    let p = v
        .as_piecewise()
        .ok_or_else(|| Error::Parameter("ms_1d needs a piecewise-affine section".into()))?;
    let (lo, hi) = v.domain;
    let mut bulk = 0.0;
    for (k, s) in p.slopes.iter().enumerate() {
        let left = if k == 0 { lo } else { p.breakpoints[k - 1] };
        let right = if k == p.breakpoints.len() { hi } else { p.breakpoints[k] };
        let len = right.min(b) - left.max(a);
        if len > 0.0 {
            bulk += s * s * len;
        }
    }
    let count = p
        .breakpoints
        .iter()
        .zip(&p.jumps)
        .filter(|(t, j)| **t > a && **t < b && **j != 0.0)
        .count();
    Ok(gamma * bulk + count as f64)
}

/// Projection onto the lattice `a + ℤ/j`: on each cell the affine
/// interpolant if `jΔ² <= π/2`, otherwise a step at the midpoint.
pub fn gobbino_project(v: &Section1D, anchor: f64, j: usize) -> Result<Section1D> {
    if j == 0 {
        return Err(Error::Parameter("j must be positive".into()));
    }
    let jf = j as f64;
    let (lo, hi) = v.domain;
    let z0 = ((lo - anchor) * jf).ceil() as i64;
    let z1 = ((hi - anchor) * jf).floor() as i64;
    if z1 <= z0 {
        return Err(Error::Domain("section domain holds fewer than two lattice points".into()));
    }
    let node = |z: i64| anchor + z as f64 / jf;
    let start = node(z0);
    let mut breakpoints = Vec::new();
    let mut slopes = Vec::new();
    let mut jumps = Vec::new();
    for z in z0..z1 {
        let (l, r) = (node(z), node(z + 1));
        let delta = v.eval(r) - v.eval(l);
        if z > z0 {
            breakpoints.push(l);
            jumps.push(0.0);
        }
        if jf * delta * delta <= FRAC_PI_2 {
            slopes.push(delta * jf);
        } else {
            slopes.push(0.0);
            breakpoints.push(0.5 * (l + r));
            jumps.push(delta);
            slopes.push(0.0);
        }
    }
    Section1D::piecewise((start, node(z1)), v.eval(start), breakpoints, slopes, jumps)
}

/// `min{π/2, (v(b) − v(a))²/(b − a)}`. Endpoints on a breakpoint are moved
/// by `h/7`; the endpoints actually used are returned.
pub fn lower_bound_1d(v: &Section1D, a: f64, b: f64, h: f64) -> Result<(f64, f64, f64)> {
    if !(a < b) {
        return Err(Error::Parameter("need a < b".into()));
    }
    let bp = v.breakpoints();
    let fix = |t: f64| if bp.contains(&t) { t + h / 7.0 } else { t };
    let (a, b) = (fix(a), fix(b));
    let d = v.eval(b) - v.eval(a);
    Ok(((d * d / (b - a)).min(FRAC_PI_2), a, b))
}

/// Slice measure of one section restricted to its domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SliceMeasureValue {
    pub ac_part: f64,
    pub jump_count: usize,
    pub total: f64,
}

/// `|Dv|` off the jumps larger than 1, plus the number of such jumps.
pub fn slice_measure(v: &Section1D) -> SliceMeasureValue {
    if v.degenerate {
        return SliceMeasureValue::default();
    }
    let Some(p) = v.as_piecewise() else {
        return SliceMeasureValue::default();
    };
    let (lo, hi) = v.domain;
    let mut ac = 0.0;
    for (k, s) in p.slopes.iter().enumerate() {
        let left = if k == 0 { lo } else { p.breakpoints[k - 1] };
        let right = if k == p.breakpoints.len() { hi } else { p.breakpoints[k] };
        ac += s.abs() * (right - left);
    }
    let mut count = 0;
    for j in &p.jumps {
        if j.abs() > 1.0 {
            count += 1;
        } else {
            ac += j.abs();
        }
    }
    SliceMeasureValue {
        ac_part: ac,
        jump_count: count,
        total: ac + count as f64,
    }
}

/// Midpoint-rule transverse integral over `Π^ξ` of `g(section)`.
fn transverse_integral<G>(u: &AnalyticField, xi: &Vec3, region: &Region, h: f64, g: G) -> Result<f64>
where
    G: Fn(&Section1D) -> f64,
{
    let n = u.dim();
    let norm = dot(xi, xi).sqrt();
    let unit = [xi[0] / norm, xi[1] / norm, xi[2] / norm];
    let basis = transverse_basis(n, &unit);
    // transverse extent of the region
    let (center, radius) = match region {
        Region::Box(b) => {
            let c = pad(&b.center());
            let half: f64 = (0..n).map(|a| 0.25 * b.extent(a) * b.extent(a)).sum::<f64>().sqrt();
            (c, half)
        }
        Region::Ball(b) => (pad(&b.center), b.radius),
    };
    let m = (2.0 * radius / h).ceil().max(1.0) as usize;
    let step = 2.0 * radius / m as f64;
    let cells = m.pow(basis.len() as u32);
    let weight = step.powi(basis.len() as i32);
    let mut total = 0.0;
    for k in 0..cells {
        let mut rem = k;
        let mut y = center;
        for e in &basis {
            let s = -radius + (rem % m) as f64 * step + 0.5 * step;
            rem /= m;
            for c in 0..3 {
                y[c] += s * e[c];
            }
        }
        if let Some(domain) = line_interval(region, &y, &unit, n) {
            let sec = section3(u, &unit, &y, domain)?;
            total += g(&sec);
        }
    }
    Ok(total * weight)
}

/// `μ^ξ_u(B)` by a transverse midpoint rule of spacing `h`.
pub fn mu_xi(u: &AnalyticField, xi: &[f64], region: &Region, h: f64) -> Result<f64> {
    let x = pad(xi);
    let nrm = dot(&x, &x).sqrt();
    if (nrm - 1.0).abs() > 1e-10 {
        return Err(Error::Parameter("mu_xi needs a unit direction".into()));
    }
    transverse_integral(u, &x, region, h, |s| slice_measure(s).total)
}

/// `𝓘_{u,1}(B) = ∫_{S^{n-1}} ∫_{Π^ξ} Σ (|[û]| ∧ 1)`.
pub fn i_u1(u: &AnalyticField, region: &Region, sphere: &SphereRule, h: f64) -> Result<f64> {
    let mut total = 0.0;
    for (i, w) in sphere.weights().iter().enumerate() {
        let xi = pad(sphere.node(i));
        let v = transverse_integral(u, &xi, region, h, |s| {
            if s.degenerate {
                return 0.0;
            }
            s.as_piecewise().map_or(0.0, |p| p.jumps.iter().map(|j| j.abs().min(1.0)).sum())
        })?;
        total += w * v;
    }
    Ok(total)
}

/// `μ̂^p_u(Ω)` over the candidate families of `strategy`, with the
/// per-direction values `μ^ξ_u(B)` of the achieving family (summed over balls).
#[derive(Clone, Debug, Serialize)]
pub struct MuHat {
    pub value: f64,
    pub family: BallFamily,
    pub per_ball: Vec<f64>,
    pub per_direction: Vec<f64>,
}

/// Lower bound for `μ̂^p_u(Ω)`: maximum over the generated families only.
pub fn mu_hat_p(u: &AnalyticField, domain: &BoxDomain, p: f64, strategy: BallStrategy, sphere: &SphereRule, h: f64) -> Result<MuHat> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("p must be >= 1, got {p}")));
    }
    let families = ball_candidates(domain, strategy);
    let mut best: Option<MuHat> = None;
    for family in families {
        let mut per_ball = Vec::new();
        let mut per_direction = vec![0.0; sphere.len()];
        for ball in &family.balls {
            let region = Region::Ball(ball.clone());
            let mut acc = 0.0;
            for (i, w) in sphere.weights().iter().enumerate() {
                let m = mu_xi(u, sphere.node(i), &region, h)?;
                per_direction[i] += m;
                acc += w * m.powf(p);
            }
            per_ball.push(acc.powf(1.0 / p));
        }
        let value = per_ball.iter().sum();
        if best.as_ref().map_or(true, |b| value > b.value) {
            best = Some(MuHat {
                value,
                family,
                per_ball,
                per_direction,
            });
        }
    }
    best.ok_or_else(|| Error::Parameter("no candidate ball families".into()))
}

/// `∫_{S^{n-1}} |ν·ξ| dℋ^{n-1}(ξ)` for any unit `ν`.
pub fn projected_sphere_area(n: usize) -> f64 {
    // 2 |B^{n-1}| = 2 π^{(n-1)/2} / Γ((n+1)/2)
    2.0 * PI.powf((n as f64 - 1.0) / 2.0) / statrs::function::gamma::gamma((n as f64 + 1.0) / 2.0)
}
