//! ε-sweeps with Richardson extrapolation, inequality audits on random 1D
//! fields, and their CSV output.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AnalyticField, FieldConfig, Grid};
use crate::energy::{f_eps, fp_eps, BallStrategy, Field, Region, SupportVariant, GRID_FACTOR};
use crate::error::{Error, Result};
use crate::limits::{griffith_energy, Convention};
use crate::quad::{gauss_legendre, DirectionRule, RuleParams};
use crate::slicing::{f1d, lower_bound_1d, ms_1d, section, shifted_arctan_integral, Section1D};

/// A field config given inline or as a path to a JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Path(PathBuf),
    Inline(FieldConfig),
}

impl FieldSource {
    /// Loads the config; relative paths are taken from `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<FieldConfig> {
        match self {
            FieldSource::Path(p) => {
                let full = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                FieldConfig::load(&full)
            }
            FieldSource::Inline(cfg) => FieldConfig::from_json(&serde_json::to_string(cfg)?),
        }
    }
}

fn default_p() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    pub field: FieldSource,
    /// Strictly decreasing.
    pub eps_list: Vec<f64>,
    /// Grid spacing is `h = ε/k`.
    pub k: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Overrides the `quad` block of the field config.
    #[serde(default)]
    pub quad: Option<RuleParams>,
    /// Ball strategy for `F^p_ε`; without one (and `p = 1`) the sweep uses `F_ε`.
    #[serde(default)]
    pub strategy: Option<BallStrategy>,
    #[serde(default)]
    pub variant: SupportVariant,
    #[serde(default)]
    pub convention: Convention,
    /// Replaces the Griffith energy of the field as the comparison value.
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory that relative paths in the spec refer to.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut spec = Self::from_json(&std::fs::read_to_string(path)?)?;
        spec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(Error::Parameter("eps_list is empty".into()));
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Parameter("eps_list entries must be positive".into()));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Parameter("eps_list must be strictly decreasing".into()));
        }
        if !(self.k >= GRID_FACTOR) {
            return Err(Error::Parameter(format!("k must be >= {GRID_FACTOR}, got {}", self.k)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Parameter(format!("p must be >= 1, got {}", self.p)));
        }
        if self.p != 1.0 && self.strategy.is_none() {
            return Err(Error::Parameter("p != 1 needs a ball strategy".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub h: f64,
    pub n_cells: usize,
    pub n_directions: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtrapolationResult {
    pub rows: Vec<SweepRow>,
    pub extrapolated: f64,
    pub raw_smallest: f64,
    pub target: f64,
    /// `|extrapolated − target| / (1 + |target|)`.
    pub relative_error: f64,
    /// Same measure for the smallest-ε value.
    pub raw_relative_error: f64,
    /// Values monotone in ε (diagnostic only).
    pub monotone: bool,
}

pub fn relative_error(x: f64, target: f64) -> f64 {
    (x - target).abs() / (1.0 + target.abs())
}

/// First-order Richardson extrapolation from the two smallest ε.
pub fn richardson(eps: &[f64], values: &[f64]) -> Result<f64> {
    if eps.len() != values.len() || eps.is_empty() {
        return Err(Error::Parameter("need matching, non-empty eps and value lists".into()));
    }
    let k = eps.len() - 1;
    if k == 0 {
        return Ok(values[0]);
    }
    let r = eps[k - 1] / eps[k];
    if !(r > 1.0) {
        return Err(Error::Parameter("eps must be strictly decreasing".into()));
    }
    Ok((r * values[k] - values[k - 1]) / (r - 1.0))
}

fn is_monotone(values: &[f64]) -> bool {
    let noise = 1e-9 * values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let up = values.windows(2).all(|w| w[1] >= w[0] - noise);
    let down = values.windows(2).all(|w| w[1] <= w[0] + noise);
    up || down
}

/// Evaluates the energy at every ε of the spec and extrapolates to ε → 0.
/// Writes the per-ε CSV if the spec names an output.
pub fn run_sweep(spec: &SweepSpec) -> Result<ExtrapolationResult> {
    spec.validate()?;
    let cfg = spec.field.resolve(spec.base_dir.as_deref())?;
    let n = cfg.domain.dim();
    let rule = DirectionRule::from_params(n, &spec.quad.unwrap_or(cfg.quad))?;
    let region = Region::Box(cfg.domain.clone());

    let mut rows = Vec::with_capacity(spec.eps_list.len());
    for &eps in &spec.eps_list {
        let grid = Grid::new(cfg.domain.clone(), eps / spec.k)?;
        let field = Field::Analytic(&cfg.field, &grid);
        let report = match spec.strategy {
            None => f_eps(field, &region, eps, &rule)?,
            Some(s) => fp_eps(field, &cfg.domain, eps, spec.p, &rule, s, spec.variant)?,
        };
        rows.push(SweepRow {
            eps,
            h: grid.h(),
            n_cells: grid.len(),
            n_directions: rule.len(),
            value: report.total,
        });
    }

    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let extrapolated = richardson(&spec.eps_list, &values)?;
    let raw_smallest = *values.last().expect("eps_list is non-empty");
    let target = match spec.target {
        Some(t) => t,
        None => griffith_energy(&cfg.field, &cfg.domain, spec.p, &rule, spec.convention)?.total,
    };
    let result = ExtrapolationResult {
        monotone: is_monotone(&values),
        extrapolated,
        raw_smallest,
        target,
        relative_error: relative_error(extrapolated, target),
        raw_relative_error: relative_error(raw_smallest, target),
        rows,
    };
    if let Some(out) = &spec.output {
        let path = match &spec.base_dir {
            Some(b) if out.is_relative() => b.join(out),
            _ => out.clone(),
        };
        result.write_csv(&path)?;
    }
    Ok(result)
}

impl ExtrapolationResult {
    /// Per-ε rows: `eps,h,n_cells,n_directions,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(csv::Writer::from_path(path)?, &self.rows)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_rows(csv::Writer::from_writer(&mut buf), &self.rows)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// One-row summary: `extrapolated,raw_smallest,target,relative_error,raw_relative_error,monotone`.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary {
            extrapolated: f64,
            raw_smallest: f64,
            target: f64,
            relative_error: f64,
            raw_relative_error: f64,
            monotone: bool,
        }
        let mut w = csv::Writer::from_path(path)?;
        w.serialize(Summary {
            extrapolated: self.extrapolated,
            raw_smallest: self.raw_smallest,
            target: self.target,
            relative_error: self.relative_error,
            raw_relative_error: self.raw_relative_error,
            monotone: self.monotone,
        })?;
        w.flush()?;
        Ok(())
    }
}

fn write_rows<W: std::io::Write, T: Serialize>(mut w: csv::Writer<W>, rows: &[T]) -> Result<()> {
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Inequality audits on 1D fields

fn default_seed() -> u64 {
    0
}
fn default_n_fields() -> usize {
    10
}
fn default_lower_eps() -> [f64; 2] {
    [1e-3, 5e-4]
}
fn default_deltas() -> Vec<f64> {
    vec![0.01, 0.05, 0.1]
}
fn default_m_values() -> Vec<usize> {
    vec![2, 3, 5]
}
fn default_m_eps() -> f64 {
    0.02
}
fn default_upper_eps() -> Vec<f64> {
    vec![0.1, 0.01]
}

/// Parameters of `audit_inequalities`. Random fields live on `(0, 1)`; a
/// user field may live on any interval.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditSpec {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_fields")]
    pub n_fields: usize,
    /// Extra 1D analytic field audited after the random ones.
    #[serde(default)]
    pub field: Option<FieldSource>,
    /// Pair `(ε, ε/r)` for the extrapolated lower-bound check.
    #[serde(default = "default_lower_eps")]
    pub lower_eps: [f64; 2],
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_m_values")]
    pub m_values: Vec<usize>,
    #[serde(default = "default_m_eps")]
    pub m_eps: f64,
    #[serde(default = "default_upper_eps")]
    pub upper_eps: Vec<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for AuditSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all audit fields have defaults")
    }
}

impl AuditSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: AuditSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut spec = Self::from_json(&std::fs::read_to_string(path)?)?;
        spec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let [e0, e1] = self.lower_eps;
        if !(e0 > e1 && e1 > 0.0) {
            return Err(Error::Parameter("lower_eps must be decreasing and positive".into()));
        }
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.deltas) || !positive(&self.upper_eps) || !(self.m_eps > 0.0) {
            return Err(Error::Parameter("audit scales must be positive".into()));
        }
        if self.m_values.contains(&0) {
            return Err(Error::Parameter("m must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub field_index: usize,
    pub inequality: String,
    pub params: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Positive when the inequality holds.
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub all_pass: bool,
}

impl AuditReport {
    /// Columns: `field_index,inequality,params,lhs,rhs,margin,tolerance,pass`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(csv::Writer::from_path(path)?, &self.rows)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_rows(csv::Writer::from_writer(&mut buf), &self.rows)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn min_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Directions sampled by the translation and m-step audits.
pub const AUDIT_XI: [f64; 8] = [-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0];

/// Random piecewise-affine field on `(0, 1)`: 0–3 jumps, per-piece slopes in
/// `[-2, 2]`, jump amplitudes in `[-3, 3]`.
pub fn random_section(rng: &mut impl Rng, max_jumps: usize) -> Result<Section1D> {
    let k = rng.gen_range(0..=max_jumps);
    let mut bps: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..0.95)).collect();
    bps.sort_by(f64::total_cmp);
    let slopes = (0..=k).map(|_| rng.gen_range(-2.0..=2.0)).collect();
    let jumps = (0..k)
        .map(|_| {
            let a: f64 = rng.gen_range(0.05..=3.0);
            if rng.gen_bool(0.5) {
                a
            } else {
                -a
            }
        })
        .collect();
    Section1D::piecewise((0.0, 1.0), rng.gen_range(-1.0..=1.0), bps, slopes, jumps)
}

/// `F_{ε,ξ}(v, E)` for a 1D section, `E = (a, b)`.
pub fn directional_1d(v: &Section1D, a: f64, b: f64, eps: f64, xi: f64) -> Result<f64> {
    if xi == 0.0 {
        return Ok(0.0);
    }
    let s = eps * xi;
    let (lo, hi) = (a.max(a - s), b.min(b - s));
    if lo >= hi {
        return Ok(0.0);
    }
    Ok(shifted_arctan_integral(v, lo, hi, s, eps / (xi * xi))? / eps)
}

/// `∫_E |arctan(v(x+δξ)ξ) − arctan(v(x)ξ)| dx`, split at every kink of the
/// integrand and integrated by 16-point Gauss–Legendre on each piece.
pub fn translation_lhs(v: &Section1D, a: f64, b: f64, delta: f64, xi: f64) -> f64 {
    let s = delta * xi;
    let mut cuts = vec![a, b];
    for &t in v.breakpoints() {
        for c in [t, t - s] {
            if c > a && c < b {
                cuts.push(c);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let d = |t: f64| (v.eval(t + s) * xi).atan() - (v.eval(t) * xi).atan();
    let (gx, gw) = gauss_legendre(16);
    let gl = |l: f64, r: f64| -> f64 {
        let (m, hw) = (0.5 * (l + r), 0.5 * (r - l));
        gx.iter().zip(&gw).map(|(x, w)| w * d(m + hw * x).abs()).sum::<f64>() * hw
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (l, r) = (w[0], w[1]);
        // v(t+s) − v(t) is affine on the piece; split where it vanishes.
        let q = 0.25 * (r - l);
        let m = 0.5 * (l + r);
        let dv = |t: f64| v.eval(t + s) - v.eval(t);
        let (d0, d1) = (dv(m - q), dv(m + q));
        let slope = (d1 - d0) / (2.0 * q);
        let root = if slope != 0.0 { m - 0.5 * (d0 + d1) / slope } else { f64::NAN };
        if root > l && root < r {
            total += gl(l, root) + gl(root, r);
        } else {
            total += gl(l, r);
        }
    }
    total
}

fn row(field_index: usize, inequality: &str, params: String, lhs: f64, rhs: f64, margin: f64, tolerance: f64) -> AuditRow {
    AuditRow {
        field_index,
        inequality: inequality.to_string(),
        params,
        lhs,
        rhs,
        margin,
        tolerance,
        pass: margin >= -tolerance,
    }
}

fn audit_section(spec: &AuditSpec, index: usize, v: &Section1D, rows: &mut Vec<AuditRow>) -> Result<()> {
    let (lo, hi) = v.domain;
    let len = hi - lo;
    let (ea, eb) = (lo + 0.2 * len, hi - 0.2 * len);
    let margin_to_boundary = 0.2 * len;

    // Lower bound: extrapolated F_ε(v, I) against min{π/2, Δ²/|I|}.
    let [e0, e1] = spec.lower_eps;
    for (fa, fb) in [(0.0, 1.0), (0.1, 0.9), (0.3, 0.6)] {
        let (bound, a, b) = lower_bound_1d(v, lo + fa * len, lo + fb * len, e1)?;
        let f = |eps: f64| f1d(v, a, b - eps, eps);
        let (v0, v1) = (f(e0)?, f(e1)?);
        let lhs = richardson(&[e0, e1], &[v0, v1])?;
        let tol = 1e-9 * (1.0 + bound);
        rows.push(row(
            index,
            "lower_bound",
            format!("a={a};b={b};eps={e0}/{e1};raw={v1}"),
            lhs,
            bound,
            lhs - bound,
            tol,
        ));
    }

    // Translation estimate on E = (ea, eb), |δξ| kept inside the margin.
    let xi_max = AUDIT_XI.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let c_e = (0.5 * (eb - ea)).max(4.0) + PI * xi_max;
    for &delta in &spec.deltas {
        for &xi in &AUDIT_XI {
            if (delta * xi).abs() > margin_to_boundary {
                continue;
            }
            let lhs = translation_lhs(v, ea, eb, delta, xi);
            let rhs = c_e * delta * (1.0 + directional_1d(v, ea, eb, delta, xi)?);
            let tol = 1e-10 * (1.0 + rhs);
            rows.push(row(index, "translation", format!("delta={delta};xi={xi};C_E={c_e}"), lhs, rhs, rhs - lhs, tol));
        }
    }

    // m-step inequality, pointwise in ξ and integrated over ξ ∈ [-2, 2].
    let eps = spec.m_eps;
    for &m in &spec.m_values {
        let me = m as f64 * eps;
        if me * xi_max > margin_to_boundary {
            continue;
        }
        for &xi in &AUDIT_XI {
            let lhs = directional_1d(v, ea, eb, me, xi)?;
            let rhs = directional_1d(v, lo, hi, eps, xi)?;
            rows.push(row(index, "m_step", format!("m={m};eps={eps};xi={xi}"), lhs, rhs, rhs - lhs, 1e-12 * (1.0 + rhs)));
        }
        let (gx, gw) = gauss_legendre(32);
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for (x, w) in gx.iter().zip(&gw) {
            let xi = xi_max * x;
            lhs += w * xi_max * directional_1d(v, ea, eb, me, xi)?;
            rhs += w * xi_max * directional_1d(v, lo, hi, eps, xi)?;
        }
        rows.push(row(
            index,
            "m_step_integrated",
            format!("m={m};eps={eps};R=[-{xi_max},{xi_max}]"),
            lhs,
            rhs,
            rhs - lhs,
            1e-12 * (1.0 + rhs),
        ));
    }

    // Upper bound by the Mumford–Shah energy.
    let ms = ms_1d(v, lo, hi, 1.0 / FRAC_PI_2)?;
    for &eps in &spec.upper_eps {
        if eps >= len {
            continue;
        }
        let lhs = f1d(v, lo, hi - eps, eps)?;
        let rhs = FRAC_PI_2 * ms;
        rows.push(row(index, "upper_bound", format!("eps={eps}"), lhs, rhs, rhs - lhs, 1e-12 * (1.0 + rhs)));
    }
    Ok(())
}

/// Evaluates both sides of the four 1D inequalities on `n_fields` seeded
/// random fields (the first one affine) and on the optional user field.
pub fn audit_inequalities(spec: &AuditSpec) -> Result<AuditReport> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::new();
    for i in 0..spec.n_fields {
        let v = random_section(&mut rng, if i == 0 { 0 } else { 3 })?;
        audit_section(spec, i, &v, &mut rows)?;
    }
    if let Some(src) = &spec.field {
        let cfg = src.resolve(spec.base_dir.as_deref())?;
        if cfg.domain.dim() != 1 {
            return Err(Error::Dimension { expected: 1, got: cfg.domain.dim() });
        }
        let v = user_section(&cfg.field, &cfg)?;
        audit_section(spec, spec.n_fields, &v, &mut rows)?;
    }
    let report = AuditReport {
        all_pass: rows.iter().all(|r| r.pass),
        rows,
    };
    if let Some(out) = &spec.output {
        let path = match &spec.base_dir {
            Some(b) if out.is_relative() => b.join(out),
            _ => out.clone(),
        };
        report.write_csv(&path)?;
    }
    Ok(report)
}

fn user_section(u: &AnalyticField, cfg: &FieldConfig) -> Result<Section1D> {
    section(u, &[1.0], &[0.0], Some(&Region::Box(cfg.domain.clone())))
}
