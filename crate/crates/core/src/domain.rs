//! Box domains, cell-centered grids and displacement fields.
//!
//! Points and vectors are handled internally as `[f64; 3]` padded with zeros
//! beyond the working dimension; the public constructors take slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Padded point / vector type used in all hot loops.
pub type Vec3 = [f64; MAX_DIM];

pub(crate) fn pad(v: &[f64]) -> Vec3 {
    let mut out = [0.0; MAX_DIM];
    out[..v.len()].copy_from_slice(v);
    out
}

#[inline]
pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Piece of the hyperplane `{x_axis = offset}` bounded by `[lower, upper]` in
/// the remaining coordinates. Removed from the domain in membership tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSegment {
    pub axis: usize,
    pub offset: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PlaneSegment {
    fn contains(&self, x: &[f64]) -> bool {
        if x[self.axis] != self.offset {
            return false;
        }
        (0..x.len())
            .filter(|&i| i != self.axis)
            .all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// True if the open ball meets the segment.
    pub fn meets_ball(&self, center: &[f64], radius: f64) -> bool {
        let d = (center[self.axis] - self.offset).abs();
        if d >= radius {
            return false;
        }
        let disc = (radius * radius - d * d).sqrt();
        let mut dist2 = 0.0;
        for i in (0..center.len()).filter(|&i| i != self.axis) {
            let c = center[i].clamp(self.lower[i], self.upper[i]);
            dist2 += (center[i] - c) * (center[i] - c);
        }
        dist2.sqrt() < disc
    }
}

#[derive(Deserialize)]
struct BoxDomainRaw {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default)]
    precrack: Vec<PlaneSegment>,
}

/// Open box `∏ (lower_i, upper_i)` minus optional planar precracks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxDomainRaw")]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    precrack: Vec<PlaneSegment>,
}

impl TryFrom<BoxDomainRaw> for BoxDomain {
    type Error = Error;

    fn try_from(raw: BoxDomainRaw) -> Result<Self> {
        BoxDomain::new(&raw.lower, &raw.upper)?.with_precrack(raw.precrack)
    }
}

impl BoxDomain {
    pub fn new(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() || lower.len() > MAX_DIM {
            return Err(Error::Domain(format!(
                "dimension must be 1..={MAX_DIM}, got {}",
                lower.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::Domain(format!("axis {i}: need lower < upper, got {l} >= {u}")));
            }
        }
        Ok(Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            precrack: Vec::new(),
        })
    }

    /// Unit cube `(0,1)^n`.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(&vec![0.0; n], &vec![1.0; n])
    }

    pub fn with_precrack(mut self, segments: Vec<PlaneSegment>) -> Result<Self> {
        let n = self.dim();
        for s in &segments {
            if s.axis >= n || s.lower.len() != n || s.upper.len() != n {
                return Err(Error::Domain("precrack segment has wrong dimension".into()));
            }
            let inside = s.offset >= self.lower[s.axis]
                && s.offset <= self.upper[s.axis]
                && (0..n).filter(|&i| i != s.axis).all(|i| {
                    s.lower[i] <= s.upper[i]
                        && s.lower[i] >= self.lower[i]
                        && s.upper[i] <= self.upper[i]
                });
            if !inside {
                return Err(Error::Domain("precrack segment leaves the closed box".into()));
            }
        }
        self.precrack = segments;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn precrack(&self) -> &[PlaneSegment] {
        &self.precrack
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.extent(i)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Strict membership in the open box, excluding precrack points.
    pub fn contains(&self, x: &[f64]) -> bool {
        let n = self.dim();
        (0..n).all(|i| x[i] > self.lower[i] && x[i] < self.upper[i])
            && !self.precrack.iter().any(|s| s.contains(&x[..n]))
    }

    #[inline]
    pub(crate) fn contains3(&self, x: &Vec3) -> bool {
        let n = self.dim();
        for i in 0..n {
            if !(x[i] > self.lower[i] && x[i] < self.upper[i]) {
                return false;
            }
        }
        self.precrack.is_empty() || !self.precrack.iter().any(|s| s.contains(&x[..n]))
    }

    /// Closed-box containment of another box (precracks ignored).
    pub fn contains_box(&self, other: &BoxDomain) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| other.lower[i] >= self.lower[i] && other.upper[i] <= self.upper[i])
    }
}

/// The box `(Ω − Ω)/ε` used to truncate the direction integral.
pub fn minkowski_support(domain: &BoxDomain, eps: f64) -> Result<BoxDomain> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let half: Vec<f64> = (0..domain.dim()).map(|i| domain.extent(i) / eps).collect();
    let lower: Vec<f64> = half.iter().map(|h| -h).collect();
    BoxDomain::new(&lower, &half)
}

/// Cell-centered grid tiling the bounding box of a [`BoxDomain`].
///
/// The nominal spacing `h` is rounded per axis so that an integer number of
/// cells tiles each side exactly.
#[derive(Clone, Debug)]
pub struct Grid {
    domain: BoxDomain,
    h: f64,
    counts: [usize; MAX_DIM],
    spacing: Vec3,
    shift: f64,
    centers: Vec<Vec3>,
    inside: Vec<bool>,
}

impl Grid {
    pub fn new(domain: BoxDomain, h: f64) -> Result<Self> {
        Self::build(domain, h, 0.0)
    }

    fn build(domain: BoxDomain, h: f64, shift: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!("grid spacing must be positive, got {h}")));
        }
        let n = domain.dim();
        let mut counts = [1usize; MAX_DIM];
        let mut spacing = [0.0; MAX_DIM];
        for i in 0..n {
            let len = domain.extent(i);
            counts[i] = ((len / h).round() as usize).max(1);
            spacing[i] = len / counts[i] as f64;
        }
        let total: usize = counts.iter().product();
        let mut centers = Vec::with_capacity(total);
        let mut inside = Vec::with_capacity(total);
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    let idx = [i, j, k];
                    let mut c = [0.0; MAX_DIM];
                    for a in 0..n {
                        c[a] = domain.lower[a] + (idx[a] as f64 + 0.5) * spacing[a] + shift;
                    }
                    inside.push(domain.contains3(&c));
                    centers.push(c);
                }
            }
        }
        Ok(Self {
            domain,
            h,
            counts,
            spacing,
            shift,
            centers,
            inside,
        })
    }

    /// Same grid with every center moved by `shift` along each axis.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Self::build(self.domain.clone(), self.h, self.shift + shift)
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Nominal spacing requested at construction.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim()]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim()]
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim()].iter().product()
    }

    pub fn center(&self, cell: usize) -> &[f64] {
        &self.centers[cell][..self.dim()]
    }

    pub(crate) fn centers3(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn inside_mask(&self) -> &[bool] {
        &self.inside
    }

    pub(crate) fn first_center(&self) -> Vec3 {
        self.centers[0]
    }

    pub(crate) fn counts3(&self) -> [usize; MAX_DIM] {
        self.counts
    }

    pub(crate) fn spacing3(&self) -> Vec3 {
        self.spacing
    }

    pub fn multi_index(&self, cell: usize) -> [usize; MAX_DIM] {
        let i = cell % self.counts[0];
        let j = (cell / self.counts[0]) % self.counts[1];
        let k = cell / (self.counts[0] * self.counts[1]);
        [i, j, k]
    }

    pub fn linear_index(&self, idx: [usize; MAX_DIM]) -> usize {
        idx[0] + self.counts[0] * (idx[1] + self.counts[1] * idx[2])
    }

    /// Cells whose center lies in the axis-aligned box `[lo, hi]`.
    pub(crate) fn cells_in_bounds(&self, lo: &Vec3, hi: &Vec3) -> Vec<usize> {
        let n = self.dim();
        let c0 = self.first_center();
        let mut range = [(0usize, 1usize); MAX_DIM];
        for a in 0..n {
            let first = ((lo[a] - c0[a]) / self.spacing[a]).ceil().max(0.0) as usize;
            let last = ((hi[a] - c0[a]) / self.spacing[a]).floor();
            if last < 0.0 {
                return Vec::new();
            }
            let last = (last as usize).min(self.counts[a] - 1);
            if first > last {
                return Vec::new();
            }
            range[a] = (first, last + 1);
        }
        let mut out = Vec::new();
        for k in range[2].0..range[2].1 {
            for j in range[1].0..range[1].1 {
                for i in range[0].0..range[0].1 {
                    out.push(self.linear_index([i, j, k]));
                }
            }
        }
        out
    }

    /// Multilinear interpolation stencil at `y`, extrapolating linearly past
    /// the outermost centers so affine nodal data is reproduced exactly.
    pub(crate) fn stencil(&self, y: &Vec3) -> Stencil {
        let n = self.dim();
        let c0 = self.first_center();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        let mut two = [false; MAX_DIM];
        for a in 0..n {
            let q = (y[a] - c0[a]) / self.spacing[a];
            if self.counts[a] < 2 {
                base[a] = 0;
                frac[a] = 0.0;
                continue;
            }
            let i = (q.floor().max(0.0) as usize).min(self.counts[a] - 2);
            base[a] = i;
            frac[a] = q - i as f64;
            two[a] = true;
        }
        let mut st = Stencil {
            len: 0,
            cells: [0; 8],
            weights: [0.0; 8],
        };
        let corners = 1usize << n;
        for mask in 0..corners {
            let mut idx = base;
            let mut w = 1.0;
            let mut skip = false;
            for a in 0..n {
                let hi = mask >> a & 1 == 1;
                if !two[a] {
                    if hi {
                        skip = true;
                        break;
                    }
                    continue;
                }
                if hi {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if skip {
                continue;
            }
            st.cells[st.len] = self.linear_index(idx);
            st.weights[st.len] = w;
            st.len += 1;
        }
        st
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub len: usize,
    pub cells: [usize; 8],
    pub weights: [f64; 8],
}

/// Closed-form deformation used as ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticField {
    /// `u(x) = A x + b`.
    Affine { a: Vec<Vec<f64>>, b: Vec<f64> },
    /// `value_minus` on `{x·ν < c}`, `value_plus` on `{x·ν > c}`.
    PlaneJump {
        normal: Vec<f64>,
        offset: f64,
        value_minus: Vec<f64>,
        value_plus: Vec<f64>,
    },
    Sum { terms: Vec<AnalyticField> },
}

impl AnalyticField {
    pub fn affine(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let f = AnalyticField::Affine { a, b };
        f.validate()?;
        Ok(f)
    }

    pub fn constant(value: &[f64]) -> Self {
        let n = value.len();
        AnalyticField::Affine {
            a: vec![vec![0.0; n]; n],
            b: value.to_vec(),
        }
    }

    pub fn plane_jump(normal: Vec<f64>, offset: f64, value_minus: Vec<f64>, value_plus: Vec<f64>) -> Result<Self> {
        let f = AnalyticField::PlaneJump {
            normal,
            offset,
            value_minus,
            value_plus,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn sum(terms: Vec<AnalyticField>) -> Result<Self> {
        let f = AnalyticField::Sum { terms };
        f.validate()?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticField::Affine { b, .. } => b.len(),
            AnalyticField::PlaneJump { normal, .. } => normal.len(),
            AnalyticField::Sum { terms } => terms.first().map_or(0, |t| t.dim()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || n > MAX_DIM {
            return Err(Error::Parameter(format!("field dimension must be 1..={MAX_DIM}")));
        }
        match self {
            AnalyticField::Affine { a, b } => {
                if a.len() != n || a.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension { expected: n, got: a.len() });
                }
                if a.iter().flatten().chain(b).any(|v| !v.is_finite()) {
                    return Err(Error::Parameter("affine field has non-finite entries".into()));
                }
            }
            AnalyticField::PlaneJump {
                normal,
                value_minus,
                value_plus,
                offset,
            } => {
                if value_minus.len() != n || value_plus.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: value_minus.len().max(value_plus.len()),
                    });
                }
                let len = norm(&pad(normal));
                if (len - 1.0).abs() > 1e-12 {
                    return Err(Error::Parameter(format!("jump normal must be a unit vector, |ν| = {len}")));
                }
                if !offset.is_finite() {
                    return Err(Error::Parameter("jump offset must be finite".into()));
                }
            }
            AnalyticField::Sum { terms } => {
                if terms.is_empty() {
                    return Err(Error::Parameter("sum field needs at least one term".into()));
                }
                for t in terms {
                    if t.dim() != n {
                        return Err(Error::Dimension { expected: n, got: t.dim() });
                    }
                    t.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Canonical form `A x + b + Σ jumps`.
    pub fn flatten(&self) -> FlatField {
        let mut flat = FlatField {
            dim: self.dim(),
            a: [[0.0; MAX_DIM]; MAX_DIM],
            b: [0.0; MAX_DIM],
            jumps: Vec::new(),
        };
        self.flatten_into(&mut flat);
        flat
    }

    fn flatten_into(&self, flat: &mut FlatField) {
        match self {
            AnalyticField::Affine { a, b } => {
                for (i, row) in a.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        flat.a[i][j] += v;
                    }
                    flat.b[i] += b[i];
                }
            }
            AnalyticField::PlaneJump {
                normal,
                offset,
                value_minus,
                value_plus,
            } => flat.jumps.push(Jump {
                normal: pad(normal),
                offset: *offset,
                minus: pad(value_minus),
                plus: pad(value_plus),
            }),
            AnalyticField::Sum { terms } => terms.iter().for_each(|t| t.flatten_into(flat)),
        }
    }
}

/// Pointwise evaluation; fails on a jump hyperplane.
pub fn eval(field: &AnalyticField, x: &[f64]) -> Result<Vec<f64>> {
    let n = field.dim();
    if x.len() != n {
        return Err(Error::Dimension { expected: n, got: x.len() });
    }
    let flat = field.flatten();
    let p = pad(x);
    if let Some(j) = flat.jumps.iter().find(|j| dot(&j.normal, &p) == j.offset) {
        return Err(Error::OnJumpPlane { offset: j.offset });
    }
    Ok(flat.eval(&p)[..n].to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jump {
    pub normal: Vec3,
    pub offset: f64,
    pub minus: Vec3,
    pub plus: Vec3,
}

impl Jump {
    pub fn amplitude(&self) -> Vec3 {
        [
            self.plus[0] - self.minus[0],
            self.plus[1] - self.minus[1],
            self.plus[2] - self.minus[2],
        ]
    }
}

/// Flattened analytic field with a fixed side convention on jump planes
/// (`x·ν >= c` takes the plus value).
#[derive(Clone, Debug, PartialEq)]
pub struct FlatField {
    pub dim: usize,
    pub a: [[f64; MAX_DIM]; MAX_DIM],
    pub b: Vec3,
    pub jumps: Vec<Jump>,
}

impl FlatField {
    #[inline]
    pub fn eval(&self, x: &Vec3) -> Vec3 {
        let mut out = self.b;
        for i in 0..self.dim {
            out[i] += self.a[i][0] * x[0] + self.a[i][1] * x[1] + self.a[i][2] * x[2];
        }
        for j in &self.jumps {
            let v = if dot(&j.normal, x) >= j.offset { &j.plus } else { &j.minus };
            out[0] += v[0];
            out[1] += v[1];
            out[2] += v[2];
        }
        out
    }

    /// Symmetric part of the (constant) gradient.
    pub fn sym_gradient(&self) -> [[f64; MAX_DIM]; MAX_DIM] {
        let mut s = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in s.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 * (self.a[i][j] + self.a[j][i]);
            }
        }
        s
    }

    fn hits_center(&self, grid: &Grid) -> bool {
        let tol = 1e-12 * (1.0 + grid.h());
        grid.centers3()
            .iter()
            .any(|c| self.jumps.iter().any(|j| (dot(&j.normal, c) - j.offset).abs() <= tol))
    }
}

/// Nodal displacement values on a grid, with frozen (Dirichlet) cells.
#[derive(Clone, Debug)]
pub struct SampledField {
    grid: Grid,
    values: Vec<f64>,
    dirichlet: Vec<bool>,
}

impl SampledField {
    pub fn new(grid: Grid, values: Vec<f64>, dirichlet: Vec<bool>) -> Result<Self> {
        let n = grid.dim();
        if values.len() != grid.len() * n {
            return Err(Error::Dimension {
                expected: grid.len() * n,
                got: values.len(),
            });
        }
        if dirichlet.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: dirichlet.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("sampled values must be finite".into()));
        }
        Ok(Self { grid, values, dirichlet })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Flat values, `dim` components per cell.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn value(&self, cell: usize) -> &[f64] {
        let n = self.dim();
        &self.values[cell * n..(cell + 1) * n]
    }

    #[inline]
    pub(crate) fn value3(&self, cell: usize) -> Vec3 {
        let n = self.dim();
        let mut out = [0.0; MAX_DIM];
        out[..n].copy_from_slice(&self.values[cell * n..(cell + 1) * n]);
        out
    }

    #[inline]
    pub(crate) fn interpolate(&self, y: &Vec3) -> Vec3 {
        let st = self.grid.stencil(y);
        let mut out = [0.0; MAX_DIM];
        for k in 0..st.len {
            let v = self.value3(st.cells[k]);
            for a in 0..MAX_DIM {
                out[a] += st.weights[k] * v[a];
            }
        }
        out
    }

    /// Replace the free-cell values; frozen cells keep their data.
    pub fn set_free_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        let n = self.dim();
        for (cell, frozen) in self.dirichlet.iter().enumerate() {
            if !frozen {
                self.values[cell * n..(cell + 1) * n].copy_from_slice(&values[cell * n..(cell + 1) * n]);
            }
        }
        Ok(())
    }

    pub fn with_dirichlet(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.grid.len() {
            return Err(Error::Dimension {
                expected: self.grid.len(),
                got: mask.len(),
            });
        }
        self.dirichlet = mask;
        Ok(self)
    }
}

/// Samples an analytic field at cell centers. When a center lies on a jump
/// plane the grid is shifted by `h/7` first.
pub fn sample(field: &AnalyticField, grid: &Grid) -> Result<SampledField> {
    if field.dim() != grid.dim() {
        return Err(Error::Dimension {
            expected: grid.dim(),
            got: field.dim(),
        });
    }
    let flat = field.flatten();
    let grid = if flat.hits_center(grid) {
        grid.shifted(grid.h() / 7.0)?
    } else {
        grid.clone()
    };
    let n = grid.dim();
    let mut values = Vec::with_capacity(grid.len() * n);
    for c in grid.centers3() {
        values.extend_from_slice(&flat.eval(c)[..n]);
    }
    let frozen = vec![false; grid.len()];
    SampledField::new(grid, values, frozen)
}

/// Geometry + field document read by the CLI and the harness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldConfig {
    pub domain: BoxDomain,
    pub field: AnalyticField,
    #[serde(default)]
    pub quad: crate::quad::RuleParams,
}

impl FieldConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: FieldConfig = serde_json::from_str(text)?;
        cfg.field.validate()?;
        if cfg.field.dim() != cfg.domain.dim() {
            return Err(Error::Dimension {
                expected: cfg.domain.dim(),
                got: cfg.field.dim(),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
