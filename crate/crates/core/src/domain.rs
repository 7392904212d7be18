//! Bounded domains as masked uniform lattices in one and two dimensions.
//!
//! A [`Domain`] is a union of whole square (or segment) cells of a uniform
//! lattice spanning a bounding box. Active cells are stored in lexicographic
//! order of their lattice coordinates `(ix, iy)`, so two constructions with the
//! same inputs always enumerate cells identically.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, FracError, Result};

/// Relative tolerance used when checking that the two lattice spacings agree.
const SPACING_RTOL: f64 = 1e-9;

/// Measure of the unit ball in dimension `dim` (2 for N=1, π for N=2).
pub fn unit_ball_measure(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Rect::new(lo, hi, lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    dim: usize,
    spacing: f64,
    lower: [f64; 2],
    cells: [usize; 2],
    active: Vec<usize>,
    slot: Vec<usize>,
    centers: Vec<[f64; 2]>,
    ball_radius: Option<f64>,
}

const INACTIVE: usize = usize::MAX;

impl Domain {
    fn from_parts(
        dim: usize,
        spacing: f64,
        lower: [f64; 2],
        cells: [usize; 2],
        mask: &[bool],
    ) -> Result<Self> {
        debug_assert_eq!(mask.len(), cells[0] * cells[1]);
        let mut active = Vec::new();
        let mut slot = vec![INACTIVE; mask.len()];
        let mut centers = Vec::new();
        for (lin, &on) in mask.iter().enumerate() {
            if on {
                slot[lin] = active.len();
                active.push(lin);
                let (ix, iy) = (lin / cells[1], lin % cells[1]);
                let cx = lower[0] + (ix as f64 + 0.5) * spacing;
                let cy = if dim == 2 { lower[1] + (iy as f64 + 0.5) * spacing } else { 0.0 };
                centers.push([cx, cy]);
            }
        }
        if active.is_empty() {
            return invalid("domain mask selects no cells");
        }
        Ok(Domain { dim, spacing, lower, cells, active, slot, centers, ball_radius: None })
    }

    /// All `n` cells of `(a, b)`.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::masked_1d(a, b, n, |_| true)
    }

    /// Cells of `(a, b)` whose centers satisfy `shape`.
    pub fn masked_1d(a: f64, b: f64, n: usize, shape: impl Fn(f64) -> bool) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return invalid("interval endpoints must be finite");
        }
        if a >= b {
            return invalid(format!("interval requires a < b, got ({a}, {b})"));
        }
        if n < 2 {
            return invalid(format!("interval needs at least 2 cells, got {n}"));
        }
        let h = (b - a) / n as f64;
        let mask: Vec<bool> = (0..n).map(|i| shape(a + (i as f64 + 0.5) * h)).collect();
        Self::from_parts(1, h, [a, 0.0], [n, 1], &mask)
    }

    /// Union of intervals discretized with spacing `h` on their common hull.
    /// Every endpoint must sit on the lattice anchored at the leftmost endpoint.
    pub fn union_of_intervals(intervals: &[(f64, f64)], h: f64) -> Result<Self> {
        if intervals.is_empty() {
            return invalid("union of intervals needs at least one interval");
        }
        if !(h.is_finite() && h > 0.0) {
            return invalid("spacing must be positive");
        }
        let lo = intervals.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = intervals.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        for &(a, b) in intervals {
            if !(a.is_finite() && b.is_finite()) || a >= b {
                return invalid(format!("bad interval ({a}, {b})"));
            }
            for e in [a, b] {
                let k = (e - lo) / h;
                if (k - k.round()).abs() > 1e-8 {
                    return invalid(format!("endpoint {e} is not on the lattice of spacing {h}"));
                }
            }
        }
        let n = ((hi - lo) / h).round() as usize;
        Self::masked_1d(lo, hi, n.max(2), |x| intervals.iter().any(|&(a, b)| x > a && x < b))
    }

    /// Cells of `bbox` (split into `nx × ny` square cells) whose centers satisfy `shape`.
    pub fn masked_2d(
        bbox: Rect,
        nx: usize,
        ny: usize,
        shape: impl Fn(f64, f64) -> bool,
    ) -> Result<Self> {
        let finite = [bbox.x0, bbox.x1, bbox.y0, bbox.y1].iter().all(|v| v.is_finite());
        if !finite || bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 {
            return invalid("bounding box is degenerate");
        }
        if nx == 0 || ny == 0 {
            return invalid("cell counts must be positive");
        }
        let hx = (bbox.x1 - bbox.x0) / nx as f64;
        let hy = (bbox.y1 - bbox.y0) / ny as f64;
        if ((hx - hy) / hx).abs() > SPACING_RTOL {
            return invalid(format!("anisotropic spacing requested: hx = {hx}, hy = {hy}"));
        }
        let mut mask = vec![false; nx * ny];
        for ix in 0..nx {
            for iy in 0..ny {
                let x = bbox.x0 + (ix as f64 + 0.5) * hx;
                let y = bbox.y0 + (iy as f64 + 0.5) * hx;
                mask[ix * ny + iy] = shape(x, y);
            }
        }
        Self::from_parts(2, hx, [bbox.x0, bbox.y0], [nx, ny], &mask)
    }

    /// Keeps only the listed active cells (indices into the current cell order).
    pub fn restrict_to(&self, keep: &[usize]) -> Result<Self> {
        let mut mask = vec![false; self.slot.len()];
        for &k in keep {
            let lin = *self
                .active
                .get(k)
                .ok_or_else(|| FracError::InvalidInput(format!("cell {k} out of range")))?;
            mask[lin] = true;
        }
        Self::from_parts(self.dim, self.spacing, self.lower, self.cells, &mask)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of active cells.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn cell_measure(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn measure(&self) -> f64 {
        self.len() as f64 * self.cell_measure()
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    /// Lattice cell counts of the bounding box (`ny = 1` in 1D).
    pub fn lattice_shape(&self) -> [usize; 2] {
        self.cells
    }

    pub fn lower_corner(&self) -> [f64; 2] {
        self.lower
    }

    pub fn bounding_box(&self) -> Rect {
        let [nx, ny] = self.cells;
        let h = self.spacing;
        if self.dim == 1 {
            Rect::new(self.lower[0], self.lower[0] + nx as f64 * h, 0.0, 0.0)
        } else {
            Rect::new(
                self.lower[0],
                self.lower[0] + nx as f64 * h,
                self.lower[1],
                self.lower[1] + ny as f64 * h,
            )
        }
    }

    /// Lattice coordinates `(ix, iy)` of active cell `k`.
    pub fn lattice_coords(&self, k: usize) -> (usize, usize) {
        let lin = self.active[k];
        (lin / self.cells[1], lin % self.cells[1])
    }

    /// Active-cell index at lattice position `(ix, iy)`, if that cell is in the domain.
    pub fn cell_at(&self, ix: isize, iy: isize) -> Option<usize> {
        let [nx, ny] = self.cells;
        if ix < 0 || iy < 0 || ix as usize >= nx || iy as usize >= ny {
            return None;
        }
        let s = self.slot[ix as usize * ny + iy as usize];
        (s != INACTIVE).then_some(s)
    }

    /// Linear lattice indices of the active cells.
    pub fn active_cell_indices(&self) -> &[usize] {
        &self.active
    }

    /// Continuum radius of the equal-measure ball when this domain was built
    /// by [`Domain::schwarz_ball`].
    pub fn ball_radius(&self) -> Option<f64> {
        self.ball_radius
    }

    /// Radius `(|Ω| / ω_N)^{1/N}` of the ball with the same measure.
    pub fn equal_measure_radius(&self) -> f64 {
        (self.measure() / unit_ball_measure(self.dim)).powf(1.0 / self.dim as f64)
    }

    /// Largest distance between two active cell centers plus one cell.
    pub fn diameter(&self) -> f64 {
        let b = self.bounding_extent();
        let dx = b[1] - b[0];
        let dy = b[3] - b[2];
        (dx * dx + dy * dy).sqrt()
    }

    /// `[xmin, xmax, ymin, ymax]` of the union of active cells.
    pub fn bounding_extent(&self) -> [f64; 4] {
        let h2 = 0.5 * self.spacing;
        let mut e = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for c in &self.centers {
            e[0] = e[0].min(c[0] - h2);
            e[1] = e[1].max(c[0] + h2);
            if self.dim == 2 {
                e[2] = e[2].min(c[1] - h2);
                e[3] = e[3].max(c[1] + h2);
            }
        }
        if self.dim == 1 {
            e[2] = 0.0;
            e[3] = 0.0;
        }
        e
    }

    /// Schwarz ball of equal measure discretized with the same spacing.
    pub fn schwarz_ball(&self) -> Domain {
        self.schwarz_ball_with_spacing(self.spacing)
            .expect("spacing of a valid domain is positive")
    }

    /// Centered ball of equal measure on a lattice with spacing `h`.
    ///
    /// The ball takes the `round(|Ω| / h^N)` lattice cells nearest the origin, so
    /// its discrete measure is within half a cell of `|Ω|` (exactly equal when
    /// `h` matches the source spacing).
    pub fn schwarz_ball_with_spacing(&self, h: f64) -> Result<Domain> {
        if !(h.is_finite() && h > 0.0) {
            return invalid("ball spacing must be positive");
        }
        let target = self.measure();
        let count = ((target / h.powi(self.dim as i32)).round() as usize).max(1);
        let radius = self.equal_measure_radius();
        let mut ball = match self.dim {
            1 => {
                let half = count as f64 * h / 2.0;
                let cells = count.max(2);
                if count == 1 {
                    // Single-cell ball: keep the centered cell of a 3-cell lattice.
                    let d = Domain::interval(-1.5 * h, 1.5 * h, 3)?;
                    d.restrict_to(&[1])?
                } else {
                    Domain::interval(-half, half, cells)?
                }
            }
            _ => {
                let m = (radius / h).ceil() as usize + 2;
                let n = 2 * m;
                let lo = -(m as f64) * h;
                let mut cand: Vec<(f64, f64, usize)> = Vec::with_capacity(n * n);
                for ix in 0..n {
                    for iy in 0..n {
                        let x = lo + (ix as f64 + 0.5) * h;
                        let y = lo + (iy as f64 + 0.5) * h;
                        cand.push((x * x + y * y, y.atan2(x), ix * n + iy));
                    }
                }
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
                let mut mask = vec![false; n * n];
                for c in cand.iter().take(count) {
                    mask[c.2] = true;
                }
                Domain::from_parts(2, h, [lo, lo], [n, n], &mask)?
            }
        };
        ball.ball_radius = Some(radius);
        Ok(ball)
    }

    /// Active cells ordered by distance from the origin (ties by polar angle).
    /// This is the order in which spherical rearrangement fills a ball.
    pub fn radial_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let key = |k: usize| {
            let [x, y] = self.centers[k];
            (x * x + y * y, y.atan2(x))
        };
        idx.sort_by(|&a, &b| {
            let (ra, ta) = key(a);
            let (rb, tb) = key(b);
            ra.total_cmp(&rb).then(ta.total_cmp(&tb)).then(a.cmp(&b))
        });
        idx
    }

    pub fn to_file(&self) -> DomainFile {
        let b = self.bounding_box();
        DomainFile {
            dim: self.dim,
            bbox: if self.dim == 1 { vec![b.x0, b.x1] } else { vec![b.x0, b.x1, b.y0, b.y1] },
            spacing: self.spacing,
            cells: if self.dim == 1 { vec![self.cells[0]] } else { self.cells.to_vec() },
            active_cell_indices: self.active.clone(),
            ball_radius: self.ball_radius,
        }
    }

    pub fn from_file(file: &DomainFile) -> Result<Self> {
        let (lower, cells) = match file.dim {
            1 => {
                if file.bbox.len() != 2 || file.cells.len() != 1 {
                    return Err(FracError::Malformed("1D domain needs 2 box values and 1 cell count".into()));
                }
                ([file.bbox[0], 0.0], [file.cells[0], 1])
            }
            2 => {
                if file.bbox.len() != 4 || file.cells.len() != 2 {
                    return Err(FracError::Malformed("2D domain needs 4 box values and 2 cell counts".into()));
                }
                ([file.bbox[0], file.bbox[2]], [file.cells[0], file.cells[1]])
            }
            d => return invalid(format!("unsupported dimension {d}")),
        };
        if !(file.spacing.is_finite() && file.spacing > 0.0) {
            return Err(FracError::Malformed("spacing must be positive".into()));
        }
        let total = cells[0] * cells[1];
        let mut mask = vec![false; total];
        for &i in &file.active_cell_indices {
            if i >= total {
                return Err(FracError::Malformed(format!("cell index {i} outside lattice")));
            }
            mask[i] = true;
        }
        let mut d = Self::from_parts(file.dim, file.spacing, lower, cells, &mask)?;
        d.ball_radius = file.ball_radius;
        Ok(d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("domain serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DomainFile = serde_json::from_str(s)?;
        Self::from_file(&file)
    }

    /// Short content hash identifying this domain in field and matrix files.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.to_file()).expect("domain serializes"));
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// JSON form of a [`Domain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainFile {
    pub dim: usize,
    #[serde(rename = "box")]
    pub bbox: Vec<f64>,
    pub spacing: f64,
    pub cells: Vec<usize>,
    pub active_cell_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_radius: Option<f64>,
}

/// Named shapes available from the command line and in sweep descriptions.
///
/// `resolution` passed to [`Shape::build`] is the number of cells along the
/// longest side of the bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Interval { a: f64, b: f64 },
    UnionIntervals { intervals: Vec<(f64, f64)> },
    Square { side: f64 },
    Disk { radius: f64 },
    Ellipse { a: f64, b: f64 },
    Lshape { side: f64 },
    Annulus { inner: f64, outer: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Interval { .. } => "interval",
            Shape::UnionIntervals { .. } => "union-intervals",
            Shape::Square { .. } => "square",
            Shape::Disk { .. } => "disk",
            Shape::Ellipse { .. } => "ellipse",
            Shape::Lshape { .. } => "lshape",
            Shape::Annulus { .. } => "annulus",
        }
    }

    /// Parses `name` or `name:p1,p2,...` (e.g. `disk:1`, `union-intervals:0,1,2,3`).
    pub fn parse(desc: &str) -> Result<Self> {
        let (name, args) = match desc.split_once(':') {
            Some((n, a)) => (n, a),
            None => (desc, ""),
        };
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| FracError::InvalidInput(format!("bad shape parameter in {desc:?}: {e}")))?
        };
        let get = |i: usize, default: f64| nums.get(i).copied().unwrap_or(default);
        let shape = match name {
            "interval" => Shape::Interval { a: get(0, -1.0), b: get(1, 1.0) },
            "union-intervals" => {
                let v = if nums.is_empty() { vec![0.0, 1.0, 2.0, 3.0] } else { nums.clone() };
                if v.len() % 2 != 0 {
                    return invalid("union-intervals needs an even number of endpoints");
                }
                Shape::UnionIntervals { intervals: v.chunks(2).map(|c| (c[0], c[1])).collect() }
            }
            "square" => Shape::Square { side: get(0, 1.0) },
            "disk" => Shape::Disk { radius: get(0, 1.0) },
            "ellipse" => Shape::Ellipse { a: get(0, 1.0), b: get(1, 0.5) },
            "lshape" => Shape::Lshape { side: get(0, 1.0) },
            "annulus" => Shape::Annulus { inner: get(0, 0.5), outer: get(1, 1.0) },
            other => return invalid(format!("unknown shape {other:?}")),
        };
        Ok(shape)
    }

    pub fn dim(&self) -> usize {
        match self {
            Shape::Interval { .. } | Shape::UnionIntervals { .. } => 1,
            _ => 2,
        }
    }

    /// Spacing obtained when building this shape at `resolution`. For unions
    /// of intervals the cell count across the hull is raised to the first
    /// value that puts every endpoint on the lattice.
    pub fn spacing(&self, resolution: usize) -> f64 {
        let len = self.longest_side();
        if let Shape::UnionIntervals { intervals } = self {
            let lo = intervals.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            for k in resolution.max(1)..=4 * resolution.max(1) {
                let h = len / k as f64;
                let on_lattice = intervals.iter().flat_map(|p| [p.0, p.1]).all(|e| {
                    let q = (e - lo) / h;
                    (q - q.round()).abs() < 1e-8
                });
                if on_lattice {
                    return h;
                }
            }
        }
        len / resolution as f64
    }

    fn longest_side(&self) -> f64 {
        match self {
            Shape::Interval { a, b } => b - a,
            Shape::UnionIntervals { intervals } => {
                let lo = intervals.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let hi = intervals.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            }
            Shape::Square { side } | Shape::Lshape { side } => *side,
            Shape::Disk { radius } => 2.0 * radius,
            Shape::Ellipse { a, b } => 2.0 * a.max(*b),
            Shape::Annulus { outer, .. } => 2.0 * outer,
        }
    }

    pub fn build(&self, resolution: usize) -> Result<Domain> {
        self.build_with_spacing(self.spacing(resolution))
    }

    /// Builds the shape on a lattice of spacing `h`; the box sides must be
    /// integer multiples of `h`.
    pub fn build_with_spacing(&self, h: f64) -> Result<Domain> {
        let cells = |len: f64| -> Result<usize> {
            let k = len / h;
            if (k - k.round()).abs() > 1e-8 || k.round() < 1.0 {
                return invalid(format!("side {len} is not a multiple of spacing {h}"));
            }
            Ok(k.round() as usize)
        };
        match self {
            Shape::Interval { a, b } => Domain::interval(*a, *b, cells(b - a)?),
            Shape::UnionIntervals { intervals } => Domain::union_of_intervals(intervals, h),
            Shape::Square { side } => {
                let n = cells(*side)?;
                Domain::masked_2d(Rect::square(0.0, *side), n, n, |_, _| true)
            }
            Shape::Disk { radius } => {
                let r = *radius;
                let n = cells(2.0 * r)?;
                Domain::masked_2d(Rect::square(-r, r), n, n, |x, y| x * x + y * y < r * r)
            }
            Shape::Ellipse { a, b } => {
                let (a, b) = (*a, *b);
                Domain::masked_2d(Rect::new(-a, a, -b, b), cells(2.0 * a)?, cells(2.0 * b)?, |x, y| {
                    (x / a).powi(2) + (y / b).powi(2) < 1.0
                })
            }
            Shape::Lshape { side } => {
                let s = *side;
                let n = cells(s)?;
                let half = 0.5 * s;
                Domain::masked_2d(Rect::square(0.0, s), n, n, |x, y| !(x > half && y > half))
            }
            Shape::Annulus { inner, outer } => {
                let (ri, ro) = (*inner, *outer);
                if ri >= ro || ri < 0.0 {
                    return invalid("annulus needs 0 <= inner < outer");
                }
                let n = cells(2.0 * ro)?;
                Domain::masked_2d(Rect::square(-ro, ro), n, n, |x, y| {
                    let r2 = x * x + y * y;
                    r2 < ro * ro && r2 >= ri * ri
                })
            }
        }
    }
}

/// Real values on the active cells of a domain, extended by zero outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain: Arc<Domain>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: Arc<Domain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return invalid(format!(
                "field has {} values but the domain has {} cells",
                values.len(),
                domain.len()
            ));
        }
        Ok(ScalarField { domain, values })
    }

    pub fn zeros(domain: Arc<Domain>) -> Self {
        let n = domain.len();
        ScalarField { domain, values: vec![0.0; n] }
    }

    pub fn constant(domain: Arc<Domain>, c: f64) -> Self {
        let n = domain.len();
        ScalarField { domain, values: vec![c; n] }
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(domain: Arc<Domain>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = domain.centers().iter().map(|c| f(c[0], c[1])).collect();
        ScalarField { domain, values }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.domain.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { domain: self.domain.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `∫_Ω f`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.domain.cell_measure()
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.domain.cell_measure()
    }

    pub fn norm_l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.domain.cell_measure()).sqrt()
    }

    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖f‖_p` for `p ∈ [1, ∞]`.
    pub fn norm_lp(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.norm_linf();
        }
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * self.domain.cell_measure())
            .powf(1.0 / p)
    }

    pub fn same_domain(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain) || self.domain == other.domain
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_basics() {
        let d = Domain::interval(0.0, 1.0, 4).unwrap();
        assert_eq!(d.len(), 4);
        assert!((d.measure() - 1.0).abs() < 1e-15);

        let d = Domain::interval(-1.0, 1.0, 2).unwrap();
        assert!((d.measure() - 2.0).abs() < 1e-15);
        assert_eq!(d.centers()[0][0], -0.5);
        assert_eq!(d.centers()[1][0], 0.5);
    }

    #[test]
    fn restricted_interval_measure() {
        let d = Domain::interval(0.0, 3.0, 3).unwrap().restrict_to(&[0, 2]).unwrap();
        assert!((d.measure() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn interval_errors() {
        assert!(Domain::interval(f64::NAN, 1.0, 4).is_err());
        assert!(Domain::interval(0.0, 1.0, 1).is_err());
        assert!(Domain::interval(1.0, 0.0, 4).is_err());
    }

    #[test]
    fn unit_square_and_lshape() {
        let sq = Domain::masked_2d(Rect::square(0.0, 1.0), 16, 16, |_, _| true).unwrap();
        assert_eq!(sq.len(), 256);
        assert!((sq.measure() - 1.0).abs() < 1e-12);
        let l = Shape::Lshape { side: 1.0 }.build(16).unwrap();
        assert!((l.measure() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn disk_measure_converges_to_pi() {
        let mut prev = f64::INFINITY;
        for n in [16, 32, 64] {
            let d = Shape::Disk { radius: 1.0 }.build(n).unwrap();
            let err = (d.measure() - PI).abs() / PI;
            if n == 64 {
                assert!(err < 0.02, "disk measure error {err}");
            }
            assert!(err <= prev + 1e-3);
            prev = err;
        }
    }

    #[test]
    fn masked_2d_errors() {
        assert!(Domain::masked_2d(Rect::square(0.0, 1.0), 8, 8, |_, _| false).is_err());
        assert!(Domain::masked_2d(Rect::new(0.0, 1.0, 0.0, 2.0), 8, 8, |_, _| true).is_err());
    }

    #[test]
    fn schwarz_ball_1d_two_intervals() {
        let d = Domain::union_of_intervals(&[(0.0, 1.0), (2.0, 3.0)], 0.125).unwrap();
        assert!((d.measure() - 2.0).abs() < 1e-12);
        let b = d.schwarz_ball();
        let bb = b.bounding_box();
        assert!((bb.x0 + 1.0).abs() < 1e-12 && (bb.x1 - 1.0).abs() < 1e-12);
        assert_eq!(b.len(), d.len());
        assert!((b.ball_radius().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schwarz_ball_of_unit_square() {
        let d = Shape::Square { side: 1.0 }.build(32).unwrap();
        let b = d.schwarz_ball();
        assert!((b.ball_radius().unwrap() - 1.0 / PI.sqrt()).abs() < 1e-12);
        assert!((b.measure() - d.measure()).abs() <= d.cell_measure());
        for c in b.centers() {
            assert!((c[0] * c[0] + c[1] * c[1]).sqrt() < 1.0 / PI.sqrt() + 2.0 * d.spacing());
        }
    }

    #[test]
    fn schwarz_ball_idempotent() {
        let d = Shape::Disk { radius: 1.0 }.build(32).unwrap();
        let b = d.schwarz_ball();
        assert_eq!(b.len(), d.len());
        let bb = b.schwarz_ball();
        assert_eq!(bb.len(), b.len());
        let mut c1: Vec<_> = b.centers().to_vec();
        let mut c2: Vec<_> = d.centers().to_vec();
        c1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        c2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (p, q) in c1.iter().zip(&c2) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_measure_converges_with_other_spacing() {
        let d = Shape::Square { side: 1.0 }.build(16).unwrap();
        for h in [0.03, 0.015, 0.0075] {
            let b = d.schwarz_ball_with_spacing(h).unwrap();
            assert!((b.measure() - d.measure()).abs() <= 0.5 * h * h + 1e-12);
        }
    }

    #[test]
    fn deterministic_ordering_and_json() {
        let a = Shape::Annulus { inner: 0.4, outer: 1.0 }.build(20).unwrap();
        let b = Shape::Annulus { inner: 0.4, outer: 1.0 }.build(20).unwrap();
        assert_eq!(a.centers(), b.centers());
        let back = Domain::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.hash(), a.hash());
        let disk = Shape::Disk { radius: 1.0 }.build(20).unwrap();
        assert_ne!(disk.hash(), a.hash());
    }

    #[test]
    fn shape_parse() {
        assert_eq!(Shape::parse("disk:2").unwrap(), Shape::Disk { radius: 2.0 });
        assert_eq!(
            Shape::parse("union-intervals:0,1,2,3").unwrap(),
            Shape::UnionIntervals { intervals: vec![(0.0, 1.0), (2.0, 3.0)] }
        );
        assert!(Shape::parse("hexagon").is_err());
    }
}
