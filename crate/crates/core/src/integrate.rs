//! Integration of `M[y] = λy` as a first-order complex system.
//!
//! Solutions are carried in blocks: each block is an `m × p` matrix of states
//! for one spectral parameter. After every accepted Dormand-Prince 5(4) step
//! each block is re-orthonormalised by a thin QR factorisation, the
//! triangular factors being multiplied into a running product. The product is
//! flushed into a [`Segment`] at every checkpoint and whenever one of its
//! diagonal entries has moved by more than `2^20`, so nothing ever overflows
//! and decaying solutions are never swamped by growing ones.
//!
//! Within a segment the state of the block, expressed against the
//! orthonormal basis `Q_s` at the segment start, evolves as `Y(x) u` with
//! `Y(x_s) = I`; after the segment `u ↦ R_s u` and the basis becomes
//! `Q_{s+1}`. The joint Gram `∫ s(x)^H s(x)` of the first rows of all blocks,
//! in segment-start coordinates, is integrated alongside with the same
//! Runge-Kutta weights.

use std::ops::{Add, Mul};

use crate::error::{Error, Result};
use crate::expression::{geometric_grid, SymmetricExpression};
use crate::linalg::{norm_inf, thin_qr, ComplexMatrix, C64, ONE, ZERO};

/// Step-size control tolerances (local error per step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rel: 1e-9, abs: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationParams {
    pub x_max: f64,
    pub tol: Tolerances,
    /// Number of checkpoints including the origin.
    pub n_checkpoints: usize,
    /// Largest admissible natural-log growth of any solution.
    pub max_log_scale: f64,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        Self { x_max: 100.0, tol: Tolerances::default(), n_checkpoints: 64, max_log_scale: 2000.0 }
    }
}

impl IntegrationParams {
    pub fn new(x_max: f64, n_checkpoints: usize) -> Self {
        Self { x_max, n_checkpoints, ..Self::default() }
    }

    fn check(&self) -> Result<()> {
        if !(self.x_max > 0.0) || !self.x_max.is_finite() {
            return Err(Error::InvalidExpression(format!("x_max must be positive, got {}", self.x_max)));
        }
        if self.n_checkpoints < 8 {
            return Err(Error::InvalidExpression(format!(
                "at least 8 checkpoints are required, got {}",
                self.n_checkpoints
            )));
        }
        if !(self.tol.rel > 0.0 && self.tol.abs > 0.0) {
            return Err(Error::InvalidExpression("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Complex number `mant · e^log`, for quantities whose magnitude leaves the
/// double range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledC64 {
    pub mant: C64,
    pub log: f64,
}

impl ScaledC64 {
    pub const ZERO: Self = Self { mant: ZERO, log: f64::NEG_INFINITY };

    pub fn new(mant: C64, log: f64) -> Self {
        Self { mant, log }.normalized()
    }

    pub fn from_c64(z: C64) -> Self {
        Self::new(z, 0.0)
    }

    fn normalized(self) -> Self {
        let n = self.mant.norm();
        if n == 0.0 || !n.is_finite() {
            return if n == 0.0 { Self::ZERO } else { self };
        }
        let ln = n.ln();
        Self { mant: self.mant / n, log: self.log + ln }
    }

    pub fn is_zero(&self) -> bool {
        self.mant == ZERO
    }

    /// `ln |z|`, `-∞` for zero.
    pub fn ln_abs(&self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            self.log + self.mant.norm().ln()
        }
    }

    pub fn conj(self) -> Self {
        Self { mant: self.mant.conj(), log: self.log }
    }

    /// Value times `e^shift` as an ordinary complex number.
    pub fn to_c64_shifted(&self, shift: f64) -> C64 {
        if self.is_zero() {
            return ZERO;
        }
        self.mant * (self.log + shift).exp()
    }

    pub fn to_c64(&self) -> C64 {
        self.to_c64_shifted(0.0)
    }

    pub fn scale(self, z: C64) -> Self {
        Self::new(self.mant * z, self.log)
    }
}

impl Add for ScaledC64 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        if self.is_zero() {
            return rhs;
        }
        if rhs.is_zero() {
            return self;
        }
        let (big, small) = if self.log >= rhs.log { (self, rhs) } else { (rhs, self) };
        let d = small.log - big.log;
        if d < -745.0 {
            return big;
        }
        Self::new(big.mant + small.mant * d.exp(), big.log)
    }
}

impl Mul for ScaledC64 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return Self::ZERO;
        }
        Self::new(self.mant * rhs.mant, self.log + rhs.log)
    }
}

/// Vector stored as `unit · e^log` with `‖unit‖_∞ = 1` (or zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledVec {
    pub unit: Vec<C64>,
    pub log: f64,
}

impl ScaledVec {
    pub fn new(v: Vec<C64>, log: f64) -> Self {
        let n = norm_inf(&v);
        if n == 0.0 || !n.is_finite() {
            return Self { unit: v, log: if n == 0.0 { 0.0 } else { log } };
        }
        Self { unit: v.iter().map(|z| z / n).collect(), log: log + n.ln() }
    }

    pub fn is_zero(&self) -> bool {
        self.unit.iter().all(|z| *z == ZERO)
    }

    pub fn entry(&self, i: usize) -> ScaledC64 {
        ScaledC64::new(self.unit[i], self.log)
    }

    /// `M v`, rescaled.
    pub fn apply(&self, m: &ComplexMatrix) -> Self {
        Self::new(m.matvec(&self.unit), self.log)
    }

    pub fn to_vec(&self) -> Vec<C64> {
        let f = self.log.exp();
        self.unit.iter().map(|z| z * f).collect()
    }
}

/// `v^H G u` for scaled vectors.
pub fn scaled_form(v: &ScaledVec, g: &ComplexMatrix, u: &ScaledVec) -> ScaledC64 {
    if v.is_zero() || u.is_zero() {
        return ScaledC64::ZERO;
    }
    let gu = g.matvec(&u.unit);
    let s: C64 = v.unit.iter().zip(&gu).map(|(a, b)| a.conj() * b).sum();
    ScaledC64::new(s, v.log + u.log)
}

/// One stretch of integration between two re-orthonormalisations that were
/// flushed to storage.
#[derive(Debug, Clone)]
pub struct Segment {
    pub x0: f64,
    pub x1: f64,
    /// Per block: upper triangular `p × p` transfer factor.
    pub r: Vec<ComplexMatrix>,
    /// Per block: orthonormal `m × p` basis at `x1`.
    pub q_end: Vec<ComplexMatrix>,
    /// Joint Gram of first-row states in segment-start coordinates.
    pub gram: ComplexMatrix,
}

#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub lambda: C64,
    /// `m × p` initial conditions, full column rank.
    pub init: ComplexMatrix,
}

/// Result of integrating several blocks on shared steps.
#[derive(Debug, Clone)]
pub struct Bundle {
    order: usize,
    origin: f64,
    lambdas: Vec<C64>,
    widths: Vec<usize>,
    offsets: Vec<usize>,
    init_q: Vec<ComplexMatrix>,
    init_r: Vec<ComplexMatrix>,
    checkpoints: Vec<f64>,
    checkpoint_boundary: Vec<usize>,
    segments: Vec<Segment>,
    steps: usize,
    rejected: usize,
}

impl Bundle {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn n_blocks(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambda(&self, block: usize) -> C64 {
        self.lambdas[block]
    }

    pub fn width(&self, block: usize) -> usize {
        self.widths[block]
    }

    /// Offset of the block inside the joint Gram.
    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn checkpoints(&self) -> &[f64] {
        &self.checkpoints
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segment boundary index of checkpoint `i`.
    pub fn checkpoint_boundary(&self, i: usize) -> usize {
        self.checkpoint_boundary[i]
    }

    pub fn n_boundaries(&self) -> usize {
        self.segments.len() + 1
    }

    pub fn init_q(&self, block: usize) -> &ComplexMatrix {
        &self.init_q[block]
    }

    /// Upper triangular factor of the initial conditions, `init = Q_0 R_0`.
    pub fn init_r(&self, block: usize) -> &ComplexMatrix {
        &self.init_r[block]
    }

    /// Orthonormal basis at segment boundary `j`.
    pub fn basis(&self, block: usize, j: usize) -> &ComplexMatrix {
        if j == 0 {
            &self.init_q[block]
        } else {
            &self.segments[j - 1].q_end[block]
        }
    }

    pub fn boundary_x(&self, j: usize) -> f64 {
        if j == 0 {
            self.origin
        } else {
            self.segments[j - 1].x1
        }
    }

    /// Sub-block `(b2, b1)` of the Gram of segment `s`: rows from `b2`,
    /// columns from `b1`.
    pub fn cross_gram(&self, s: usize, b2: usize, b1: usize) -> ComplexMatrix {
        let g = &self.segments[s].gram;
        let (o2, o1) = (self.offsets[b2], self.offsets[b1]);
        ComplexMatrix::from_fn(self.widths[b2], self.widths[b1], |r, c| g[(o2 + r, o1 + c)])
    }

    pub fn steps(&self) -> (usize, usize) {
        (self.steps, self.rejected)
    }

    /// Forward coordinates `u_j` (against the boundary bases) of the solution
    /// with block coordinates `c` at the origin (state `Q_0 c`).
    pub fn forward_path(&self, block: usize, c: &[C64]) -> Vec<ScaledVec> {
        let mut out = Vec::with_capacity(self.n_boundaries());
        let mut u = ScaledVec::new(c.to_vec(), 0.0);
        out.push(u.clone());
        for seg in &self.segments {
            u = u.apply(&seg.r[block]);
            out.push(u.clone());
        }
        out
    }

    /// `∫_a^{x_j} f conj(g)` at every boundary `j`, for paths of `f` in block
    /// `bf` and `g` in block `bg`.
    pub fn cross_integral(&self, bf: usize, f: &[ScaledVec], bg: usize, g: &[ScaledVec]) -> Vec<ScaledC64> {
        let mut acc = ScaledC64::ZERO;
        let mut out = vec![acc];
        for (s, _) in self.segments.iter().enumerate() {
            acc = acc + scaled_form(&g[s], &self.cross_gram(s, bg, bf), &f[s]);
            out.push(acc);
        }
        out
    }

    /// State `Q_j u_j` of a path at boundary `j`.
    pub fn state(&self, block: usize, j: usize, u: &ScaledVec) -> ScaledVec {
        u.apply(self.basis(block, j))
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SEGMENT_LOG_LIMIT: f64 = 20.0 * std::f64::consts::LN_2;

struct System<'a> {
    expr: &'a SymmetricExpression,
    lambdas: Vec<C64>,
    widths: Vec<usize>,
    /// Offsets into the flat state, per block (`m * p` entries, row-major).
    starts: Vec<usize>,
    m: usize,
}

impl System<'_> {
    fn rhs(&self, x: f64, y: &[C64], out: &mut [C64]) -> Result<()> {
        let c = self.expr.expand_coefficients(x)?;
        let m = self.m;
        let cm = c[m];
        if cm.norm() < 1e-14 {
            return Err(Error::Degenerate { x });
        }
        for (b, &lam) in self.lambdas.iter().enumerate() {
            let p = self.widths[b];
            let base = self.starts[b];
            for i in 0..m - 1 {
                let (src, dst) = (base + (i + 1) * p, base + i * p);
                out[dst..dst + p].copy_from_slice(&y[src..src + p]);
            }
            let last = base + (m - 1) * p;
            for j in 0..p {
                out[last + j] = ZERO;
            }
            for t in 0..m {
                let coef = if t == 0 { (lam - c[0]) / cm } else { -c[t] / cm };
                if coef == ZERO {
                    continue;
                }
                let row = base + t * p;
                for j in 0..p {
                    out[last + j] += coef * y[row + j];
                }
            }
        }
        Ok(())
    }
}

/// Integrates several blocks over `[a, a + x_max]` on shared adaptive steps.
pub fn integrate_bundle(expr: &SymmetricExpression, blocks: &[BlockSpec], params: &IntegrationParams) -> Result<Bundle> {
    params.check()?;
    let m = expr.order();
    let a = expr.origin();
    let mut widths = Vec::new();
    let mut offsets = Vec::new();
    let mut starts = Vec::new();
    let mut init_q = Vec::new();
    let mut init_r = Vec::new();
    let (mut off, mut start) = (0, 0);
    for spec in blocks {
        if spec.init.rows() != m || spec.init.cols() == 0 || spec.init.cols() > m {
            return Err(Error::Dimension(format!(
                "block initial conditions must be {m} x p with 1 <= p <= {m}, got {}x{}",
                spec.init.rows(),
                spec.init.cols()
            )));
        }
        let p = spec.init.cols();
        let (q, r) = thin_qr(&spec.init);
        let scale = spec.init.max_abs();
        if (0..p).any(|j| r[(j, j)].norm() <= 1e-14 * scale) {
            return Err(Error::Dimension("block initial conditions are linearly dependent".into()));
        }
        widths.push(p);
        offsets.push(off);
        starts.push(start);
        init_q.push(q);
        init_r.push(r);
        off += p;
        start += m * p;
    }
    let total_p = off;
    let n_state = start;
    let sys = System { expr, lambdas: blocks.iter().map(|b| b.lambda).collect(), widths: widths.clone(), starts, m };

    let checkpoints = geometric_grid(a, params.x_max, params.n_checkpoints);
    let mut checkpoint_boundary = vec![0];
    let mut segments = Vec::new();

    // working state: per block Q (m x p) flattened; running triangular product
    let mut y = vec![ZERO; n_state];
    for (b, q) in init_q.iter().enumerate() {
        let p = widths[b];
        for i in 0..m {
            for j in 0..p {
                y[sys.starts[b] + i * p + j] = q[(i, j)];
            }
        }
    }
    let mut prod: Vec<ComplexMatrix> = widths.iter().map(|&p| ComplexMatrix::identity(p)).collect();
    let mut gram = ComplexMatrix::zeros(total_p, total_p);
    let mut total_log: Vec<Vec<f64>> = widths.iter().map(|&p| vec![0.0; p]).collect();
    let mut seg_x0 = a;

    let mut k: Vec<Vec<C64>> = vec![vec![ZERO; n_state]; 7];
    let mut stage = vec![ZERO; n_state];
    let mut srow = vec![ZERO; total_p];
    let mut x = a;
    let mut h = 1e-3_f64.min(params.x_max / 16.0);
    let (mut steps, mut rejected) = (0usize, 0usize);
    let order = 5.0_f64;

    sys.rhs(x, &y, &mut k[0])?;
    for &target in &checkpoints[1..] {
        while x < target {
            let remaining = target - x;
            let clipped = h >= remaining;
            let h_try = if clipped { remaining } else { h };
            // stages 2..7
            for s in 1..7 {
                for idx in 0..n_state {
                    let mut acc = y[idx];
                    for (t, kt) in k.iter().enumerate().take(s) {
                        let coef = A[s][t];
                        if coef != 0.0 {
                            acc += kt[idx] * (h_try * coef);
                        }
                    }
                    stage[idx] = acc;
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                sys.rhs(x + C[s] * h_try, &stage, &mut tail[0])?;
            }
            // `stage` now holds the 5th order solution (stage 7 argument)
            let mut err: f64 = 0.0;
            for (b, &p) in widths.iter().enumerate() {
                let base = sys.starts[b];
                for j in 0..p {
                    let (mut en, mut yn, mut yo) = (0.0, 0.0, 0.0);
                    for i in 0..m {
                        let idx = base + i * p + j;
                        let mut e = ZERO;
                        for (t, kt) in k.iter().enumerate() {
                            if E[t] != 0.0 {
                                e += kt[idx] * E[t];
                            }
                        }
                        en += (e * h_try).norm_sqr();
                        yn += stage[idx].norm_sqr();
                        yo += y[idx].norm_sqr();
                    }
                    let sc = params.tol.abs + params.tol.rel * yn.sqrt().max(yo.sqrt());
                    err = err.max(en.sqrt() / sc);
                }
            }
            if !err.is_finite() {
                err = 1e10;
            }
            if err <= 1.0 {
                steps += 1;
                // Gram increment from stage arguments with nonzero weight
                for s in 0..7 {
                    if B[s] == 0.0 {
                        continue;
                    }
                    for (b, &p) in widths.iter().enumerate() {
                        let base = sys.starts[b];
                        for j in 0..p {
                            let mut v = y[base + j];
                            for (t, kt) in k.iter().enumerate().take(s) {
                                if A[s][t] != 0.0 {
                                    v += kt[base + j] * (h_try * A[s][t]);
                                }
                            }
                            // first row of the stage argument, in Q coordinates
                            srow[offsets[b] + j] = v;
                        }
                        // times the running product: segment-start coordinates
                        let row: Vec<C64> = (0..p)
                            .map(|c| (0..=c).map(|t| srow[offsets[b] + t] * prod[b][(t, c)]).sum())
                            .collect();
                        srow[offsets[b]..offsets[b] + p].copy_from_slice(&row);
                    }
                    let w = h_try * B[s];
                    for r in 0..total_p {
                        let sr = srow[r].conj() * w;
                        if sr == ZERO {
                            continue;
                        }
                        for c in 0..total_p {
                            gram[(r, c)] += sr * srow[c];
                        }
                    }
                }
                x = if clipped { target } else { x + h_try };
                // re-orthonormalise
                let mut seg_break = false;
                for (b, &p) in widths.iter().enumerate() {
                    let base = sys.starts[b];
                    let mat = ComplexMatrix::from_fn(m, p, |i, j| stage[base + i * p + j]);
                    let (q, r) = thin_qr(&mat);
                    for i in 0..m {
                        for j in 0..p {
                            y[base + i * p + j] = q[(i, j)];
                        }
                    }
                    prod[b] = r.matmul(&prod[b]);
                    for j in 0..p {
                        if prod[b][(j, j)].norm().ln().abs() > SEGMENT_LOG_LIMIT {
                            seg_break = true;
                        }
                    }
                }
                let at_checkpoint = clipped;
                if seg_break || at_checkpoint {
                    let mut q_end = Vec::with_capacity(widths.len());
                    for (b, &p) in widths.iter().enumerate() {
                        let base = sys.starts[b];
                        q_end.push(ComplexMatrix::from_fn(m, p, |i, j| y[base + i * p + j]));
                        for j in 0..p {
                            total_log[b][j] += prod[b][(j, j)].norm().ln();
                            if total_log[b][j] > params.max_log_scale {
                                return Err(Error::Divergent { x, partial: None });
                            }
                        }
                    }
                    segments.push(Segment {
                        x0: seg_x0,
                        x1: x,
                        r: std::mem::replace(&mut prod, widths.iter().map(|&p| ComplexMatrix::identity(p)).collect()),
                        q_end,
                        gram: std::mem::replace(&mut gram, ComplexMatrix::zeros(total_p, total_p)),
                    });
                    seg_x0 = x;
                }
                sys.rhs(x, &y, &mut k[0])?;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / order)).clamp(0.2, 5.0) };
                let proposal = h_try * fac;
                h = if clipped { h.max(proposal) } else { proposal };
            } else {
                rejected += 1;
                let fac = (0.9 * err.powf(-1.0 / order)).clamp(0.1, 0.9);
                h = h_try * fac;
                if h < 1e-14 * (1.0 + x.abs()) {
                    return Err(Error::StepUnderflow { x });
                }
            }
        }
        checkpoint_boundary.push(segments.len());
    }

    Ok(Bundle {
        order: m,
        origin: a,
        lambdas: sys.lambdas,
        widths,
        offsets,
        init_q,
        init_r,
        checkpoints,
        checkpoint_boundary,
        segments,
        steps,
        rejected,
    })
}

/// A single solution of `M[y] = λy` sampled at checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub lambda: C64,
    pub checkpoints: Vec<f64>,
    /// Unit-scale derivative vectors, max-norm 1 (or zero).
    pub states: Vec<Vec<C64>>,
    /// Natural-log scale of each state.
    pub scale_exponents: Vec<f64>,
    pub init: Vec<C64>,
}

impl Trajectory {
    /// Unscaled state at checkpoint `i` (may overflow for large scales).
    pub fn state(&self, i: usize) -> Vec<C64> {
        let f = self.scale_exponents[i].exp();
        self.states[i].iter().map(|z| z * f).collect()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    fn from_path(lambda: C64, init: &[C64], bundle: &Bundle, block: usize, path: &[ScaledVec]) -> Self {
        let mut states = Vec::new();
        let mut scales = Vec::new();
        for i in 0..bundle.checkpoints.len() {
            let j = bundle.checkpoint_boundary[i];
            let s = bundle.state(block, j, &path[j]);
            let s = ScaledVec::new(s.unit, s.log);
            states.push(s.unit);
            scales.push(s.log);
        }
        Self { lambda, checkpoints: bundle.checkpoints.clone(), states, scale_exponents: scales, init: init.to_vec() }
    }
}

/// Integrates one solution from `init`.
pub fn integrate(
    expr: &SymmetricExpression,
    lambda: C64,
    init: &[C64],
    params: &IntegrationParams,
) -> Result<Trajectory> {
    params.check()?;
    let m = expr.order();
    if init.len() != m {
        return Err(Error::Dimension(format!("initial vector has length {}, expected {m}", init.len())));
    }
    let checkpoints = geometric_grid(expr.origin(), params.x_max, params.n_checkpoints);
    if init.iter().all(|z| *z == ZERO) {
        let n = checkpoints.len();
        return Ok(Trajectory {
            lambda,
            checkpoints,
            states: vec![vec![ZERO; m]; n],
            scale_exponents: vec![0.0; n],
            init: init.to_vec(),
        });
    }
    let spec = BlockSpec { lambda, init: ComplexMatrix::from_columns(&[init.to_vec()]) };
    match integrate_bundle(expr, &[spec], params) {
        Ok(bundle) => {
            let c = vec![bundle.init_r[0][(0, 0)]];
            let path = bundle.forward_path(0, &c);
            Ok(Trajectory::from_path(lambda, init, &bundle, 0, &path))
        }
        Err(Error::Divergent { x, .. }) => {
            // rerun up to the last checkpoint before the blow-up
            let partial = checkpoints.iter().rposition(|&c| c < x).filter(|&i| i >= 7).and_then(|i| {
                let mut p = *params;
                p.x_max = checkpoints[i] - expr.origin();
                p.n_checkpoints = params.n_checkpoints;
                p.max_log_scale = f64::INFINITY;
                integrate(expr, lambda, init, &p).ok()
            });
            Err(Error::Divergent { x, partial: partial.map(Box::new) })
        }
        Err(e) => Err(e),
    }
}

/// `m` solutions with identity initial data, integrated on shared steps.
#[derive(Debug, Clone)]
pub struct FundamentalSystem {
    pub lambda: C64,
    pub bundle: Bundle,
}

impl FundamentalSystem {
    pub fn checkpoints(&self) -> &[f64] {
        self.bundle.checkpoints()
    }

    /// Trajectory of the `r`-th fundamental solution (initial data `e_r`).
    pub fn trajectory(&self, r: usize) -> Trajectory {
        let m = self.bundle.order;
        let mut e = vec![ZERO; m];
        e[r] = ONE;
        // init = Q_0 R_0 = I, so e_r has coordinates R_0 e_r
        let c = self.bundle.init_r[0].matvec(&e);
        let path = self.bundle.forward_path(0, &c);
        Trajectory::from_path(self.lambda, &e, &self.bundle, 0, &path)
    }

    /// `∫_a^{x_i} conj(y_r) y_s` as `(unit matrix, natural-log scale)`. A
    /// single common scale is used, so eigenvalues far below the largest are
    /// lost; [`crate::subspace::GramTrajectory`] keeps them.
    pub fn pairwise_gram(&self, i: usize) -> (ComplexMatrix, f64) {
        let m = self.bundle.order;
        let end = self.bundle.checkpoint_boundary[i];
        let mut t = self.bundle.init_r[0].clone();
        let mut t_log = 0.0;
        let mut acc = ComplexMatrix::zeros(m, m);
        let mut acc_log = f64::NEG_INFINITY;
        for seg in &self.bundle.segments[..end] {
            let g = seg.gram.clone();
            let contrib = t.adjoint().matmul(&g).matmul(&t);
            let c_log = 2.0 * t_log;
            if acc_log == f64::NEG_INFINITY {
                acc = contrib;
                acc_log = c_log;
            } else if c_log >= acc_log {
                acc = acc.scale(C64::new((acc_log - c_log).exp(), 0.0)).add(&contrib);
                acc_log = c_log;
            } else {
                acc = acc.add(&contrib.scale(C64::new((c_log - acc_log).exp(), 0.0)));
            }
            let n = acc.max_abs();
            if n > 0.0 {
                acc = acc.scale(C64::new(1.0 / n, 0.0));
                acc_log += n.ln();
            }
            t = seg.r[0].matmul(&t);
            let tn = t.max_abs();
            t = t.scale(C64::new(1.0 / tn, 0.0));
            t_log += tn.ln();
        }
        if acc_log == f64::NEG_INFINITY {
            (ComplexMatrix::zeros(m, m), 0.0)
        } else {
            (acc, acc_log)
        }
    }
}

pub fn fundamental_system(expr: &SymmetricExpression, lambda: C64, params: &IntegrationParams) -> Result<FundamentalSystem> {
    let spec = BlockSpec { lambda, init: ComplexMatrix::identity(expr.order()) };
    Ok(FundamentalSystem { lambda, bundle: integrate_bundle(expr, &[spec], params)? })
}

/// Fundamental systems at several spectral parameters on shared steps, so
/// cross integrals between them are available.
pub fn joint_fundamental_systems(
    expr: &SymmetricExpression,
    lambdas: &[C64],
    params: &IntegrationParams,
) -> Result<Bundle> {
    let specs: Vec<BlockSpec> =
        lambdas.iter().map(|&lambda| BlockSpec { lambda, init: ComplexMatrix::identity(expr.order()) }).collect();
    integrate_bundle(expr, &specs, params)
}
