//! Square-integrable solution subspaces.
//!
//! The Gram matrix `Γ(x) = ∫_a^x ȳ_r y_s` of a fundamental system has
//! eigenvalues that stay bounded exactly along directions of `L²(a, ∞)`
//! solutions. They are read off a windowed growth test.
//!
//! Small eigenvalues sit many orders of magnitude below large ones, so the
//! Gram is never formed in plain floating point. The slowest solutions are
//! obtained by running the triangular transfer factors of the integrator
//! backwards from the far end (the slow flag), the Gram is accumulated in
//! that basis with scaled arithmetic and held in graded form `D K D`, and its
//! eigenvalues come from a Jacobi iteration that is accurate relative to each
//! eigenvalue.

use serde::Serialize;

use crate::bracket::concomitant_matrix;
use crate::error::{Error, Result};
use crate::expression::{Parity, SymmetricExpression};
use crate::integrate::{
    integrate_bundle, scaled_form, BlockSpec, Bundle, IntegrationParams, ScaledC64, ScaledVec, Trajectory,
};
use crate::linalg::{
    dot_conj, hermitian_eigen, hermitian_pinv_solve, norm2, solve, solve_upper, thin_qr, ComplexMatrix, C64, I,
    ONE, ZERO,
};

/// `Σ coef_i v_i` in scaled arithmetic.
pub fn combine(terms: &[(&ScaledVec, C64)]) -> ScaledVec {
    let live: Vec<&(&ScaledVec, C64)> = terms.iter().filter(|(v, c)| *c != ZERO && !v.is_zero()).collect();
    let Some(top) = live.iter().map(|(v, c)| v.log + c.norm().ln()).reduce(f64::max) else {
        let n = terms.first().map_or(0, |(v, _)| v.unit.len());
        return ScaledVec::new(vec![ZERO; n], 0.0);
    };
    let n = live[0].0.unit.len();
    let mut acc = vec![ZERO; n];
    for (v, c) in live {
        let f = *c * (v.log - top).exp();
        for (a, z) in acc.iter_mut().zip(&v.unit) {
            *a += z * f;
        }
    }
    ScaledVec::new(acc, top)
}

/// Eigenvalues (as natural logs, ascending) and eigenvectors of a Hermitian
/// positive semi-definite matrix given entrywise in scaled arithmetic.
pub fn graded_eigen(gamma: &[Vec<ScaledC64>]) -> Result<(Vec<f64>, ComplexMatrix)> {
    let n = gamma.len();
    let d: Vec<f64> = (0..n).map(|a| 0.5 * gamma[a][a].ln_abs()).collect();
    let dmax = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if dmax == f64::NEG_INFINITY {
        return Ok((vec![f64::NEG_INFINITY; n], ComplexMatrix::identity(n)));
    }
    let h = ComplexMatrix::from_fn(n, n, |a, b| {
        let z = gamma[a][b].to_c64_shifted(-2.0 * dmax);
        if a == b {
            C64::new(z.re, 0.0)
        } else {
            // enforce exact Hermitian symmetry on the accumulated sums
            0.5 * (z + gamma[b][a].to_c64_shifted(-2.0 * dmax).conj())
        }
    });
    let eig = hermitian_eigen(&h)?;
    let logs = eig.values.iter().map(|&v| if v > 0.0 { v.ln() + 2.0 * dmax } else { f64::NEG_INFINITY }).collect();
    Ok((logs, eig.vectors))
}

/// A solution carried through a [`Bundle`] as coordinates against the
/// orthonormal basis at each segment boundary.
#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub block: usize,
    pub lambda: C64,
    /// Initial derivative vector at the origin.
    pub init: Vec<C64>,
    /// Coordinates per segment boundary.
    pub coords: Vec<ScaledVec>,
}

impl SolutionPath {
    /// Path of the solution with initial data `init`, propagated forward.
    /// Only dominant (growing) components are resolved accurately this way.
    pub fn forward(bundle: &Bundle, block: usize, init: &[C64]) -> Self {
        let q0 = bundle.init_q(block);
        let c: Vec<C64> = (0..q0.cols()).map(|j| dot_conj(&q0.column(j), init)).collect();
        Self { block, lambda: bundle.lambda(block), init: init.to_vec(), coords: bundle.forward_path(block, &c) }
    }

    /// Derivative vector at checkpoint `i`.
    pub fn state_at(&self, bundle: &Bundle, i: usize) -> ScaledVec {
        let j = bundle.checkpoint_boundary(i);
        bundle.state(self.block, j, &self.coords[j])
    }

    pub fn to_trajectory(&self, bundle: &Bundle) -> Trajectory {
        let n = bundle.checkpoints().len();
        let (mut states, mut scales) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let s = self.state_at(bundle, i);
            states.push(s.unit);
            scales.push(s.log);
        }
        Trajectory {
            lambda: self.lambda,
            checkpoints: bundle.checkpoints().to_vec(),
            states,
            scale_exponents: scales,
            init: self.init.clone(),
        }
    }

    /// `∫_a^{x_i} |y|²` at every checkpoint.
    pub fn norm_squared(&self, bundle: &Bundle) -> Vec<ScaledC64> {
        let per_boundary = bundle.cross_integral(self.block, &self.coords, self.block, &self.coords);
        (0..bundle.checkpoints().len()).map(|i| per_boundary[bundle.checkpoint_boundary(i)]).collect()
    }

    fn combination(paths: &[&SolutionPath], coef: &[C64]) -> SolutionPath {
        let nb = paths[0].coords.len();
        let coords = (0..nb)
            .map(|j| {
                let terms: Vec<(&ScaledVec, C64)> = paths.iter().zip(coef).map(|(p, c)| (&p.coords[j], *c)).collect();
                combine(&terms)
            })
            .collect();
        let m = paths[0].init.len();
        let mut init = vec![ZERO; m];
        for (p, c) in paths.iter().zip(coef) {
            for (a, b) in init.iter_mut().zip(&p.init) {
                *a += c * b;
            }
        }
        SolutionPath { block: paths[0].block, lambda: paths[0].lambda, init, coords }
    }
}

/// Gram eigenvalue histories of one fundamental-system block.
#[derive(Debug, Clone)]
pub struct GramTrajectory {
    pub block: usize,
    pub lambda: C64,
    pub checkpoints: Vec<f64>,
    /// Per checkpoint: natural logs of the Gram eigenvalues, ascending.
    pub log_eigenvalues: Vec<Vec<f64>>,
    /// Per checkpoint: eigenvectors in initial-condition coordinates.
    pub eigenvectors: Vec<ComplexMatrix>,
    /// Slow-flag paths with orthonormal initial data; path 0 is the slowest.
    slow: Vec<SolutionPath>,
    /// Per checkpoint: the Gram of `slow` in scaled arithmetic.
    gram: Vec<Vec<Vec<ScaledC64>>>,
    /// Natural-log shift applied to all eigenvalues for the block's initial scaling.
    log_shift: f64,
    max_log_eigenvalue: f64,
}

impl GramTrajectory {
    /// Builds the histories for block `block`, whose initial data must be a
    /// multiple of a unitary frame (e.g. the identity).
    pub fn from_bundle(bundle: &Bundle, block: usize, max_log_scale: f64) -> Result<Self> {
        let m = bundle.order();
        if bundle.width(block) != m {
            return Err(Error::Dimension("Gram histories need a full fundamental system".into()));
        }
        let r0 = bundle.init_r(block);
        let c0 = r0[(0, 0)].norm();
        for a in 0..m {
            for b in 0..m {
                let v = r0[(a, b)].norm();
                let ok = if a == b { (v - c0).abs() <= 1e-12 * c0 } else { v <= 1e-12 * c0 };
                if !ok {
                    return Err(Error::Dimension(
                        "Gram histories need initial data proportional to a unitary frame".into(),
                    ));
                }
            }
        }
        let log_shift = 2.0 * c0.ln();
        let segs = bundle.segments();
        let nb = segs.len() + 1;

        // backward recursion from the anti-identity at the far end
        let mut cols: Vec<Vec<ScaledVec>> = vec![Vec::with_capacity(nb); m];
        for (a, col) in cols.iter_mut().enumerate() {
            let mut e = vec![ZERO; m];
            e[m - 1 - a] = ONE;
            let mut u = ScaledVec::new(e, 0.0);
            col.push(u.clone());
            for seg in segs.iter().rev() {
                u = ScaledVec::new(solve_upper(&seg.r[block], &u.unit), u.log);
                col.push(u.clone());
            }
            col.reverse();
            let l0 = col[0].log;
            for v in col.iter_mut() {
                v.log -= l0;
            }
        }
        // orthonormalise the initial data: W = Wq Wr, paths U Wr^{-1}
        let w = ComplexMatrix::from_columns(&cols.iter().map(|c| c[0].unit.clone()).collect::<Vec<_>>());
        let (wq, wr) = thin_qr(&w);
        let mut wr_inv = ComplexMatrix::zeros(m, m);
        for a in 0..m {
            let mut e = vec![ZERO; m];
            e[a] = ONE;
            wr_inv.set_column(a, &solve_upper(&wr, &e));
        }
        let q0 = bundle.init_q(block);
        let mut slow = Vec::with_capacity(m);
        for a in 0..m {
            let coords = (0..nb)
                .map(|j| {
                    let terms: Vec<(&ScaledVec, C64)> = (0..=a).map(|b| (&cols[b][j], wr_inv[(b, a)])).collect();
                    combine(&terms)
                })
                .collect();
            slow.push(SolutionPath {
                block,
                lambda: bundle.lambda(block),
                init: q0.matvec(&wq.column(a)),
                coords,
            });
        }

        // accumulate the Gram of the slow paths
        let mut acc = vec![vec![ScaledC64::ZERO; m]; m];
        let mut per_boundary = vec![acc.clone()];
        for (s, _) in segs.iter().enumerate() {
            let g = bundle.cross_gram(s, block, block);
            for a in 0..m {
                for b in a..m {
                    let v = scaled_form(&slow[a].coords[s], &g, &slow[b].coords[s]);
                    acc[a][b] = acc[a][b] + v;
                    if a != b {
                        acc[b][a] = acc[b][a] + v.conj();
                    }
                }
            }
            per_boundary.push(acc.clone());
        }

        let checkpoints = bundle.checkpoints().to_vec();
        let ic = ComplexMatrix::from_columns(&slow.iter().map(|p| p.init.clone()).collect::<Vec<_>>());
        let mut log_eigenvalues = Vec::with_capacity(checkpoints.len());
        let mut eigenvectors = Vec::with_capacity(checkpoints.len());
        let mut gram = Vec::with_capacity(checkpoints.len());
        for i in 0..checkpoints.len() {
            let g = per_boundary[bundle.checkpoint_boundary(i)].clone();
            let (logs, vecs) = graded_eigen(&g)?;
            log_eigenvalues.push(logs.iter().map(|l| l + log_shift).collect());
            eigenvectors.push(ic.matmul(&vecs));
            gram.push(g);
        }
        Ok(Self {
            block,
            lambda: bundle.lambda(block),
            checkpoints,
            log_eigenvalues,
            eigenvectors,
            slow,
            gram,
            log_shift,
            max_log_eigenvalue: 2.0 * max_log_scale,
        })
    }

    pub fn order(&self) -> usize {
        self.slow.len()
    }

    /// Same histories for initial data multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        let shift = 2.0 * factor.abs().ln();
        let mut out = self.clone();
        for row in out.log_eigenvalues.iter_mut() {
            for v in row.iter_mut() {
                *v += shift;
            }
        }
        out.log_shift += shift;
        out
    }

    /// Index of the checkpoint that opens the trailing window.
    pub fn window_start(&self, window: f64) -> usize {
        let a = self.checkpoints[0];
        let x_end = *self.checkpoints.last().unwrap();
        let cut = x_end - window * (x_end - a);
        self.checkpoints.iter().rposition(|&x| x <= cut).unwrap_or(0)
    }

    /// Windowed growth test on the sorted log-eigenvalues.
    pub fn classify_directions(&self, growth_threshold: f64, window: f64) -> Result<(L2Subspace, usize)> {
        let n = self.checkpoints.len();
        if n < 16 {
            return Err(Error::InvalidExpression(format!("at least 16 checkpoints needed, got {n}")));
        }
        if !(window > 0.0 && window <= 0.5) {
            return Err(Error::InvalidExpression(format!("window must lie in (0, 0.5], got {window}")));
        }
        let m = self.order();
        let w0 = self.window_start(window);
        let fin = &self.log_eigenvalues[n - 1];
        let start = &self.log_eigenvalues[w0];
        let growth: Vec<f64> = (0..m).map(|j| fin[j] - start[j]).collect();
        let lo = (1.0 + growth_threshold).ln();
        let hi = (1.0 + 4.0 * growth_threshold).ln();
        let mut verdicts = Vec::with_capacity(m);
        for j in 0..m {
            let v = if !(growth[j].is_finite()) || fin[j] >= self.max_log_eigenvalue {
                Verdict::Divergent
            } else if growth[j] < lo {
                Verdict::Bounded
            } else if growth[j] < hi {
                Verdict::Indeterminate
            } else {
                Verdict::Divergent
            };
            verdicts.push(v);
        }
        if verdicts.contains(&Verdict::Indeterminate) {
            return Err(Error::Indeterminate(format!(
                "λ = {}: eigenvalue growth {:?} inside the band [{lo:.4}, {hi:.4})",
                fmt_c(self.lambda),
                growth
            )));
        }
        let d = verdicts.iter().take_while(|v| **v == Verdict::Bounded).count();
        if verdicts[d..].contains(&Verdict::Bounded) {
            return Err(Error::Indeterminate(format!(
                "λ = {}: bounded eigenvalues are not the smallest ones (growth {:?})",
                fmt_c(self.lambda),
                growth
            )));
        }
        let subspace = self.l2_subspace(d, growth)?;
        Ok((subspace, m - d))
    }

    /// Orthonormal basis of the slowest `d` directions, diagonalising the
    /// final Gram restricted to them.
    fn l2_subspace(&self, d: usize, growth: Vec<f64>) -> Result<L2Subspace> {
        let n = self.checkpoints.len();
        let sub: Vec<Vec<ScaledC64>> = (0..d).map(|a| self.gram[n - 1][a][..d].to_vec()).collect();
        let (logs, vecs) = if d > 0 { graded_eigen(&sub)? } else { (vec![], ComplexMatrix::zeros(0, 0)) };
        let refs: Vec<&SolutionPath> = self.slow[..d].iter().collect();
        let paths: Vec<SolutionPath> =
            (0..d).map(|c| SolutionPath::combination(&refs, &vecs.column(c))).collect();
        let basis: Vec<Vec<C64>> = paths.iter().map(|p| p.init.clone()).collect();
        if d > 0 {
            let sv = crate::linalg::singular_values(&ComplexMatrix::from_columns(&basis));
            if sv[d - 1] <= 1e-8 {
                return Err(Error::IllConditioned(format!("L² basis nearly dependent (σ_min = {:e})", sv[d - 1])));
            }
        }
        Ok(L2Subspace {
            lambda: self.lambda,
            dimension: d,
            basis,
            growth,
            final_log_norms: logs.iter().map(|l| l + self.log_shift).collect(),
            paths,
        })
    }

    /// Slow-flag path `a` (0 is the slowest direction).
    pub fn slow_path(&self, a: usize) -> &SolutionPath {
        &self.slow[a]
    }
}

fn fmt_c(z: C64) -> String {
    format!("{}{:+}i", z.re, z.im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Bounded,
    Indeterminate,
    Divergent,
}

/// Square-integrable solutions detected at one spectral parameter.
#[derive(Debug, Clone)]
pub struct L2Subspace {
    pub lambda: C64,
    pub dimension: usize,
    /// Orthonormal initial-condition vectors.
    pub basis: Vec<Vec<C64>>,
    /// Per sorted Gram eigenvalue: log growth across the window.
    pub growth: Vec<f64>,
    /// Natural logs of `∫|y|²` over the full range for each basis solution.
    pub final_log_norms: Vec<f64>,
    pub paths: Vec<SolutionPath>,
}

/// Parameters of the deficiency-index computation.
#[derive(Debug, Clone, Copy)]
pub struct SubspaceParams {
    pub integration: IntegrationParams,
    pub growth_threshold: f64,
    pub window: f64,
}

impl Default for SubspaceParams {
    fn default() -> Self {
        Self { integration: IntegrationParams::default(), growth_threshold: 0.02, window: 0.25 }
    }
}

/// Fundamental systems at several spectral parameters on shared steps,
/// with their Gram histories.
#[derive(Debug, Clone)]
pub struct SpectralRun {
    pub bundle: Bundle,
    pub grams: Vec<GramTrajectory>,
}

impl SpectralRun {
    pub fn new(expr: &SymmetricExpression, lambdas: &[C64], params: &IntegrationParams) -> Result<Self> {
        let specs: Vec<BlockSpec> =
            lambdas.iter().map(|&lambda| BlockSpec { lambda, init: ComplexMatrix::identity(expr.order()) }).collect();
        let bundle = integrate_bundle(expr, &specs, params)?;
        let grams = (0..lambdas.len())
            .map(|b| GramTrajectory::from_bundle(&bundle, b, params.max_log_scale))
            .collect::<Result<_>>()?;
        Ok(Self { bundle, grams })
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DeficiencyDiagnostics {
    pub growth_plus: Vec<f64>,
    pub growth_minus: Vec<f64>,
    /// Bound violations; non-empty means the run is numerically unreliable.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DeficiencyIndices {
    pub n_plus: usize,
    pub n_minus: usize,
    pub plus: L2Subspace,
    pub minus: L2Subspace,
    pub diagnostics: DeficiencyDiagnostics,
    pub run: SpectralRun,
}

/// Admissible index ranges: `(min N+, min N-)`, both at most `m`.
pub fn index_bounds(expr: &SymmetricExpression) -> (usize, usize) {
    let k = expr.k();
    match expr.parity() {
        Parity::Even => (k, k),
        Parity::Odd => (k - 1, k),
    }
}

/// Checks `(N+, N-)` against the parity bounds and the rule that one index
/// equals `m` exactly when the other does.
pub fn bound_violations(expr: &SymmetricExpression, n_plus: usize, n_minus: usize) -> Vec<String> {
    let m = expr.order();
    let (lp, lm) = index_bounds(expr);
    let mut v = Vec::new();
    if n_plus < lp || n_plus > m {
        v.push(format!("N+ = {n_plus} outside [{lp}, {m}]"));
    }
    if n_minus < lm || n_minus > m {
        v.push(format!("N- = {n_minus} outside [{lm}, {m}]"));
    }
    if (n_plus == m) != (n_minus == m) {
        v.push(format!("N+ = {n_plus} and N- = {n_minus}: one equals m = {m} but not the other"));
    }
    v
}

/// `N±` as the dimensions of the `L²` solution spaces at `λ = ±i`.
pub fn deficiency_indices(expr: &SymmetricExpression, params: &SubspaceParams) -> Result<DeficiencyIndices> {
    let run = SpectralRun::new(expr, &[I, -I], &params.integration)?;
    let (plus, _) = run.grams[0].classify_directions(params.growth_threshold, params.window)?;
    let (minus, _) = run.grams[1].classify_directions(params.growth_threshold, params.window)?;
    let (n_plus, n_minus) = (plus.dimension, minus.dimension);
    let diagnostics = DeficiencyDiagnostics {
        growth_plus: plus.growth.clone(),
        growth_minus: minus.growth.clone(),
        violations: bound_violations(expr, n_plus, n_minus),
    };
    Ok(DeficiencyIndices { n_plus, n_minus, plus, minus, diagnostics, run })
}

/// Initial data `θ_r`, `φ_s` normalised against the boundary form at the origin.
#[derive(Debug, Clone)]
pub struct BoundaryBasis {
    pub theta: Vec<Vec<C64>>,
    pub phi: Vec<Vec<C64>>,
}

impl BoundaryBasis {
    /// Largest deviation from the target relations.
    pub fn max_deviation(&self, b: &ComplexMatrix) -> f64 {
        let form = |f: &[C64], g: &[C64]| -> C64 {
            let bf = b.matvec(f);
            dot_conj(g, &bf)
        };
        let k = self.phi.len();
        let odd = self.theta.len() + 1 == k;
        let mut dev: f64 = 0.0;
        for (r, tr) in self.theta.iter().enumerate() {
            for (s, ts) in self.theta.iter().enumerate() {
                let _ = s;
                dev = dev.max(form(tr, ts).norm());
            }
            for (s, ps) in self.phi.iter().enumerate() {
                let target = if r == s { ONE } else { ZERO };
                dev = dev.max((form(tr, ps) - target).norm());
            }
        }
        for (r, pr) in self.phi.iter().enumerate() {
            for (s, ps) in self.phi.iter().enumerate() {
                let target = if odd && r == k - 1 && s == k - 1 { I } else { ZERO };
                dev = dev.max((form(pr, ps) - target).norm());
            }
        }
        dev
    }
}

/// Symplectic Gram-Schmidt on the standard basis against `B(a)`.
///
/// Pairs are built in order: `θ` is the next standard vector, its partner is
/// the unused standard vector with the largest bracket against it, both
/// projected off earlier pairs and then made isotropic. In the odd case the
/// last remaining direction becomes `φ_k` with `[φ_k φ_k] = i`. When every
/// remaining plane is definite the eigenvector construction is used instead.
pub fn canonical_boundary_basis(expr: &SymmetricExpression) -> Result<BoundaryBasis> {
    let m = expr.order();
    let b = concomitant_matrix(expr, expr.origin())?.b;
    let scale = b.max_abs();
    let form = |f: &[C64], g: &[C64]| -> C64 { dot_conj(g, &b.matvec(f)) };
    let project = |v: &[C64], pairs: &[(Vec<C64>, Vec<C64>)]| -> Vec<C64> {
        let mut v = v.to_vec();
        for (th, ph) in pairs {
            let alpha = form(&v, ph);
            let beta = -form(&v, th);
            for i in 0..m {
                v[i] = v[i] - alpha * th[i] - beta * ph[i];
            }
        }
        v
    };
    let unit = |j: usize| -> Vec<C64> {
        let mut e = vec![ZERO; m];
        e[j] = ONE;
        e
    };
    let k = expr.k();
    let n_pairs = match expr.parity() {
        Parity::Even => k,
        Parity::Odd => k - 1,
    };
    let mut used = vec![false; m];
    let mut pairs: Vec<(Vec<C64>, Vec<C64>)> = Vec::new();
    let tol = 1e-10 * scale.max(1.0);
    while pairs.len() < n_pairs {
        // next θ candidate with a usable partner
        let mut chosen = None;
        for j in 0..m {
            if used[j] {
                continue;
            }
            let th = project(&unit(j), &pairs);
            if norm2(&th) <= tol {
                used[j] = true;
                continue;
            }
            let mut partners: Vec<(usize, f64, Vec<C64>)> = (0..m)
                .filter(|&i| !used[i] && i != j)
                .map(|i| {
                    let v = project(&unit(i), &pairs);
                    (i, form(&th, &v).norm(), v)
                })
                .filter(|c| c.1 > tol)
                .collect();
            partners.sort_by(|a, b| b.1.total_cmp(&a.1));
            // the plane must be indefinite for an isotropic θ to exist
            for (i, _, v) in partners {
                let tv = form(&th, &v);
                let v: Vec<C64> = v.iter().map(|z| z / tv.conj()).collect();
                let alpha = (form(&th, &th) / I).re;
                let beta = (form(&v, &v) / I).re;
                if beta.abs() < 1e-300 || alpha * beta <= 1.0 {
                    chosen = Some((j, th.clone(), i, v, alpha, beta));
                    break;
                }
            }
            if chosen.is_some() {
                break;
            }
        }
        let Some((j, th, i, v, alpha, beta)) = chosen else {
            return eigen_boundary_basis(expr, &b);
        };
        used[j] = true;
        used[i] = true;
        let t = if beta.abs() < 1e-300 { alpha / 2.0 } else { (1.0 - (1.0 - alpha * beta).sqrt()) / beta };
        let c = I * t;
        let theta: Vec<C64> = th.iter().zip(&v).map(|(a, b)| a + c * b).collect();
        let norm = 1.0 - t * beta;
        let v: Vec<C64> = v.iter().map(|z| z / norm).collect();
        let beta2 = (form(&v, &v) / I).re;
        let d = -I * (beta2 / 2.0);
        let phi: Vec<C64> = v.iter().zip(&theta).map(|(a, b)| a + d * b).collect();
        pairs.push((theta, phi));
    }
    let mut theta: Vec<Vec<C64>> = pairs.iter().map(|p| p.0.clone()).collect();
    let mut phi: Vec<Vec<C64>> = pairs.iter().map(|p| p.1.clone()).collect();
    if expr.parity() == Parity::Odd {
        let rest = (0..m)
            .filter(|&j| !used[j])
            .map(|j| project(&unit(j), &pairs))
            .max_by(|a, b| norm2(a).total_cmp(&norm2(b)));
        let Some(v) = rest else {
            return Err(Error::Signature("no direction left for φ_k".into()));
        };
        let gamma = (form(&v, &v) / I).re;
        if !(gamma > tol) {
            return Err(Error::Signature(format!("remaining direction has [vv] = {}i, expected positive", gamma)));
        }
        phi.push(v.iter().map(|z| z / gamma.sqrt()).collect());
    }
    theta.shrink_to_fit();
    let basis = BoundaryBasis { theta, phi };
    let dev = basis.max_deviation(&b);
    if dev > 1e-10 * scale.max(1.0) {
        return Err(Error::Signature(format!("relations hold only to {dev:e}")));
    }
    Ok(basis)
}

/// Boundary basis from the eigenvectors of `-iB`: normalised positive and
/// negative directions `p`, `n` give `θ = (p + n)/√2`, `φ = i(p - n)/√2`, and
/// at odd order the extra positive direction is `φ_k`.
fn eigen_boundary_basis(expr: &SymmetricExpression, b: &ComplexMatrix) -> Result<BoundaryBasis> {
    let m = expr.order();
    let h = b.scale(-I);
    let eig = hermitian_eigen(&h)?;
    let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let dirs = |positive: bool| -> Vec<Vec<C64>> {
        let mut idx: Vec<usize> = (0..m).filter(|&j| (eig.values[j] > 0.0) == positive).collect();
        if positive {
            idx.reverse();
        }
        idx.into_iter()
            .map(|j| {
                let w = eig.values[j].abs().sqrt();
                eig.vectors.column(j).iter().map(|z| z / w).collect()
            })
            .collect()
    };
    if eig.values.iter().any(|v| v.abs() <= 1e-12 * scale) {
        return Err(Error::Signature("boundary form is singular at the origin".into()));
    }
    let (pos, neg) = (dirs(true), dirs(false));
    let k = expr.k();
    let n_pairs = if expr.parity() == Parity::Even { k } else { k - 1 };
    if neg.len() != n_pairs || pos.len() != m - n_pairs {
        return Err(Error::Signature(format!(
            "-iB has {} positive and {} negative eigenvalues, expected {} and {n_pairs}",
            pos.len(),
            neg.len(),
            m - n_pairs
        )));
    }
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut theta = Vec::new();
    let mut phi = Vec::new();
    for (p, n) in pos.iter().zip(&neg) {
        theta.push(p.iter().zip(n).map(|(a, c)| (a + c) * r2).collect());
        phi.push(p.iter().zip(n).map(|(a, c)| I * (a - c) * r2).collect());
    }
    if expr.parity() == Parity::Odd {
        phi.push(pos[n_pairs].clone());
    }
    let basis = BoundaryBasis { theta, phi };
    let dev = basis.max_deviation(b);
    if dev > 1e-10 * b.max_abs().max(1.0) {
        return Err(Error::Signature(format!("relations hold only to {dev:e}")));
    }
    Ok(basis)
}

/// Weyl coefficients `m_rs(λ)` making `θ_r + Σ_s m_rs φ_s` square-integrable,
/// from an `L²` subspace detected at `λ`.
pub fn weyl_from_subspace(expr: &SymmetricExpression, basis: &BoundaryBasis, l2: &L2Subspace) -> Result<ComplexMatrix> {
    if expr.parity() != Parity::Even {
        return Err(Error::InvalidExpression("Weyl coefficients are computed for even order only".into()));
    }
    let k = expr.k();
    let m = expr.order();
    let d = l2.dimension;
    if d < k {
        return Err(Error::Inconsistent(format!("L² dimension {d} below k = {k} at λ = {}", fmt_c(l2.lambda))));
    }
    let psi = ComplexMatrix::from_columns(&basis.theta.iter().chain(&basis.phi).cloned().collect::<Vec<_>>());
    if d == k {
        // coordinates of the L² basis in (θ, φ)
        let mut coords = ComplexMatrix::zeros(m, d);
        for (c, w) in l2.basis.iter().enumerate() {
            coords.set_column(c, &solve(&psi, w)?);
        }
        let a = coords.select(&(0..k).collect::<Vec<_>>(), &(0..d).collect::<Vec<_>>());
        let bm = coords.select(&(k..m).collect::<Vec<_>>(), &(0..d).collect::<Vec<_>>());
        // X = A^{-1}; ψ_r = W X e_r, so m_rs = (Bm X)_{sr}
        let mut x = ComplexMatrix::zeros(k, k);
        for r in 0..k {
            let mut e = vec![ZERO; k];
            e[r] = ONE;
            let col = solve(&a, &e).map_err(|_| {
                Error::IllConditioned("θ-components of the L² basis are singular".into())
            })?;
            x.set_column(r, &col);
        }
        return Ok(bm.matmul(&x).transpose());
    }
    // d > k: minimum-norm least squares on the complement of the L² span
    let w = ComplexMatrix::from_columns(&l2.basis);
    let proj = ComplexMatrix::identity(m).sub(&w.matmul(&w.adjoint()));
    let phi = ComplexMatrix::from_columns(&basis.phi);
    let pphi = proj.matmul(&phi);
    let normal = pphi.adjoint().matmul(&pphi);
    let mut out = ComplexMatrix::zeros(k, k);
    for r in 0..k {
        let pt = proj.matvec(&basis.theta[r]);
        let rhs: Vec<C64> = pphi.adjoint().matvec(&pt).iter().map(|z| -z).collect();
        let sol = hermitian_pinv_solve(&normal, &rhs, 1e-10)?;
        let resid: Vec<C64> = pphi.matvec(&sol).iter().zip(&pt).map(|(a, b)| a + b).collect();
        if norm2(&resid) > 1e-6 * norm2(&basis.theta[r]) {
            return Err(Error::IllConditioned(format!("divergent residual {:e} for θ_{}", norm2(&resid), r + 1)));
        }
        for s in 0..k {
            out[(r, s)] = sol[s];
        }
    }
    Ok(out)
}

/// Weyl coefficients at a non-real `λ` (even order only).
pub fn weyl_coefficients(expr: &SymmetricExpression, lambda: C64, params: &SubspaceParams) -> Result<ComplexMatrix> {
    if lambda.im == 0.0 {
        return Err(Error::InvalidExpression("λ must be non-real".into()));
    }
    let basis = canonical_boundary_basis(expr)?;
    let run = SpectralRun::new(expr, &[lambda], &params.integration)?;
    let (l2, _) = run.grams[0].classify_directions(params.growth_threshold, params.window)?;
    weyl_from_subspace(expr, &basis, &l2)
}

/// `r_i = |∫_a^{x_i} f ḡ| / (∫_a^{x_i} |g|²)^{1/2}` at every checkpoint, for
/// two paths in the same bundle.
pub fn l2_ratio_trace(bundle: &Bundle, f: &SolutionPath, g: &SolutionPath) -> Vec<f64> {
    let cross = bundle.cross_integral(f.block, &f.coords, g.block, &g.coords);
    let norm = bundle.cross_integral(g.block, &g.coords, g.block, &g.coords);
    (0..bundle.checkpoints().len())
        .map(|i| {
            let j = bundle.checkpoint_boundary(i);
            let (num, den) = (cross[j], norm[j]);
            if num.is_zero() || den.is_zero() {
                0.0
            } else {
                (num.ln_abs() - 0.5 * den.ln_abs()).exp()
            }
        })
        .collect()
}

/// Ratio trace of the first `L²` direction at `λ = i` against the fastest
/// growing solution at `λ = -i`, with the checkpoints.
pub fn ratio_trace_demo(expr: &SymmetricExpression, params: &SubspaceParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let run = SpectralRun::new(expr, &[I, -I], &params.integration)?;
    let (l2, _) = run.grams[0].classify_directions(params.growth_threshold, params.window)?;
    let Some(f) = l2.paths.first() else {
        return Err(Error::Indeterminate("no L² solution at λ = i".into()));
    };
    let g = run.grams[1].slow_path(expr.order() - 1);
    Ok((run.bundle.checkpoints().to_vec(), l2_ratio_trace(&run.bundle, f, g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn boundary_basis_relations_hold(m in 2usize..=7, seed in 0u64..10_000) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let e = crate::cli::random_expression(m, &mut rng).unwrap();
            let basis = canonical_boundary_basis(&e).unwrap();
            let b = concomitant_matrix(&e, 0.0).unwrap().b;
            proptest::prop_assert!(basis.max_deviation(&b) <= 1e-10 * b.max_abs().max(1.0));
            proptest::prop_assert_eq!(basis.phi.len(), e.k());
        }
    }

    fn p1() -> SymmetricExpression {
        SymmetricExpression::from_strings(2, &["0", "1"], &[], 0.0).unwrap()
    }

    fn p3() -> SymmetricExpression {
        SymmetricExpression::from_strings(3, &["0"], &["0", "1"], 0.0).unwrap()
    }

    fn params(x_max: f64) -> SubspaceParams {
        SubspaceParams { integration: IntegrationParams::new(x_max, 64), ..SubspaceParams::default() }
    }

    #[test]
    fn graded_eigen_recovers_tiny_eigenvalue() {
        let k = 0.6;
        let big = 300.0_f64;
        let g = vec![
            vec![ScaledC64::from_c64(ONE), ScaledC64::new(C64::new(k, 0.0), big)],
            vec![ScaledC64::new(C64::new(k, 0.0), big), ScaledC64::new(ONE, 2.0 * big)],
        ];
        let (logs, _) = graded_eigen(&g).unwrap();
        assert!((logs[0] - (1.0 - k * k).ln()).abs() < 1e-10, "{logs:?}");
        assert!((logs[1] - 2.0 * big).abs() < 1e-10);
    }

    #[test]
    fn free_particle_at_i_has_one_l2_direction() {
        let run = SpectralRun::new(&p1(), &[I], &params(60.0).integration).unwrap();
        let (l2, div) = run.grams[0].classify_directions(0.02, 0.25).unwrap();
        assert_eq!((l2.dimension, div), (1, 1));
        // the L² initial vector is proportional to (1, μ), μ = -e^{-iπ/4}
        let w = &l2.basis[0];
        let mu = -C64::from_polar(1.0, -FRAC_PI_4);
        assert!((w[1] / w[0] - mu).norm() < 1e-7, "{}", w[1] / w[0]);
    }

    #[test]
    fn partition_and_scale_invariance() {
        let run = SpectralRun::new(&p1(), &[I], &params(40.0).integration).unwrap();
        let g = &run.grams[0];
        let (l2, div) = g.classify_directions(0.02, 0.25).unwrap();
        assert_eq!(l2.dimension + div, 2);
        let (l2s, divs) = g.rescaled(1e3).classify_directions(0.02, 0.25).unwrap();
        assert_eq!((l2s.dimension, divs), (l2.dimension, div));
    }

    #[test]
    fn integrated_scaled_initial_data_gives_same_classification() {
        let e = p1();
        let spec = BlockSpec { lambda: I, init: ComplexMatrix::identity(2).scale(C64::new(1e3, 0.0)) };
        let bundle = integrate_bundle(&e, &[spec], &params(40.0).integration).unwrap();
        let g = GramTrajectory::from_bundle(&bundle, 0, 2000.0).unwrap();
        let (l2, div) = g.classify_directions(0.02, 0.25).unwrap();
        assert_eq!((l2.dimension, div), (1, 1));
    }

    #[test]
    fn gram_eigenvalues_nondecreasing() {
        let run = SpectralRun::new(&p3(), &[I], &params(30.0).integration).unwrap();
        let g = &run.grams[0];
        for i in 2..g.checkpoints.len() {
            for j in 0..3 {
                let (a, b) = (g.log_eigenvalues[i - 1][j], g.log_eigenvalues[i][j]);
                assert!(b >= a - 1e-9, "checkpoint {i} position {j}: {a} -> {b}");
            }
        }
    }

    #[test]
    fn third_order_indices() {
        let d = deficiency_indices(&p3(), &params(60.0)).unwrap();
        assert_eq!((d.n_plus, d.n_minus), (1, 2));
        assert!(d.diagnostics.violations.is_empty());
    }

    #[test]
    fn boundary_basis_second_order() {
        let bb = canonical_boundary_basis(&p1()).unwrap();
        assert_eq!(bb.theta, vec![vec![ONE, ZERO]]);
        assert_eq!(bb.phi, vec![vec![ZERO, ONE]]);
    }

    #[test]
    fn boundary_basis_third_order_relations() {
        let e = p3();
        let bb = canonical_boundary_basis(&e).unwrap();
        assert_eq!(bb.theta.len(), 1);
        assert_eq!(bb.phi.len(), 2);
        let b = concomitant_matrix(&e, 0.0).unwrap().b;
        assert!(bb.max_deviation(&b) < 1e-14);
        // the reference basis θ = (0,0,i), φ_1 = e_0, φ_2 = e_1 satisfies the same relations
        let reference = BoundaryBasis {
            theta: vec![vec![ZERO, ZERO, I]],
            phi: vec![vec![ONE, ZERO, ZERO], vec![ZERO, ONE, ZERO]],
        };
        assert!(reference.max_deviation(&b) < 1e-15);
    }

    #[test]
    fn boundary_basis_variable_coefficients() {
        for (m, s, q) in [
            (4, vec!["1", "x", "1+x^2"], vec!["x", "2"]),
            (5, vec!["1", "x^2"], vec!["x", "1", "exp(x)"]),
            (6, vec!["0", "1", "x", "2"], vec!["1", "x", "3"]),
        ] {
            let e = SymmetricExpression::from_strings(m, &s, &q, 0.7).unwrap();
            let bb = canonical_boundary_basis(&e).unwrap();
            let b = concomitant_matrix(&e, 0.7).unwrap().b;
            assert!(bb.max_deviation(&b) <= 1e-10, "order {m}");
        }
    }

    #[test]
    fn weyl_free_particle() {
        let mm = weyl_coefficients(&p1(), I, &params(60.0)).unwrap();
        let expect = C64::from_polar(1.0, 3.0 * FRAC_PI_4);
        assert!((mm[(0, 0)] - expect).norm() < 1e-6, "{}", mm[(0, 0)]);
    }

    #[test]
    fn weyl_shifted_potential() {
        let e = SymmetricExpression::from_strings(2, &["1", "1"], &[], 0.0).unwrap();
        let mm = weyl_coefficients(&e, I, &params(40.0)).unwrap();
        let expect = -(C64::new(1.0, -1.0)).sqrt();
        assert!((mm[(0, 0)] - expect).norm() < 1e-6, "{} vs {expect}", mm[(0, 0)]);
    }

    #[test]
    fn ratio_trace_of_zero_path_is_zero() {
        let run = SpectralRun::new(&p1(), &[I, -I], &params(20.0).integration).unwrap();
        let f = SolutionPath::forward(&run.bundle, 0, &[ZERO, ZERO]);
        let g = SolutionPath::forward(&run.bundle, 1, &[ONE, ONE]);
        assert!(l2_ratio_trace(&run.bundle, &f, &g).iter().all(|&r| r == 0.0));
    }
}
