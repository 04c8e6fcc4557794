//! Limit-type classification.
//!
//! Deficiency indices come from [`crate::subspace`]. The determinant rank `n`
//! is the numerical rank of the matrix of limit brackets `[f_a g_b](∞)` of
//! the `L²` solutions at `λ = i` (the `f` slot) against those at `λ = -i`
//! (the `g` slot). Such pairs have brackets that do not depend on `x`, so the
//! limit is a tail average whose spread is itself a check. The expression is
//! consistent when `N₊ + N₋ = m + n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bracket::{concomitant_matrix, gauss_legendre, ExprFunction, SampledFunction};
use crate::coeffdsl;
use crate::error::{Error, Result};
use crate::expression::{Parity, SymmetricExpression};
use crate::integrate::{Bundle, IntegrationParams, ScaledVec};
use crate::linalg::{determinant, norm2, singular_values, ComplexMatrix, C64, I, ZERO};
use crate::subspace::{deficiency_indices, DeficiencyIndices, L2Subspace, SpectralRun, SubspaceParams};

/// Numerical parameters of a classification run.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyParams {
    pub subspace: SubspaceParams,
    pub det_rank_rel: f64,
    pub bracket_tol: f64,
    /// Number of random bump samples per slot in the enriched check.
    pub samples: usize,
    pub seed: u64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self { subspace: SubspaceParams::default(), det_rank_rel: 1e-6, bracket_tol: 1e-8, samples: 8, seed: 0 }
    }
}

impl ClassifyParams {
    pub fn integration(&self) -> &IntegrationParams {
        &self.subspace.integration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleKind {
    L2Solution { lambda: C64, init: Vec<C64> },
    Bump { center: f64, half_width: f64 },
}

/// A member of the maximal domain with derivative vectors at the checkpoints,
/// normalised to unit `L²` norm.
#[derive(Debug, Clone)]
pub struct DomainSample {
    pub kind: SampleKind,
    pub states: Vec<ScaledVec>,
}

impl DomainSample {
    fn from_l2(sub: &L2Subspace, idx: usize, bundle: &Bundle) -> Self {
        let path = &sub.paths[idx];
        let shift = -0.5 * sub.final_log_norms[idx];
        let states = (0..bundle.checkpoints().len())
            .map(|i| {
                let mut s = path.state_at(bundle, i);
                s.log += shift;
                s
            })
            .collect();
        Self { kind: SampleKind::L2Solution { lambda: sub.lambda, init: path.init.clone() }, states }
    }

    fn bump(center: f64, half_width: f64, m: usize, checkpoints: &[f64]) -> Result<Self> {
        let text = format!("exp(-1/(1-((x-({center}))/({half_width}))^2))");
        let ast = coeffdsl::parse(&text)?;
        let f = ExprFunction::new(&ast, m - 1, Some((center - half_width, center + half_width)));
        // ∫ f² over the support
        let (nodes, weights) = gauss_legendre(8);
        let panels = 32;
        let width = 2.0 * half_width / panels as f64;
        let mut norm2 = 0.0;
        for p in 0..panels {
            let lo = center - half_width + p as f64 * width;
            for (t, w) in nodes.iter().zip(&weights) {
                let x = lo + 0.5 * width * (t + 1.0);
                norm2 += w * 0.5 * width * f.derivatives(x, 1)?[0].norm_sqr();
            }
        }
        let shift = -0.5 * norm2.ln();
        let states = checkpoints
            .iter()
            .map(|&x| {
                let d = f.derivatives(x, m)?;
                Ok(ScaledVec::new(d, shift))
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind: SampleKind::Bump { center, half_width }, states })
    }

    fn max_log_norm(&self) -> f64 {
        self.states
            .iter()
            .filter(|s| !s.is_zero())
            .map(|s| s.log + norm2(&s.unit).ln())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStrategy {
    DeficiencyPairing,
    Enriched,
}

/// `f`-slot and `g`-slot samples.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub fs: Vec<DomainSample>,
    pub gs: Vec<DomainSample>,
    pub checkpoints: Vec<f64>,
    /// Enriched probes left out because their subspace was indeterminate.
    pub skipped: Vec<String>,
}

/// Maximal-domain samples. The pairing strategy returns the `L²` bases at
/// `λ = i` (f slot) and `λ = -i` (g slot); the enriched strategy adds `L²`
/// solutions at `2i, 1+i` (f) and `-2i, 1-i` (g) plus `count` random bumps
/// per slot, supported before the averaging window. An enriched probe whose
/// subspace is indeterminate is skipped and listed in `skipped`; the pairing
/// probes propagate the error.
pub fn maximal_domain_samples(
    expr: &SymmetricExpression,
    strategy: SampleStrategy,
    count: usize,
    seed: u64,
    defic: &DeficiencyIndices,
    params: &SubspaceParams,
) -> Result<SampleSet> {
    let bundle = &defic.run.bundle;
    let checkpoints = bundle.checkpoints().to_vec();
    let mut fs: Vec<DomainSample> =
        (0..defic.plus.dimension).map(|i| DomainSample::from_l2(&defic.plus, i, bundle)).collect();
    let mut gs: Vec<DomainSample> =
        (0..defic.minus.dimension).map(|i| DomainSample::from_l2(&defic.minus, i, bundle)).collect();
    let mut skipped = Vec::new();
    if strategy == SampleStrategy::Enriched {
        let lambdas = [C64::new(0.0, 2.0), C64::new(1.0, 1.0), C64::new(0.0, -2.0), C64::new(1.0, -1.0)];
        let run = SpectralRun::new(expr, &lambdas, &params.integration)?;
        for (b, lam) in lambdas.iter().enumerate() {
            let sub = match run.grams[b].classify_directions(params.growth_threshold, params.window) {
                Ok((sub, _)) => sub,
                Err(Error::Indeterminate(msg)) => {
                    skipped.push(msg);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let slot = if lam.im > 0.0 { &mut fs } else { &mut gs };
            for i in 0..sub.dimension {
                slot.push(DomainSample::from_l2(&sub, i, &run.bundle));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = expr.origin();
        // supports end before the averaging window
        let end = checkpoints[checkpoints.len() - tail_length(checkpoints.len(), params.window)];
        let m = expr.order();
        for slot in [&mut fs, &mut gs] {
            for _ in 0..count {
                let center = a + (end - a) * rng.gen_range(0.1..0.9);
                let room = (center - a).min(end - center);
                let half_width = room * rng.gen_range(0.2..0.95);
                slot.push(DomainSample::bump(center, half_width, m, &checkpoints)?);
            }
        }
    }
    Ok(SampleSet { fs, gs, checkpoints, skipped })
}

/// Brackets of all sample pairs at every checkpoint, as ordinary complex
/// numbers, together with the natural magnitude `‖F‖‖G‖‖B‖_F` of each.
struct BracketHistory {
    values: Vec<ComplexMatrix>,
    natural: Vec<ComplexMatrix>,
    b_norm: Vec<f64>,
}

fn bracket_history(expr: &SymmetricExpression, set: &SampleSet, range: std::ops::Range<usize>) -> Result<BracketHistory> {
    let (nf, ng) = (set.fs.len(), set.gs.len());
    let mut values = Vec::new();
    let mut natural = Vec::new();
    let mut b_norm = Vec::new();
    for i in range {
        let b = concomitant_matrix(expr, set.checkpoints[i])?;
        let bn = b.b.frobenius_norm();
        let mut w = ComplexMatrix::zeros(nf, ng);
        let mut nat = ComplexMatrix::zeros(nf, ng);
        for (r, f) in set.fs.iter().enumerate() {
            for (s, g) in set.gs.iter().enumerate() {
                let (fs, gs) = (&f.states[i], &g.states[i]);
                if fs.is_zero() || gs.is_zero() {
                    continue;
                }
                let scale = (fs.log + gs.log).exp();
                w[(r, s)] = b.apply(&fs.unit, &gs.unit) * scale;
                nat[(r, s)] = C64::new(norm2(&fs.unit) * norm2(&gs.unit) * bn * scale, 0.0);
            }
        }
        values.push(w);
        natural.push(nat);
        b_norm.push(bn);
    }
    Ok(BracketHistory { values, natural, b_norm })
}

/// Number of trailing checkpoints used for limits.
pub fn tail_length(n_checkpoints: usize, window: f64) -> usize {
    ((n_checkpoints as f64 * window).round() as usize).max(2)
}

/// Tail-averaged brackets `W_ab ≈ [f_a g_b](∞)` and their largest spread
/// relative to `max(|W_ab|, ‖F‖‖G‖‖B‖_F)` over the tail.
pub fn limit_bracket_matrix(expr: &SymmetricExpression, set: &SampleSet, tail: usize) -> Result<(ComplexMatrix, f64)> {
    let n = set.checkpoints.len();
    let tail = tail.clamp(1, n);
    let hist = bracket_history(expr, set, n - tail..n)?;
    let (nf, ng) = (set.fs.len(), set.gs.len());
    let mut w = ComplexMatrix::zeros(nf, ng);
    for v in &hist.values {
        w = w.add(v);
    }
    w = w.scale(C64::new(1.0 / tail as f64, 0.0));
    let mut variation: f64 = 0.0;
    for r in 0..nf {
        for s in 0..ng {
            let spread = hist.values.iter().map(|v| (v[(r, s)] - w[(r, s)]).norm()).fold(0.0, f64::max);
            let nat = hist.natural.iter().map(|v| v[(r, s)].re).fold(0.0, f64::max);
            let denom = w[(r, s)].norm().max(nat);
            if denom > 0.0 {
                variation = variation.max(spread / denom);
            }
        }
    }
    if variation > 0.1 {
        return Err(Error::LimitNotResolved { variation });
    }
    Ok((w, variation))
}

/// `W` divided entrywise by `β ‖F_a‖_max ‖G_b‖_max`, the largest natural size
/// of each bracket anywhere on the range.
fn normalized_limit(expr: &SymmetricExpression, set: &SampleSet, w: &ComplexMatrix) -> Result<ComplexMatrix> {
    let beta = set
        .checkpoints
        .iter()
        .map(|&x| concomitant_matrix(expr, x).map(|b| b.b.frobenius_norm()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let df: Vec<f64> = set.fs.iter().map(DomainSample::max_log_norm).collect();
    let dg: Vec<f64> = set.gs.iter().map(DomainSample::max_log_norm).collect();
    Ok(ComplexMatrix::from_fn(w.rows(), w.cols(), |r, s| {
        if w[(r, s)] == ZERO {
            ZERO
        } else {
            w[(r, s)] / (beta * (df[r] + dg[s]).exp())
        }
    }))
}

/// Greedy complete-pivot choice of an `n × n` minor.
fn witness_minor(w: &ComplexMatrix, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut a = w.clone();
    let (mut rows, mut cols) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let mut best = (0, 0, -1.0);
        for r in (0..a.rows()).filter(|r| !rows.contains(r)) {
            for c in (0..a.cols()).filter(|c| !cols.contains(c)) {
                let v = a[(r, c)].norm();
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        let (pr, pc, pv) = best;
        if pv <= 0.0 {
            break;
        }
        let piv = a[(pr, pc)];
        for r in 0..a.rows() {
            if r == pr {
                continue;
            }
            let f = a[(r, pc)] / piv;
            for c in 0..a.cols() {
                let v = a[(pr, c)];
                a[(r, c)] -= f * v;
            }
        }
        rows.push(pr);
        cols.push(pc);
    }
    rows.sort_unstable();
    cols.sort_unstable();
    (rows, cols)
}

fn rank_at(sv: &[f64], thr: f64) -> usize {
    sv.iter().filter(|&&s| s > thr).count()
}

/// Evidence behind a determinant rank.
#[derive(Debug, Clone, Serialize)]
pub struct RankEvidence {
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub rank_at_tenfold_threshold: usize,
    pub rank_at_tenth_threshold: usize,
    pub stable: bool,
    pub witness_rows: Vec<usize>,
    pub witness_cols: Vec<usize>,
    pub witness_det: f64,
    pub pairing_variation: f64,
    /// Normalised `(n+1)`-th singular value over all enriched samples.
    pub enriched_next_singular_value: f64,
    pub enriched_minors_checked: usize,
    pub enriched_max_minor: f64,
    pub enriched_ok: bool,
    pub enriched_f_samples: usize,
    pub enriched_g_samples: usize,
    pub enriched_variation: Option<f64>,
    pub enriched_skipped: Vec<String>,
    /// Largest witnessed size with a nonvanishing determinant in the
    /// enriched family; must equal the rank.
    pub largest_nonvanishing_size: usize,
}

/// Rank of the limit bracket matrix of the deficiency pairing, with
/// enriched verification that larger minors vanish.
pub fn determinant_rank(
    expr: &SymmetricExpression,
    defic: &DeficiencyIndices,
    params: &ClassifyParams,
) -> Result<(usize, RankEvidence)> {
    let n_cp = defic.run.bundle.checkpoints().len();
    let tail = tail_length(n_cp, params.subspace.window);
    let pairing = maximal_domain_samples(expr, SampleStrategy::DeficiencyPairing, 0, params.seed, defic, &params.subspace)?;
    let (w, variation) = limit_bracket_matrix(expr, &pairing, tail)?;
    let thr = params.det_rank_rel;
    let (n, sv, witness) = if w.rows() == 0 || w.cols() == 0 {
        (0, vec![], (vec![], vec![]))
    } else {
        let wn = normalized_limit(expr, &pairing, &w)?;
        let sv = singular_values(&wn);
        let n = rank_at(&sv, thr);
        let witness = witness_minor(&wn, n);
        (n, sv, witness)
    };
    let r10 = rank_at(&sv, thr * 10.0);
    let r01 = rank_at(&sv, thr / 10.0);
    let witness_det = if n == 0 {
        1.0
    } else {
        let wn = normalized_limit(expr, &pairing, &w)?;
        determinant(&wn.select(&witness.0, &witness.1)).norm()
    };

    // enriched family: everything above the rank must vanish
    let enriched = maximal_domain_samples(expr, SampleStrategy::Enriched, params.samples, params.seed, defic, &params.subspace)?;
    let (we, evar) = match limit_bracket_matrix(expr, &enriched, tail) {
        Ok((we, v)) => (we, Some(v)),
        Err(Error::LimitNotResolved { variation }) => {
            // keep the average, record the spread
            let hist = bracket_history(expr, &enriched, n_cp - tail..n_cp)?;
            let mut acc = ComplexMatrix::zeros(enriched.fs.len(), enriched.gs.len());
            for v in &hist.values {
                acc = acc.add(v);
            }
            (acc.scale(C64::new(1.0 / tail as f64, 0.0)), Some(variation))
        }
        Err(e) => return Err(e),
    };
    let wen = normalized_limit(expr, &enriched, &we)?;
    let sve = singular_values(&wen);
    let next = sve.get(n).copied().unwrap_or(0.0);
    let largest = rank_at(&sve, thr);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed);
    let size = n + 1;
    let mut checked = 0;
    let mut max_minor: f64 = 0.0;
    let bound: f64 = thr * sve.iter().take(n).product::<f64>().max(1.0);
    if size <= wen.rows() && size <= wen.cols() {
        for _ in 0..params.samples.max(1) * 4 {
            let rows = rand::seq::index::sample(&mut rng, wen.rows(), size).into_vec();
            let cols = rand::seq::index::sample(&mut rng, wen.cols(), size).into_vec();
            let d = determinant(&wen.select(&rows, &cols)).norm();
            max_minor = max_minor.max(d);
            checked += 1;
        }
    }
    let enriched_ok = next <= thr && max_minor <= bound;
    Ok((
        n,
        RankEvidence {
            singular_values: sv,
            threshold: thr,
            rank_at_tenfold_threshold: r10,
            rank_at_tenth_threshold: r01,
            stable: r10 == n && r01 == n,
            witness_rows: witness.0,
            witness_cols: witness.1,
            witness_det,
            pairing_variation: variation,
            enriched_next_singular_value: next,
            enriched_minors_checked: checked,
            enriched_max_minor: max_minor,
            enriched_ok,
            enriched_f_samples: enriched.fs.len(),
            enriched_g_samples: enriched.gs.len(),
            enriched_variation: evar,
            enriched_skipped: enriched.skipped.clone(),
            largest_nonvanishing_size: largest,
        },
    ))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Tolerances {
    pub ode_rel: f64,
    pub ode_abs: f64,
    pub gram_growth: f64,
    pub det_rank_rel: f64,
    pub bracket_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub x_max: f64,
    pub checkpoints: usize,
    pub window: f64,
    pub growth_plus: Vec<f64>,
    pub growth_minus: Vec<f64>,
    pub final_log10_gram_plus: Vec<f64>,
    pub final_log10_gram_minus: Vec<f64>,
    pub bound_violations: Vec<String>,
    pub flags: Vec<String>,
    pub boundary_form_max_skew: f64,
    pub boundary_form_min_abs_det: f64,
    pub rank: Option<RankEvidence>,
    pub probes: Vec<ProbeResult>,
}

/// `L²` subspace dimension at a configured spectral probe.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProbeResult {
    pub lambda: [f64; 2],
    pub dimension: Option<usize>,
    pub note: Option<String>,
}

/// Machine-readable classification result.
#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub name: String,
    pub order: usize,
    pub parity: Parity,
    pub n_plus: Option<usize>,
    pub n_minus: Option<usize>,
    pub det_rank: Option<usize>,
    pub quotient_dim: Option<usize>,
    pub limit_case: Option<String>,
    pub limit_point: Option<bool>,
    pub consistent: bool,
    pub diagnostics: Diagnostics,
    pub tolerances: Tolerances,
    pub seed: u64,
}

/// Per-checkpoint data for the trace file.
#[derive(Debug, Clone)]
pub struct Trace {
    pub checkpoints: Vec<f64>,
    pub log10_gram_plus: Vec<Vec<f64>>,
    pub log10_gram_minus: Vec<Vec<f64>>,
    /// `|det|` of the leading `j × j` normalised bracket block, `j = 1..=m`.
    pub dets: Vec<Vec<f64>>,
}

impl Trace {
    pub fn to_csv(&self, m: usize) -> String {
        let mut out = String::from("x");
        for j in 1..=m {
            out.push_str(&format!(",log10_gram_eig_{j}_plus"));
        }
        for j in 1..=m {
            out.push_str(&format!(",log10_gram_eig_{j}_minus"));
        }
        for j in 1..=m {
            out.push_str(&format!(",det_{j}"));
        }
        out.push('\n');
        let num = |v: f64| if v.is_nan() { "NaN".to_string() } else { format!("{v:e}") };
        for (i, x) in self.checkpoints.iter().enumerate() {
            out.push_str(&format!("{x:e}"));
            for v in self.log10_gram_plus[i].iter().chain(&self.log10_gram_minus[i]).chain(&self.dets[i]) {
                out.push(',');
                out.push_str(&num(*v));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub report: ClassificationReport,
    pub trace: Option<Trace>,
}

fn limit_label(n_plus: usize, n_minus: usize) -> String {
    format!("({n_plus}, {n_minus})")
}

fn log10_all(v: &[f64]) -> Vec<f64> {
    v.iter().map(|l| l / std::f64::consts::LN_10).collect()
}

/// Full pipeline: deficiency indices, determinant rank, consistency.
pub fn classify_expression(expr: &SymmetricExpression, name: &str, params: &ClassifyParams) -> Result<Classification> {
    let m = expr.order();
    let ip = params.integration();
    let tolerances = Tolerances {
        ode_rel: ip.tol.rel,
        ode_abs: ip.tol.abs,
        gram_growth: params.subspace.growth_threshold,
        det_rank_rel: params.det_rank_rel,
        bracket_tol: params.bracket_tol,
    };
    let grid = expr.default_grid(ip.x_max);
    let violations = expr.validate(&grid);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().take(5).map(ToString::to_string).collect();
        return Err(Error::InvalidExpression(format!("coefficient conditions fail: {}", list.join("; "))));
    }
    let mut flags = Vec::new();
    let (mut max_skew, mut min_det) = (0.0f64, f64::INFINITY);
    for &x in &grid {
        let b = concomitant_matrix(expr, x)?;
        let scale = b.b.max_abs();
        max_skew = max_skew.max(b.skew_deviation() / scale);
        min_det = min_det.min(b.determinant().norm());
    }
    if max_skew > params.bracket_tol {
        flags.push(format!("boundary form is not skew-Hermitian to {:e} (deviation {max_skew:e})", params.bracket_tol));
    }
    if !(min_det > 0.0) {
        flags.push("boundary form is singular on the grid".into());
    }
    let mut diagnostics = Diagnostics {
        x_max: ip.x_max,
        checkpoints: ip.n_checkpoints,
        window: params.subspace.window,
        growth_plus: vec![],
        growth_minus: vec![],
        final_log10_gram_plus: vec![],
        final_log10_gram_minus: vec![],
        bound_violations: vec![],
        flags: vec![],
        boundary_form_max_skew: max_skew,
        boundary_form_min_abs_det: min_det,
        rank: None,
        probes: vec![],
    };
    let mut report = ClassificationReport {
        name: name.to_string(),
        order: m,
        parity: expr.parity(),
        n_plus: None,
        n_minus: None,
        det_rank: None,
        quotient_dim: None,
        limit_case: None,
        limit_point: None,
        consistent: false,
        diagnostics: diagnostics.clone(),
        tolerances,
        seed: params.seed,
    };

    let defic = match deficiency_indices(expr, &params.subspace) {
        Ok(d) => d,
        Err(e @ (Error::Indeterminate(_) | Error::Divergent { .. } | Error::IllConditioned(_) | Error::StepUnderflow { .. })) => {
            flags.push(e.to_string());
            diagnostics.flags = flags;
            report.diagnostics = diagnostics;
            return Ok(Classification { report, trace: None });
        }
        Err(e) => return Err(e),
    };
    let (np, nm) = (defic.n_plus, defic.n_minus);
    let gp = &defic.run.grams[0];
    let gm = &defic.run.grams[1];
    diagnostics.growth_plus = defic.diagnostics.growth_plus.clone();
    diagnostics.growth_minus = defic.diagnostics.growth_minus.clone();
    diagnostics.final_log10_gram_plus = log10_all(gp.log_eigenvalues.last().unwrap());
    diagnostics.final_log10_gram_minus = log10_all(gm.log_eigenvalues.last().unwrap());
    diagnostics.bound_violations = defic.diagnostics.violations.clone();
    report.n_plus = Some(np);
    report.n_minus = Some(nm);
    report.quotient_dim = Some(np + nm);
    report.limit_case = Some(limit_label(np, nm));

    // trace: Gram histories and leading normalised bracket determinants
    let pairing = maximal_domain_samples(expr, SampleStrategy::DeficiencyPairing, 0, params.seed, &defic, &params.subspace)?;
    let n_cp = pairing.checkpoints.len();
    let hist = bracket_history(expr, &pairing, 0..n_cp)?;
    let df: Vec<f64> = pairing.fs.iter().map(DomainSample::max_log_norm).collect();
    let dg: Vec<f64> = pairing.gs.iter().map(DomainSample::max_log_norm).collect();
    let beta = hist.b_norm.iter().copied().fold(0.0, f64::max);
    let dets = hist
        .values
        .iter()
        .map(|w| {
            (1..=m)
                .map(|j| {
                    if j > w.rows() || j > w.cols() {
                        return f64::NAN;
                    }
                    let sub = ComplexMatrix::from_fn(j, j, |r, s| {
                        if w[(r, s)] == ZERO {
                            ZERO
                        } else {
                            w[(r, s)] / (beta * (df[r] + dg[s]).exp())
                        }
                    });
                    determinant(&sub).norm()
                })
                .collect()
        })
        .collect();
    let trace = Trace {
        checkpoints: pairing.checkpoints.clone(),
        log10_gram_plus: gp.log_eigenvalues.iter().map(|v| log10_all(v)).collect(),
        log10_gram_minus: gm.log_eigenvalues.iter().map(|v| log10_all(v)).collect(),
        dets,
    };

    match determinant_rank(expr, &defic, params) {
        Ok((n, evidence)) => {
            if !evidence.stable {
                flags.push(format!(
                    "determinant rank unstable under threshold change ({} at x10, {} at /10)",
                    evidence.rank_at_tenfold_threshold, evidence.rank_at_tenth_threshold
                ));
            }
            if !evidence.enriched_ok {
                flags.push(format!(
                    "enriched samples do not confirm rank {n} (next singular value {:e}, largest minor {:e})",
                    evidence.enriched_next_singular_value, evidence.enriched_max_minor
                ));
            }
            if evidence.largest_nonvanishing_size != n {
                flags.push(format!(
                    "enriched family witnesses a nonvanishing size {} against rank {n}",
                    evidence.largest_nonvanishing_size
                ));
            }
            if n > m {
                flags.push(format!("determinant rank {n} exceeds the order {m}"));
            }
            report.det_rank = Some(n);
            report.limit_point = Some(n == 0);
            diagnostics.rank = Some(evidence);
            let identity = np + nm == m + n;
            if !identity {
                flags.push(format!("N+ + N- = {} but m + n = {}", np + nm, m + n));
            }
            report.consistent = identity && flags.is_empty() && diagnostics.bound_violations.is_empty();
        }
        Err(e @ (Error::LimitNotResolved { .. } | Error::Indeterminate(_) | Error::IllConditioned(_))) => {
            flags.push(e.to_string());
        }
        Err(e) => return Err(e),
    }
    diagnostics.flags = flags;
    report.diagnostics = diagnostics;
    Ok(Classification { report, trace: Some(trace) })
}

/// [`classify_expression`] plus the `L²` dimension at each probe. The
/// dimension is constant on each half-plane, so a probe disagreeing with
/// `N₊` or `N₋` is flagged. Probes at exactly `±i` reuse the main run.
pub fn classify_with_probes(
    expr: &SymmetricExpression,
    name: &str,
    params: &ClassifyParams,
    probes: &[C64],
) -> Result<Classification> {
    let mut c = classify_expression(expr, name, params)?;
    let (Some(np), Some(nm)) = (c.report.n_plus, c.report.n_minus) else {
        return Ok(c);
    };
    let extra: Vec<C64> = probes.iter().copied().filter(|z| *z != I && *z != -I).collect();
    let run = if extra.is_empty() { None } else { Some(SpectralRun::new(expr, &extra, &params.subspace.integration)) };
    let mut results = Vec::new();
    let mut flags = Vec::new();
    for z in probes {
        let expected = if z.im > 0.0 { np } else { nm };
        let (dimension, note) = if *z == I {
            (Some(np), None)
        } else if *z == -I {
            (Some(nm), None)
        } else {
            let b = extra.iter().position(|w| w == z).unwrap();
            match run.as_ref().unwrap() {
                Ok(run) => match run.grams[b].classify_directions(params.subspace.growth_threshold, params.subspace.window) {
                    Ok((sub, _)) => (Some(sub.dimension), None),
                    Err(e) => (None, Some(e.to_string())),
                },
                Err(e) => (None, Some(e.to_string())),
            }
        };
        if let Some(d) = dimension {
            if d != expected {
                flags.push(format!("probe {}{:+}i has L² dimension {d}, expected {expected}", z.re, z.im));
            }
        }
        results.push(ProbeResult { lambda: [z.re, z.im], dimension, note });
    }
    if !flags.is_empty() {
        c.report.consistent = false;
        c.report.diagnostics.flags.extend(flags);
    }
    c.report.diagnostics.probes = results;
    Ok(c)
}

/// Limit-bracket matrix of the deficiency pairing at every checkpoint; used by
/// constancy checks.
pub fn pairing_bracket_history(
    expr: &SymmetricExpression,
    defic: &DeficiencyIndices,
    params: &SubspaceParams,
) -> Result<(Vec<f64>, Vec<ComplexMatrix>)> {
    let set = maximal_domain_samples(expr, SampleStrategy::DeficiencyPairing, 0, 0, defic, params)?;
    let n = set.checkpoints.len();
    let hist = bracket_history(expr, &set, 0..n)?;
    Ok((set.checkpoints, hist.values))
}
