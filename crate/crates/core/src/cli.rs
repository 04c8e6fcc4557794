//! Command-line front end.
//!
//! Exit codes: 0 consistent / all checks pass, 2 flagged or unresolved,
//! 1 input error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bracket::{concomitant_matrix, determinantal_identity_check, green_relative_residual, Polynomial};
use crate::classify::classify_with_probes;
use crate::config::ProblemConfig;
use crate::error::{Error, Result};
use crate::expression::SymmetricExpression;
use crate::integrate::IntegrationParams;
use crate::linalg::C64;
use crate::subspace::{ratio_trace_demo, SubspaceParams};

#[derive(Debug, Parser)]
#[command(name = "limitclass", version, about = "Limit-point / limit-circle classification of symmetric differential expressions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify the expression in a config file and write a JSON report.
    Classify {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the identity suite on random expressions of one order.
    Verify {
        #[arg(long, value_parser = clap::value_parser!(u32).range(2..=8))]
        order: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Print the boundary-form matrix B(x).
    Bracket {
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_FLAGGED: i32 = 2;

/// Parses `args` and runs the command, returning the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Classify { config, out: path, trace } => cmd_classify(&config, &path, trace.as_deref(), out),
        Command::Verify { order, seed, trials } => cmd_verify(order as usize, seed, trials, out, err),
        Command::Bracket { config, x } => cmd_bracket(&config, x, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn cmd_classify(config: &Path, out_path: &Path, trace_path: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let cfg = ProblemConfig::from_path(config)?;
    let expr = cfg.expression()?;
    let c = classify_with_probes(&expr, &cfg.name, &cfg.classify_params(), &cfg.probes())?;
    let mut json = serde_json::to_string_pretty(&c.report)?;
    json.push('\n');
    write_atomic(out_path, json.as_bytes())?;
    if let Some(tp) = trace_path {
        let csv = match &c.trace {
            Some(t) => t.to_csv(expr.order()),
            None => crate::classify::Trace {
                checkpoints: vec![],
                log10_gram_plus: vec![],
                log10_gram_minus: vec![],
                dets: vec![],
            }
            .to_csv(expr.order()),
        };
        write_atomic(tp, csv.as_bytes())?;
    }
    let r = &c.report;
    let show = |v: Option<usize>| v.map_or("?".to_string(), |n| n.to_string());
    writeln!(
        out,
        "{}: order {} ({}), N+ = {}, N- = {}, det rank = {}, limit case {}, {}",
        r.name,
        r.order,
        r.parity,
        show(r.n_plus),
        show(r.n_minus),
        show(r.det_rank),
        r.limit_case.as_deref().unwrap_or("?"),
        if r.consistent { "consistent" } else { "FLAGGED" }
    )?;
    for f in &r.diagnostics.flags {
        writeln!(out, "  flag: {f}")?;
    }
    Ok(if r.consistent { EXIT_OK } else { EXIT_FLAGGED })
}

pub fn cmd_bracket(config: &Path, x: f64, out: &mut dyn Write) -> Result<i32> {
    let cfg = ProblemConfig::from_path(config)?;
    if !(x >= cfg.origin) {
        return Err(Error::Config { path: "--x".into(), message: format!("x = {x} lies left of the origin {}", cfg.origin) });
    }
    let expr = cfg.expression()?;
    let b = concomitant_matrix(&expr, x)?;
    write!(out, "{}", format_bracket(&b.b, b.determinant().norm()))?;
    Ok(EXIT_OK)
}

/// `B(x)` rows as `re im` pairs with 17 significant digits, then `|det B|`.
pub fn format_bracket(b: &crate::linalg::ComplexMatrix, det: f64) -> String {
    let mut s = String::new();
    for r in 0..b.rows() {
        let row: Vec<String> = (0..b.cols()).map(|c| format!("{:.16e} {:.16e}", b[(r, c)].re, b[(r, c)].im)).collect();
        s.push_str(&row.join("  "));
        s.push('\n');
    }
    s.push_str(&format!("|det B| = {det:.16e}\n"));
    s
}

fn random_poly_text(rng: &mut ChaCha8Rng) -> String {
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    format!("({:.6}) + ({:.6})*x + ({:.6})*x^2 + ({:.6})*cos(x)", c[0], c[1], c[2], c[3])
}

/// Random symmetric expression of order `m` with a positive leading
/// coefficient.
pub fn random_expression(m: usize, rng: &mut ChaCha8Rng) -> Result<SymmetricExpression> {
    let k = m.div_ceil(2);
    let h = if m % 2 == 0 { k } else { k - 1 };
    let leading = format!("{:.6} + {:.6}*x^2", rng.gen_range(0.5..2.0), rng.gen_range(0.0..1.0));
    let mut s: Vec<String> = (0..=h).map(|_| random_poly_text(rng)).collect();
    let mut q: Vec<String> = (0..k).map(|_| random_poly_text(rng)).collect();
    if m % 2 == 0 {
        s[h] = leading;
    } else {
        q[k - 1] = leading;
    }
    let s: Vec<&str> = s.iter().map(String::as_str).collect();
    let q: Vec<&str> = q.iter().map(String::as_str).collect();
    SymmetricExpression::from_strings(m, &s, &q, 0.0)
}

fn random_c64(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn random_polynomial(rng: &mut ChaCha8Rng, degree: usize) -> Polynomial {
    Polynomial { coeffs: (0..=degree).map(|p| random_c64(rng) / (1.0 + p as f64).powi(2)).collect() }
}

/// One line of the verify table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    pub worst: f64,
    pub limit: f64,
}

impl CheckRow {
    fn new(name: &'static str, limit: f64) -> Self {
        Self { name, trials: 0, passed: 0, worst: 0.0, limit }
    }

    fn record(&mut self, value: f64) {
        self.trials += 1;
        if value <= self.limit {
            self.passed += 1;
        }
        if !(value <= self.worst) {
            self.worst = value;
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

/// Skew-Hermitian, determinantal identity, Green residual and ratio trace
/// checks for `trials` random cases of order `m`. The ratio trace runs once,
/// on the constant-coefficient expression of order `m` up to `x = 40`, and
/// must end below `1e-3` with the maxima of successive blocks of four
/// checkpoints decreasing over the final half.
pub fn verify_suite(m: usize, seed: u64, trials: usize) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skew = CheckRow::new("skew-hermitian", 1e-12);
    let mut nonsingular = CheckRow::new("nonsingular", 0.0);
    let mut lemma = CheckRow::new("determinantal identity", 1e-9);
    let mut green = CheckRow::new("green residual", 1e-7);
    let mut ratio = CheckRow::new("ratio trace", 1e-3);
    for _ in 0..trials {
        let expr = random_expression(m, &mut rng)?;
        let x = rng.gen_range(0.0..5.0);
        let b = concomitant_matrix(&expr, x)?;
        skew.record(b.skew_deviation() / b.b.max_abs());
        // pass when |det| > 0: recorded as 0 (pass) or 1 (fail)
        nonsingular.record(if b.determinant().norm() > 0.0 { 0.0 } else { 1.0 });

        let fam = |rng: &mut ChaCha8Rng| -> Vec<Vec<C64>> {
            (0..=m).map(|_| (0..m).map(|_| random_c64(rng)).collect()).collect()
        };
        let (fs, gs) = (fam(&mut rng), fam(&mut rng));
        let w = crate::bracket::bracket_gram(&expr, &fs, &gs, x)?;
        let det = determinantal_identity_check(&expr, &fs, &gs, x)?;
        let scale = w.max_abs().powi(m as i32 + 1);
        lemma.record(if scale > 0.0 { det / scale } else { det });

        let (f, g) = (random_polynomial(&mut rng, m + 2), random_polynomial(&mut rng, m + 2));
        green.record(green_relative_residual(&expr, &f, &g, 0.0, 5.0, 128)?);
    }
    if trials > 0 {
        // constant-coefficient expression of the same order on [0, 40]
        let expr = if m % 2 == 0 {
            let mut s = vec!["0"; m / 2 + 1];
            s[m / 2] = "1";
            SymmetricExpression::from_strings(m, &s, &[], 0.0)?
        } else {
            let k = m.div_ceil(2);
            let mut q = vec!["0"; k];
            q[k - 1] = "1";
            SymmetricExpression::from_strings(m, &["0"], &q, 0.0)?
        };
        let params = SubspaceParams { integration: IntegrationParams::new(40.0, 64), ..SubspaceParams::default() };
        let (_, r) = ratio_trace_demo(&expr, &params)?;
        let n = r.len();
        let maxima: Vec<f64> = r[n / 2..].chunks(4).map(|c| c.iter().copied().fold(0.0, f64::max)).collect();
        let decreasing = maxima.windows(2).all(|w| w[1] < w[0]);
        ratio.record(if decreasing { r[n - 1] } else { f64::INFINITY });
    }
    Ok(vec![skew, nonsingular, lemma, green, ratio])
}

pub fn cmd_verify(m: usize, seed: u64, trials: usize, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if trials == 0 {
        writeln!(err, "warning: trials = 0, nothing was checked")?;
    }
    let rows = verify_suite(m, seed, trials)?;
    writeln!(out, "{:<24} {:>7} {:>7} {:>12} {:>10}  result", "check", "trials", "passed", "worst", "limit")?;
    for r in &rows {
        writeln!(
            out,
            "{:<24} {:>7} {:>7} {:>12.3e} {:>10.1e}  {}",
            r.name,
            r.trials,
            r.passed,
            r.worst,
            r.limit,
            if r.ok() { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(if rows.iter().all(CheckRow::ok) { EXIT_OK } else { EXIT_FLAGGED })
}
