//! Aggregation over replicates and the on-disk study layout.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ReplicateResult, SimMode, StudyRun};
use crate::error::{Error, Result};
use crate::estimator::{
    abs_diff_percent, block_partition, block_stats, default_phi, ensemble_variance_identity, mean,
    normality_report, qq_points, sample_mean_sparsity, sample_variance, standardize,
    NormalityReport, NormalityTest, DEFAULT_RHO_STAR,
};
use crate::imagio::write_atomic;
use crate::inference::Hyperparams;

pub const REPLICATES_FILE: &str = "replicates.csv";
pub const REPORT_FILE: &str = "report.json";
pub const QQ_FILE: &str = "qq_points.csv";
pub const BLOCKS_FILE: &str = "block_stats.csv";
/// Per-replicate `E(p_i|o)`, one row per replicate.
pub const P_MEANS_FILE: &str = "p_means.csv";

const REPLICATE_HEADER: &str = "index,seed,s,sum_p,e_hat,kappa,sigma2_m,tau_iid,fitted,log_marginal,newton_iters,evaluations,degenerate,sigma_hat,threshold";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(x: &[f64]) -> Self {
        Self {
            mean: mean(x),
            min: x.iter().copied().fold(f64::INFINITY, f64::min),
            max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    /// Chosen from the lattice when absent.
    pub phi: Option<usize>,
    pub rho_star: usize,
    pub test: NormalityTest,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            phi: None,
            rho_star: DEFAULT_RHO_STAR,
            test: NormalityTest::default(),
        }
    }
}

/// Block moments of the posterior-mean fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub phi: usize,
    pub rho_star: usize,
    pub n_sq: usize,
    pub n_eligible: usize,
    pub ratio_b1: Option<f64>,
    pub ratio_b2: Option<f64>,
    pub sigma2_k: Vec<f64>,
    pub border_var_k: Vec<f64>,
    pub r3_k: Vec<f64>,
    pub clipped: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mode: SimMode,
    pub n1: usize,
    pub n2: usize,
    pub n_pixels: usize,
    pub replicates: usize,
    pub base_seed: u64,
    /// Mean sparsity over replicates.
    pub e_sim: f64,
    pub mean_e_hat: f64,
    pub var_e_hat: Option<f64>,
    pub var_s: Option<f64>,
    pub mean_sum_p: Option<f64>,
    /// `|mean Ê − Ê_sim| · 100 / N`.
    pub bias_percent: f64,
    /// `|Ê_sim − Ê_I| · 100 / N` over replicates.
    pub abs_diff_sim: Range,
    /// `|Ê_I − s_I| · 100 / N` over replicates.
    pub abs_diff_own: Range,
    pub normality: Option<NormalityReport>,
    pub blocks: Option<BlockSummary>,
    /// `[Var Σ, Σ Var + 2 Σ Cov]` of the posterior-mean fields.
    pub variance_identity: Option<[f64; 2]>,
    pub notes: Vec<String>,
}

/// Sequential fold over the replicate table in index order.
pub fn aggregate(
    mode: SimMode,
    n1: usize,
    n2: usize,
    base_seed: u64,
    study: &StudyRun,
    diag: &DiagnosticsOptions,
) -> Result<AggregateReport> {
    let results = &study.results;
    if results.is_empty() {
        return Err(Error::InvalidArgument("no replicates to aggregate".into()));
    }
    let n = n1 * n2;
    if study.p_means.len() != results.len() {
        return Err(Error::DimensionMismatch {
            expected: results.len(),
            got: study.p_means.len(),
        });
    }
    let s: Vec<u64> = results.iter().map(|r| r.s).collect();
    let s_f: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    let e: Vec<f64> = results.iter().map(|r| r.e_hat).collect();
    let e_sim = sample_mean_sparsity(&s)?;
    let mean_e_hat = mean(&e);
    let sim: Vec<f64> = e
        .iter()
        .map(|&x| abs_diff_percent(e_sim, x, n))
        .collect::<Result<_>>()?;
    let own: Vec<f64> = e
        .iter()
        .zip(&s_f)
        .map(|(&x, &si)| abs_diff_percent(x, si, n))
        .collect::<Result<_>>()?;
    let r = results.len();
    let mean_sum_p = if results.iter().all(|x| x.sum_p.is_some()) {
        Some(mean(
            &results.iter().filter_map(|x| x.sum_p).collect::<Vec<_>>(),
        ))
    } else {
        None
    };
    let mut notes = Vec::new();

    let normality = if r >= 3 {
        match standardize(&e).and_then(|z| normality_report(&z, diag.test)) {
            Ok(rep) => Some(rep),
            Err(err) => {
                notes.push(format!("normality test skipped: {err}"));
                None
            }
        }
    } else {
        notes.push("normality test needs at least 3 replicates".into());
        None
    };

    let (blocks, variance_identity) = if r >= 2 {
        let phi = diag
            .phi
            .unwrap_or_else(|| default_phi(n1, n2, diag.rho_star));
        let part = block_partition(n1, n2, phi, diag.rho_star)?;
        let st = block_stats(&part, &study.p_means)?;
        let (lhs, rhs) = ensemble_variance_identity(&study.p_means)?;
        (
            Some(BlockSummary {
                phi,
                rho_star: diag.rho_star,
                n_sq: st.n_sq,
                n_eligible: st.n_eligible,
                ratio_b1: st.ratio_b1,
                ratio_b2: st.ratio_b2,
                sigma2_k: st.sigma2_k,
                border_var_k: st.border_var_k,
                r3_k: st.r3_k,
                clipped: st.clipped,
            }),
            Some([lhs, rhs]),
        )
    } else {
        notes.push("block diagnostics need at least 2 replicates".into());
        (None, None)
    };

    Ok(AggregateReport {
        mode,
        n1,
        n2,
        n_pixels: n,
        replicates: r,
        base_seed,
        e_sim,
        mean_e_hat,
        var_e_hat: (r >= 2).then(|| sample_variance(&e)),
        var_s: (r >= 2).then(|| sample_variance(&s_f)),
        mean_sum_p,
        bias_percent: abs_diff_percent(mean_e_hat, e_sim, n)?,
        abs_diff_sim: Range::of(&sim),
        abs_diff_own: Range::of(&own),
        normality,
        blocks,
        variance_identity,
        notes,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn replicates_csv(results: &[ReplicateResult]) -> String {
    let mut out = String::from(REPLICATE_HEADER);
    out.push('\n');
    for r in results {
        let t = &r.theta_hat;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.seed,
            r.s,
            opt(r.sum_p),
            r.e_hat,
            t.kappa,
            t.sigma2_m,
            t.tau_iid,
            r.fitted,
            r.log_marginal,
            r.newton_iters,
            r.evaluations,
            r.degenerate,
            opt(r.sigma_hat),
            opt(r.threshold)
        );
    }
    out
}

fn field<T: std::str::FromStr>(line: usize, name: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("{REPLICATES_FILE} line {line}: bad {name} `{v}`")))
}

fn opt_field(line: usize, name: &str, v: &str) -> Result<Option<f64>> {
    if v.is_empty() {
        Ok(None)
    } else {
        field(line, name, v).map(Some)
    }
}

pub(crate) fn parse_replicates_csv(text: &str) -> Result<Vec<ReplicateResult>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPLICATE_HEADER) {
        return Err(Error::Parse(format!(
            "{REPLICATES_FILE}: unexpected header"
        )));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let ln = k + 2;
        let v: Vec<&str> = line.split(',').collect();
        if v.len() != 15 {
            return Err(Error::Parse(format!(
                "{REPLICATES_FILE} line {ln}: expected 15 fields, got {}",
                v.len()
            )));
        }
        let theta_hat = Hyperparams::new(
            field(ln, "kappa", v[5])?,
            field(ln, "sigma2_m", v[6])?,
            field(ln, "tau_iid", v[7])?,
        )
        .map_err(|e| Error::Parse(format!("{REPLICATES_FILE} line {ln}: {e}")))?;
        let r = ReplicateResult {
            index: field(ln, "index", v[0])?,
            seed: field(ln, "seed", v[1])?,
            s: field(ln, "s", v[2])?,
            sum_p: opt_field(ln, "sum_p", v[3])?,
            e_hat: field(ln, "e_hat", v[4])?,
            theta_hat,
            fitted: field(ln, "fitted", v[8])?,
            log_marginal: field(ln, "log_marginal", v[9])?,
            newton_iters: field(ln, "newton_iters", v[10])?,
            evaluations: field(ln, "evaluations", v[11])?,
            degenerate: field(ln, "degenerate", v[12])?,
            sigma_hat: opt_field(ln, "sigma_hat", v[13])?,
            threshold: opt_field(ln, "threshold", v[14])?,
            runtime: 0.0,
        };
        if r.index != k {
            return Err(Error::Parse(format!(
                "{REPLICATES_FILE} line {ln}: replicate index {} out of order",
                r.index
            )));
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(Error::Parse(format!("{REPLICATES_FILE} has no rows")));
    }
    Ok(out)
}

fn rows_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn parse_rows(text: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .map(|(k, line)| {
            let row: Vec<f64> = line
                .split(',')
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::Parse(format!("{P_MEANS_FILE} line {}: bad value `{t}`", k + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != width {
                return Err(Error::Parse(format!(
                    "{P_MEANS_FILE} line {}: expected {width} values, got {}",
                    k + 1,
                    row.len()
                )));
            }
            Ok(row)
        })
        .collect()
}

fn qq_csv(report: &AggregateReport) -> Result<String> {
    let mut out = String::from("theoretical,sample\n");
    if let Some(n) = &report.normality {
        for (t, s) in qq_points(&n.standardized)? {
            let _ = writeln!(out, "{t},{s}");
        }
    }
    Ok(out)
}

fn blocks_csv(report: &AggregateReport) -> String {
    let mut out = String::from("square,clipped,sigma2,border_var,r3\n");
    if let Some(b) = &report.blocks {
        for k in 0..b.n_sq {
            let _ = writeln!(
                out,
                "{k},{},{},{},{}",
                b.clipped[k], b.sigma2_k[k], b.border_var_k[k], b.r3_k[k]
            );
        }
    }
    out
}

fn write_diagnostics(dir: &Path, report: &AggregateReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    write_atomic(&dir.join(REPORT_FILE), json.as_bytes())?;
    write_atomic(&dir.join(QQ_FILE), qq_csv(report)?.as_bytes())?;
    write_atomic(&dir.join(BLOCKS_FILE), blocks_csv(report).as_bytes())
}

/// Writes the five study files into `dir`, creating it if needed.
pub fn write_output(dir: &Path, study: &StudyRun, report: &AggregateReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(
        &dir.join(REPLICATES_FILE),
        replicates_csv(&study.results).as_bytes(),
    )?;
    write_atomic(&dir.join(P_MEANS_FILE), rows_csv(&study.p_means).as_bytes())?;
    write_diagnostics(dir, report)
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

/// Reads back a study directory.
pub fn read_output(dir: &Path) -> Result<(StudyRun, AggregateReport)> {
    let report: AggregateReport = serde_json::from_str(&read(dir, REPORT_FILE)?)
        .map_err(|e| Error::Parse(format!("{REPORT_FILE}: {e}")))?;
    let results = parse_replicates_csv(&read(dir, REPLICATES_FILE)?)?;
    let p_means = parse_rows(&read(dir, P_MEANS_FILE)?, report.n_pixels)?;
    if results.len() != report.replicates || p_means.len() != report.replicates {
        return Err(Error::Parse(format!(
            "study directory is inconsistent: {} replicates in the report, {} rows, {} fields",
            report.replicates,
            results.len(),
            p_means.len()
        )));
    }
    Ok((StudyRun { results, p_means }, report))
}

/// Recomputes the report, QQ points and block table of a study directory.
pub fn diagnose_dir(dir: &Path, diag: &DiagnosticsOptions) -> Result<AggregateReport> {
    let (study, old) = read_output(dir)?;
    let report = aggregate(old.mode, old.n1, old.n2, old.base_seed, &study, diag)?;
    write_diagnostics(dir, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(index: usize, s: u64, e_hat: f64) -> ReplicateResult {
        ReplicateResult {
            index,
            seed: 10 + index as u64,
            s,
            sum_p: None,
            e_hat,
            theta_hat: Hyperparams::new(0.5, 1.0, 10.0).unwrap(),
            fitted: false,
            log_marginal: -123.25,
            newton_iters: 6,
            evaluations: 0,
            degenerate: false,
            sigma_hat: Some(0.1),
            threshold: Some(1.0 / 3.0),
            runtime: 0.5,
        }
    }

    #[test]
    fn single_replicate_range_is_a_point() {
        let study = StudyRun {
            results: vec![row(0, 30, 31.5)],
            p_means: vec![vec![0.5; 64]],
        };
        let rep = aggregate(
            SimMode::Pipeline,
            8,
            8,
            10,
            &study,
            &DiagnosticsOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.abs_diff_sim.min, rep.abs_diff_sim.max);
        assert_eq!(rep.abs_diff_sim.mean, rep.abs_diff_sim.max);
        assert!((rep.abs_diff_own.mean - 1.5 * 100.0 / 64.0).abs() < 1e-12);
        assert!(rep.normality.is_none() && rep.blocks.is_none() && rep.var_e_hat.is_none());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows: Vec<ReplicateResult> = (0..5)
            .map(|i| row(i, 20 + i as u64, 20.0 + (i as f64).sqrt() * 0.1 + 1e-13))
            .collect();
        let back = parse_replicates_csv(&replicates_csv(&rows)).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.e_hat.to_bits(), b.e_hat.to_bits());
            assert_eq!(a.threshold, b.threshold);
            assert_eq!(a.index, b.index);
        }
        assert!(parse_replicates_csv("index\n").is_err());
        assert!(parse_replicates_csv(&replicates_csv(&rows).replace(",6,", ",x,")).is_err());
        let fields = vec![vec![0.1, 1e-300, 0.999_999_999_999_9]; 2];
        assert_eq!(parse_rows(&rows_csv(&fields), 3).unwrap(), fields);
        assert!(parse_rows(&rows_csv(&fields), 4).is_err());
    }
}
