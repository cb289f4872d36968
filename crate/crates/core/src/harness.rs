//! Experiment sweeps: generate, sketch, recover, sparsify and evaluate.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::GridImage;
use crate::kmedian::{kmedian, KMedianOptions};
use crate::pipeline::{strict_sparsify, ChainTerms, RowConstants, Scheme, SchemeConfig, StrictBound};
use crate::synth::{generate_parts, GenSpec, ImageKind};

/// Keeps the sketch stream independent of the image stream for equal seeds.
const SKETCH_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// A sweep over schemes and seeds on one image family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub schemes: Vec<Scheme>,
    pub kind: ImageKind,
    pub delta: usize,
    pub k: usize,
    pub eps: f64,
    pub spread: f64,
    pub units: usize,
    pub first_seed: u64,
    pub trials: usize,
    #[serde(default)]
    pub constants: RowConstants,
}

impl RunSpec {
    pub fn new(schemes: Vec<Scheme>, kind: ImageKind, delta: usize, k: usize) -> Self {
        Self {
            schemes,
            kind,
            delta,
            k,
            eps: 1.0,
            spread: 1.0,
            units: 1000,
            first_seed: 0,
            trials: 1,
            constants: RowConstants::default(),
        }
    }

    fn config(&self, scheme: Scheme, seed: u64) -> SchemeConfig {
        SchemeConfig {
            scheme,
            delta: self.delta,
            k: self.k,
            eps: self.eps,
            constants: self.constants,
            seed: seed ^ SKETCH_SEED_MIX,
        }
    }

    fn gen_spec(&self, seed: u64) -> GenSpec {
        GenSpec { kind: self.kind, delta: self.delta, k: self.k, spread: self.spread, units: self.units, seed }
    }
}

/// One trial. Numeric fields are NaN when the trial failed before producing
/// them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub scheme: Scheme,
    pub kind: ImageKind,
    pub delta: usize,
    pub k: usize,
    pub eps: f64,
    pub seed: u64,
    pub rows: usize,
    pub row_bound: f64,
    pub mass: f64,
    /// `‖x − x*‖_EMD`.
    pub emd_error: f64,
    /// Cost of the k-median solution of `x`.
    pub best_k_sparse_emd: f64,
    /// `emd_error / best_k_sparse_emd`; NaN when the denominator is zero.
    pub ratio: f64,
    pub exact: bool,
    /// `‖x − x̂‖_EMD` for the strictly k-sparse output.
    pub strict_emd_error: f64,
    pub strict_ratio: f64,
    pub c_prime: f64,
    pub strict_bound_ok: bool,
    pub embedded_error: f64,
    pub inner_error: f64,
    pub inverse_error: f64,
    pub chain_ok: bool,
    pub inner_support: usize,
    pub iterations: usize,
    pub wall_ms: f64,
    pub success: bool,
    pub error: String,
}

impl RecoveryReport {
    fn failed(spec: &RunSpec, scheme: Scheme, seed: u64, error: String) -> Self {
        let cfg = spec.config(scheme, seed);
        Self {
            scheme,
            kind: spec.kind,
            delta: spec.delta,
            k: spec.k,
            eps: spec.eps,
            seed,
            rows: cfg.rows().unwrap_or(0),
            row_bound: cfg.row_bound().unwrap_or(f64::NAN),
            mass: f64::NAN,
            emd_error: f64::NAN,
            best_k_sparse_emd: f64::NAN,
            ratio: f64::NAN,
            exact: false,
            strict_emd_error: f64::NAN,
            strict_ratio: f64::NAN,
            c_prime: f64::NAN,
            strict_bound_ok: false,
            embedded_error: f64::NAN,
            inner_error: f64::NAN,
            inverse_error: f64::NAN,
            chain_ok: false,
            inner_support: 0,
            iterations: 0,
            wall_ms: 0.0,
            success: false,
            error,
        }
    }
}

/// The image a trial of `spec` with `seed` runs on.
pub fn trial_image(spec: &RunSpec, seed: u64) -> Result<GridImage> {
    Ok(generate_parts(&spec.gen_spec(seed))?.image())
}

/// Runs one trial; errors become a report with `success = false`.
pub fn run_trial(spec: &RunSpec, scheme: Scheme, seed: u64) -> RecoveryReport {
    try_trial(spec, scheme, seed).unwrap_or_else(|e| RecoveryReport::failed(spec, scheme, seed, e.to_string()))
}

fn try_trial(spec: &RunSpec, scheme: Scheme, seed: u64) -> Result<RecoveryReport> {
    let generated = generate_parts(&spec.gen_spec(seed))?;
    let x = generated.image();
    let cfg = spec.config(scheme, seed);

    let start = Instant::now();
    let sketch = cfg.build()?;
    let measurements = sketch.sketch(&x)?;
    let rec = sketch.recover(&measurements)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let opts = KMedianOptions {
        seed,
        warm_start: (!generated.centers.is_empty()).then(|| generated.centers.clone()),
        ..Default::default()
    };
    let best = kmedian(&x, spec.k, &opts)?;
    let x_prime = best.sparse_image(&x);
    let chain = ChainTerms::compute(scheme.embedding(), &x, &rec);
    let hat = strict_sparsify(&rec.image, spec.k, &KMedianOptions { warm_start: None, ..opts })?;
    let bound = StrictBound::measure(&x, &x_prime, best.cost, &rec.image, &hat);
    let exact = best.cost == 0.0;
    let ratio_of = |e: f64| if exact { f64::NAN } else { e / best.cost };
    Ok(RecoveryReport {
        scheme,
        kind: spec.kind,
        delta: spec.delta,
        k: spec.k,
        eps: spec.eps,
        seed,
        rows: sketch.rows(),
        row_bound: cfg.row_bound()?,
        mass: x.mass(),
        emd_error: chain.emd_error,
        best_k_sparse_emd: best.cost,
        ratio: ratio_of(chain.emd_error),
        exact,
        strict_emd_error: bound.lhs,
        strict_ratio: ratio_of(bound.lhs),
        c_prime: bound.c_prime,
        strict_bound_ok: bound.holds(),
        embedded_error: chain.embedded_error,
        inner_error: chain.inner_error,
        inverse_error: chain.inverse_error,
        chain_ok: chain.holds(),
        inner_support: rec.inner_support,
        iterations: rec.iterations,
        wall_ms,
        success: true,
        error: String::new(),
    })
}

/// All trials of `spec`, grouped by scheme and ordered by seed.
pub fn run(spec: &RunSpec) -> Vec<RecoveryReport> {
    let jobs: Vec<(Scheme, u64)> = spec
        .schemes
        .iter()
        .flat_map(|&s| (0..spec.trials as u64).map(move |i| (s, spec.first_seed + i)))
        .collect();
    jobs.par_iter().map(|&(scheme, seed)| run_trial(spec, scheme, seed)).collect()
}

pub const CSV_HEADER: &str = "scheme,kind,delta,k,eps,seed,rows,row_bound,mass,emd_error,best_k_sparse_emd,ratio,ratio_flag,\
strict_emd_error,strict_ratio,c_prime,strict_bound_ok,embedded_error,inner_error,inverse_error,chain_ok,\
inner_support,iterations,wall_ms,success,error";

/// `v` with 9 significant digits; empty for NaN.
pub fn format_sig9(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    if v == 0.0 {
        return "0".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl RecoveryReport {
    pub fn csv_row(&self) -> String {
        let f = format_sig9;
        [
            self.scheme.to_string(),
            self.kind.to_string(),
            self.delta.to_string(),
            self.k.to_string(),
            f(self.eps),
            self.seed.to_string(),
            self.rows.to_string(),
            f(self.row_bound),
            f(self.mass),
            f(self.emd_error),
            f(self.best_k_sparse_emd),
            f(self.ratio),
            if !self.success { "failed" } else if self.exact { "exact" } else { "measured" }.to_string(),
            f(self.strict_emd_error),
            f(self.strict_ratio),
            f(self.c_prime),
            self.strict_bound_ok.to_string(),
            f(self.embedded_error),
            f(self.inner_error),
            f(self.inverse_error),
            self.chain_ok.to_string(),
            self.inner_support.to_string(),
            self.iterations.to_string(),
            f(self.wall_ms),
            self.success.to_string(),
            csv_field(&self.error),
        ]
        .join(",")
    }
}

pub fn write_csv<W: Write>(mut w: W, reports: &[RecoveryReport]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Per-scheme summary of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub trials: usize,
    pub successes: usize,
    pub exact: usize,
    pub median_ratio: f64,
    pub p90_ratio: f64,
    pub median_strict_ratio: f64,
    pub median_rows: f64,
    pub chain_violations: usize,
    pub strict_bound_violations: usize,
    pub median_wall_ms: f64,
}

/// Nearest-rank percentile of the finite values, NaN if there are none.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn aggregate(reports: &[RecoveryReport]) -> Vec<SchemeSummary> {
    let mut schemes: Vec<Scheme> = Vec::new();
    for r in reports {
        if !schemes.contains(&r.scheme) {
            schemes.push(r.scheme);
        }
    }
    schemes
        .into_iter()
        .map(|scheme| {
            let rs: Vec<&RecoveryReport> = reports.iter().filter(|r| r.scheme == scheme).collect();
            let ok: Vec<&&RecoveryReport> = rs.iter().filter(|r| r.success).collect();
            let col = |f: fn(&RecoveryReport) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let ratios = col(|r| r.ratio);
            SchemeSummary {
                scheme,
                trials: rs.len(),
                successes: ok.len(),
                exact: ok.iter().filter(|r| r.exact).count(),
                median_ratio: percentile(&ratios, 50.0),
                p90_ratio: percentile(&ratios, 90.0),
                median_strict_ratio: percentile(&col(|r| r.strict_ratio), 50.0),
                median_rows: percentile(&col(|r| r.rows as f64), 50.0),
                chain_violations: ok.iter().filter(|r| !r.chain_ok).count(),
                strict_bound_violations: ok.iter().filter(|r| !r.strict_bound_ok).count(),
                median_wall_ms: percentile(&col(|r| r.wall_ms), 50.0),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "scheme,trials,successes,exact,median_ratio,p90_ratio,median_strict_ratio,\
median_rows,chain_violations,strict_bound_violations,median_wall_ms";

pub fn write_summary_csv<W: Write>(mut w: W, summaries: &[SchemeSummary]) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for s in summaries {
        let f = format_sig9;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.scheme,
            s.trials,
            s.successes,
            s.exact,
            f(s.median_ratio),
            f(s.p90_ratio),
            f(s.median_strict_ratio),
            f(s.median_rows),
            s.chain_violations,
            s.strict_bound_violations,
            f(s.median_wall_ms)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456.789012), "123456.789");
        assert_eq!(format_sig9(-2.5), "-2.5");
        assert_eq!(format_sig9(1.5e-9), "1.50000000e-9");
        assert_eq!(format_sig9(f64::NAN), "");
    }

    #[test]
    fn percentiles() {
        let v = [5.0, 1.0, 3.0, f64::NAN, 2.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 90.0), 5.0);
        assert!(percentile(&[], 50.0).is_nan());
    }

    #[test]
    fn single_sparse_trial_is_exact() {
        let mut spec = RunSpec::new(vec![Scheme::PyramidDense], ImageKind::Clusters, 8, 1);
        spec.spread = 0.0;
        let rows = run(&spec);
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!(r.success && r.exact, "{r:?}");
        assert!(r.csv_row().contains(",exact,"));
        assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
    }

    #[test]
    fn sweeps_are_deterministic_and_ordered() {
        let mut spec = RunSpec::new(vec![Scheme::PyramidTreeCosamp, Scheme::PyramidRandomized], ImageKind::ClustersPlusNoise, 16, 2);
        spec.trials = 4;
        let strip = |mut v: Vec<RecoveryReport>| {
            v.iter_mut().for_each(|r| r.wall_ms = 0.0);
            v
        };
        let a = strip(run(&spec));
        let b = strip(run(&spec));
        let csv = |v: &[RecoveryReport]| v.iter().map(RecoveryReport::csv_row).collect::<Vec<_>>();
        assert_eq!(csv(&a), csv(&b));
        let order: Vec<(Scheme, u64)> = a.iter().map(|r| (r.scheme, r.seed)).collect();
        assert_eq!(order[0], (Scheme::PyramidTreeCosamp, 0));
        assert_eq!(order[7], (Scheme::PyramidRandomized, 3));
        let summary = aggregate(&a);
        assert_eq!(summary.len(), 2);
        assert_eq!(summary[0].trials, 4);
    }

    #[test]
    fn failures_become_rows() {
        let spec = RunSpec::new(vec![Scheme::PyramidDense], ImageKind::Clusters, 8, 40);
        let r = run_trial(&spec, Scheme::PyramidDense, 0);
        assert!(!r.success);
        assert!(r.csv_row().contains(",failed,"));
    }
}
