use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use vbma_core::averaging::{averaged_posterior, classify, model_track, PosteriorTrack};
use vbma_core::benchmark::{run_benchmark, BenchmarkConfig, Selection};
use vbma_core::io::{columns_to_csv, read_json, read_series};
use vbma_core::metrics::{Band, BandSide, BenchmarkReport};
use vbma_core::model::{Gaussian, TransitionBinary};
use vbma_core::simulation::{sample_dataset, theoretical_posterior, SimulationConfig};
use vbma_core::vbem::{fit as fit_model, FitResult, PriorSpec, VbemConfig};
use vbma_core::weights::{
    is_weights, pe_weights, uniform_prior, vb_weights, IsConfig, IsEstimate, WeightKind, WeightVector,
};

use crate::args::{
    AnalyzeArgs, AverageArgs, BenchmarkArgs, FitArgs, PriorArgs, SelectChoice, SideChoice, SimulateArgs, VbemArgs,
    WeightChoice,
};
use crate::{CliError, CliResult, Context};

type Config = serde_json::Value;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// `a..b` (inclusive), `a,b,c`, or a single integer.
pub fn parse_models(spec: &str) -> CliResult<Vec<usize>> {
    let bad = || usage(format!("bad model list {spec:?}; use 1..7, 2,3,5 or 4"));
    let ms: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if ms.is_empty() || ms.contains(&0) {
        return Err(bad());
    }
    let mut sorted = ms.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ms.len() {
        return Err(usage(format!("duplicate model sizes in {spec:?}")));
    }
    Ok(ms)
}

pub fn parse_floats(spec: &str) -> CliResult<Vec<f64>> {
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("not a number list: {spec:?}"))))
        .collect()
}

pub fn parse_pair(spec: &str) -> CliResult<(f64, f64)> {
    match parse_floats(spec)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(usage(format!("expected two comma-separated numbers, got {spec:?}"))),
    }
}

fn parse_null(spec: &str) -> CliResult<Gaussian> {
    let (mean, sd) = parse_pair(spec)?;
    Gaussian::new(mean, sd).map_err(|e| usage(e.to_string()))
}

fn prior_for(p: &PriorArgs, m: usize) -> CliResult<PriorSpec> {
    let (t0, t1) = parse_pair(&p.prior_trans)?;
    let (ga, gb) = parse_pair(&p.prior_gamma)?;
    let prior = PriorSpec {
        dir_row0: [t0, t1],
        dir_row1: [t0, t1],
        dir_props: vec![p.prior_props; m],
        gamma_shape: ga,
        gamma_rate: gb,
        ng_mean: p.prior_mean,
        ng_scale: p.prior_scale,
    };
    prior.validate().map_err(|e| usage(e.to_string()))?;
    Ok(prior)
}

fn vbem_config(v: &VbemArgs, seed: u64) -> VbemConfig {
    VbemConfig { tol: v.tol, max_iter: v.max_iter, restarts: v.restarts, seed }
}

/// Reads a series, optionally taking logs. Nonpositive values under the log
/// are reported by their 1-based position in the series.
pub fn load_series(path: &Path, log_transform: bool) -> CliResult<Vec<f64>> {
    let x = read_series(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if !log_transform {
        return Ok(x);
    }
    let bad: Vec<String> =
        x.iter().enumerate().filter(|(_, &v)| v <= 0.0).map(|(i, v)| format!("{} ({v})", i + 1)).collect();
    if !bad.is_empty() {
        return Err(CliError::Data(format!(
            "log transform needs positive values; offending observations: {}",
            bad.join(", ")
        )));
    }
    Ok(x.iter().map(|v| v.ln()).collect())
}

fn fit_all(
    ctx: &Context,
    x: &[f64],
    ms: &[usize],
    null: &Gaussian,
    prior: &PriorArgs,
    v: &VbemArgs,
) -> CliResult<Vec<FitResult>> {
    let priors = ms.iter().map(|&m| prior_for(prior, m)).collect::<CliResult<Vec<_>>>()?;
    let cfg = vbem_config(v, ctx.seed);
    let fits = ctx.install(|| {
        ms.par_iter()
            .zip(priors.par_iter())
            .map(|(&m, p)| fit_model(x, m, null, p, &cfg))
            .collect::<vbma_core::Result<Vec<_>>>()
    })??;
    Ok(fits)
}

pub fn simulate(ctx: &mut Context, a: &SimulateArgs) -> CliResult<Config> {
    let cfg = SimulationConfig { n: a.n, replicates: a.replicates, c: a.c, u: a.u, l: a.l, seed: ctx.seed };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let width = a.replicates.saturating_sub(1).to_string().len().max(3);
    for r in 0..a.replicates {
        let (x, s) = sample_dataset(&cfg, r)?;
        let truth = theoretical_posterior(&x, &cfg)?;
        let labels: Vec<f64> = s.values.iter().map(|&v| v as f64).collect();
        let stem = format!("replicate_{r:0width$}");
        if ctx.format.csv() {
            let csv = columns_to_csv(&["x", "s_true", "t_theoretical"], &[&x, &labels, &truth.values])?;
            ctx.write_bytes(&format!("{stem}.csv"), csv.as_bytes())?;
        }
        if ctx.format.json() {
            let body = json!({ "replicate": r, "x": x, "s_true": s.values, "t_theoretical": truth.values });
            ctx.write_json(&format!("{stem}.json"), &body)?;
        }
    }
    Ok(json!({ "simulation": cfg, "null": "standard normal (assumed)" }))
}

pub fn fit_cmd_outputs(ctx: &mut Context, fits: &[FitResult]) -> CliResult<()> {
    for f in fits {
        ctx.write_json(&format!("fit_m{}.json", f.m), f)?;
        if ctx.format.csv() {
            let track = model_track(f);
            let csv = columns_to_csv(&["t_null", "q_alt"], &[&track.values, &f.s_marginals])?;
            ctx.write_bytes(&format!("track_m{}.csv", f.m), csv.as_bytes())?;
        }
    }
    Ok(())
}

pub fn fit(ctx: &mut Context, a: &FitArgs) -> CliResult<Config> {
    let x = load_series(&a.data, a.log_transform)?;
    ctx.inputs.push(a.data.clone());
    let ms = parse_models(&a.components)?;
    let null = parse_null(&a.null)?;
    let fits = fit_all(ctx, &x, &ms, &null, &a.prior, &a.vbem)?;
    fit_cmd_outputs(ctx, &fits)?;
    let config = json!({ "args": a, "models": ms, "vbem": vbem_config(&a.vbem, ctx.seed) });
    if a.strict {
        let failed: Vec<usize> = fits.iter().filter(|f| !f.converged).map(|f| f.m).collect();
        if !failed.is_empty() {
            return Err(CliError::Numeric(format!("no convergence for m = {failed:?}")));
        }
    }
    Ok(config)
}

#[derive(Serialize)]
struct KindOutput {
    kind: WeightKind,
    model_ids: Vec<usize>,
    values: Vec<f64>,
    entropy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    is_estimates: Option<Vec<IsEstimate>>,
}

fn write_track(ctx: &mut Context, name: &str, track: &PosteriorTrack, threshold: f64) -> CliResult<()> {
    let labels: Vec<f64> = classify(track, threshold)?.values.iter().map(|&v| v as f64).collect();
    if ctx.format.csv() {
        let csv = columns_to_csv(&["t_averaged", "label"], &[&track.values, &labels])?;
        ctx.write_bytes(&format!("{name}.csv"), csv.as_bytes())?;
    }
    if ctx.format.json() {
        ctx.write_json(&format!("{name}.json"), &json!({ "t_averaged": track.values, "label": labels }))?;
    }
    Ok(())
}

pub fn average(ctx: &mut Context, a: &AverageArgs) -> CliResult<Config> {
    let mut fits: Vec<FitResult> = Vec::with_capacity(a.fits.len());
    for p in &a.fits {
        fits.push(read_json(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?);
        ctx.inputs.push(p.clone());
    }
    let n = fits[0].s_marginals.len();
    if let Some(f) = fits.iter().find(|f| f.s_marginals.len() != n) {
        return Err(CliError::Data(format!("fit m={} has {} points, expected {n}", f.m, f.s_marginals.len())));
    }
    let kinds: Vec<WeightKind> = match a.weights {
        WeightChoice::Vb => vec![WeightKind::Vb],
        WeightChoice::Pe => vec![WeightKind::Pe],
        WeightChoice::Is => vec![WeightKind::Is],
        WeightChoice::All => vec![WeightKind::Vb, WeightKind::Pe, WeightKind::Is],
    };
    let needs_data = kinds.iter().any(|k| *k != WeightKind::Vb);
    let data = match (&a.data, needs_data) {
        (Some(p), true) => {
            ctx.inputs.push(p.clone());
            let x = load_series(p, a.log_transform)?;
            if x.len() != n {
                return Err(CliError::Data(format!("data has {} points but the fits have {n}", x.len())));
            }
            Some(x)
        }
        (None, true) => return Err(usage("PE and IS weights need --data")),
        _ => None,
    };
    let prior = uniform_prior(fits.len());
    let mut out = Vec::new();
    for kind in &kinds {
        let (w, est): (WeightVector, Option<Vec<IsEstimate>>) = match kind {
            WeightKind::Vb => (vb_weights(&fits, &prior)?, None),
            WeightKind::Pe => (pe_weights(&fits, &prior, data.as_deref().expect("checked"))?, None),
            WeightKind::Is => {
                let cfg = IsConfig { samples: a.is_samples, seed: ctx.seed };
                let (w, e) = is_weights(&fits, &prior, data.as_deref().expect("checked"), &cfg)?;
                (w, Some(e))
            }
            WeightKind::Oracle => unreachable!("not selectable"),
        };
        let track = averaged_posterior(&fits, &w)?;
        write_track(ctx, &format!("track_{}", kind.as_str().to_lowercase()), &track, a.threshold)?;
        out.push(KindOutput {
            kind: *kind,
            entropy: w.entropy(),
            model_ids: w.model_ids.clone(),
            values: w.values.clone(),
            is_estimates: est,
        });
    }
    ctx.write_json("weights.json", &out)?;
    Ok(json!({ "args": a }))
}

pub fn benchmark(ctx: &mut Context, a: &BenchmarkArgs) -> CliResult<Config> {
    let cs = parse_floats(&a.c)?;
    let us = parse_floats(&a.u)?;
    let models = parse_models(&a.models)?;
    let (low, high) = parse_pair(&a.band)?;
    let side = match a.band_side {
        SideChoice::Interest => BandSide::Interest,
        SideChoice::Null => BandSide::Null,
    };
    let band = Band::new(low, high, side).map_err(|e| usage(e.to_string()))?;
    let selection = match a.selection {
        SelectChoice::Is => Selection::Is,
        SelectChoice::Vb => Selection::Vb,
    };
    let mut configs = Vec::new();
    for &c in &cs {
        for &u in &us {
            let cfg = BenchmarkConfig {
                sim: SimulationConfig { n: a.n, replicates: a.replicates, c, u, l: a.l, seed: ctx.seed },
                models: models.clone(),
                vbem: vbem_config(&a.vbem, ctx.seed),
                is_samples: a.is_samples,
                band,
                threshold: a.threshold,
                selection,
            };
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            configs.push(cfg);
        }
    }
    let mut reports: Vec<BenchmarkReport> = Vec::new();
    for cfg in &configs {
        let run = ctx.install(|| run_benchmark(cfg))??;
        if !run.failures.is_empty() {
            eprintln!(
                "c={} u={}: {} of {} replicates failed",
                cfg.sim.c,
                cfg.sim.u,
                run.failures.len(),
                cfg.sim.replicates
            );
        }
        if ctx.format.json() {
            ctx.write_json(&format!("run_c{}_u{}.json", cfg.sim.c, cfg.sim.u), &run)?;
        }
        reports.push(run.report);
    }
    if ctx.format.json() {
        ctx.write_json("report.json", &reports)?;
    }
    if ctx.format.csv() {
        let mut csv = String::from("method,c,u,l,metric,value\n");
        for r in &reports {
            for row in r.flat_rows() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.method,
                    row.c,
                    row.u,
                    row.l,
                    row.metric,
                    vbma_core::io::fmt_f64(row.value)
                ));
            }
        }
        ctx.write_bytes("report.csv", csv.as_bytes())?;
    }
    Ok(json!({ "args": a, "configurations": configs }))
}

/// Per-model summary in the analysis report.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct ModelSummary {
    pub m: usize,
    pub elbo: f64,
    pub vb_weight: f64,
    pub transition: TransitionBinary,
    pub means: Vec<f64>,
    pub sd: f64,
    pub props: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub log_transform: bool,
    pub null_mean: f64,
    pub null_sd: f64,
    pub models: Vec<ModelSummary>,
    pub weights: WeightVector,
    /// `sum_m alpha_m * E_Q[Pi_m]`.
    pub weighted_transition: TransitionBinary,
    pub threshold: f64,
    pub fraction_interest: f64,
    pub t_averaged: Vec<f64>,
    pub labels: Vec<usize>,
}

pub fn analyze(ctx: &mut Context, a: &AnalyzeArgs) -> CliResult<Config> {
    if a.max_components == 0 {
        return Err(usage("--max-components must be at least 1"));
    }
    let raw = load_series(&a.data, false)?;
    let x = load_series(&a.data, a.log_transform)?;
    ctx.inputs.push(a.data.clone());
    let null = parse_null(&a.null)?;
    let ms: Vec<usize> = (1..=a.max_components).collect();
    let fits = fit_all(ctx, &x, &ms, &null, &a.prior, &a.vbem)?;
    let w = vb_weights(&fits, &uniform_prior(fits.len()))?;
    let track = averaged_posterior(&fits, &w)?;
    let labels = classify(&track, a.threshold)?;
    let mut wt = [0.0; 4];
    for (f, &alpha) in fits.iter().zip(&w.values) {
        let p = f.point_pi;
        for (acc, v) in wt.iter_mut().zip([p.pi00, p.pi01, p.pi10, p.pi11]) {
            *acc += alpha * v;
        }
    }
    let models = fits
        .iter()
        .zip(&w.values)
        .map(|(f, &alpha)| ModelSummary {
            m: f.m,
            elbo: f.log_evidence_bound,
            vb_weight: alpha,
            transition: f.point_pi,
            means: f.point_alt.means.clone(),
            sd: f.point_alt.variance().sqrt(),
            props: f.point_alt.props.clone(),
            converged: f.converged,
        })
        .collect();
    let report = AnalysisReport {
        n: x.len(),
        log_transform: a.log_transform,
        null_mean: null.mean,
        null_sd: null.sd,
        models,
        weights: w,
        weighted_transition: TransitionBinary { pi00: wt[0], pi01: wt[1], pi10: wt[2], pi11: wt[3] },
        threshold: a.threshold,
        fraction_interest: labels.values.iter().sum::<usize>() as f64 / x.len() as f64,
        t_averaged: track.values.clone(),
        labels: labels.values.clone(),
    };
    if ctx.format.json() {
        ctx.write_json("analysis.json", &report)?;
    }
    if ctx.format.csv() {
        let label_f: Vec<f64> = labels.values.iter().map(|&v| v as f64).collect();
        let csv = if a.log_transform {
            columns_to_csv(&["x", "log_x", "t_averaged", "label"], &[&raw, &x, &track.values, &label_f])?
        } else {
            columns_to_csv(&["x", "t_averaged", "label"], &[&raw, &track.values, &label_f])?
        };
        ctx.write_bytes("analysis.csv", csv.as_bytes())?;
    }
    Ok(json!({ "args": a, "vbem": vbem_config(&a.vbem, ctx.seed) }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_lists() {
        assert_eq!(parse_models("1..6").unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(parse_models("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_models("2,3,5").unwrap(), vec![2, 3, 5]);
        assert_eq!(parse_models("4").unwrap(), vec![4]);
        assert!(parse_models("0..3").is_err());
        assert!(parse_models("2,2").is_err());
        assert!(parse_models("x").is_err());
    }

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("2.37,0.76").unwrap(), (2.37, 0.76));
        assert_eq!(parse_pair("-1, 2").unwrap(), (-1.0, 2.0));
        assert!(parse_pair("1").is_err());
    }
}
