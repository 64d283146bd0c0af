//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or text and returns a JSON string, so the
//! page needs no generated type definitions. The same functions are callable
//! from Rust, which is how they are tested.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use vbma_core::io::parse_series;
use vbma_core::model::{averaged_density_components, averaged_density_ln_pdf, Gaussian};
use vbma_core::simulation::{sample_dataset, theoretical_posterior, true_alternative_logpdf, SimulationConfig};
use vbma_core::weights::{is_weights, pe_weights, uniform_prior, vb_weights, IsConfig};
use vbma_core::{averaged_posterior, classify, fit_collection, FitResult, PriorSpec, VbemConfig, WeightVector};

/// Largest collection the page may request; fits run on the UI thread.
pub const MAX_MODELS: usize = 5;
pub const MAX_POINTS: usize = 2000;

#[derive(Serialize)]
struct Weights {
    model_ids: Vec<usize>,
    vb: Vec<f64>,
    pe: Vec<f64>,
    is: Vec<f64>,
}

#[derive(Serialize)]
struct Tracks {
    vb: Vec<f64>,
    pe: Vec<f64>,
    is: Vec<f64>,
}

#[derive(Serialize)]
struct SimulationView {
    x: Vec<f64>,
    s_true: Vec<usize>,
    t_theoretical: Vec<f64>,
    weights: Weights,
    tracks: Tracks,
    labels_vb: Vec<usize>,
}

#[derive(Serialize)]
struct DensityView {
    grid: Vec<f64>,
    true_alt: Vec<f64>,
    averaged_alt: Vec<f64>,
    null: Vec<f64>,
}

#[derive(Serialize)]
struct AnalysisView {
    n: usize,
    weights: Weights,
    t_averaged: Vec<f64>,
    labels: Vec<usize>,
    fraction_interest: f64,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(err)
}

fn check_models(max_m: usize) -> Result<Vec<usize>, String> {
    if !(1..=MAX_MODELS).contains(&max_m) {
        return Err(format!("max_m must be in 1..={MAX_MODELS}"));
    }
    Ok((1..=max_m).collect())
}

fn fits_for(x: &[f64], max_m: usize, null: &Gaussian, seed: u64) -> Result<Vec<FitResult>, String> {
    let ms = check_models(max_m)?;
    let cfg = VbemConfig { restarts: 3, seed, ..Default::default() };
    fit_collection(x, &ms, null, PriorSpec::default_for, &cfg).map_err(err)
}

fn all_weights(fits: &[FitResult], x: &[f64], is_samples: usize, seed: u64) -> Result<[WeightVector; 3], String> {
    let prior = uniform_prior(fits.len());
    let vb = vb_weights(fits, &prior).map_err(err)?;
    let pe = pe_weights(fits, &prior, x).map_err(err)?;
    let (is, _) = is_weights(fits, &prior, x, &IsConfig { samples: is_samples, seed }).map_err(err)?;
    Ok([vb, pe, is])
}

fn sim_config(n: usize, c: f64, u: f64, l: f64, seed: u64) -> Result<SimulationConfig, String> {
    if n == 0 || n > MAX_POINTS {
        return Err(format!("n must be in 1..={MAX_POINTS}"));
    }
    let cfg = SimulationConfig { n, replicates: 1, c, u, l, seed };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Draws one series, fits models `1..=max_m`, and returns the three averaged
/// posterior tracks next to the theoretical one.
pub fn simulate_and_average(
    n: usize,
    c: f64,
    u: f64,
    l: f64,
    max_m: usize,
    is_samples: usize,
    seed: u64,
) -> Result<String, String> {
    let cfg = sim_config(n, c, u, l, seed)?;
    let (x, s) = sample_dataset(&cfg, 0).map_err(err)?;
    let truth = theoretical_posterior(&x, &cfg).map_err(err)?;
    let fits = fits_for(&x, max_m, &cfg.null(), seed)?;
    let [vb, pe, is] = all_weights(&fits, &x, is_samples, seed)?;
    let track = |w: &WeightVector| averaged_posterior(&fits, w).map_err(err);
    let (t_vb, t_pe, t_is) = (track(&vb)?, track(&pe)?, track(&is)?);
    let labels_vb = classify(&t_vb, 0.5).map_err(err)?.values;
    to_json(&SimulationView {
        x,
        s_true: s.values,
        t_theoretical: truth.values,
        weights: Weights { model_ids: vb.model_ids.clone(), vb: vb.values, pe: pe.values, is: is.values },
        tracks: Tracks { vb: t_vb.values, pe: t_pe.values, is: t_is.values },
        labels_vb,
    })
}

/// True and VB-averaged alternative densities on `points` grid values in
/// `[lo, hi]`, for the same series `simulate_and_average` draws.
#[allow(clippy::too_many_arguments)]
pub fn density_curves(
    n: usize,
    c: f64,
    u: f64,
    l: f64,
    max_m: usize,
    seed: u64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<String, String> {
    if lo.is_nan() || hi.is_nan() || lo >= hi || !(2..=MAX_POINTS).contains(&points) {
        return Err("need lo < hi and 2 <= points <= 2000".into());
    }
    let cfg = sim_config(n, c, u, l, seed)?;
    let (x, _) = sample_dataset(&cfg, 0).map_err(err)?;
    let fits = fits_for(&x, max_m, &cfg.null(), seed)?;
    let vb = vb_weights(&fits, &uniform_prior(fits.len())).map_err(err)?;
    let alts: Vec<_> = fits.iter().map(|f| f.point_alt.clone()).collect();
    let comps = averaged_density_components(&alts, &vb).map_err(err)?;
    let null = cfg.null();
    let grid: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    to_json(&DensityView {
        true_alt: grid.iter().map(|&g| true_alternative_logpdf(g, c).exp()).collect(),
        averaged_alt: grid.iter().map(|&g| averaged_density_ln_pdf(&comps, g).exp()).collect(),
        null: grid.iter().map(|&g| null.ln_pdf(g).exp()).collect(),
        grid,
    })
}

/// Classifies a pasted single-column series against a Gaussian null.
pub fn analyze_text(
    text: &str,
    null_mean: f64,
    null_sd: f64,
    max_m: usize,
    threshold: f64,
    seed: u64,
) -> Result<String, String> {
    let x = parse_series(text).map_err(err)?;
    if x.len() > MAX_POINTS {
        return Err(format!("at most {MAX_POINTS} values"));
    }
    let null = Gaussian::new(null_mean, null_sd).map_err(err)?;
    let fits = fits_for(&x, max_m, &null, seed)?;
    let [vb, pe, is] = all_weights(&fits, &x, 200, seed)?;
    let track = averaged_posterior(&fits, &vb).map_err(err)?;
    let labels = classify(&track, threshold).map_err(err)?.values;
    let fraction_interest = labels.iter().filter(|&&s| s == 1).count() as f64 / labels.len() as f64;
    to_json(&AnalysisView {
        n: x.len(),
        weights: Weights { model_ids: vb.model_ids.clone(), vb: vb.values, pe: pe.values, is: is.values },
        t_averaged: track.values,
        labels,
        fraction_interest,
    })
}

#[wasm_bindgen(js_name = simulateAndAverage)]
pub fn simulate_and_average_js(
    n: usize,
    c: f64,
    u: f64,
    l: f64,
    max_m: usize,
    is_samples: usize,
    seed: u32,
) -> Result<String, JsError> {
    simulate_and_average(n, c, u, l, max_m, is_samples, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = densityCurves)]
#[allow(clippy::too_many_arguments)]
pub fn density_curves_js(
    n: usize,
    c: f64,
    u: f64,
    l: f64,
    max_m: usize,
    seed: u32,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<String, JsError> {
    density_curves(n, c, u, l, max_m, seed.into(), lo, hi, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = analyzeText)]
pub fn analyze_text_js(
    text: &str,
    null_mean: f64,
    null_sd: f64,
    max_m: usize,
    threshold: f64,
    seed: u32,
) -> Result<String, JsError> {
    analyze_text(text, null_mean, null_sd, max_m, threshold, seed.into()).map_err(|e| JsError::new(&e))
}
