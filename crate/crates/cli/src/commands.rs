use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use gcgnet::checkpoint::{load_checkpoint, save_checkpoint, AnyModel, Channels, Checkpoint};
use gcgnet::data::{
    fit_apply_scaler, make_windows, mask_window, split, synth_generate, Dataset, MaskSpec, ScalerStats,
    SeriesWindow, SynthSpec,
};
use gcgnet::gradcheck::{check_model, DEFAULT_STEP};
use gcgnet::model::{GcgNet, ModelConfig, Variant};
use gcgnet::tensor::Tensor;
use gcgnet::train::{evaluate_in_units, train, Forecaster, Metrics};
use serde::{Deserialize, Serialize};

use crate::config::{read_toml, usage, write_toml, RunConfig};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOL: f64 = 1e-3;

/// Forecasts with the future-exogenous branch optionally forced off.
struct Regime<'a> {
    model: &'a AnyModel,
    future_exo: bool,
}

impl Forecaster for Regime<'_> {
    fn predict(&self, w: &SeriesWindow) -> gcgnet::Result<Tensor> {
        match self.model {
            AnyModel::Gcgnet(m) if !self.future_exo => m.predict_with(w, Some(false)),
            AnyModel::Fusion(m) => m.fusion_forecast(w, self.future_exo),
            other => other.predict(w),
        }
    }
}

fn uses_future_exo(model: &AnyModel) -> bool {
    match model {
        AnyModel::Gcgnet(m) => m.config().future_exo_available,
        AnyModel::Linear(_) => false,
        AnyModel::Fusion(_) => true,
    }
}

#[derive(Serialize)]
struct MaskedMetrics {
    mask: String,
    #[serde(flatten)]
    metrics: Metrics,
}

#[derive(Serialize)]
struct Report {
    model: String,
    variant: Option<String>,
    future_exo: bool,
    units: &'static str,
    val: Metrics,
    test: Metrics,
    masked: Vec<MaskedMetrics>,
}

struct Prepared {
    train: Vec<SeriesWindow>,
    val: Vec<SeriesWindow>,
    test: Vec<SeriesWindow>,
    scaler: ScalerStats,
    channels: Channels,
}

/// Splits, standardizes with `scaler` (fitted on train when `None`) and
/// windows the data.
fn prepare(cfg: &RunConfig, ds: &Dataset, scaler: Option<ScalerStats>) -> anyhow::Result<Prepared> {
    let (_, _, lookback, horizon) = cfg.model.dims();
    let (tr, va, te) = split(ds, cfg.data.split)?;
    let (tr, va, te, scaler) = match scaler {
        Some(s) => (s.apply(&tr)?, s.apply(&va)?, s.apply(&te)?, s),
        None if cfg.data.standardize => {
            let (tr, rest, s) = fit_apply_scaler(&tr, &[&va, &te])?;
            let [va, te]: [Dataset; 2] = rest.try_into().expect("two splits");
            (tr, va, te, s)
        }
        None => (tr, va, te, ScalerStats::identity(ds.n_endo(), ds.n_exo())),
    };
    Ok(Prepared {
        train: make_windows(&tr, lookback, horizon, cfg.data.stride)?,
        val: make_windows(&va, lookback, horizon, 1)?,
        test: make_windows(&te, lookback, horizon, 1)?,
        scaler,
        channels: Channels {
            endo: ds.endo_names.clone(),
            exo: ds.exo_names.clone(),
        },
    })
}

fn report(
    model: &AnyModel,
    data: &Prepared,
    future_exo: bool,
    masks: &[MaskSpec],
    original_units: bool,
) -> anyhow::Result<Report> {
    let f = Regime { model, future_exo };
    let units = original_units.then_some(&data.scaler);
    let mut masked = Vec::new();
    for m in masks {
        let windows: Vec<SeriesWindow> = data.test.iter().map(|w| mask_window(w, m)).collect();
        masked.push(MaskedMetrics {
            mask: m.to_string(),
            metrics: evaluate_in_units(&f, &windows, units)?,
        });
    }
    Ok(Report {
        model: model.spec().kind().to_string(),
        variant: match model {
            AnyModel::Gcgnet(m) => Some(m.config().variant.to_string()),
            _ => None,
        },
        future_exo,
        units: if original_units { "original" } else { "standardized" },
        val: evaluate_in_units(&f, &data.val, units)?,
        test: evaluate_in_units(&f, &data.test, units)?,
        masked,
    })
}

fn print_report(r: &Report) {
    println!(
        "{} ({}): val mse {:.6} mae {:.6} | test mse {:.6} mae {:.6} over {} windows",
        r.model, r.units, r.val.mse, r.val.mae, r.test.mse, r.test.mae, r.test.window_count
    );
    for m in &r.masked {
        println!("  mask {}: test mse {:.6} mae {:.6}", m.mask, m.metrics.mse, m.metrics.mae);
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn forecast_csv(names: &[String], y: &Tensor, horizon: usize) -> String {
    let mut out = String::from("channel");
    for h in 1..=horizon {
        out.push_str(&format!(",h{h}"));
    }
    out.push('\n');
    for (name, row) in names.iter().zip(y.to_rows()) {
        out.push_str(name);
        for v in &row[..horizon] {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn train_cmd(config: &Path, out: Option<PathBuf>, variant: Option<Variant>) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    if variant.is_some() {
        cfg.experiment.variant = variant;
    }
    let ds = cfg.resolve()?;
    cfg.train.validate()?;
    let data = prepare(&cfg, &ds, None)?;
    create_dir(&cfg.output_dir)?;
    write_toml(&cfg, &cfg.output_dir.join("resolved_config.toml"))?;

    let mut model = AnyModel::build(&cfg.model, cfg.train.seed)?;
    let history = train(&mut model, &data.train, &data.val, &cfg.train)?;
    let dir = &cfg.output_dir;
    std::fs::write(dir.join("history.csv"), history.to_csv()).context("cannot write history.csv")?;

    let future_exo = cfg.experiment.future_exo && uses_future_exo(&model);
    let r = report(&model, &data, future_exo, &cfg.masks()?, cfg.experiment.original_units)?;
    write_toml(&r, &dir.join("metrics.txt"))?;

    let last = data.test.last().expect("make_windows never returns an empty list");
    let y = data.scaler.invert_endo(&Regime { model: &model, future_exo }.predict(last)?);
    std::fs::write(dir.join("forecast.csv"), forecast_csv(&data.channels.endo, &y, y.cols()))
        .context("cannot write forecast.csv")?;

    let ckpt = Checkpoint {
        model,
        scaler: data.scaler,
        channels: data.channels,
        history,
    };
    save_checkpoint(&ckpt, dir.join("checkpoint.gcgn"))?;
    println!(
        "trained {} epochs, best epoch {} (val mse {:.6})",
        ckpt.history.epochs.len(),
        ckpt.history.best_epoch,
        ckpt.history.best_val_mse
    );
    print_report(&r);
    println!("wrote {}", dir.display());
    Ok(())
}

pub struct EvalArgs {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub no_future_exo: bool,
    pub masks: Vec<MaskSpec>,
    pub out: Option<PathBuf>,
}

pub fn eval_cmd(args: EvalArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = cfg.data.load()?;
    let (n, d, _, _) = ckpt.model.spec().dims();
    if (n, d) != (ds.n_endo(), ds.n_exo()) {
        return Err(usage(format!(
            "checkpoint expects {n} endogenous + {d} exogenous channels, data has {} + {}",
            ds.n_endo(),
            ds.n_exo()
        )));
    }
    cfg.model = ckpt.model.spec();
    let data = prepare(&cfg, &ds, Some(ckpt.scaler.clone()))?;
    let masks = if args.masks.is_empty() { cfg.masks()? } else { args.masks };
    let future_exo = !args.no_future_exo && uses_future_exo(&ckpt.model);
    let r = report(&ckpt.model, &data, future_exo, &masks, cfg.experiment.original_units)?;
    print_report(&r);
    if let Some(dir) = args.out {
        create_dir(&dir)?;
        cfg.output_dir = dir.clone();
        cfg.experiment.future_exo = future_exo;
        cfg.experiment.masks = masks.iter().map(ToString::to_string).collect();
        write_toml(&cfg, &dir.join("resolved_config.toml"))?;
        write_toml(&r, &dir.join("metrics.txt"))?;
    }
    Ok(())
}

pub struct ForecastArgs {
    pub checkpoint: PathBuf,
    pub csv: PathBuf,
    pub horizon: Option<usize>,
    pub no_future_exo: bool,
    pub out: Option<PathBuf>,
}

/// Forecasts past the last history row. With future exogenous inputs the
/// final `horizon` rows supply them and their endogenous cells are ignored.
pub fn forecast_cmd(args: ForecastArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    if ckpt.channels.endo.is_empty() {
        return Err(usage("checkpoint does not record its column names"));
    }
    let (_, _, lookback, horizon) = ckpt.model.spec().dims();
    let keep = args.horizon.unwrap_or(horizon);
    if keep == 0 || keep > horizon {
        return Err(usage(format!("--horizon must be in 1..={horizon}")));
    }
    let raw = gcgnet::data::load_csv(&args.csv, &ckpt.channels.endo, &ckpt.channels.exo)?;
    let ds = ckpt.scaler.apply(&raw)?;
    let future_exo = !args.no_future_exo && uses_future_exo(&ckpt.model);
    let window = if future_exo {
        if ds.len() < lookback + horizon {
            return Err(usage(format!(
                "need {lookback} history rows plus {horizon} rows of future exogenous values, got {}",
                ds.len()
            )));
        }
        SeriesWindow::from_dataset(&ds, ds.len() - lookback - horizon, lookback, horizon)?
    } else {
        if ds.len() < lookback {
            return Err(usage(format!("need {lookback} history rows, got {}", ds.len())));
        }
        let pad = |cols: &[Vec<f64>]| {
            cols.iter()
                .map(|c| c[c.len() - lookback..].iter().copied().chain(std::iter::repeat(0.0).take(horizon)).collect())
                .collect()
        };
        let tail = Dataset::new(ds.endo_names.clone(), pad(&ds.endo), ds.exo_names.clone(), pad(&ds.exo))?;
        SeriesWindow::from_dataset(&tail, 0, lookback, horizon)?
    };
    let y = ckpt.scaler.invert_endo(&Regime { model: &ckpt.model, future_exo }.predict(&window)?);
    let text = forecast_csv(&ckpt.channels.endo, &y, keep);
    match args.out {
        Some(path) => std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthRecord {
    seed: u64,
    spec: SynthSpec,
}

pub fn synth_cmd(spec: Option<PathBuf>, seed: u64, out: &Path) -> anyhow::Result<()> {
    let spec: SynthSpec = match spec {
        Some(p) => read_toml(&p)?,
        None => SynthSpec::default(),
    };
    let syn = synth_generate(&spec, seed)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let file = std::fs::File::create(out).with_context(|| format!("cannot write {}", out.display()))?;
    syn.dataset.write_csv(std::io::BufWriter::new(file))?;
    let record_path = out.with_extension("synth.toml");
    write_toml(&SynthRecord { seed, spec }, &record_path)?;
    println!(
        "wrote {} rows to {} (spec in {}; noise-floor mse {})",
        syn.dataset.len(),
        out.display(),
        record_path.display(),
        syn.optimal_mse
    );
    Ok(())
}

pub fn micro_config() -> ModelConfig {
    ModelConfig {
        n_endo: 1,
        n_exo: 1,
        lookback: 8,
        horizon: 4,
        patch_len: 4,
        d_model: 4,
        latent_gen: 2,
        latent_graph: 2,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of every parameter for every variant of the
/// model; returns the largest relative error.
pub fn gradcheck_cmd(config: Option<PathBuf>, seed: u64, step: Option<f64>) -> anyhow::Result<f64> {
    let base: ModelConfig = match config {
        Some(p) => read_toml(&p)?,
        None => micro_config(),
    };
    base.validate()?;
    let spec = SynthSpec {
        length: base.lookback + base.horizon,
        coupling: vec![1.0; base.n_exo],
        ..SynthSpec::default()
    };
    let syn = synth_generate(&spec, seed)?.dataset;
    let endo = vec![syn.endo[0].clone(); base.n_endo];
    let names = (0..base.n_endo).map(|i| format!("y{i}")).collect();
    let ds = Dataset::new(names, endo, syn.exo_names.clone(), syn.exo.clone())?;
    let window = SeriesWindow::from_dataset(&ds, 0, base.lookback, base.horizon)?;

    let mut worst: f64 = 0.0;
    for variant in [Variant::Full, Variant::A, Variant::B, Variant::C, Variant::D] {
        let model = GcgNet::new(
            ModelConfig {
                variant,
                ..base.clone()
            },
            seed,
        )?;
        let r = check_model(&model, &window, seed, step.unwrap_or(DEFAULT_STEP), 1)?;
        println!(
            "variant {variant}: {} entries, max relative error {:.3e} ({}[{}])",
            r.checked, r.max_relative_error, r.worst_param, r.worst_index
        );
        worst = worst.max(r.max_relative_error);
    }
    println!("max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:e})");
    Ok(worst)
}
