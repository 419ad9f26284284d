//! Dataset ingestion, chronological splits, sliding windows, standardization,
//! exogenous masking and the synthetic benchmark generator.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Column-oriented multivariate series with named endogenous and exogenous
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub timestamps: Option<Vec<String>>,
    pub endo_names: Vec<String>,
    pub exo_names: Vec<String>,
    pub endo: Vec<Vec<f64>>,
    pub exo: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        endo_names: Vec<String>,
        endo: Vec<Vec<f64>>,
        exo_names: Vec<String>,
        exo: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let ds = Self {
            timestamps: None,
            endo_names,
            exo_names,
            endo,
            exo,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.endo_names.len() != self.endo.len() || self.exo_names.len() != self.exo.len() {
            return Err(Error::Config("channel names and columns disagree".into()));
        }
        if self.endo.is_empty() {
            return Err(Error::Config("at least one endogenous channel is required".into()));
        }
        if let Some(dup) = self.endo_names.iter().find(|n| self.exo_names.contains(n)) {
            return Err(Error::Config(format!("{dup:?} is both endogenous and exogenous")));
        }
        let len = self.len();
        if self.endo.iter().chain(&self.exo).any(|c| c.len() != len) {
            return Err(Error::Config("columns have unequal length".into()));
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != len {
                return Err(Error::Config("timestamp column length differs".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.endo.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_endo(&self) -> usize {
        self.endo.len()
    }

    pub fn n_exo(&self) -> usize {
        self.exo.len()
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let cut = |cols: &[Vec<f64>]| cols.iter().map(|c| c[start..end].to_vec()).collect();
        Dataset {
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
            endo_names: self.endo_names.clone(),
            exo_names: self.exo_names.clone(),
            endo: cut(&self.endo),
            exo: cut(&self.exo),
        }
    }

    /// Writes `t` (timestamps or row index), exogenous then endogenous columns.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.exo_names.iter().cloned());
        header.extend(self.endo_names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec = vec![match &self.timestamps {
                Some(ts) => ts[r].clone(),
                None => r.to_string(),
            }];
            rec.extend(self.exo.iter().chain(&self.endo).map(|c| format!("{:?}", c[r])));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Reads a header-first CSV. The first column is kept as timestamps when it
/// is not one of the requested channels. Row numbers in errors count data
/// rows from 1.
pub fn load_csv(path: impl AsRef<Path>, endo: &[String], exo: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, endo, exo)
}

pub fn read_csv<R: io::Read>(input: R, endo: &[String], exo: &[String]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyDataset);
    }
    let locate = |name: &String| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))
    };
    let endo_idx = endo.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let exo_idx = exo.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let ts_col = (!endo_idx.contains(&0) && !exo_idx.contains(&0)).then_some(0);

    let mut endo_cols = vec![Vec::new(); endo.len()];
    let mut exo_cols = vec![Vec::new(); exo.len()];
    let mut timestamps = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let parse = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: header[col].clone(),
                    value: raw.to_string(),
                }),
            }
        };
        for (dst, &col) in endo_cols.iter_mut().zip(&endo_idx) {
            dst.push(parse(col)?);
        }
        for (dst, &col) in exo_cols.iter_mut().zip(&exo_idx) {
            dst.push(parse(col)?);
        }
        if let Some(c) = ts_col {
            timestamps.push(record.get(c).unwrap_or("").to_string());
        }
    }
    if endo_cols.first().map_or(true, Vec::is_empty) {
        return Err(Error::EmptyDataset);
    }
    let mut ds = Dataset::new(endo.to_vec(), endo_cols, exo.to_vec(), exo_cols)?;
    ds.timestamps = ts_col.map(|_| timestamps);
    Ok(ds)
}

/// Chronological split at `floor(len · cumulative_ratio)`.
pub fn split(ds: &Dataset, ratios: [f64; 3]) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Split(format!("ratios must be non-negative, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios sum to {total}, not 1")));
    }
    let len = ds.len();
    // The 1e-9 nudge keeps e.g. 100·(0.7+0.1) from flooring to 79.
    let cut = |c: f64| (((len as f64) * c + 1e-9).floor() as usize).min(len);
    let b1 = cut(ratios[0]);
    let b2 = cut(ratios[0] + ratios[1]);
    for (name, size) in [("train", b1), ("val", b2 - b1), ("test", len - b2)] {
        if size == 0 {
            return Err(Error::Split(format!("empty {name} partition")));
        }
    }
    Ok((ds.slice(0, b1), ds.slice(b1, b2), ds.slice(b2, len)))
}

/// One forecasting sample. Rows are channels, columns time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesWindow {
    pub x_endo: Tensor,
    pub x_exo: Tensor,
    pub y_exo: Tensor,
    pub y_endo: Tensor,
    pub origin_index: usize,
}

impl SeriesWindow {
    pub fn from_dataset(ds: &Dataset, origin: usize, lookback: usize, horizon: usize) -> Result<Self> {
        let needed = origin + lookback + horizon;
        if needed > ds.len() {
            return Err(Error::SeriesTooShort {
                length: ds.len(),
                needed,
            });
        }
        let block = |cols: &[Vec<f64>], start: usize, len: usize| {
            let rows: Vec<Vec<f64>> = cols.iter().map(|c| c[start..start + len].to_vec()).collect();
            if rows.is_empty() {
                Tensor::zeros(&[0, len])
            } else {
                Tensor::from_rows(&rows).expect("equal-length columns")
            }
        };
        let split = origin + lookback;
        Ok(Self {
            x_endo: block(&ds.endo, origin, lookback),
            x_exo: block(&ds.exo, origin, lookback),
            y_exo: block(&ds.exo, split, horizon),
            y_endo: block(&ds.endo, split, horizon),
            origin_index: origin,
        })
    }

    pub fn lookback(&self) -> usize {
        self.x_endo.cols()
    }

    pub fn horizon(&self) -> usize {
        self.y_endo.cols()
    }
}

pub fn window_count(length: usize, lookback: usize, horizon: usize, stride: usize) -> usize {
    if length < lookback + horizon || stride == 0 {
        0
    } else {
        (length - lookback - horizon) / stride + 1
    }
}

/// Every window at origins `0, stride, 2·stride, …`; none are dropped.
pub fn make_windows(ds: &Dataset, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<SeriesWindow>> {
    if stride == 0 {
        return Err(Error::Config("window stride must be ≥ 1".into()));
    }
    if ds.len() < lookback + horizon {
        return Err(Error::SeriesTooShort {
            length: ds.len(),
            needed: lookback + horizon,
        });
    }
    (0..window_count(ds.len(), lookback, horizon, stride))
        .map(|i| SeriesWindow::from_dataset(ds, i * stride, lookback, horizon))
        .collect()
}

pub const SCALER_STD_FLOOR: f64 = 1e-8;

/// Per-channel train-split statistics (population std).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub endo_mean: Vec<f64>,
    pub endo_std: Vec<f64>,
    pub exo_mean: Vec<f64>,
    pub exo_std: Vec<f64>,
}

fn mean_std(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let m = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt().max(SCALER_STD_FLOOR))
}

impl ScalerStats {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (endo_mean, endo_std) = train.endo.iter().map(|c| mean_std(c)).unzip();
        let (exo_mean, exo_std) = train.exo.iter().map(|c| mean_std(c)).unzip();
        Ok(Self {
            endo_mean,
            endo_std,
            exo_mean,
            exo_std,
        })
    }

    /// Identity statistics (mean 0, std 1).
    pub fn identity(n_endo: usize, n_exo: usize) -> Self {
        Self {
            endo_mean: vec![0.0; n_endo],
            endo_std: vec![1.0; n_endo],
            exo_mean: vec![0.0; n_exo],
            exo_std: vec![1.0; n_exo],
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_endo() != self.endo_mean.len() || ds.n_exo() != self.exo_mean.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {}+{} channels, dataset has {}+{}",
                self.endo_mean.len(),
                self.exo_mean.len(),
                ds.n_endo(),
                ds.n_exo()
            )));
        }
        let scale = |cols: &[Vec<f64>], mean: &[f64], std: &[f64]| {
            cols.iter()
                .enumerate()
                .map(|(i, c)| c.iter().map(|v| (v - mean[i]) / std[i]).collect())
                .collect()
        };
        Ok(Dataset {
            endo: scale(&ds.endo, &self.endo_mean, &self.endo_std),
            exo: scale(&ds.exo, &self.exo_mean, &self.exo_std),
            ..ds.clone()
        })
    }

    /// Maps standardized endogenous rows (`N×F`) back to original units.
    pub fn invert_endo(&self, y: &Tensor) -> Tensor {
        let cols = y.cols();
        let mut out = y.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let c = k / cols;
            *v = *v * self.endo_std[c] + self.endo_mean[c];
        }
        out
    }
}

/// Standardizes `train` and every dataset in `others` with train statistics.
pub fn fit_apply_scaler(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, ScalerStats)> {
    let stats = ScalerStats::fit(train)?;
    let train_s = stats.apply(train)?;
    let rest = others.iter().map(|d| stats.apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((train_s, rest, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Zeros,
    RandomNormal,
}

/// Replaces a fraction of exogenous entries in each window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub ratio: f64,
    pub seed: u64,
    /// Also mask the future exogenous block.
    #[serde(default = "default_true")]
    pub include_future: bool,
}

fn default_true() -> bool {
    true
}

impl MaskSpec {
    pub fn new(kind: MaskKind, ratio: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            kind,
            ratio,
            seed,
            include_future: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("mask ratio {} not in [0, 1)", self.ratio)));
        }
        Ok(())
    }
}

/// `kind:ratio:seed`, e.g. `zeros:0.3:1` or `random:0.1:7`.
impl FromStr for MaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [kind, ratio, seed] = parts.as_slice() else {
            return Err(Error::Config(format!("mask {s:?} is not kind:ratio:seed")));
        };
        let kind = match *kind {
            "zeros" => MaskKind::Zeros,
            "random" | "random_normal" => MaskKind::RandomNormal,
            other => return Err(Error::Config(format!("unknown mask kind {other:?}"))),
        };
        let ratio = ratio
            .parse()
            .map_err(|_| Error::Config(format!("bad mask ratio {ratio:?}")))?;
        let seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("bad mask seed {seed:?}")))?;
        Self::new(kind, ratio, seed)
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MaskKind::Zeros => "zeros",
            MaskKind::RandomNormal => "random",
        };
        write!(f, "{kind}:{}:{}", self.ratio, self.seed)
    }
}

/// Masks exactly `round(ratio · count)` exogenous entries chosen uniformly
/// without replacement. Endogenous blocks are untouched.
pub fn inject_mask<R: rand::Rng + ?Sized>(window: &SeriesWindow, spec: &MaskSpec, rng: &mut R) -> SeriesWindow {
    let mut out = window.clone();
    let n_hist = out.x_exo.numel();
    let count = n_hist + if spec.include_future { out.y_exo.numel() } else { 0 };
    let n_mask = (spec.ratio * count as f64).round() as usize;
    if n_mask == 0 {
        return out;
    }
    for pos in index::sample(rng, count, n_mask.min(count)).into_vec() {
        let value = match spec.kind {
            MaskKind::Zeros => 0.0,
            MaskKind::RandomNormal => StandardNormal.sample(rng),
        };
        if pos < n_hist {
            out.x_exo.data_mut()[pos] = value;
        } else {
            out.y_exo.data_mut()[pos - n_hist] = value;
        }
    }
    out
}

/// Applies `spec` with a stream derived from `(spec.seed, origin_index)`.
pub fn mask_window(window: &SeriesWindow, spec: &MaskSpec) -> SeriesWindow {
    let mut rng = seeded(spec.seed, &[window.origin_index as u64]);
    inject_mask(window, spec, &mut rng)
}

/// Parameters of the synthetic benchmark.
///
/// Exogenous channel `j` is an AR(1) process plus a sinusoid of period
/// `exo_periods[j]`; the endogenous series is
/// `y_t = Σ_j coupling[j]·x_{j,t} + season_amplitude·sin(2πt/period) + ε_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub length: usize,
    pub coupling: Vec<f64>,
    pub period: f64,
    pub noise_std: f64,
    pub season_amplitude: f64,
    pub ar_coef: f64,
    pub exo_amplitude: f64,
    /// Defaults to `period · (j + 2) / 2` for channel `j`.
    pub exo_periods: Option<Vec<f64>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            length: 2000,
            coupling: vec![1.0, -0.5],
            period: 24.0,
            noise_std: 0.1,
            season_amplitude: 1.0,
            ar_coef: 0.8,
            exo_amplitude: 1.0,
            exo_periods: None,
        }
    }
}

/// A generated dataset plus the MSE attainable by a forecaster that knows
/// the true future exogenous values (the noise variance, in raw units).
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub optimal_mse: f64,
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Synthetic> {
    if spec.length == 0 {
        return Err(Error::Config("synthetic length must be positive".into()));
    }
    if spec.period <= 0.0 || spec.noise_std < 0.0 {
        return Err(Error::Config("synthetic period must be positive and noise non-negative".into()));
    }
    let d = spec.coupling.len();
    let periods: Vec<f64> = match &spec.exo_periods {
        Some(p) if p.len() == d => p.clone(),
        Some(_) => return Err(Error::Config("exo_periods must have one entry per exogenous channel".into())),
        None => (0..d).map(|j| spec.period * (j as f64 + 2.0) / 2.0).collect(),
    };
    let tau = std::f64::consts::TAU;
    let stationary_std = (1.0 / (1.0 - spec.ar_coef * spec.ar_coef).max(1e-6)).sqrt();

    let mut exo = Vec::with_capacity(d);
    for (j, period) in periods.iter().enumerate() {
        let mut rng = seeded(seed, &[1, j as u64]);
        let phase = rng.gen_range(0.0..tau);
        let mut ar: f64 = StandardNormal.sample(&mut rng);
        ar *= stationary_std;
        let mut col = Vec::with_capacity(spec.length);
        for t in 0..spec.length {
            if t > 0 {
                let shock: f64 = StandardNormal.sample(&mut rng);
                ar = spec.ar_coef * ar + shock;
            }
            col.push(ar + spec.exo_amplitude * (tau * t as f64 / period + phase).sin());
        }
        exo.push(col);
    }

    let mut rng = seeded(seed, &[2]);
    let endo: Vec<f64> = (0..spec.length)
        .map(|t| {
            let mut y = 0.0;
            for (a, col) in spec.coupling.iter().zip(&exo) {
                y += a * col[t];
            }
            y += spec.season_amplitude * (tau * t as f64 / spec.period).sin();
            let eps: f64 = StandardNormal.sample(&mut rng);
            y + spec.noise_std * eps
        })
        .collect();

    let exo_names = (0..d).map(|j| format!("x{j}")).collect();
    let dataset = Dataset::new(vec!["y".into()], vec![endo], exo_names, exo)?;
    Ok(Synthetic {
        dataset,
        optimal_mse: spec.noise_std * spec.noise_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn ramp(len: usize) -> Dataset {
        let y: Vec<f64> = (0..len).map(|v| v as f64).collect();
        let x: Vec<f64> = (0..len).map(|v| -(v as f64)).collect();
        Dataset::new(names(&["y"]), vec![y], names(&["x"]), vec![x]).unwrap()
    }

    #[test]
    fn csv_basic() {
        let text = "t,load,price\n0,1.5,10\n1,2.5,11\n2,3.5,12\n";
        let ds = read_csv(text.as_bytes(), &names(&["price"]), &names(&["load"])).unwrap();
        assert_eq!((ds.n_endo(), ds.n_exo(), ds.len()), (1, 1, 3));
        assert_eq!(ds.endo[0], vec![10.0, 11.0, 12.0]);
        assert_eq!(ds.timestamps.as_ref().unwrap()[2], "2");
    }

    #[test]
    fn csv_errors() {
        let text = "t,load,price\n0,1.5,10\n1,NaN,11\n";
        let err = read_csv(text.as_bytes(), &names(&["cost"]), &names(&["load"])).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "cost"));
        let err = read_csv(text.as_bytes(), &names(&["price"]), &names(&["load"])).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
        let err = read_csv("".as_bytes(), &names(&["price"]), &[]).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset), "{err}");
        let err = read_csv("t,price\n".as_bytes(), &names(&["price"]), &[]).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset), "{err}");
    }

    #[test]
    fn split_sizes_and_order() {
        let ds = ramp(100);
        let (a, b, c) = split(&ds, [0.7, 0.1, 0.2]).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 10, 20));
        let joined: Vec<f64> = [&a, &b, &c].iter().flat_map(|d| d.endo[0].clone()).collect();
        assert_eq!(joined, ds.endo[0]);
        assert!(matches!(split(&ds, [1.0, 0.0, 0.0]), Err(Error::Split(ref m)) if m.contains("val")));
        assert!(split(&ds, [0.5, 0.1, 0.1]).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(192), 168, 24, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&ramp(200), 168, 24, 1).unwrap().len(), 9);
        assert!(matches!(
            make_windows(&ramp(191), 168, 24, 1),
            Err(Error::SeriesTooShort { length: 191, needed: 192 })
        ));
        let w = make_windows(&ramp(10), 4, 2, 3).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].origin_index, 3);
        assert_eq!(w[1].x_endo.row(0), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(w[1].y_endo.row(0), &[7.0, 8.0]);
        assert_eq!(w[1].y_exo.row(0), &[-7.0, -8.0]);
    }

    #[test]
    fn scaler_uses_train_stats() {
        let train = Dataset::new(names(&["y"]), vec![vec![1.0, 3.0]], names(&["x"]), vec![vec![4.0, 4.0]]).unwrap();
        let val = Dataset::new(names(&["y"]), vec![vec![5.0]], names(&["x"]), vec![vec![4.0]]).unwrap();
        let (tr, rest, stats) = fit_apply_scaler(&train, &[&val]).unwrap();
        assert_eq!(stats.endo_mean, vec![2.0]);
        assert_eq!(stats.endo_std, vec![1.0]);
        assert_eq!(tr.endo[0], vec![-1.0, 1.0]);
        assert_eq!(tr.exo[0], vec![0.0, 0.0]);
        assert_eq!(stats.exo_std[0], SCALER_STD_FLOOR);
        assert_eq!(rest[0].endo[0], vec![3.0]);
    }

    #[test]
    fn mask_counts_and_kinds() {
        let x: Vec<f64> = (0..110).map(|v| v as f64 + 1.0).collect();
        let ds = Dataset::new(names(&["y"]), vec![x.clone()], names(&["x"]), vec![x]).unwrap();
        let w = SeriesWindow::from_dataset(&ds, 0, 80, 20).unwrap();
        let none = mask_window(&w, &MaskSpec::new(MaskKind::Zeros, 0.0, 3).unwrap());
        assert_eq!(none, w);
        let m = mask_window(&w, &MaskSpec::new(MaskKind::Zeros, 0.3, 3).unwrap());
        let zeros = m.x_exo.data().iter().chain(m.y_exo.data()).filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 30);
        assert_eq!(m.x_endo, w.x_endo);
        assert_eq!(m.y_endo, w.y_endo);

        let mut hist_only = MaskSpec::new(MaskKind::RandomNormal, 0.5, 3).unwrap();
        hist_only.include_future = false;
        let m = mask_window(&w, &hist_only);
        assert_eq!(m.y_exo, w.y_exo);
        let changed = m.x_exo.data().iter().zip(w.x_exo.data()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 40);
    }

    #[test]
    fn mask_spec_parse() {
        let m: MaskSpec = "zeros:0.3:1".parse().unwrap();
        assert_eq!(m.kind, MaskKind::Zeros);
        assert_eq!(m.to_string(), "zeros:0.3:1");
        assert!("zeros:1.0:1".parse::<MaskSpec>().is_err());
        assert!("blur:0.1:1".parse::<MaskSpec>().is_err());
        assert!("zeros:0.1".parse::<MaskSpec>().is_err());
    }

    #[test]
    fn synth_identity_coupling() {
        let spec = SynthSpec {
            length: 300,
            coupling: vec![1.0],
            noise_std: 0.0,
            season_amplitude: 0.0,
            ..SynthSpec::default()
        };
        let s = synth_generate(&spec, 11).unwrap();
        assert_eq!(s.dataset.endo[0], s.dataset.exo[0]);
        assert_eq!(s.optimal_mse, 0.0);
        assert_eq!(synth_generate(&spec, 11).unwrap(), s);
        assert_ne!(synth_generate(&spec, 12).unwrap(), s);
        let bad = SynthSpec {
            length: 0,
            ..SynthSpec::default()
        };
        assert!(synth_generate(&bad, 1).is_err());
    }

    #[test]
    fn synth_zero_noise_oracle_is_exact() {
        let spec = SynthSpec {
            length: 200,
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let s = synth_generate(&spec, 5).unwrap();
        let ds = &s.dataset;
        // Closed-form forecaster given true future exogenous values.
        let w = make_windows(ds, 24, 12, 1).unwrap();
        let mut sq = 0.0;
        let mut n = 0.0;
        for win in &w {
            for f in 0..12 {
                let t = win.origin_index + 24 + f;
                let mut pred = (std::f64::consts::TAU * t as f64 / spec.period).sin();
                for (j, a) in spec.coupling.iter().enumerate() {
                    pred += a * win.y_exo.at(j, f);
                }
                sq += (pred - win.y_endo.at(0, f)).powi(2);
                n += 1.0;
            }
        }
        assert!(sq / n < 1e-24);
        assert_eq!(s.optimal_mse, 0.0);
    }
}
