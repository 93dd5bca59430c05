//! Synthetic regimes, labelling, windowing of real price series, splits and
//! CSV ingestion.
//!
//! Every synthetic sample is `y = signal + trap + gauss` with
//!
//! * `signal = sma_cross(w; fast, slow) + roc(w; lag)` (lags `(15, 30)` / `15`
//!   unless the regime perturbs them),
//! * `trap = noise_level · flip · (x_10 − x_15)` for the non-stationary regimes,
//!   where `flip = +1` in the train phase and `−1` in the test phase,
//! * `gauss = coeff · g`, `g ~ N(0, 1)`.
//!
//! The label is `1` iff `y > 0`. Each sample stores its window and the
//! Gaussian draw, so `y` can be recomputed exactly.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{roc, sma_cross, Window, DEFAULT_WINDOW_LEN};
use crate::rng::{derive_seed, rng_from, tag};

/// Lags of the generating indicators.
pub const SIGNAL_FAST: usize = 15;
pub const SIGNAL_SLOW: usize = 30;
pub const SIGNAL_ROC: usize = 15;

/// 1-based positions of the prices whose difference forms the trap term.
pub const TRAP_EARLY: usize = 10;
pub const TRAP_LATE: usize = 15;

const WALK_START: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Signal plus `noise_level` times unit Gaussian noise, same law in both phases.
    Stationary,
    /// Signal plus a price-difference term whose sign flips between phases.
    NonStationary,
    /// Signal with perturbed generating lags plus unit Gaussian noise.
    LagPerturbed,
    /// Non-stationary term plus unit Gaussian noise.
    Combined,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Stationary,
        Regime::NonStationary,
        Regime::LagPerturbed,
        Regime::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Stationary => "stationary",
            Regime::NonStationary => "non_stationary",
            Regime::LagPerturbed => "lag_perturbed",
            Regime::Combined => "combined",
        }
    }

    fn has_trap(self) -> bool {
        matches!(self, Regime::NonStationary | Regime::Combined)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "stationary" => Ok(Regime::Stationary),
            "non_stationary" | "nonstationary" => Ok(Regime::NonStationary),
            "lag_perturbed" | "lagperturbed" => Ok(Regime::LagPerturbed),
            "combined" => Ok(Regime::Combined),
            other => Err(Error::config(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Valid,
    Test,
}

impl Phase {
    /// Sign of the trap term. Validation data follows the training law.
    pub fn flip(self) -> f64 {
        match self {
            Phase::Train | Phase::Valid => 1.0,
            Phase::Test => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Valid => "valid",
            Phase::Test => "test",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "valid" => Ok(Phase::Valid),
            "test" => Ok(Phase::Test),
            other => Err(Error::config(format!("unknown phase `{other}`"))),
        }
    }
}

/// Train-set location and scale of each signal component, used when
/// components are standardized before summing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScales {
    pub sma_mean: f64,
    pub sma_std: f64,
    pub roc_mean: f64,
    pub roc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub regime: Regime,
    pub noise_level: f64,
    /// Integer shift of the generating lags (lag-perturbed regime only).
    #[serde(default)]
    pub lag_noise: i64,
    pub n_samples: usize,
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_scales: Option<ComponentScales>,
}

fn default_window_len() -> usize {
    DEFAULT_WINDOW_LEN
}

impl SyntheticSpec {
    pub fn new(regime: Regime, noise_level: f64, n_samples: usize, seed: u64) -> Self {
        Self {
            regime,
            noise_level,
            lag_noise: 0,
            n_samples,
            window_len: DEFAULT_WINDOW_LEN,
            seed,
            component_scales: None,
        }
    }

    pub fn with_lag_noise(mut self, lag_noise: i64) -> Self {
        self.lag_noise = lag_noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < SIGNAL_SLOW + 1 {
            return Err(Error::config(format!(
                "window length {} cannot fit SMA({SIGNAL_SLOW})",
                self.window_len
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::config(format!(
                "noise level {} must be finite and non-negative",
                self.noise_level
            )));
        }
        self.generating_lags()?;
        Ok(())
    }

    /// `(fast, slow, roc)` lags that actually generate `y`.
    pub fn generating_lags(&self) -> Result<(usize, usize, usize)> {
        if self.regime != Regime::LagPerturbed || self.lag_noise == 0 {
            return Ok((SIGNAL_FAST, SIGNAL_SLOW, SIGNAL_ROC));
        }
        let n = self.window_len as i64;
        let slow = (SIGNAL_SLOW as i64 + self.lag_noise).clamp(2, n) as usize;
        // roc needs one price before the lag
        let roc_lag = (SIGNAL_ROC as i64 + self.lag_noise).clamp(2, n - 1) as usize;
        let fast = SIGNAL_FAST;
        if fast >= slow {
            return Err(Error::config(format!(
                "lag noise {} collapses the crossover to ({fast}, {slow})",
                self.lag_noise
            )));
        }
        Ok((fast, slow, roc_lag))
    }

    /// Coefficient on the unit Gaussian draw.
    fn gaussian_coeff(&self) -> f64 {
        match self.regime {
            Regime::Stationary => self.noise_level,
            Regime::NonStationary => 0.0,
            Regime::LagPerturbed | Regime::Combined => 1.0,
        }
    }

    fn trap_coeff(&self) -> f64 {
        if self.regime.has_trap() {
            self.noise_level
        } else {
            0.0
        }
    }
}

/// A window with its latent value and binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub window: Window,
    /// Latent `Y` (synthetic) or forward return over the horizon (real data).
    pub y: f64,
    pub label: u8,
    /// Forecast horizon in steps, real-data samples only.
    pub horizon: Option<usize>,
    /// Unit Gaussian draw behind the noise term, synthetic samples only.
    pub gaussian_draw: f64,
    pub phase: Phase,
}

impl LabeledSample {
    fn labelled(window: Window, y: f64, gaussian_draw: f64, phase: Phase) -> Self {
        Self {
            window,
            y,
            label: u8::from(y > 0.0),
            horizon: None,
            gaussian_draw,
            phase,
        }
    }
}

/// Arithmetic random walk from 100 with unit Gaussian steps, redrawn until
/// every price is positive.
pub fn gen_window<R: Rng + ?Sized>(window_len: usize, rng: &mut R) -> Window {
    loop {
        let mut x = Vec::with_capacity(window_len);
        let mut p = WALK_START;
        x.push(p);
        for _ in 1..window_len {
            let step: f64 = rng.sample(StandardNormal);
            p += step;
            x.push(p);
        }
        if x.iter().all(|&v| v > 0.0) {
            return Window::new(x).expect("positive finite walk");
        }
    }
}

/// Signal part of `y` for the given lags.
pub fn signal(
    x: &[f64],
    lags: (usize, usize, usize),
    scales: Option<&ComponentScales>,
) -> Result<f64> {
    let (fast, slow, roc_lag) = lags;
    let s = sma_cross(x, fast, slow)?;
    let r = roc(x, roc_lag)?;
    Ok(match scales {
        None => s + r,
        Some(c) => (s - c.sma_mean) / c.sma_std + (r - c.roc_mean) / c.roc_std,
    })
}

/// `x_10 − x_15` on the sample's own window.
pub fn trap_difference(x: &[f64]) -> f64 {
    x[TRAP_EARLY - 1] - x[TRAP_LATE - 1]
}

/// Recomputes `y` from a stored sample, for audits and tests.
pub fn recompute_y(spec: &SyntheticSpec, sample: &LabeledSample) -> Result<f64> {
    let s = signal(
        &sample.window,
        spec.generating_lags()?,
        spec.component_scales.as_ref(),
    )?;
    let trap = spec.trap_coeff() * sample.phase.flip() * trap_difference(&sample.window);
    Ok(s + trap + spec.gaussian_coeff() * sample.gaussian_draw)
}

/// Draws `spec.n_samples` samples of the spec's regime. The window and noise
/// streams depend only on `spec.seed`, so the train and test phases of one
/// seed see identical windows and draws.
pub fn generate(spec: &SyntheticSpec, phase: Phase) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    let lags = spec.generating_lags()?;
    let trap_coeff = spec.trap_coeff();
    let gauss_coeff = spec.gaussian_coeff();
    let flip = phase.flip();
    let mut rng = rng_from(&[spec.seed, tag::DATA]);
    let mut out = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let window = gen_window(spec.window_len, &mut rng);
        let g: f64 = rng.sample(StandardNormal);
        let s = signal(&window, lags, spec.component_scales.as_ref())?;
        let y = s + trap_coeff * flip * trap_difference(&window) + gauss_coeff * g;
        out.push(LabeledSample::labelled(window, y, g, phase));
    }
    Ok(out)
}

fn expect_regime(spec: &SyntheticSpec, regime: Regime) -> Result<()> {
    if spec.regime != regime {
        return Err(Error::config(format!(
            "expected a {regime} spec, got {}",
            spec.regime
        )));
    }
    Ok(())
}

/// `Y = SMA(15,30) + ROC(15) + Noise·N(0,1)`, same law in both phases.
pub fn gen_stationary(spec: &SyntheticSpec, phase: Phase) -> Result<Vec<LabeledSample>> {
    expect_regime(spec, Regime::Stationary)?;
    generate(spec, phase)
}

/// `Y = SMA(15,30) + ROC(15) ± Noise·(x_10 − x_15)`, sign flipped in the test phase.
pub fn gen_nonstationary(spec: &SyntheticSpec, phase: Phase) -> Result<Vec<LabeledSample>> {
    expect_regime(spec, Regime::NonStationary)?;
    generate(spec, phase)
}

/// `Y = SMA(15, 30+δ) + ROC(15+δ) + N(0,1)` with `δ = lag_noise`.
pub fn gen_lag_perturbed(spec: &SyntheticSpec, phase: Phase) -> Result<Vec<LabeledSample>> {
    expect_regime(spec, Regime::LagPerturbed)?;
    generate(spec, phase)
}

/// `Y = SMA(15,30) + ROC(15) ± Noise·(x_10 − x_15) + N(0,1)`.
pub fn gen_combined(spec: &SyntheticSpec, phase: Phase) -> Result<Vec<LabeledSample>> {
    expect_regime(spec, Regime::Combined)?;
    generate(spec, phase)
}

/// Train / validation / test parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSample>,
    pub valid: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Default part sizes.
pub const DEFAULT_SIZES: (usize, usize, usize) = (3000, 300, 300);

/// Contiguous chronological split; the parts are consecutive blocks at the
/// start of `samples`.
pub fn split(samples: Vec<LabeledSample>, sizes: (usize, usize, usize)) -> Result<DatasetSplit> {
    let (a, b, c) = sizes;
    if samples.len() < a + b + c {
        return Err(Error::Data(format!(
            "{} samples cannot fill a {a}/{b}/{c} split",
            samples.len()
        )));
    }
    let mut it = samples.into_iter();
    let train: Vec<_> = it.by_ref().take(a).collect();
    let valid: Vec<_> = it.by_ref().take(b).collect();
    let test: Vec<_> = it.take(c).collect();
    Ok(DatasetSplit { train, valid, test })
}

/// Independent train/valid/test draws for one synthetic experiment. The
/// validation part follows the training law.
pub fn synthetic_split(
    spec: &SyntheticSpec,
    sizes: (usize, usize, usize),
    standardize_components: bool,
) -> Result<DatasetSplit> {
    let part = |n: usize, stream: u64, phase: Phase, scales: Option<ComponentScales>| {
        let mut s = spec.clone();
        s.n_samples = n;
        s.seed = derive_seed(&[spec.seed, stream]);
        s.component_scales = scales;
        generate(&s, phase)
    };
    let scales = if standardize_components {
        let raw = part(sizes.0, tag::TRAIN, Phase::Train, None)?;
        Some(component_scales(&raw, spec.generating_lags()?)?)
    } else {
        spec.component_scales
    };
    Ok(DatasetSplit {
        train: part(sizes.0, tag::TRAIN, Phase::Train, scales)?,
        valid: part(sizes.1, tag::VALID, Phase::Valid, scales)?,
        test: part(sizes.2, tag::TEST, Phase::Test, scales)?,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Per-component mean and standard deviation over a sample set.
pub fn component_scales(
    samples: &[LabeledSample],
    lags: (usize, usize, usize),
) -> Result<ComponentScales> {
    let (fast, slow, roc_lag) = lags;
    let s: Vec<f64> = samples
        .iter()
        .map(|x| sma_cross(&x.window, fast, slow))
        .collect::<Result<_>>()?;
    let r: Vec<f64> = samples
        .iter()
        .map(|x| roc(&x.window, roc_lag))
        .collect::<Result<_>>()?;
    let (sma_mean, sma_std) = mean_std(&s);
    let (roc_mean, roc_std) = mean_std(&r);
    if !(sma_std > 0.0 && roc_std > 0.0) {
        return Err(Error::Data("a signal component has zero variance".into()));
    }
    Ok(ComponentScales {
        sma_mean,
        sma_std,
        roc_mean,
        roc_std,
    })
}

/// Sliding windows over a real price series. The label is 1 iff the price
/// `horizon` steps after the window's last price is strictly higher.
pub fn window_real_series(
    prices: &[f64],
    timestamps: &[NaiveDateTime],
    window_len: usize,
    horizon: usize,
) -> Result<Vec<LabeledSample>> {
    if prices.len() != timestamps.len() {
        return Err(Error::shape(format!(
            "{} prices but {} timestamps",
            prices.len(),
            timestamps.len()
        )));
    }
    if window_len == 0 || horizon == 0 {
        return Err(Error::config("window length and horizon must be positive"));
    }
    if prices.len() <= window_len + horizon {
        return Err(Error::Data(format!(
            "series of {} prices is too short for window {window_len} and horizon {horizon}",
            prices.len()
        )));
    }
    let count = prices.len() - window_len - horizon + 1;
    (0..count)
        .map(|start| {
            let window = Window::new(prices[start..start + window_len].to_vec())?;
            let now = prices[start + window_len - 1];
            let later = prices[start + window_len - 1 + horizon];
            Ok(LabeledSample {
                window,
                y: later / now - 1.0,
                label: u8::from(later > now),
                horizon: Some(horizon),
                gaussian_draw: 0.0,
                phase: Phase::Train,
            })
        })
        .collect()
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a `timestamp,price` CSV with ISO-8601 timestamps in strictly
/// increasing order.
pub fn load_csv(path: &Path) -> Result<(Vec<f64>, Vec<NaiveDateTime>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "price" {
        return Err(parse_err(1, "expected header `timestamp,price`".into()));
    }
    let mut prices = Vec::new();
    let mut stamps: Vec<NaiveDateTime> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, found {}", record.len()),
            ));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(line, format!("bad timestamp `{}`", &record[0])))?;
        let price: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad price `{}`", &record[1])))?;
        if !price.is_finite() {
            return Err(parse_err(
                line,
                format!("non-finite price `{}`", &record[1]),
            ));
        }
        if let Some(prev) = stamps.last() {
            if ts <= *prev {
                return Err(Error::Data(format!(
                    "{}:{line}: timestamp {ts} does not follow {prev}",
                    path.display()
                )));
            }
        }
        stamps.push(ts);
        prices.push(price);
    }
    Ok((prices, stamps))
}

/// Writes a `timestamp,price` CSV readable by [`load_csv`].
pub fn write_price_csv(path: &Path, prices: &[f64], timestamps: &[NaiveDateTime]) -> Result<()> {
    if prices.len() != timestamps.len() {
        return Err(Error::shape("prices and timestamps differ in length"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "timestamp,price").map_err(io)?;
    for (t, p) in timestamps.iter().zip(prices) {
        writeln!(w, "{},{p}", t.format("%Y-%m-%dT%H:%M:%S%.f")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Dumps labelled samples as `sample_id,x_1..x_n,y,label,phase`.
pub fn write_dataset_csv(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let width = samples
        .first()
        .map_or(DEFAULT_WINDOW_LEN, |s| s.window.len());
    if samples.iter().any(|s| s.window.len() != width) {
        return Err(Error::shape("samples have differing window lengths"));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_owned()];
    header.extend((1..=width).map(|i| format!("x_{i}")));
    header.extend(["y".to_owned(), "label".to_owned(), "phase".to_owned()]);
    w.write_record(&header)?;
    for (id, s) in samples.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(s.window.iter().map(f64::to_string));
        row.push(s.y.to_string());
        row.push(s.label.to_string());
        row.push(s.phase.name().to_owned());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parallel matrices for model input: windows and labels.
pub fn labels(samples: &[LabeledSample]) -> Vec<u8> {
    samples.iter().map(|s| s.label).collect()
}

pub fn windows(samples: &[LabeledSample]) -> Vec<&Window> {
    samples.iter().map(|s| &s.window).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(regime: Regime, noise: f64, n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec::new(regime, noise, n, seed)
    }

    #[test]
    fn windows_are_seed_deterministic_and_start_at_100() {
        let mut a = rng_from(&[42]);
        let mut b = rng_from(&[42]);
        let wa = gen_window(50, &mut a);
        assert_eq!(wa, gen_window(50, &mut b));
        assert_eq!(wa[0], 100.0);
        assert_eq!(wa.len(), 50);
    }

    #[test]
    fn zero_noise_stationary_is_pure_signal() {
        let s = spec(Regime::Stationary, 0.0, 200, 1);
        for x in gen_stationary(&s, Phase::Train).unwrap() {
            let direct = sma_cross(&x.window, 15, 30).unwrap() + roc(&x.window, 15).unwrap();
            assert!((x.y - direct).abs() <= 1e-12);
            assert_eq!(x.label, u8::from(x.y > 0.0));
        }
    }

    #[test]
    fn generators_check_regime() {
        let s = spec(Regime::Stationary, 1.0, 5, 1);
        assert!(gen_nonstationary(&s, Phase::Train).is_err());
        assert!(gen_combined(&s, Phase::Train).is_err());
        assert!(gen_lag_perturbed(&s, Phase::Train).is_err());
    }

    #[test]
    fn lag_noise_arithmetic_and_collisions() {
        let s = spec(Regime::LagPerturbed, 0.0, 5, 1).with_lag_noise(5);
        assert_eq!(s.generating_lags().unwrap(), (15, 35, 20));
        let s = spec(Regime::LagPerturbed, 0.0, 5, 1).with_lag_noise(100);
        assert_eq!(s.generating_lags().unwrap(), (15, 50, 49));
        let s = spec(Regime::LagPerturbed, 0.0, 5, 1).with_lag_noise(-15);
        assert!(s.validate().is_err());
    }

    #[test]
    fn short_windows_are_rejected() {
        let mut s = spec(Regime::Stationary, 0.0, 5, 1);
        s.window_len = 30;
        assert!(generate(&s, Phase::Train).is_err());
    }

    #[test]
    fn split_examples() {
        let s = spec(Regime::Stationary, 1.0, 3, 4);
        let samples = generate(&s, Phase::Train).unwrap();
        let parts = split(samples.clone(), (1, 1, 1)).unwrap();
        assert_eq!(parts.train, vec![samples[0].clone()]);
        assert_eq!(parts.valid, vec![samples[1].clone()]);
        assert_eq!(parts.test, vec![samples[2].clone()]);
        assert!(split(samples, (2, 1, 1)).is_err());
    }

    #[test]
    fn regime_names_parse() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert_eq!("NonStationary".parse::<Regime>().unwrap(), Regime::NonStationary);
        assert!("bogus".parse::<Regime>().is_err());
    }

    #[test]
    fn real_series_labels_use_strict_rise() {
        let ts: Vec<NaiveDateTime> = (0..8)
            .map(|i| {
                chrono::NaiveDate::from_ymd_opt(2019, 1, 2)
                    .unwrap()
                    .and_hms_opt(9, 30 + i, 0)
                    .unwrap()
            })
            .collect();
        let rising: Vec<f64> = (1..=8).map(f64::from).collect();
        let s = window_real_series(&rising, &ts, 3, 1).unwrap();
        assert!(s.iter().all(|x| x.label == 1));
        assert_eq!(s.len(), 8 - 3 - 1 + 1);

        let flat_end = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 100.0, 100.0];
        let s = window_real_series(&flat_end, &ts, 3, 1).unwrap();
        assert_eq!(s.last().unwrap().label, 0);
        assert!(window_real_series(&rising, &ts, 4, 4).is_err());
    }
}
