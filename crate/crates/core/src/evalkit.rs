//! Evaluation protocol: h-step autoregressive error from re-anchored ground
//! truth, drift curves, seed sweeps and footprint tables.
//!
//! The error at horizon `h` is `|x_hat_{t+h} - x_{t+h}|` averaged over anchors
//! `t = first, first + stride, ...` with `t + h <= n`, where `x_hat` comes
//! from rolling the model forward from the true history `x_1 .. x_t`. It is
//! the error at exactly step `h`, not averaged over `1..=h`. Drift at `h` is
//! the same quantity; a drift curve reads all horizons off one rollout per anchor.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_delta_net, Forecaster, KnnConfig, KnnRegressor, Lstm, LstmConfig, Mlp, MlpConfig,
    NetForecaster, SgdConfig,
};
use crate::datagen::{generate, GenConfig};
use crate::error::{CometError, Result};
use crate::numfmt::format_sig9;
use crate::rng::SeededRng;
use crate::series::{SplitSpec, TimeSeries, WindowSpec};
use crate::trainer::{train, Hyper, TrainConfig};

/// Predicts the last observed value. Used to calibrate the harness.
#[derive(Debug, Clone, Copy, Default)]
pub struct Persistence;

impl Forecaster for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn min_history(&self) -> usize {
        1
    }

    fn predict_next(&self, history: &[f64]) -> Result<f64> {
        history
            .last()
            .copied()
            .ok_or(CometError::InsufficientHistory {
                required: 1,
                available: 0,
            })
    }

    fn parameter_bytes(&self) -> usize {
        0
    }

    fn has_parameters(&self) -> bool {
        false
    }
}

/// Feeds every prediction back into the history.
pub fn rollout_forecaster(
    model: &dyn Forecaster,
    seed_history: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    let mut history = seed_history.to_vec();
    history.reserve(horizon);
    let mut out = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let next = model.predict_next(&history)?;
        if !next.is_finite() {
            return Err(CometError::Divergence(format!(
                "{} produced a non-finite prediction at rollout step {}",
                model.name(),
                step + 1
            )));
        }
        history.push(next);
        out.push(next);
    }
    Ok(out)
}

/// Where rollouts start within an evaluation series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorPlan {
    /// One-based position of the first anchor (number of true values seen).
    pub first: usize,
    pub stride: usize,
}

impl AnchorPlan {
    pub fn anchors(&self, len: usize, horizon: usize) -> impl Iterator<Item = usize> {
        let last = len.saturating_sub(horizon);
        (self.first..=last).step_by(self.stride.max(1))
    }
}

fn check_plan(model: &dyn Forecaster, plan: &AnchorPlan) -> Result<()> {
    if plan.stride == 0 {
        return Err(CometError::InvalidConfig(
            "anchor stride must be >= 1".into(),
        ));
    }
    if plan.first < model.min_history() {
        return Err(CometError::InvalidConfig(format!(
            "first anchor {} is shorter than the {} values {} needs",
            plan.first,
            model.min_history(),
            model.name()
        )));
    }
    Ok(())
}

/// Mean absolute error at each requested horizon, sharing one rollout per anchor.
/// Horizons are returned sorted and deduplicated.
pub fn horizon_errors(
    model: &dyn Forecaster,
    test: &TimeSeries,
    horizons: &[usize],
    plan: &AnchorPlan,
) -> Result<Vec<(usize, f64)>> {
    check_plan(model, plan)?;
    let mut hs: Vec<usize> = horizons.to_vec();
    hs.sort_unstable();
    hs.dedup();
    if hs.first() == Some(&0) || hs.is_empty() {
        return Err(CometError::InvalidConfig("horizons must be >= 1".into()));
    }
    let v = test.values();
    let n = v.len();
    let mut sums = vec![0.0; hs.len()];
    let mut counts = vec![0usize; hs.len()];
    for t in plan.anchors(n, hs[0]) {
        let reach = hs
            .iter()
            .rposition(|h| t + h <= n)
            .expect("anchor admits smallest horizon");
        let preds = rollout_forecaster(model, &v[..t], hs[reach])?;
        for (j, h) in hs[..=reach].iter().enumerate() {
            sums[j] += (preds[h - 1] - v[t + h - 1]).abs();
            counts[j] += 1;
        }
    }
    hs.iter()
        .zip(sums.iter().zip(&counts))
        .map(|(h, (s, c))| {
            if *c == 0 {
                Err(CometError::NoAnchors(format!(
                    "horizon {h} does not fit in a series of {n} values from anchor {}",
                    plan.first
                )))
            } else {
                Ok((*h, s / *c as f64))
            }
        })
        .collect()
}

pub fn mae_at_horizon(
    model: &dyn Forecaster,
    test: &TimeSeries,
    h: usize,
    plan: &AnchorPlan,
) -> Result<f64> {
    Ok(horizon_errors(model, test, &[h], plan)?[0].1)
}

pub fn drift_curve(
    model: &dyn Forecaster,
    test: &TimeSeries,
    horizons: &[usize],
    plan: &AnchorPlan,
) -> Result<Vec<(usize, f64)>> {
    horizon_errors(model, test, horizons, plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub horizons_short: Vec<usize>,
    pub drift_horizons: Vec<usize>,
    pub rollout_horizon: usize,
    pub anchor_stride: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons_short: vec![1, 5],
            drift_horizons: default_drift_horizons(),
            rollout_horizon: 300,
            anchor_stride: 10,
            seeds: vec![0, 1, 2, 3],
        }
    }
}

/// `1, 10, 20, ..., 200`.
pub fn default_drift_horizons() -> Vec<usize> {
    std::iter::once(1).chain((10..=200).step_by(10)).collect()
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizons_short.is_empty() || self.drift_horizons.is_empty() {
            return Err(CometError::InvalidConfig(
                "horizon lists must not be empty".into(),
            ));
        }
        if self
            .horizons_short
            .iter()
            .chain(&self.drift_horizons)
            .any(|h| *h == 0)
        {
            return Err(CometError::InvalidConfig("horizons must be >= 1".into()));
        }
        if self.anchor_stride == 0 || self.rollout_horizon == 0 {
            return Err(CometError::InvalidConfig(
                "anchor stride and rollout horizon must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons_short
            .iter()
            .chain(&self.drift_horizons)
            .copied()
            .max()
            .unwrap_or(1)
    }
}

/// A model recipe: how to fit one model kind on a training split.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Knn(KnnConfig),
    Mlp {
        config: MlpConfig,
        sgd: SgdConfig,
    },
    Lstm {
        config: LstmConfig,
        sgd: SgdConfig,
    },
    Comet {
        train: TrainConfig,
        hyper: Hyper,
        window: WindowSpec,
    },
    Persistence,
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Knn(_) => "knn",
            ModelSpec::Mlp { .. } => "mlp",
            ModelSpec::Lstm { .. } => "lstm",
            ModelSpec::Comet { .. } => "comet",
            ModelSpec::Persistence => "persistence",
        }
    }

    /// Fits on `train`; all randomness derives from `seed` and the model name,
    /// so the result does not depend on which other models are fitted.
    pub fn fit(
        &self,
        train_series: &TimeSeries,
        validation: Option<&TimeSeries>,
        seed: u64,
    ) -> Result<Box<dyn Forecaster>> {
        let values = train_series.values();
        Ok(match self {
            ModelSpec::Knn(cfg) => Box::new(KnnRegressor::fit(values, *cfg)?),
            ModelSpec::Mlp { config, sgd } => {
                let mut rng = SeededRng::derived(seed, "mlp");
                let mut net = Mlp::init(config, &mut rng)?;
                fit_delta_net(&mut net, values, sgd, &mut rng)?;
                Box::new(NetForecaster {
                    name: "mlp".into(),
                    net,
                })
            }
            ModelSpec::Lstm { config, sgd } => {
                let mut rng = SeededRng::derived(seed, "lstm");
                let mut net = Lstm::init(config, &mut rng)?;
                fit_delta_net(&mut net, values, sgd, &mut rng)?;
                Box::new(NetForecaster {
                    name: "lstm".into(),
                    net,
                })
            }
            ModelSpec::Comet {
                train: cfg,
                hyper,
                window,
            } => {
                let cfg = TrainConfig { seed, ..*cfg };
                let (model, _) = train(
                    values,
                    validation.map(TimeSeries::values),
                    *window,
                    &cfg,
                    *hyper,
                )?;
                Box::new(model)
            }
            ModelSpec::Persistence => Box::new(Persistence),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    /// Zero-based index into the evaluation series of the first prediction.
    pub start: usize,
    pub predicted: Vec<f64>,
    pub actual: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FootprintRow {
    pub param_bytes: Option<usize>,
    pub memory_bytes: Option<usize>,
}

impl FootprintRow {
    pub fn of(model: &dyn Forecaster) -> Self {
        Self {
            param_bytes: model.has_parameters().then(|| model.parameter_bytes()),
            memory_bytes: model.memory_bytes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub model: String,
    pub mae: Vec<(usize, f64)>,
    pub drift_curve: Vec<(usize, f64)>,
    pub rollout: Option<RolloutTrace>,
    pub footprint: FootprintRow,
}

impl EvalReport {
    pub fn drift_at(&self, h: usize) -> Option<f64> {
        self.drift_curve
            .iter()
            .find(|(hh, _)| *hh == h)
            .map(|p| p.1)
    }

    pub fn mae_at(&self, h: usize) -> Option<f64> {
        self.mae.iter().find(|(hh, _)| *hh == h).map(|p| p.1)
    }
}

/// Evaluates one fitted model on `test`.
pub fn evaluate(
    model: &dyn Forecaster,
    seed: u64,
    test: &TimeSeries,
    eval: &EvalConfig,
    first_anchor: usize,
) -> Result<EvalReport> {
    eval.validate()?;
    let plan = AnchorPlan {
        first: first_anchor,
        stride: eval.anchor_stride,
    };
    let mut all: Vec<usize> = eval.horizons_short.clone();
    all.extend_from_slice(&eval.drift_horizons);
    let errors: BTreeMap<usize, f64> = horizon_errors(model, test, &all, &plan)?
        .into_iter()
        .collect();
    let pick = |hs: &[usize]| -> Vec<(usize, f64)> {
        let mut hs = hs.to_vec();
        hs.sort_unstable();
        hs.dedup();
        hs.into_iter().map(|h| (h, errors[&h])).collect()
    };
    let v = test.values();
    let predicted = rollout_forecaster(model, &v[..first_anchor], eval.rollout_horizon)?;
    let actual = (0..eval.rollout_horizon)
        .map(|i| v.get(first_anchor + i).copied())
        .collect();
    Ok(EvalReport {
        seed,
        model: model.name().to_string(),
        mae: pick(&eval.horizons_short),
        drift_curve: pick(&eval.drift_horizons),
        rollout: Some(RolloutTrace {
            start: first_anchor,
            predicted,
            actual,
        }),
        footprint: FootprintRow::of(model),
    })
}

/// For every seed: generate, split, fit every model and evaluate on the test
/// segment. Reports are ordered by seed, then by the order of `models`.
pub fn seed_sweep(
    models: &[ModelSpec],
    gen: &GenConfig,
    split: &SplitSpec,
    eval: &EvalConfig,
    window: &WindowSpec,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(models.len() * eval.seeds.len());
    for &seed in &eval.seeds {
        let data = prepare_seed(gen, split, window, seed)?;
        for spec in models {
            reports.push(run_cell(spec, &data, seed, eval, window)?);
        }
    }
    Ok(reports)
}

pub struct SeedData {
    pub train: TimeSeries,
    pub validation: Option<TimeSeries>,
    pub test: TimeSeries,
}

pub fn prepare_seed(
    gen: &GenConfig,
    split: &SplitSpec,
    window: &WindowSpec,
    seed: u64,
) -> Result<SeedData> {
    let series = generate(&GenConfig { seed, ..*gen })?;
    let parts = split.split(&series, window.long_len + 2)?;
    Ok(SeedData {
        train: parts.train,
        validation: parts.validation,
        test: parts.test,
    })
}

/// Fits and evaluates one `(seed, model)` pair.
pub fn run_cell(
    spec: &ModelSpec,
    data: &SeedData,
    seed: u64,
    eval: &EvalConfig,
    window: &WindowSpec,
) -> Result<EvalReport> {
    let model = spec.fit(&data.train, data.validation.as_ref(), seed)?;
    evaluate(model.as_ref(), seed, &data.test, eval, window.long_len)
}

/// Orders reports by seed, then by `model_order`; unknown names go last.
pub fn sort_reports(reports: &mut [EvalReport], model_order: &[&str]) {
    let rank = |m: &str| {
        model_order
            .iter()
            .position(|x| *x == m)
            .unwrap_or(usize::MAX)
    };
    reports.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(rank(&a.model).cmp(&rank(&b.model)))
            .then(a.model.cmp(&b.model))
    });
}

pub fn write_metrics_csv<W: Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    writeln!(w, "seed,model,metric,horizon,value")?;
    for r in reports {
        for (h, v) in &r.mae {
            writeln!(w, "{},{},mae,{h},{}", r.seed, r.model, format_sig9(*v))?;
        }
        for (h, v) in &r.drift_curve {
            writeln!(w, "{},{},drift,{h},{}", r.seed, r.model, format_sig9(*v))?;
        }
    }
    Ok(())
}

/// Same rows without the seed column, for evaluating saved models.
pub fn write_model_metrics_csv<W: Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    writeln!(w, "model,metric,horizon,value")?;
    for r in reports {
        for (h, v) in &r.mae {
            writeln!(w, "{},mae,{h},{}", r.model, format_sig9(*v))?;
        }
        for (h, v) in &r.drift_curve {
            writeln!(w, "{},drift,{h},{}", r.model, format_sig9(*v))?;
        }
    }
    Ok(())
}

pub fn write_rollout_csv<W: Write>(trace: &RolloutTrace, mut w: W) -> Result<()> {
    writeln!(w, "t,predicted,actual")?;
    for (i, (p, a)) in trace.predicted.iter().zip(&trace.actual).enumerate() {
        let actual = a.map(format_sig9).unwrap_or_default();
        writeln!(w, "{},{},{}", trace.start + i, format_sig9(*p), actual)?;
    }
    Ok(())
}

fn kb(bytes: Option<usize>) -> String {
    bytes.map_or_else(|| "--".to_string(), |b| format_sig9(b as f64 / 1024.0))
}

/// One row per model, in first-appearance order.
pub fn footprint_report(reports: &[EvalReport]) -> Vec<(String, FootprintRow)> {
    let mut rows: Vec<(String, FootprintRow)> = Vec::new();
    for r in reports {
        if !rows.iter().any(|(m, _)| *m == r.model) {
            rows.push((r.model.clone(), r.footprint));
        }
    }
    rows
}

/// `model,param_kb,memory_kb`, with `--` where a model has no such figure.
/// Kilobytes are 1024 bytes.
pub fn write_footprint_csv<W: Write>(rows: &[(String, FootprintRow)], mut w: W) -> Result<()> {
    writeln!(w, "model,param_kb,memory_kb")?;
    for (model, f) in rows {
        writeln!(w, "{model},{},{}", kb(f.param_bytes), kb(f.memory_bytes))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub metric: &'static str,
    pub horizon: usize,
    pub mean: f64,
    pub worst: f64,
}

/// Mean and worst case (largest error) across seeds, per model and metric.
pub fn summarize(reports: &[EvalReport]) -> Vec<SummaryRow> {
    type Key = (String, &'static str, usize);
    let mut groups: Vec<(Key, Vec<f64>)> = Vec::new();
    for r in reports {
        let items = r
            .mae
            .iter()
            .map(|p| ("mae", *p))
            .chain(r.drift_curve.iter().map(|p| ("drift", *p)));
        for (metric, (h, v)) in items {
            let key = (r.model.clone(), metric, h);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, vals)) => vals.push(v),
                None => groups.push((key, vec![v])),
            }
        }
    }
    groups
        .into_iter()
        .map(|((model, metric, horizon), vals)| SummaryRow {
            model,
            metric,
            horizon,
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            worst: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut w: W) -> Result<()> {
    writeln!(w, "model,metric,horizon,mean,worst")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.model,
            r.metric,
            r.horizon,
            format_sig9(r.mean),
            format_sig9(r.worst)
        )?;
    }
    Ok(())
}

/// Drift growth per seed and model: `h1 / h0` ratios of drift at the given
/// horizons, alongside the raw values and the 1-step MAE.
pub fn write_comparison_csv<W: Write>(
    reports: &[EvalReport],
    ratios: &[(usize, usize)],
    mut w: W,
) -> Result<()> {
    write!(w, "seed,model,mae_1")?;
    let mut hs: Vec<usize> = ratios.iter().flat_map(|(a, b)| [*a, *b]).collect();
    hs.sort_unstable();
    hs.dedup();
    for h in &hs {
        write!(w, ",drift_{h}")?;
    }
    for (a, b) in ratios {
        write!(w, ",ratio_{b}_{a}")?;
    }
    writeln!(w)?;
    let cell = |v: Option<f64>| v.map(format_sig9).unwrap_or_default();
    for r in reports {
        write!(w, "{},{},{}", r.seed, r.model, cell(r.mae_at(1)))?;
        for h in &hs {
            write!(w, ",{}", cell(r.drift_at(*h)))?;
        }
        for (a, b) in ratios {
            let ratio = match (r.drift_at(*a), r.drift_at(*b)) {
                (Some(x), Some(y)) if x > 0.0 => Some(y / x),
                _ => None,
            };
            write!(w, ",{}", cell(ratio))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CometModel;

    /// Knows the true continuation of one series.
    struct Oracle(Vec<f64>);

    impl Forecaster for Oracle {
        fn name(&self) -> &str {
            "oracle"
        }
        fn min_history(&self) -> usize {
            1
        }
        fn predict_next(&self, history: &[f64]) -> Result<f64> {
            Ok(self.0[history.len()])
        }
        fn parameter_bytes(&self) -> usize {
            0
        }
    }

    fn ramp(n: usize) -> TimeSeries {
        TimeSeries::new((1..=n).map(|t| t as f64).collect()).unwrap()
    }

    const PLAN: AnchorPlan = AnchorPlan {
        first: 60,
        stride: 7,
    };

    #[test]
    fn persistence_on_ramp_is_linear() {
        let s = ramp(500);
        assert_eq!(mae_at_horizon(&Persistence, &s, 5, &PLAN).unwrap(), 5.0);
        let hs = default_drift_horizons();
        for (h, d) in drift_curve(&Persistence, &s, &hs, &PLAN).unwrap() {
            assert_eq!(d, h as f64);
        }
    }

    #[test]
    fn oracle_and_constant_have_zero_error() {
        let s = ramp(400);
        let oracle = Oracle(s.values().to_vec());
        for (_, d) in drift_curve(&oracle, &s, &[1, 5, 50], &PLAN).unwrap() {
            assert_eq!(d, 0.0);
        }
        let c = TimeSeries::new(vec![2.0; 300]).unwrap();
        assert_eq!(mae_at_horizon(&Persistence, &c, 3, &PLAN).unwrap(), 0.0);
    }

    #[test]
    fn drift_curve_agrees_with_single_horizons() {
        let values: Vec<f64> = (0..700)
            .map(|t| (t as f64 * 0.05).sin() + 0.002 * t as f64)
            .collect();
        let s = TimeSeries::new(values.clone()).unwrap();
        let model = CometModel::initialize(
            &values[..400],
            3,
            4,
            WindowSpec::default(),
            &mut SeededRng::new(2),
        )
        .unwrap();
        let test = TimeSeries::new(values[400..].to_vec()).unwrap();
        let hs = [1, 5, 10, 40, 100, 200];
        let curve = drift_curve(&model, &test, &hs, &PLAN).unwrap();
        for (h, d) in curve {
            let single = mae_at_horizon(&model, &test, h, &PLAN).unwrap();
            assert!((d - single).abs() <= 1e-12, "h={h}: {d} vs {single}");
        }
        drop(s);
    }

    #[test]
    fn no_anchor_is_an_error() {
        let s = ramp(100);
        assert!(matches!(
            mae_at_horizon(&Persistence, &s, 50, &PLAN),
            Err(CometError::NoAnchors(_))
        ));
        let bad = AnchorPlan {
            first: 10,
            stride: 1,
        };
        let knn = KnnRegressor::fit(ramp(100).values(), KnnConfig::default()).unwrap();
        assert!(mae_at_horizon(&knn, &s, 1, &bad).is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let r = EvalReport {
            seed: 3,
            model: "knn".into(),
            mae: vec![(1, 0.5), (5, 0.25)],
            drift_curve: vec![(1, 0.5)],
            rollout: None,
            footprint: FootprintRow {
                param_bytes: None,
                memory_bytes: None,
            },
        };
        let mut buf = Vec::new();
        write_metrics_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "seed,model,metric,horizon,value\n3,knn,mae,1,0.5\n3,knn,mae,5,0.25\n3,knn,drift,1,0.5\n"
        );
        let mut buf = Vec::new();
        write_footprint_csv(&footprint_report(&[r]), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "model,param_kb,memory_kb\nknn,--,--\n"
        );
    }

    #[test]
    fn summary_mean_and_worst() {
        let mk = |seed, v| EvalReport {
            seed,
            model: "m".into(),
            mae: vec![(1, v)],
            drift_curve: vec![],
            rollout: None,
            footprint: FootprintRow {
                param_bytes: Some(4),
                memory_bytes: None,
            },
        };
        let rows = summarize(&[mk(0, 1.0), mk(1, 3.0)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean, 2.0);
        assert_eq!(rows[0].worst, 3.0);
    }
}
