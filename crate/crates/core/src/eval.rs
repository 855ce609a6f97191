//! Evaluation: RMSE, overfit gaps, posterior traces, and configuration sweeps.

use std::fs;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::FactorModel;
use crate::dataset::{Interaction, RatingsDataset};
use crate::error::{Error, Result};
use crate::seeding::{stage, stage_seed};
use crate::vi::{fit_vi, PredictMode, PriorSpec, TracePoint, VariationalPosterior, ViConfig};

/// Root mean squared error of a predictor over a set of interactions.
pub fn rmse<F>(mut predict: F, data: &[Interaction]) -> Result<f64>
where
    F: FnMut(u32, u32) -> Result<f64>,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for it in data {
        let e = it.rating - predict(it.user, it.item)?;
        total += e * e;
    }
    Ok((total / data.len() as f64).sqrt())
}

/// A prediction strategy to evaluate: a MAP point model, the closed-form
/// posterior mean, or a Monte Carlo posterior average.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Map(&'a FactorModel),
    PosteriorAnalytic(&'a VariationalPosterior),
    PosteriorMc {
        posterior: &'a VariationalPosterior,
        samples: usize,
        /// Base seed; each evaluated pair gets its own derived stream.
        seed: u64,
    },
}

impl Predictor<'_> {
    /// Predict for position `idx` of an evaluation set. The index only matters
    /// for Monte Carlo, where it selects the pair's sampling stream.
    pub fn predict(&self, idx: usize, user: u32, item: u32) -> Result<f64> {
        match *self {
            Predictor::Map(model) => model.predict(user, item),
            Predictor::PosteriorAnalytic(post) => {
                post.predict_expected(user, item, PredictMode::Analytic)
            }
            Predictor::PosteriorMc {
                posterior,
                samples,
                seed,
            } => posterior.predict_expected(
                user,
                item,
                PredictMode::MonteCarlo {
                    samples,
                    seed: stage_seed(seed, idx as u64),
                },
            ),
        }
    }

    /// RMSE over `data`, optionally clamping predictions into `[lo, hi]`.
    pub fn rmse(&self, data: &[Interaction], clamp: Option<(f64, f64)>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for (idx, it) in data.iter().enumerate() {
            let mut pred = self.predict(idx, it.user, it.item)?;
            if let Some((lo, hi)) = clamp {
                pred = pred.clamp(lo, hi);
            }
            let e = it.rating - pred;
            total += e * e;
        }
        Ok((total / data.len() as f64).sqrt())
    }
}

/// Validation and test RMSE side by side; `gap = rmse_test - rmse_validation`,
/// so overfitting shows up as a positive gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rmse_validation: f64,
    pub rmse_test: f64,
    pub gap: f64,
}

/// Evaluate one predictor on a validation and a test set.
pub fn overfit_gap(
    predictor: &Predictor,
    validation: &[Interaction],
    test: &[Interaction],
    clamp: Option<(f64, f64)>,
) -> Result<GapReport> {
    let rmse_validation = predictor.rmse(validation, clamp)?;
    let rmse_test = predictor.rmse(test, clamp)?;
    Ok(GapReport {
        rmse_validation,
        rmse_test,
        gap: rmse_test - rmse_validation,
    })
}

/// Which entity a parameter trace addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    User,
    Item,
}

/// Posterior draws of one latent coordinate, with its analytic moments and the
/// matching MAP point estimate for scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub entity_kind: EntityKind,
    pub entity: u32,
    pub dimension: usize,
    pub posterior_mean: f64,
    pub posterior_std: f64,
    pub sample_mean: f64,
    pub map_reference: Option<f64>,
    pub samples: Vec<f64>,
}

/// Sample the marginal posterior of one factor coordinate.
pub fn trace_parameter(
    posterior: &VariationalPosterior,
    kind: EntityKind,
    entity: u32,
    dimension: usize,
    n_samples: usize,
    seed: u64,
    map_model: Option<&FactorModel>,
) -> Result<TraceReport> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("a trace needs at least one sample".into()));
    }
    if dimension >= posterior.k {
        return Err(Error::IndexOutOfBounds {
            entity: "dimension",
            index: dimension,
            size: posterior.k,
        });
    }
    let count = match kind {
        EntityKind::User => posterior.num_users,
        EntityKind::Item => posterior.num_items,
    };
    if entity as usize >= count {
        return Err(Error::IndexOutOfBounds {
            entity: match kind {
                EntityKind::User => "user",
                EntityKind::Item => "item",
            },
            index: entity as usize,
            size: count,
        });
    }
    let idx = entity as usize * posterior.k + dimension;
    let (mean, logstd) = match kind {
        EntityKind::User => (posterior.p_mean[idx], posterior.p_logstd[idx]),
        EntityKind::Item => (posterior.q_mean[idx], posterior.q_logstd[idx]),
    };
    let std = logstd.exp();

    let map_reference = map_model
        .map(|model| -> Result<f64> {
            if dimension >= model.k {
                return Err(Error::ShapeMismatch(format!(
                    "point model has k = {}, trace asks for dimension {dimension}",
                    model.k
                )));
            }
            let table = match kind {
                EntityKind::User => {
                    if entity as usize >= model.num_users {
                        return Err(Error::ShapeMismatch(format!(
                            "point model has {} users, trace asks for {entity}",
                            model.num_users
                        )));
                    }
                    model.user_factors(entity)
                }
                EntityKind::Item => {
                    if entity as usize >= model.num_items {
                        return Err(Error::ShapeMismatch(format!(
                            "point model has {} items, trace asks for {entity}",
                            model.num_items
                        )));
                    }
                    model.item_factors(entity)
                }
            };
            Ok(table[dimension])
        })
        .transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..n_samples)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            mean + std * z
        })
        .collect();
    let sample_mean = samples.iter().sum::<f64>() / n_samples as f64;

    Ok(TraceReport {
        entity_kind: kind,
        entity,
        dimension,
        posterior_mean: mean,
        posterior_std: std,
        sample_mean,
        map_reference,
        samples,
    })
}

/// Outcome of one evaluated configuration.
///
/// `runtime_seconds` is in-memory only: serialized reports must be identical
/// across reruns with the same seeds, so wall-clock times are written to a
/// separate timing sidecar instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_tag: String,
    pub k: usize,
    pub rmse_test: Option<f64>,
    pub rmse_validation: Option<f64>,
    pub gap: Option<f64>,
    pub error: Option<String>,
    pub config_snapshot: serde_json::Value,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

/// Model tag for a variational configuration.
pub fn vi_model_tag(with_bias: bool) -> &'static str {
    if with_bias {
        "blfmbias"
    } else {
        "blfm"
    }
}

/// Fit and evaluate every configuration in a grid.
///
/// Runs are ordered by `(k, iterations)`. A configuration that fails (for
/// example by diverging) contributes an error entry instead of aborting the
/// sweep. Predictions use Monte Carlo averaging with each configuration's
/// `mc_samples`, clamped into the training rating range.
pub fn sweep(
    train: &RatingsDataset,
    test: &[Interaction],
    validation: Option<&[Interaction]>,
    grid: &[ViConfig],
) -> Vec<EvalReport> {
    let mut ordered: Vec<ViConfig> = grid.to_vec();
    ordered.sort_by_key(|cfg| (cfg.k, cfg.iterations));

    ordered
        .iter()
        .map(|cfg| {
            let started = Instant::now();
            let outcome = run_one(train, test, validation, cfg);
            let runtime_seconds = started.elapsed().as_secs_f64();
            let snapshot = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
            match outcome {
                Ok((rmse_test, rmse_validation)) => EvalReport {
                    model_tag: vi_model_tag(cfg.with_bias).to_string(),
                    k: cfg.k,
                    rmse_test: Some(rmse_test),
                    rmse_validation,
                    gap: rmse_validation.map(|v| rmse_test - v),
                    error: None,
                    config_snapshot: snapshot,
                    runtime_seconds,
                },
                Err(err) => EvalReport {
                    model_tag: vi_model_tag(cfg.with_bias).to_string(),
                    k: cfg.k,
                    rmse_test: None,
                    rmse_validation: None,
                    gap: None,
                    error: Some(err.to_string()),
                    config_snapshot: snapshot,
                    runtime_seconds,
                },
            }
        })
        .collect()
}

fn run_one(
    train: &RatingsDataset,
    test: &[Interaction],
    validation: Option<&[Interaction]>,
    cfg: &ViConfig,
) -> Result<(f64, Option<f64>)> {
    let prior = PriorSpec::from_mean_rating(train.stats().r_mean)?;
    let fit = fit_vi(train, cfg, &prior)?;
    let stats = train.stats();
    let clamp = Some((stats.r_min, stats.r_max));
    let predictor = Predictor::PosteriorMc {
        posterior: &fit.posterior,
        samples: cfg.mc_samples,
        seed: stage_seed(cfg.seed, stage::EVAL),
    };
    let rmse_test = predictor.rmse(test, clamp)?;
    let rmse_validation = validation.map(|val| predictor.rmse(val, clamp)).transpose()?;
    Ok((rmse_test, rmse_validation))
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// Write evaluation reports as `{stem}.json` and `{stem}.csv`, plus a
/// `{stem}.timing.json` sidecar holding wall-clock times. The JSON and CSV are
/// pure functions of the results; only the sidecar varies across reruns.
pub fn write_reports(dir: &Path, stem: &str, reports: &[EvalReport]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(reports)?;
    fs::write(dir.join(format!("{stem}.json")), json + "\n")?;

    let file = fs::File::create(dir.join(format!("{stem}.csv")))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "model_tag,k,rmse_test,rmse_validation,gap,error")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.model_tag,
            r.k,
            fmt_opt(r.rmse_test),
            fmt_opt(r.rmse_validation),
            fmt_opt(r.gap),
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        )?;
    }
    w.flush()?;

    let timings: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "model_tag": r.model_tag,
                "k": r.k,
                "runtime_seconds": r.runtime_seconds,
            })
        })
        .collect();
    let json = serde_json::to_string_pretty(&timings)?;
    fs::write(dir.join(format!("{stem}.timing.json")), json + "\n")?;
    Ok(())
}

/// Write a parameter trace as `{stem}.json` (moments, MAP reference, the
/// draws, and the producing `config` snapshot) plus a plot-ready `{stem}.csv`
/// of `sample_index,value` rows.
pub fn write_trace_report(
    dir: &Path,
    stem: &str,
    report: &TraceReport,
    config: &serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut value = serde_json::to_value(report)?;
    value
        .as_object_mut()
        .expect("a trace report serializes to an object")
        .insert("config_snapshot".to_string(), config.clone());
    let json = serde_json::to_string_pretty(&value)?;
    fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    let file = fs::File::create(dir.join(format!("{stem}.csv")))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "sample_index,value")?;
    for (idx, s) in report.samples.iter().enumerate() {
        writeln!(w, "{idx},{s:.6}")?;
    }
    w.flush()?;
    Ok(())
}

/// Write an ELBO trace as CSV with `iteration,elbo` rows.
pub fn write_elbo_trace(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "iteration,elbo")?;
    for point in trace {
        writeln!(w, "{},{:.6}", point.iteration, point.elbo)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a per-epoch objective trace as CSV with `epoch,objective` rows.
pub fn write_objective_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "epoch,objective")?;
    for (epoch, value) in trace.iter().enumerate() {
        writeln!(w, "{epoch},{value:.6}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{train_svd_bias, SgdConfig};
    use crate::dataset::parse_movielens;
    use crate::vi::init_posterior;
    use proptest::prelude::*;

    fn toy() -> RatingsDataset {
        let text = "\
1::1::5::1\n1::2::4::2\n1::3::1::3\n\
2::1::4::1\n2::2::5::2\n2::4::2::3\n\
3::2::1::1\n3::3::5::2\n3::4::4::3\n\
4::1::2::1\n4::3::4::2\n4::4::5::3\n";
        parse_movielens(text.as_bytes()).unwrap()
    }

    #[test]
    fn rmse_matches_a_hand_computed_case() {
        let data = [
            Interaction { user: 0, item: 0, rating: 1.0, timestamp: 0 },
            Interaction { user: 0, item: 1, rating: 5.0, timestamp: 0 },
        ];
        // Constant prediction 3: errors -2 and +2, RMSE exactly 2.
        let value = rmse(|_, _| Ok(3.0), &data).unwrap();
        assert_eq!(value, 2.0);
    }

    #[test]
    fn rmse_of_one_wrong_prediction_in_two() {
        // Truths {4, 4}, predictions {3, 4}: sqrt(1/2).
        let data = [
            Interaction { user: 0, item: 0, rating: 4.0, timestamp: 0 },
            Interaction { user: 1, item: 0, rating: 4.0, timestamp: 0 },
        ];
        let value = rmse(|u, _| Ok(if u == 0 { 3.0 } else { 4.0 }), &data).unwrap();
        assert!((value - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rmse_of_a_perfect_predictor_is_zero() {
        let data = toy();
        let value = rmse(
            |u, i| {
                Ok(data
                    .interactions()
                    .iter()
                    .find(|it| it.user == u && it.item == i)
                    .unwrap()
                    .rating)
            },
            data.interactions(),
        )
        .unwrap();
        assert_eq!(value, 0.0);
    }

    #[test]
    fn rmse_of_empty_data_is_an_error() {
        assert!(matches!(rmse(|_, _| Ok(0.0), &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn gap_on_identical_sets_is_zero() {
        let data = toy();
        let model = train_svd_bias(&data, &SgdConfig::svd_defaults(2)).unwrap().model;
        let predictor = Predictor::Map(&model);
        let report =
            overfit_gap(&predictor, data.interactions(), data.interactions(), None).unwrap();
        assert_eq!(report.gap, 0.0);
    }

    #[test]
    fn gap_is_test_minus_validation() {
        let validation = [Interaction { user: 0, item: 0, rating: 3.0, timestamp: 0 }];
        let test = [Interaction { user: 0, item: 0, rating: 5.0, timestamp: 0 }];
        let data = toy();
        let model = train_svd_bias(&data, &SgdConfig::svd_defaults(0)).unwrap().model;
        let predictor = Predictor::Map(&model);
        let report = overfit_gap(&predictor, &validation, &test, None).unwrap();
        assert!((report.gap - (report.rmse_test - report.rmse_validation)).abs() < 1e-15);
        assert!(report.gap > 0.0, "farther targets must evaluate worse here");
    }

    #[test]
    fn clamped_rmse_never_beats_the_rating_range() {
        let data = toy();
        let model = train_svd_bias(&data, &SgdConfig::svd_defaults(2)).unwrap().model;
        let predictor = Predictor::Map(&model);
        let clamped = predictor
            .rmse(data.interactions(), Some((1.0, 5.0)))
            .unwrap();
        assert!(clamped.is_finite());
    }

    #[test]
    fn trace_reports_the_posterior_coordinate_and_map_reference() {
        let data = toy();
        let cfg = ViConfig::defaults(2, false);
        let prior = PriorSpec::from_mean_rating(data.stats().r_mean).unwrap();
        let post = init_posterior(4, 4, &cfg, &prior, data.stats().r_mean).unwrap();
        let model = train_svd_bias(&data, &SgdConfig::svd_defaults(2)).unwrap().model;

        let report =
            trace_parameter(&post, EntityKind::User, 3, 1, 4000, 7, Some(&model)).unwrap();
        assert_eq!(report.posterior_mean, post.p_mean[3 * 2 + 1]);
        assert_eq!(report.posterior_std, post.p_logstd[3 * 2 + 1].exp());
        assert_eq!(report.map_reference, Some(model.user_factors(3)[1]));
        assert_eq!(report.samples.len(), 4000);
        let bound = 4.0 * report.posterior_std / (4000f64).sqrt();
        assert!(
            (report.sample_mean - report.posterior_mean).abs() < bound,
            "sample mean {} should approach {}",
            report.sample_mean,
            report.posterior_mean
        );

        let again =
            trace_parameter(&post, EntityKind::User, 3, 1, 4000, 7, Some(&model)).unwrap();
        assert_eq!(report, again);

        let item_report =
            trace_parameter(&post, EntityKind::Item, 2, 0, 10, 7, None).unwrap();
        assert_eq!(item_report.posterior_mean, post.q_mean[2 * 2]);
        assert_eq!(item_report.map_reference, None);
    }

    #[test]
    fn trace_checks_bounds_and_shapes() {
        let data = toy();
        let cfg = ViConfig::defaults(2, false);
        let prior = PriorSpec::from_mean_rating(data.stats().r_mean).unwrap();
        let post = init_posterior(4, 4, &cfg, &prior, data.stats().r_mean).unwrap();
        assert!(trace_parameter(&post, EntityKind::User, 99, 0, 10, 0, None).is_err());
        assert!(trace_parameter(&post, EntityKind::User, 0, 9, 10, 0, None).is_err());

        let narrow = train_svd_bias(&data, &SgdConfig::svd_defaults(1)).unwrap().model;
        assert!(matches!(
            trace_parameter(&post, EntityKind::User, 0, 1, 10, 0, Some(&narrow)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sweep_orders_runs_and_records_divergence_without_aborting() {
        let data = toy();
        let split_test = vec![
            Interaction { user: 0, item: 3, rating: 2.0, timestamp: 9 },
            Interaction { user: 1, item: 2, rating: 4.0, timestamp: 9 },
        ];
        let sane = |k: usize, iterations: u64| ViConfig {
            k,
            iterations,
            step_size: 0.02,
            mc_samples: 50,
            seed: 42,
            with_bias: false,
            eval_every: 10,
        };
        let mut runaway = sane(1, 40);
        runaway.step_size = 1e8;
        // Deliberately unsorted grid.
        let grid = vec![sane(2, 40), runaway, sane(1, 80)];
        let reports = sweep(&data, &split_test, None, &grid);

        assert_eq!(reports.len(), 3);
        let order: Vec<(usize, u64)> = reports
            .iter()
            .map(|r| {
                let iters = r.config_snapshot["iterations"].as_u64().unwrap();
                (r.k, iters)
            })
            .collect();
        assert_eq!(order, vec![(1, 40), (1, 80), (2, 40)]);

        let failed = &reports[0];
        assert!(failed.error.as_deref().unwrap().contains("diverged"));
        assert!(failed.rmse_test.is_none());
        for ok in &reports[1..] {
            assert!(ok.error.is_none());
            assert!(ok.rmse_test.unwrap().is_finite());
            assert!(ok.gap.is_none(), "no validation set was supplied");
        }
    }

    #[test]
    fn sweep_results_are_reproducible() {
        let data = toy();
        let split_test = vec![Interaction { user: 0, item: 3, rating: 2.0, timestamp: 9 }];
        let validation = vec![Interaction { user: 1, item: 0, rating: 4.0, timestamp: 1 }];
        let cfg = ViConfig {
            k: 1,
            iterations: 30,
            step_size: 0.02,
            mc_samples: 40,
            seed: 7,
            with_bias: true,
            eval_every: 10,
        };
        let a = sweep(&data, &split_test, Some(&validation), std::slice::from_ref(&cfg));
        let b = sweep(&data, &split_test, Some(&validation), &[cfg]);
        assert_eq!(a[0].rmse_test, b[0].rmse_test);
        assert_eq!(a[0].rmse_validation, b[0].rmse_validation);
        assert_eq!(a[0].gap, b[0].gap);
        assert_eq!(a[0].model_tag, "blfmbias");
        assert!(a[0].rmse_validation.is_some());
    }

    #[test]
    fn report_files_are_byte_identical_across_writes() {
        let report = EvalReport {
            model_tag: "blfm".into(),
            k: 2,
            rmse_test: Some(0.987654321),
            rmse_validation: Some(0.9),
            gap: Some(0.087654321),
            error: None,
            config_snapshot: serde_json::json!({"k": 2}),
            runtime_seconds: 1.23,
        };
        let dir = tempfile::tempdir().unwrap();
        write_reports(dir.path(), "run", std::slice::from_ref(&report)).unwrap();
        let first_json = fs::read(dir.path().join("run.json")).unwrap();
        let first_csv = fs::read(dir.path().join("run.csv")).unwrap();

        let mut again = report;
        again.runtime_seconds = 99.9; // volatile field must not leak into reports
        write_reports(dir.path(), "run", &[again]).unwrap();
        assert_eq!(first_json, fs::read(dir.path().join("run.json")).unwrap());
        assert_eq!(first_csv, fs::read(dir.path().join("run.csv")).unwrap());

        let csv = String::from_utf8(first_csv).unwrap();
        assert!(csv.contains("0.987654"), "CSV uses 6-decimal formatting: {csv}");
    }

    proptest! {
        #[test]
        fn rmse_agrees_with_direct_formula_and_ignores_order(
            pairs in prop::collection::vec((1u32..=5, 1u32..=5).prop_map(|(r, p)| (r as f64, p as f64)), 1..40),
        ) {
            let data: Vec<Interaction> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(r, _))| Interaction {
                    user: i as u32,
                    item: 0,
                    rating: r,
                    timestamp: 0,
                })
                .collect();
            let preds = pairs.iter().map(|&(_, p)| p).collect::<Vec<f64>>();
            let value = rmse(|u, _| Ok(preds[u as usize]), &data).unwrap();

            let direct = (pairs
                .iter()
                .map(|&(r, p)| (r - p) * (r - p))
                .sum::<f64>()
                / pairs.len() as f64)
                .sqrt();
            prop_assert!((value - direct).abs() < 1e-12);

            let mut shuffled: Vec<Interaction> = data.clone();
            shuffled.reverse();
            let reversed = rmse(|u, _| Ok(preds[u as usize]), &shuffled).unwrap();
            prop_assert!((value - reversed).abs() < 1e-12);
        }
    }
}
