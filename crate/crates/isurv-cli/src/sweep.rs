//! Study sweeps: metric dependence on feature count, censoring proportion and
//! the interval window parameter.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use isurv::data::synthetic::{make_dataset, SyntheticKind, SyntheticSpec};
use isurv::metrics::ks_distance;
use isurv::models::{predict_interval_survival, predict_survival, ModelConfig, Variant};

use crate::experiment::{beran_curves, evaluate_beran, evaluate_model, prepare, train_prepared};

/// What a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Feature count 1..=10.
    Features,
    /// Censoring proportion 0.0..=0.8 in steps of 0.1.
    Censoring,
    /// Window half-width 0..=20.
    Window,
}

impl Study {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "features" | "feature_count" => Ok(Study::Features),
            "censoring" | "censor" => Ok(Study::Censoring),
            "window" | "k" => Ok(Study::Window),
            other => bail!("unknown study '{other}'"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Study::Features => "features",
            Study::Censoring => "censoring",
            Study::Window => "window",
        }
    }

    pub fn param(&self) -> &'static str {
        match self {
            Study::Features => "d",
            Study::Censoring => "censor_prob",
            Study::Window => "k",
        }
    }

    pub fn points(&self) -> Vec<f64> {
        match self {
            Study::Features => (1..=10).map(|d| d as f64).collect(),
            Study::Censoring => (0..=8).map(|i| i as f64 / 10.0).collect(),
            Study::Window => (0..=20).map(|k| k as f64).collect(),
        }
    }

    pub fn default_kinds(&self) -> Vec<SyntheticKind> {
        match self {
            Study::Features => vec![
                SyntheticKind::Linear,
                SyntheticKind::Quadratic,
                SyntheticKind::Interactions,
                SyntheticKind::Sparse,
                SyntheticKind::Nonlinear,
                SyntheticKind::Noisy,
            ],
            Study::Censoring => vec![SyntheticKind::Interactions, SyntheticKind::Sparse],
            Study::Window => vec![
                SyntheticKind::Friedman1,
                SyntheticKind::Friedman2,
                SyntheticKind::Friedman3,
            ],
        }
    }
}

/// One model entry of a sweep: a trainable variant or the Beran baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepModel {
    Variant(Variant),
    Beran,
}

impl SweepModel {
    pub fn parse(name: &str) -> Result<Self> {
        if name.eq_ignore_ascii_case("beran") {
            return Ok(SweepModel::Beran);
        }
        Ok(SweepModel::Variant(Variant::parse(name)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepModel::Variant(v) => v.name(),
            SweepModel::Beran => "beran",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub study: Study,
    pub kinds: Vec<SyntheticKind>,
    pub models: Vec<SweepModel>,
    pub reps: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub censor_prob: f64,
    pub beran_tau: f64,
    pub base_config: ModelConfig,
    pub seed: u64,
    /// Per-instance curve files are written for this many test instances of
    /// the first repetition.
    pub curve_instances: usize,
    /// Restrict the study to these swept values (defaults to the full range).
    pub points: Option<Vec<f64>>,
}

impl SweepSpec {
    fn effective_points(&self) -> Vec<f64> {
        self.points.clone().unwrap_or_else(|| self.study.points())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub study: String,
    pub kind: String,
    pub param: String,
    pub value: f64,
    pub rep: usize,
    pub seed: u64,
    pub model: String,
    pub c_index: f64,
    pub ibs: f64,
    pub ks: Option<f64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn job_seed(master: u64, kind_idx: usize, point_idx: usize, rep: usize) -> u64 {
    splitmix64(master ^ splitmix64((kind_idx as u64) << 40 | (point_idx as u64) << 20 | rep as u64))
}

/// Serialize sweep rows in long format.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("study,kind,param,value,rep,seed,model,c_index,ibs,ks\n");
    for r in rows {
        let ks = r.ks.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.study, r.kind, r.param, r.value, r.rep, r.seed, r.model, r.c_index, r.ibs, ks
        );
    }
    out
}

/// Run a sweep; when `out_dir` is given, per-instance curve files are written
/// there for the first repetition of every point.
pub fn run_sweep(spec: &SweepSpec, out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    if spec.reps == 0 {
        bail!("need at least one repetition");
    }
    let mut rows = Vec::new();
    let wants_ks = spec.study == Study::Censoring
        && spec.models.contains(&SweepModel::Variant(Variant::ISurvJG))
        && spec.models.contains(&SweepModel::Beran);

    for (kind_idx, &kind) in spec.kinds.iter().enumerate() {
        for (point_idx, &value) in spec.effective_points().iter().enumerate() {
            let d = match spec.study {
                Study::Features => value as usize,
                _ => 5,
            };
            if d < kind.min_features() || (kind == SyntheticKind::Parabola && d != 1) {
                log::warn!(
                    "skipping kind '{}' at d = {d}: below its minimum of {}",
                    kind.name(),
                    kind.min_features()
                );
                continue;
            }
            for rep in 0..spec.reps {
                let seed = job_seed(spec.seed, kind_idx, point_idx, rep);
                let data_spec = SyntheticSpec {
                    n_train: spec.n_train,
                    n_test: spec.n_test,
                    d,
                    censor_prob: if spec.study == Study::Censoring { value } else { spec.censor_prob },
                    seed,
                    ..SyntheticSpec::new(kind)
                };
                let (train_raw, test_raw) = make_dataset(&data_spec)?;
                let prepared = prepare(&train_raw, &test_raw)?;

                let mut jg_curves = None;
                let mut beran_curve_set = None;
                for model in &spec.models {
                    match model {
                        SweepModel::Variant(variant) => {
                            let mut config = spec.base_config.clone();
                            config.variant = *variant;
                            config.seed = seed;
                            if spec.study == Study::Window {
                                config.window = value as usize;
                            }
                            let trained = train_prepared(&prepared, &config)?;
                            let report =
                                evaluate_model(&trained, &prepared.test, kind.name(), "")?;
                            rows.push(SweepRow {
                                study: spec.study.name().into(),
                                kind: kind.name().into(),
                                param: spec.study.param().into(),
                                value,
                                rep,
                                seed,
                                model: model.name().into(),
                                c_index: report.c_index,
                                ibs: report.ibs,
                                ks: None,
                            });
                            if wants_ks && *variant == Variant::ISurvJG {
                                let curves: Vec<_> = (0..prepared.test.len())
                                    .map(|i| predict_survival(&trained, prepared.test.features.row(i)))
                                    .collect::<isurv::Result<_>>()?;
                                jg_curves = Some(curves);
                            }
                            if rep == 0 {
                                if let Some(dir) = out_dir {
                                    write_variant_curves(dir, spec, kind, value, &trained, &prepared)?;
                                }
                            }
                        }
                        SweepModel::Beran => {
                            let report =
                                evaluate_beran(&prepared, spec.beran_tau, kind.name(), seed, "")?;
                            rows.push(SweepRow {
                                study: spec.study.name().into(),
                                kind: kind.name().into(),
                                param: spec.study.param().into(),
                                value,
                                rep,
                                seed,
                                model: "beran".into(),
                                c_index: report.c_index,
                                ibs: report.ibs,
                                ks: None,
                            });
                            if wants_ks {
                                beran_curve_set =
                                    Some(beran_curves(&prepared.train, &prepared.test, spec.beran_tau)?);
                            }
                            if rep == 0 {
                                if let Some(dir) = out_dir {
                                    write_beran_curves(dir, spec, kind, value, &prepared)?;
                                }
                            }
                        }
                    }
                }

                if let (Some(jg), Some(b)) = (&jg_curves, &beran_curve_set) {
                    let mean_ks = jg
                        .iter()
                        .zip(b.iter())
                        .map(|(a, c)| ks_distance(a, c))
                        .sum::<f64>()
                        / jg.len() as f64;
                    for row in rows.iter_mut().rev() {
                        if row.rep == rep
                            && row.value == value
                            && row.kind == kind.name()
                            && (row.model == "isurvjg" || row.model == "beran")
                        {
                            row.ks = Some(mean_ks);
                        } else if row.rep != rep || row.value != value {
                            break;
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn curve_file(dir: &Path, spec: &SweepSpec, kind: SyntheticKind, value: f64, model: &str) -> PathBuf {
    dir.join(format!(
        "curves_{}_{}_{}_{}.csv",
        spec.study.name(),
        kind.name(),
        value,
        model
    ))
}

fn write_variant_curves(
    dir: &Path,
    spec: &SweepSpec,
    kind: SyntheticKind,
    value: f64,
    model: &isurv::TrainedModel,
    prepared: &crate::experiment::Prepared,
) -> Result<()> {
    let n = spec.curve_instances.min(prepared.test.len());
    let mut out = String::from("instance,time,s_lower,s,s_upper\n");
    for i in 0..n {
        let x = prepared.test.features.row(i);
        let precise = predict_survival(model, x)?;
        let (lower, upper) = predict_interval_survival(model, x)?;
        for (j, &t) in precise.times.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{t},{},{},{}",
                lower.eval(t),
                precise.values[j],
                upper.eval(t)
            );
        }
    }
    std::fs::write(curve_file(dir, spec, kind, value, model.config.variant.name()), out)?;
    Ok(())
}

fn write_beran_curves(
    dir: &Path,
    spec: &SweepSpec,
    kind: SyntheticKind,
    value: f64,
    prepared: &crate::experiment::Prepared,
) -> Result<()> {
    let n = spec.curve_instances.min(prepared.test.len());
    let mut out = String::from("instance,time,s_lower,s,s_upper\n");
    for i in 0..n {
        let curve = isurv::baselines::beran(
            &prepared.train,
            prepared.test.features.row(i),
            spec.beran_tau,
        )?;
        for (j, &t) in curve.times.iter().enumerate() {
            let v = curve.values[j];
            let _ = writeln!(out, "{i},{t},{v},{v},{v}");
        }
    }
    std::fs::write(curve_file(dir, spec, kind, value, "beran"), out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(study: Study) -> SweepSpec {
        SweepSpec {
            study,
            kinds: vec![SyntheticKind::Linear],
            models: vec![SweepModel::Variant(Variant::ISurvJG)],
            reps: 1,
            n_train: 24,
            n_test: 12,
            censor_prob: 0.2,
            beran_tau: 0.1,
            base_config: ModelConfig {
                epochs: 3,
                embed_dim: 4,
                fine_tune_epochs: Some(2),
                ..ModelConfig::new(Variant::ISurvJG)
            },
            seed: 9,
            curve_instances: 2,
            points: None,
        }
    }

    #[test]
    fn window_sweep_produces_one_row_per_point() {
        let mut spec = tiny_spec(Study::Window);
        spec.models = vec![SweepModel::Variant(Variant::ISurvJ), SweepModel::Beran];
        // restrict to a few points by checking row counts afterwards
        let rows = run_sweep(&spec, None).unwrap();
        // 21 window points x 2 models x 1 rep
        assert_eq!(rows.len(), 42);
        assert!(rows.iter().all(|r| r.ks.is_none()));
    }

    #[test]
    fn censoring_sweep_fills_ks_for_the_comparison_pair() {
        let mut spec = tiny_spec(Study::Censoring);
        spec.models = vec![SweepModel::Variant(Variant::ISurvJG), SweepModel::Beran];
        let rows = run_sweep(&spec, None).unwrap();
        assert_eq!(rows.len(), 18);
        assert!(rows.iter().all(|r| r.ks.is_some()));
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("study,kind,param,value,rep,seed,model,c_index,ibs,ks\n"));
    }

    #[test]
    fn feature_sweep_skips_points_below_kind_minimum() {
        let mut spec = tiny_spec(Study::Features);
        spec.kinds = vec![SyntheticKind::Friedman1];
        spec.models = vec![SweepModel::Beran];
        let rows = run_sweep(&spec, None).unwrap();
        // friedman1 needs at least 5 features: points 5..=10 survive
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.value >= 5.0));
    }

    #[test]
    fn restricted_points_shrink_the_sweep() {
        let mut spec = tiny_spec(Study::Window);
        spec.kinds = vec![SyntheticKind::Friedman1];
        spec.models = vec![SweepModel::Variant(Variant::ISurvJ), SweepModel::Beran];
        spec.reps = 2;
        spec.points = Some(vec![0.0, 1.0, 2.0, 3.0]);
        let rows = run_sweep(&spec, None).unwrap();
        // 4 points x 2 reps per model
        for model in ["isurvj", "beran"] {
            assert_eq!(rows.iter().filter(|r| r.model == model).count(), 8);
        }
    }

    #[test]
    fn same_master_seed_reproduces_rows() {
        let spec = tiny_spec(Study::Censoring);
        let a = run_sweep(&spec, None).unwrap();
        let b = run_sweep(&spec, None).unwrap();
        assert_eq!(rows_to_csv(&a), rows_to_csv(&b));
    }
}
