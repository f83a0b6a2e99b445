use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsl::RuleType;
use crate::engine::ExecutionStatus;
use crate::metrics::{mean_sd, median, CategoryCounts, ProductionProfile, ResultVector};
use crate::testgen::ToolId;

use super::{ExperimentError, TrialMetrics, TrialRecord};

pub const COVERAGE_CSV: &str = "coverage.csv";
pub const ERRORS_CSV: &str = "errors.csv";
pub const RULE_STATUS_CSV: &str = "rule_status.csv";
pub const RULE_RESULTS_CSV: &str = "rule_results.csv";
pub const PRODUCTION_CSV: &str = "production_compare.csv";

/// Code coverage per tool across all versions and repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub tool: ToolId,
    pub line_mean: f64,
    pub line_sd: f64,
    pub branch_mean: f64,
    pub branch_sd: f64,
    pub method_mean: f64,
    pub method_sd: f64,
}

/// Error classes per tool across all versions and repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub tool: ToolId,
    pub errors_all_mean: f64,
    pub errors_all_sd: f64,
    pub errors_tool_mean: f64,
    pub errors_tool_sd: f64,
    pub errors_io_mean: f64,
    pub errors_io_sd: f64,
    pub errors_remaining_mean: f64,
    pub errors_remaining_sd: f64,
    pub failure_points_all_mean: f64,
    pub failure_points_all_sd: f64,
    pub failure_points_tool_mean: f64,
    pub failure_points_tool_sd: f64,
    pub failure_points_io_mean: f64,
    pub failure_points_io_sd: f64,
    pub failure_points_remaining_mean: f64,
    pub failure_points_remaining_sd: f64,
    pub library_failure_points_mean: f64,
    pub library_failure_points_sd: f64,
}

/// Number of rules per execution status, per tool, version and rule type,
/// over repetitions; `pct_*` relative to the rules of that type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRow {
    pub tool: ToolId,
    pub version: String,
    pub rule_type: String,
    pub status: String,
    pub trials: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub pct_mean: f64,
    pub pct_sd: f64,
}

/// Mean per-rule result percentage, per tool, version, rule type and
/// result category, over repetitions. `rule_sd` is the spread across rules
/// averaged over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub tool: ToolId,
    pub version: String,
    pub rule_type: String,
    pub result: String,
    pub trials: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub rule_sd: f64,
}

/// Result distribution of the production profile and of each tool on the
/// latest configured version, with the distance to production.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionRow {
    pub source: String,
    pub version: String,
    pub rule_type: String,
    pub trials: usize,
    pub pass: f64,
    pub fail: f64,
    pub warning: f64,
    pub not_applied: f64,
    pub not_executed: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub coverage: Vec<CoverageRow>,
    pub errors: Vec<ErrorRow>,
    pub rule_status: Vec<StatusRow>,
    pub rule_results: Vec<ResultRow>,
    pub production: Vec<ProductionRow>,
}

/// Mean, sample sd and median; NaN when there is nothing to summarize.
fn stats(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let s = mean_sd(xs);
    (s.mean, s.sd, median(xs))
}

fn completed<'a>(trials: &'a [TrialRecord], tool: ToolId, version: Option<&'a str>) -> Vec<&'a TrialMetrics> {
    trials
        .iter()
        .filter(|t| t.trial.tool == tool && version.is_none_or(|v| t.trial.version == v))
        .filter_map(TrialRecord::metrics)
        .collect()
}

impl Tables {
    /// Summarize completed trials; failed trials are left out of every mean.
    pub fn compute(tools: &[ToolId], versions: &[String], trials: &[TrialRecord], profile: &ProductionProfile) -> Tables {
        let mut t = Tables {
            coverage: Vec::new(),
            errors: Vec::new(),
            rule_status: Vec::new(),
            rule_results: Vec::new(),
            production: Vec::new(),
        };
        for &tool in tools {
            let ms = completed(trials, tool, None);
            let col = |f: &dyn Fn(&TrialMetrics) -> f64| {
                let (m, sd, _) = stats(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
                (m, sd)
            };
            let (line_mean, line_sd) = col(&|m| m.coverage.line_pct);
            let (branch_mean, branch_sd) = col(&|m| m.coverage.branch_pct);
            let (method_mean, method_sd) = col(&|m| m.coverage.method_pct);
            t.coverage.push(CoverageRow {
                tool,
                line_mean,
                line_sd,
                branch_mean,
                branch_sd,
                method_mean,
                method_sd,
            });

            let cat = |pick: fn(&TrialMetrics) -> CategoryCounts, f: fn(CategoryCounts) -> usize| {
                col(&|m| f(pick(m)) as f64)
            };
            let errs = |m: &TrialMetrics| m.errors.unique_errors;
            let points = |m: &TrialMetrics| m.errors.unique_failure_points;
            let lib = |m: &TrialMetrics| m.errors.unique_library_failure_points;
            let (errors_all_mean, errors_all_sd) = cat(errs, |c| c.all);
            let (errors_tool_mean, errors_tool_sd) = cat(errs, |c| c.tool);
            let (errors_io_mean, errors_io_sd) = cat(errs, |c| c.io);
            let (errors_remaining_mean, errors_remaining_sd) = cat(errs, |c| c.remaining);
            let (failure_points_all_mean, failure_points_all_sd) = cat(points, |c| c.all);
            let (failure_points_tool_mean, failure_points_tool_sd) = cat(points, |c| c.tool);
            let (failure_points_io_mean, failure_points_io_sd) = cat(points, |c| c.io);
            let (failure_points_remaining_mean, failure_points_remaining_sd) = cat(points, |c| c.remaining);
            let (library_failure_points_mean, library_failure_points_sd) = cat(lib, |c| c.all);
            t.errors.push(ErrorRow {
                tool,
                errors_all_mean,
                errors_all_sd,
                errors_tool_mean,
                errors_tool_sd,
                errors_io_mean,
                errors_io_sd,
                errors_remaining_mean,
                errors_remaining_sd,
                failure_points_all_mean,
                failure_points_all_sd,
                failure_points_tool_mean,
                failure_points_tool_sd,
                failure_points_io_mean,
                failure_points_io_sd,
                failure_points_remaining_mean,
                failure_points_remaining_sd,
                library_failure_points_mean,
                library_failure_points_sd,
            });

            for version in versions {
                let ms = completed(trials, tool, Some(version));
                for ty in RuleType::ALL {
                    for status in ExecutionStatus::ALL {
                        let counts: Vec<f64> = ms.iter().map(|m| m.status.get(ty).get(status) as f64).collect();
                        let pcts: Vec<f64> = ms.iter().map(|m| m.status.get(ty).pct(status)).collect();
                        let (mean, sd, med) = stats(&counts);
                        let (pct_mean, pct_sd, _) = stats(&pcts);
                        t.rule_status.push(StatusRow {
                            tool,
                            version: version.clone(),
                            rule_type: ty.name().into(),
                            status: status.name().into(),
                            trials: ms.len(),
                            mean,
                            sd,
                            median: med,
                            pct_mean,
                            pct_sd,
                        });
                    }
                    for (k, result) in ResultVector::CATEGORIES.iter().enumerate() {
                        let means: Vec<f64> = ms.iter().map(|m| m.results.get(ty).mean.to_array()[k]).collect();
                        let sds: Vec<f64> = ms.iter().map(|m| m.results.get(ty).sd.to_array()[k]).collect();
                        let (mean, sd, med) = stats(&means);
                        t.rule_results.push(ResultRow {
                            tool,
                            version: version.clone(),
                            rule_type: ty.name().into(),
                            result: result.to_string(),
                            trials: ms.len(),
                            mean,
                            sd,
                            median: med,
                            rule_sd: stats(&sds).0,
                        });
                    }
                }
            }
        }

        let row = |source: &str, version: &str, ty: RuleType, trials: usize, v: ResultVector| {
            let [pass, fail, warning, not_applied, not_executed] = v.to_array();
            ProductionRow {
                source: source.into(),
                version: version.into(),
                rule_type: ty.name().into(),
                trials,
                pass,
                fail,
                warning,
                not_applied,
                not_executed,
                distance: v.distance(profile.for_type(ty)),
            }
        };
        for ty in RuleType::ALL {
            t.production.push(row("Production", "", ty, 0, profile.for_type(ty)));
        }
        if let Some(latest) = versions.last() {
            for &tool in tools {
                let ms = completed(trials, tool, Some(latest));
                for ty in RuleType::ALL {
                    let mut mean = [0.0; 5];
                    for (k, slot) in mean.iter_mut().enumerate() {
                        *slot = stats(&ms.iter().map(|m| m.results.get(ty).mean.to_array()[k]).collect::<Vec<_>>()).0;
                    }
                    t.production.push(row(tool.name(), latest, ty, ms.len(), ResultVector::from_array(mean)));
                }
            }
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join(COVERAGE_CSV), &self.coverage)?;
        write_csv(&dir.join(ERRORS_CSV), &self.errors)?;
        write_csv(&dir.join(RULE_STATUS_CSV), &self.rule_status)?;
        write_csv(&dir.join(RULE_RESULTS_CSV), &self.rule_results)?;
        write_csv(&dir.join(PRODUCTION_CSV), &self.production)?;
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
