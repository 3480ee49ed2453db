//! Grid sweeps over the architecture switches.
//!
//! Every mode expands a grid into concrete `(ModelConfig, TrainConfig)`
//! points up front, so a bad grid fails before any training starts. Each
//! point trains fresh models with the base seeds; points share only the
//! loaded graph.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eval::AggregateReport;
use crate::kg::{KnowledgeGraph, Split};
use crate::model::{DecoderKind, DynamicBranch, ModelConfig};
use crate::train::{repeated_runs, TrainConfig};
use crate::{kernels, Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    /// Sweep the mask probability `α`.
    Sparsity,
    /// Sweep `(k, t)`, plus one pure-MLP row of matched size.
    Experts,
    /// Sweep `D`, each with residual, plain and a matched wide layer.
    Depth,
    /// Dense layers with the hidden width cut to `floor(α · d_h)`.
    Downscale,
    /// Dense layers with dropout raised to `p + α(1 - p)`.
    Dropout,
    /// Encoder branches switched on and off.
    Components,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Sparsity,
        AblationMode::Experts,
        AblationMode::Depth,
        AblationMode::Downscale,
        AblationMode::Dropout,
        AblationMode::Components,
    ];

    /// Grid used when none is given.
    pub fn default_grid(self) -> &'static str {
        match self {
            AblationMode::Sparsity => "0.1,0.3,0.5,0.7,0.9",
            AblationMode::Experts => "1:1,2:1,3:1,4:1,3:0.5,3:2",
            AblationMode::Depth => "1,2,4",
            AblationMode::Downscale | AblationMode::Dropout => "0.1,0.3,0.5,0.7,0.9",
            AblationMode::Components => "D+R+Res,D+Res,R+Res,Res",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Sparsity => "sparsity",
            AblationMode::Experts => "experts",
            AblationMode::Depth => "depth",
            AblationMode::Downscale => "downscale",
            AblationMode::Dropout => "dropout",
            AblationMode::Components => "components",
        })
    }
}

impl FromStr for AblationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::param(format!("unknown ablation mode '{s}'")))
    }
}

/// One concrete grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub label: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_real(s: &str, what: &str) -> Result<Real> {
    s.trim()
        .parse()
        .map_err(|_| Error::param(format!("bad {what} '{s}' in grid")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::param(format!("bad {what} '{s}' in grid")))
}

fn unit_alpha(alpha: Real) -> Result<Real> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("grid value {alpha} must lie in [0, 1]")));
    }
    Ok(alpha)
}

/// `p + α(1 - p)`.
pub fn raised_dropout(p: Real, alpha: Real) -> Real {
    p + alpha * (1.0 - p)
}

/// `floor(α · width)`, rejected when it reaches zero.
pub fn downscaled_width(width: usize, alpha: Real) -> Result<usize> {
    let w = (alpha * width as Real).floor() as usize;
    if w == 0 {
        return Err(Error::param(format!(
            "downscale factor {alpha} leaves width {width} with no units"
        )));
    }
    Ok(w)
}

/// Expands `grid` (comma-separated, empty for the mode's default) into
/// validated points.
pub fn plan(mode: AblationMode, grid: &str, model: &ModelConfig, train: &TrainConfig) -> Result<Vec<GridPoint>> {
    let grid = if grid.trim().is_empty() { mode.default_grid() } else { grid };
    let entries: Vec<&str> = grid.split(',').map(str::trim).filter(|e| !e.is_empty()).collect();
    if entries.is_empty() {
        return Err(Error::param("empty ablation grid"));
    }
    let point = |label: String, model: ModelConfig| GridPoint {
        label,
        model,
        train: train.clone(),
    };
    let mut points = Vec::new();
    match mode {
        AblationMode::Sparsity => {
            for e in entries {
                let alpha = parse_real(e, "sparsity")?;
                points.push(point(format!("alpha={e}"), ModelConfig { sparsity: alpha, ..model.clone() }));
            }
        }
        AblationMode::Experts => {
            for e in entries {
                let (k, t) = e
                    .split_once(':')
                    .ok_or_else(|| Error::param(format!("experts grid entries are k:t, got '{e}'")))?;
                let m = ModelConfig {
                    dynamic: DynamicBranch::Experts,
                    experts: parse_usize(k, "expert count")?,
                    temperature: parse_real(t, "temperature")?,
                    ..model.clone()
                };
                points.push(point(format!("k={},t={}", k.trim(), t.trim()), m));
            }
            let base = ModelConfig {
                dynamic: DynamicBranch::Experts,
                ..model.clone()
            };
            let width = base.matched_pure_mlp_width();
            points.push(point(
                format!("pure-mlp:{width}"),
                ModelConfig {
                    dynamic: DynamicBranch::PureMlp { width },
                    ..model.clone()
                },
            ));
        }
        AblationMode::Depth => {
            for e in entries {
                let depth = parse_usize(e, "depth")?;
                if depth == 0 {
                    return Err(Error::param("depth grid values must be at least 1"));
                }
                let m = ModelConfig { depth, ..model.clone() };
                let width = m.matched_wide_width();
                points.push(point(format!("D={depth},residual"), ModelConfig { decoder: DecoderKind::Residual, ..m.clone() }));
                points.push(point(format!("D={depth},plain"), ModelConfig { decoder: DecoderKind::Plain, ..m.clone() }));
                points.push(point(
                    format!("D={depth},wide-linear:{width}"),
                    ModelConfig {
                        decoder: DecoderKind::WideLinear { width },
                        ..m
                    },
                ));
            }
        }
        AblationMode::Downscale => {
            for e in entries {
                let alpha = unit_alpha(parse_real(e, "downscale factor")?)?;
                let hidden = downscaled_width(model.hidden, alpha)?;
                points.push(point(
                    format!("alpha={e},hidden={hidden}"),
                    ModelConfig {
                        hidden,
                        sparsity: 0.0,
                        ..model.clone()
                    },
                ));
            }
        }
        AblationMode::Dropout => {
            for e in entries {
                let alpha = unit_alpha(parse_real(e, "dropout factor")?)?;
                let p = raised_dropout(model.dropout, alpha);
                points.push(point(
                    format!("alpha={e},dropout={p:.4}"),
                    ModelConfig {
                        dropout: p,
                        sparsity: 0.0,
                        ..model.clone()
                    },
                ));
            }
        }
        AblationMode::Components => {
            for e in entries {
                let (dynamic, relation_aware) = match e {
                    "D+R+Res" => (DynamicBranch::Experts, true),
                    "D+Res" => (DynamicBranch::Experts, false),
                    "R+Res" => (DynamicBranch::Off, true),
                    "Res" => (DynamicBranch::Off, false),
                    other => {
                        return Err(Error::param(format!(
                            "unknown component set '{other}' (D+R+Res, D+Res, R+Res, Res)"
                        )))
                    }
                };
                points.push(point(
                    e.to_string(),
                    ModelConfig {
                        dynamic,
                        relation_aware,
                        decoder: DecoderKind::Residual,
                        ..model.clone()
                    },
                ));
            }
        }
    }
    for p in &points {
        p.model
            .validate()
            .map_err(|e| Error::param(format!("grid point '{}': {e}", p.label)))?;
        p.train.validate()?;
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    /// Full effective configuration of the point.
    pub config: BTreeMap<String, String>,
    pub params: usize,
    /// Last-epoch training loss averaged over runs.
    pub final_train_loss: f64,
    pub result: AggregateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mode: String,
    pub split: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::param(format!("bad ablation json: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# ablation mode = {}, split = {}", self.mode, self.split);
        let _ = writeln!(
            out,
            "{:<28} {:>9} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "point", "params", "loss", "mrr", "hits1", "hits3", "hits10", "h1_std"
        );
        for r in &self.rows {
            let m = r.result.mean;
            let _ = writeln!(
                out,
                "{:<28} {:>9} {:>10.6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.label, r.params, r.final_train_loss, m.mrr, m.hits1, m.hits3, m.hits10, r.result.std.hits1
            );
        }
        out
    }
}

/// Plans the grid, then trains and evaluates `runs` models per point.
pub fn run_ablation(
    kg: &KnowledgeGraph,
    mode: AblationMode,
    grid: &str,
    model: &ModelConfig,
    train: &TrainConfig,
    runs: usize,
    split: Split,
) -> Result<AblationReport> {
    let points = plan(mode, grid, model, train)?;
    let rows = kernels::map_ordered(&points, |p| -> Result<AblationRow> {
        let rr = repeated_runs(kg, &p.model, &p.train, runs, split)?;
        let final_train_loss = rr
            .outcomes
            .iter()
            .map(|o| o.history.last().map_or(f64::NAN, |r| r.loss as f64))
            .sum::<f64>()
            / runs as f64;
        let config = p
            .model
            .to_pairs()
            .into_iter()
            .chain(p.train.to_pairs())
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Ok(AblationRow {
            label: p.label.clone(),
            config,
            params: p.model.param_count(),
            final_train_loss,
            result: rr.aggregate,
        })
    });
    Ok(AblationReport {
        mode: mode.to_string(),
        split: split.to_string(),
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base() -> (ModelConfig, TrainConfig) {
        let m = ModelConfig {
            n_entities: 20,
            n_relations: 6,
            dropout: 0.3,
            ..ModelConfig::default()
        };
        (m, TrainConfig::default())
    }

    #[test]
    fn dropout_formula() {
        assert_relative_eq!(raised_dropout(0.3, 0.5), 0.65, epsilon = 1e-12);
        let (m, t) = base();
        let pts = plan(AblationMode::Dropout, "0.5", &m, &t).unwrap();
        assert_relative_eq!(pts[0].model.dropout, 0.65, epsilon = 1e-12);
        assert_eq!(pts[0].model.sparsity, 0.0);
    }

    #[test]
    fn degenerate_downscale_is_rejected() {
        let (m, t) = base();
        assert!(plan(AblationMode::Downscale, "0", &m, &t).is_err());
        assert!(plan(AblationMode::Downscale, "0.5,1.5", &m, &t).is_err());
        let pts = plan(AblationMode::Downscale, "0.5", &m, &t).unwrap();
        assert_eq!(pts[0].model.hidden, 16);
    }

    #[test]
    fn depth_mode_emits_three_rows_per_depth() {
        let (m, t) = base();
        let pts = plan(AblationMode::Depth, "2,4", &m, &t).unwrap();
        assert_eq!(pts.len(), 6);
        let wide = &pts[2].model;
        let DecoderKind::WideLinear { width } = wide.decoder else { panic!() };
        let d = wide.dim;
        let wide_params = width * (2 * d + 3) + d;
        let stack = 2 * (d * d + 3 * d);
        assert!((wide_params as i64 - stack as i64).unsigned_abs() as usize <= d + 2);
    }

    #[test]
    fn experts_mode_appends_matched_mlp() {
        let (m, t) = base();
        let pts = plan(AblationMode::Experts, "2:1,3:0.5", &m, &t).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(matches!(pts[2].model.dynamic, DynamicBranch::PureMlp { .. }));
        assert!(plan(AblationMode::Experts, "3", &m, &t).is_err());
        assert!(plan(AblationMode::Experts, "0:1", &m, &t).is_err());
        assert!(plan(AblationMode::Experts, "2:0", &m, &t).is_err());
    }

    #[test]
    fn invalid_sparsity_fails_before_running() {
        let (m, t) = base();
        assert!(plan(AblationMode::Sparsity, "0.5,1.0", &m, &t).is_err());
        assert!(plan(AblationMode::Components, "D+X", &m, &t).is_err());
        assert_eq!(plan(AblationMode::Components, "", &m, &t).unwrap().len(), 4);
    }

    #[test]
    fn modes_parse() {
        for m in AblationMode::ALL {
            assert_eq!(m.to_string().parse::<AblationMode>().unwrap(), m);
        }
    }
}
