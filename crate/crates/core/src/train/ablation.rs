//! Grid studies: walk length, infusion strategy, cue removal and training
//! data fraction.
//!
//! Every grid point trains with the base configuration's seed, so model
//! initialisation, batch order and dropout match the base run; only the
//! perturbation under study (and the randomness it draws from its own tagged
//! stream) differs. A point that perturbs nothing reproduces the base run.

use std::fmt;
use std::path::Path;

use crate::dataset::{Dataset, WALK_EMBEDDINGS_FILE};
use crate::embed_io::{EmbeddingMatrix, TEXT_ENCODER_SEED};
use crate::error::{Error, Result};
use crate::hin::Cue;
use crate::infusion::WalkAggregation;
use crate::seed;
use crate::walk::{embed_walks, walks_for_corpus, WalkImportance, WalkSettings};

use super::{par_map, train, EvalReport, TrainConfig, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationKind {
    WalkLength,
    InfusionStrategy,
    CueRemoval,
    DataFraction,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] = [
        AblationKind::WalkLength,
        AblationKind::InfusionStrategy,
        AblationKind::CueRemoval,
        AblationKind::DataFraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::WalkLength => "walk-length",
            AblationKind::InfusionStrategy => "infusion-strategy",
            AblationKind::CueRemoval => "cue-removal",
            AblationKind::DataFraction => "data-fraction",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        AblationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridPoint {
    WalkLength(usize),
    Infusion {
        aggregation: WalkAggregation,
        heads: usize,
    },
    /// `None` removes every cue kind at once.
    CueRemoval {
        cue: Option<Cue>,
        p: f64,
    },
    DataFraction(f64),
}

fn cue_name(c: Option<Cue>) -> &'static str {
    match c {
        None => "all",
        Some(Cue::Topic) => "topic",
        Some(Cue::Sentiment) => "sentiment",
        Some(Cue::Tense) => "tense",
        Some(Cue::Quotation) => "quotation",
        Some(Cue::Entity) => "entity",
    }
}

impl GridPoint {
    pub fn kind(&self) -> AblationKind {
        match self {
            GridPoint::WalkLength(_) => AblationKind::WalkLength,
            GridPoint::Infusion { .. } => AblationKind::InfusionStrategy,
            GridPoint::CueRemoval { .. } => AblationKind::CueRemoval,
            GridPoint::DataFraction(_) => AblationKind::DataFraction,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            GridPoint::WalkLength(k) => k.to_string(),
            GridPoint::Infusion { aggregation, heads } => format!("{}:{heads}", aggregation.name()),
            GridPoint::CueRemoval { cue, p } => format!("{}:{p}", cue_name(cue)),
            GridPoint::DataFraction(f) => f.to_string(),
        }
    }

    /// The base configuration with this point's setting applied.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match *self {
            GridPoint::WalkLength(k) => cfg.walk_length = k,
            GridPoint::Infusion { aggregation, heads } => {
                cfg.walk_aggregation = aggregation;
                cfg.heads = heads;
            }
            GridPoint::CueRemoval { cue, p } => {
                let cues = match cue {
                    Some(c) => vec![c],
                    None => Cue::ALL.to_vec(),
                };
                for c in cues {
                    if p > 0.0 {
                        cfg.cue_removal.insert(c, p);
                    } else {
                        cfg.cue_removal.remove(&c);
                    }
                }
            }
            GridPoint::DataFraction(f) => cfg.data_fraction = f,
        }
        cfg
    }
}

pub fn default_grid(kind: AblationKind) -> Vec<GridPoint> {
    match kind {
        AblationKind::WalkLength => (1..=10).map(GridPoint::WalkLength).collect(),
        AblationKind::InfusionStrategy => [
            WalkAggregation::Attention,
            WalkAggregation::Max,
            WalkAggregation::Avg,
        ]
        .into_iter()
        .flat_map(|aggregation| {
            [1, 2, 4, 8].map(|heads| GridPoint::Infusion { aggregation, heads })
        })
        .collect(),
        AblationKind::CueRemoval => Cue::ALL
            .into_iter()
            .flat_map(|c| {
                [0.0, 0.25, 0.5, 0.75, 1.0].map(|p| GridPoint::CueRemoval { cue: Some(c), p })
            })
            .collect(),
        AblationKind::DataFraction => (1..=10)
            .map(|i| GridPoint::DataFraction(i as f64 / 10.0))
            .collect(),
    }
}

fn parse_number<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{s}` is not a valid {what}")))
}

/// Parses a comma-separated grid. Walk lengths also accept inclusive ranges
/// `a..b`; infusion points are `aggregation:heads`, cue points `cue:p` with
/// `all` for every cue.
pub fn parse_grid(kind: AblationKind, s: &str) -> Result<Vec<GridPoint>> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        match kind {
            AblationKind::WalkLength => {
                if let Some((a, b)) = item.split_once("..") {
                    let (a, b): (usize, usize) = (
                        parse_number(a, "walk length")?,
                        parse_number(b, "walk length")?,
                    );
                    out.extend((a..=b).map(GridPoint::WalkLength));
                } else {
                    out.push(GridPoint::WalkLength(parse_number(item, "walk length")?));
                }
            }
            AblationKind::InfusionStrategy => {
                let (agg, heads) = item.split_once(':').ok_or_else(|| {
                    Error::Config(format!("expected `aggregation:heads`, got `{item}`"))
                })?;
                out.push(GridPoint::Infusion {
                    aggregation: WalkAggregation::parse(agg)?,
                    heads: parse_number(heads, "head count")?,
                });
            }
            AblationKind::CueRemoval => {
                let (cue, p) = item.split_once(':').ok_or_else(|| {
                    Error::Config(format!("expected `cue:probability`, got `{item}`"))
                })?;
                let cue = if cue.eq_ignore_ascii_case("all") {
                    None
                } else {
                    Some(Cue::parse(cue)?)
                };
                out.push(GridPoint::CueRemoval {
                    cue,
                    p: parse_number(p, "probability")?,
                });
            }
            AblationKind::DataFraction => {
                out.push(GridPoint::DataFraction(parse_number(item, "fraction")?))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("empty {kind} grid")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub point: GridPoint,
    pub report: EvalReport,
}

/// Walks of length `k` with their embeddings: read from
/// `<dir>/walks_k{k}/walk_embeddings.txt` when present, otherwise regenerated
/// and embedded with the stand-in text encoder.
pub(super) fn walks_of_length(
    data: &Dataset,
    cfg: &TrainConfig,
    k: usize,
    dir: Option<&Path>,
) -> Result<Dataset> {
    let mut out = data.clone();
    if let Some(path) = dir.map(|d| d.join(format!("walks_k{k}")).join(WALK_EMBEDDINGS_FILE)) {
        if path.exists() {
            out.walk_embeddings = EmbeddingMatrix::read(&path)?;
            return Ok(out);
        }
    }
    tracing::warn!(
        k,
        "no precomputed walk embeddings; using the stand-in text encoder"
    );
    let settings = WalkSettings {
        k,
        walks_per_entity: cfg.walks_per_entity,
        seed: seed::derive(cfg.seed, "walks"),
    };
    out.walks = walks_for_corpus(
        &data.kg,
        &data.corpus,
        &settings,
        &WalkImportance::from_graph(&data.kg),
    )?;
    out.walk_embeddings = embed_walks(&out.walks, data.dim(), TEXT_ENCODER_SEED)?;
    Ok(out)
}

/// One cross-validated run per grid point, in grid order. `data_dir` is
/// searched for precomputed walk embeddings of each length.
pub fn run_ablation(
    grid: &[GridPoint],
    data: &Dataset,
    base: &TrainConfig,
    data_dir: Option<&Path>,
    opts: &TrainOptions,
) -> Result<Vec<AblationRow>> {
    let configs: Vec<TrainConfig> = grid.iter().map(|p| p.apply(base)).collect();
    for (p, c) in grid.iter().zip(&configs) {
        c.validate()
            .map_err(|e| Error::Config(format!("grid point {}: {e}", p.label())))?;
    }
    let inner = TrainOptions {
        threads: 1,
        checkpoint_dir: None,
    };
    par_map(grid.len(), opts.threads, |i| {
        let point = grid[i];
        tracing::info!(kind = %point.kind(), setting = %point.label(), "grid point");
        let report = match point {
            GridPoint::WalkLength(k) => train(
                &walks_of_length(data, &configs[i], k, data_dir)?,
                &configs[i],
                &inner,
            )?,
            _ => train(data, &configs[i], &inner)?,
        };
        Ok(AblationRow { point, report })
    })
}

/// Tab-separated results with a header row.
pub fn rows_to_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("kind\tsetting\taccuracy\tmacro_f1\tconfig_hash\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.point.kind(),
            r.point.label(),
            r.report.accuracy,
            r.report.macro_f1,
            r.report.config_hash
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids_have_the_documented_sizes() {
        assert_eq!(default_grid(AblationKind::WalkLength).len(), 10);
        assert_eq!(default_grid(AblationKind::DataFraction).len(), 10);
        assert_eq!(default_grid(AblationKind::CueRemoval).len(), 25);
        assert_eq!(default_grid(AblationKind::InfusionStrategy).len(), 12);
    }

    #[test]
    fn grids_parse() {
        assert_eq!(
            parse_grid(AblationKind::WalkLength, "1..3, 7").unwrap(),
            vec![
                GridPoint::WalkLength(1),
                GridPoint::WalkLength(2),
                GridPoint::WalkLength(3),
                GridPoint::WalkLength(7)
            ]
        );
        assert_eq!(
            parse_grid(AblationKind::InfusionStrategy, "mp:4").unwrap(),
            vec![GridPoint::Infusion {
                aggregation: WalkAggregation::Max,
                heads: 4
            }]
        );
        assert_eq!(
            parse_grid(AblationKind::CueRemoval, "R3:0.5,all:1").unwrap(),
            vec![
                GridPoint::CueRemoval {
                    cue: Some(Cue::Sentiment),
                    p: 0.5
                },
                GridPoint::CueRemoval { cue: None, p: 1.0 }
            ]
        );
        for (kind, bad) in [
            (AblationKind::WalkLength, "x"),
            (AblationKind::CueRemoval, "sentiment"),
            (AblationKind::InfusionStrategy, "cnn:2"),
            (AblationKind::DataFraction, ""),
        ] {
            assert!(
                matches!(parse_grid(kind, bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn zero_removal_leaves_the_base_configuration_untouched() {
        let base = TrainConfig::default();
        assert_eq!(
            GridPoint::CueRemoval { cue: None, p: 0.0 }.apply(&base),
            base
        );
        assert_eq!(GridPoint::DataFraction(1.0).apply(&base), base);
        let dropped = GridPoint::CueRemoval {
            cue: Some(Cue::Tense),
            p: 1.0,
        }
        .apply(&base);
        assert_eq!(dropped.cue_removal.get(&Cue::Tense), Some(&1.0));
        assert_eq!(
            AblationKind::parse("cue-removal").unwrap(),
            AblationKind::CueRemoval
        );
    }
}
