use std::fmt::Write as _;

use crate::config::{Ablation, RunConfig};
use crate::data::{CorrelationSet, PreparedDataset, Split};
use crate::error::Result;
use crate::model::fit_prepared;

use super::{evaluate_model, MetricReport};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub ablation: Ablation,
    pub order: usize,
    pub report: MetricReport,
}

impl AblationRow {
    pub fn ndcg20(&self) -> f64 {
        self.report.ndcg_at(20).expect("20 is a reported cutoff")
    }

    pub fn recall20(&self) -> f64 {
        self.report.recall_at(20).expect("20 is a reported cutoff")
    }
}

/// Decoder ablations (three removals plus the full model) and the
/// correlation-order sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub ablations: Vec<AblationRow>,
    pub orders: Vec<AblationRow>,
}

pub const SWEEP_ORDERS: [usize; 4] = [1, 2, 3, 4];

fn train_and_score(ds: &PreparedDataset, cfg: &RunConfig, split: Split, label: String) -> Result<AblationRow> {
    let corr = CorrelationSet::build(&ds.split.train, cfg.model.order, cfg.model.self_loops)?;
    let outcome = fit_prepared(ds, &corr, cfg, &mut |_| {})?;
    let model = outcome.checkpoint.model();
    let report = evaluate_model(&model, ds, &corr, split, cfg.eval)?;
    Ok(AblationRow {
        label,
        ablation: cfg.model.ablation,
        order: cfg.model.order,
        report,
    })
}

/// Trains and evaluates every variant from the same base configuration and
/// seed. The order sweep reuses the full-model run for the base order.
pub fn ablation_suite(ds: &PreparedDataset, base: &RunConfig, split: Split) -> Result<AblationTable> {
    let variants = [
        Ablation { no_seq: true, ..Ablation::default() },
        Ablation { no_gra1: true, ..Ablation::default() },
        Ablation { no_gra2: true, ..Ablation::default() },
        Ablation::default(),
    ];
    let mut ablations = Vec::new();
    for a in variants {
        let mut cfg = base.clone();
        cfg.model.ablation = a;
        ablations.push(train_and_score(ds, &cfg, split, a.label().to_string())?);
    }
    let full = ablations.last().expect("four variants").clone();
    let mut orders = Vec::new();
    for l in SWEEP_ORDERS {
        let label = format!("{l}-Order");
        if l == base.model.order {
            orders.push(AblationRow { label, ..full.clone() });
            continue;
        }
        let mut cfg = base.clone();
        cfg.model.ablation = Ablation::default();
        cfg.model.order = l;
        orders.push(train_and_score(ds, &cfg, split, label)?);
    }
    Ok(AblationTable { ablations, orders })
}

impl AblationTable {
    pub fn full(&self) -> Option<&AblationRow> {
        self.ablations.iter().find(|r| r.ablation == Ablation::default())
    }

    /// The two tables as text: decoder ablations with the full model's
    /// relative change in NDCG@20, then R@20 and N@20 per order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let full = self.full().map(AblationRow::ndcg20);
        let _ = writeln!(s, "Ablation (NDCG@20; Full relative to the variant)");
        let _ = writeln!(s, "Model\tN@20\tR@20\tFull vs. variant");
        for r in &self.ablations {
            let change = match full {
                Some(f) if r.ablation != Ablation::default() && r.ndcg20() > 0.0 => {
                    format!("{:+.1}%", (f / r.ndcg20() - 1.0) * 100.0)
                }
                _ => "-".into(),
            };
            let _ = writeln!(s, "{}\t{:.4}\t{:.4}\t{change}", r.label, r.ndcg20(), r.recall20());
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Feedback orders");
        let _ = writeln!(s, "Order\tR@20\tN@20");
        for r in &self.orders {
            let _ = writeln!(s, "{}\t{:.4}\t{:.4}", r.label, r.recall20(), r.ndcg20());
        }
        s
    }

    /// One `section<TAB>label<TAB>order<TAB>recall@20<TAB>ndcg@20` row per result.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("section\tlabel\torder\trecall@20\tndcg@20\n");
        for (section, rows) in [("ablation", &self.ablations), ("order", &self.orders)] {
            for r in rows {
                let _ = writeln!(
                    s,
                    "{section}\t{}\t{}\t{:.6}\t{:.6}",
                    r.label,
                    r.order,
                    r.recall20(),
                    r.ndcg20()
                );
            }
        }
        s
    }

    pub fn row_count(&self) -> usize {
        self.ablations.len() + self.orders.len()
    }
}
