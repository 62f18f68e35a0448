use crate::error::{Error, Result};

use super::graph::FeedbackGraph;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {parts:?}")));
        }
        Ok(())
    }

    /// `(train, validation, test)` sizes for a sequence of length `len`.
    /// Sequences shorter than 3 are train-only. Validation gets at least one
    /// event unless that would leave the test part empty.
    pub fn sizes(&self, len: usize) -> (usize, usize, usize) {
        if len < 3 {
            return (len, 0, 0);
        }
        let train = ((self.train * len as f64).floor() as usize).min(len - 1);
        let rest = len - train;
        let mut val = (self.validation * len as f64).floor() as usize;
        if rest >= 2 {
            val = val.max(1);
        }
        let val = val.min(rest - 1);
        (train, val, rest - val)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitReport {
    /// Users with fewer than 3 interactions, kept train-only.
    pub train_only_users: Vec<usize>,
    pub train_events: usize,
    pub validation_events: usize,
    pub test_events: usize,
}

/// Per-user chronological train / validation / test views over one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub full: FeedbackGraph,
    pub train: FeedbackGraph,
    pub validation: FeedbackGraph,
    pub test: FeedbackGraph,
    pub ratios: SplitRatios,
    pub report: SplitReport,
}

pub fn chronological_split(graph: &FeedbackGraph, ratios: SplitRatios) -> Result<SplitDataset> {
    ratios.validate()?;
    let mut train = Vec::with_capacity(graph.n_users());
    let mut val = Vec::with_capacity(graph.n_users());
    let mut test = Vec::with_capacity(graph.n_users());
    let mut report = SplitReport::default();
    for (u, seq) in graph.sequences.iter().enumerate() {
        let (a, b, _) = ratios.sizes(seq.len());
        if seq.len() < 3 {
            report.train_only_users.push(u);
        }
        train.push(seq[..a].to_vec());
        val.push(seq[a..a + b].to_vec());
        test.push(seq[a + b..].to_vec());
    }
    report.train_events = train.iter().map(Vec::len).sum();
    report.validation_events = val.iter().map(Vec::len).sum();
    report.test_events = test.iter().map(Vec::len).sum();
    Ok(SplitDataset {
        full: graph.clone(),
        train: graph.with_sequences(train),
        validation: graph.with_sequences(val),
        test: graph.with_sequences(test),
        ratios,
        report,
    })
}

impl SplitDataset {
    /// The events that precede `split` for each user: train for validation,
    /// train + validation for test.
    pub fn history_for(&self, split: Split) -> FeedbackGraph {
        match split {
            Split::Train | Split::Validation => self.train.clone(),
            Split::Test => {
                let seqs = self
                    .train
                    .sequences
                    .iter()
                    .zip(&self.validation.sequences)
                    .map(|(a, b)| a.iter().chain(b).cloned().collect())
                    .collect();
                self.train.with_sequences(seqs)
            }
        }
    }

    pub fn part(&self, split: Split) -> &FeedbackGraph {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records::InteractionRecord;

    #[test]
    fn floor_rules_for_short_sequences() {
        let r = SplitRatios::default();
        // hand enumeration: train = floor(0.7 n), val = max(floor(0.1 n), 1)
        // while the test part keeps at least one event
        let expected = [
            (3, (2, 0, 1)),
            (4, (2, 1, 1)),
            (5, (3, 1, 1)),
            (6, (4, 1, 1)),
            (7, (4, 1, 2)),
            (8, (5, 1, 2)),
            (9, (6, 1, 2)),
            (10, (7, 1, 2)),
            (11, (7, 1, 3)),
            (12, (8, 1, 3)),
        ];
        for (len, sizes) in expected {
            assert_eq!(r.sizes(len), sizes, "len {len}");
        }
        assert_eq!(r.sizes(1), (1, 0, 0));
        assert_eq!(r.sizes(2), (2, 0, 0));
        assert_eq!(r.sizes(20), (14, 2, 4));
    }

    #[test]
    fn rejects_bad_ratios() {
        let bad = SplitRatios {
            train: 0.7,
            validation: 0.2,
            test: 0.2,
        };
        assert!(bad.validate().is_err());
        let neg = SplitRatios {
            train: 1.1,
            validation: -0.1,
            test: 0.0,
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn split_flags_short_users_and_partitions() {
        let mut recs = Vec::new();
        for t in 0..10 {
            recs.push(InteractionRecord {
                user_id: "a".into(),
                item_id: format!("i{t}"),
                rating: 5.0,
                timestamp: t,
            });
        }
        recs.push(InteractionRecord {
            user_id: "b".into(),
            item_id: "i0".into(),
            rating: 2.0,
            timestamp: 3,
        });
        let g = FeedbackGraph::from_records(&recs, 4.0).unwrap();
        let s = chronological_split(&g, SplitRatios::default()).unwrap();
        assert_eq!(s.train.sequences[0].len(), 7);
        assert_eq!(s.validation.sequences[0].len(), 1);
        assert_eq!(s.test.sequences[0].len(), 2);
        assert_eq!(s.report.train_only_users, vec![1]);
        assert_eq!(s.train.sequences[1].len(), 1);
        assert_eq!(s.history_for(Split::Test).sequences[0].len(), 8);
    }
}
