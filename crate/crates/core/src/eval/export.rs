use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{CorrelationSet, PreparedDataset, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ExportPaths {
    pub user_sequential: PathBuf,
    pub user_structural: PathBuf,
    pub items: PathBuf,
}

fn table(ids: &[String], m: &Matrix) -> String {
    let mut s = String::new();
    for (id, row) in ids.iter().zip(m.rows()) {
        s.push_str(id);
        for v in row {
            // `{:?}` is the shortest representation that parses back exactly
            let _ = write!(s, "\t{v:?}");
        }
        s.push('\n');
    }
    s
}

/// Writes `user_sequential.tsv` (`e_S`), `user_structural.tsv` (`e_H1`)
/// and `item_representations.tsv` (convolved item rows) under `dir`. User
/// vectors are computed from the training and validation events.
pub fn export_representations(
    model: &Model,
    ds: &PreparedDataset,
    corr: &CorrelationSet,
    dir: &Path,
) -> Result<ExportPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let history = ds.split.history_for(Split::Test);
    let users: Vec<usize> = (0..history.n_users()).collect();
    let reps = model.user_representations(corr, &history, &users)?;
    let items = model.item_representations(corr)?;
    let maps = &ds.split.full.maps;
    let paths = ExportPaths {
        user_sequential: dir.join("user_sequential.tsv"),
        user_structural: dir.join("user_structural.tsv"),
        items: dir.join("item_representations.tsv"),
    };
    for (path, ids, m) in [
        (&paths.user_sequential, &maps.user_ids, &reps.e_s),
        (&paths.user_structural, &maps.user_ids, &reps.e_h1),
        (&paths.items, &maps.item_ids, &items),
    ] {
        std::fs::write(path, table(ids, m)).map_err(|e| Error::io(path, e))?;
    }
    Ok(paths)
}
