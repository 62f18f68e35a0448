use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// One raw interaction from a log.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    /// Seconds since epoch.
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    /// Column of this polarity in `[positive, negative]` intensity pairs.
    pub fn column(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.sign())
    }
}

/// Default rating threshold: ratings strictly below it are negative.
pub const DEFAULT_THRESHOLD: f64 = 4.0;

/// `+1` iff `rating >= threshold`.
pub fn polarity_of(rating: f64, threshold: f64) -> Polarity {
    if rating >= threshold {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    User,
    Item,
    Rating,
    Timestamp,
    Ignore,
}

impl Field {
    fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "user" | "user_id" | "userid" => Some(Field::User),
            "item" | "item_id" | "itemid" | "movie_id" => Some(Field::Item),
            "rating" | "score" => Some(Field::Rating),
            "timestamp" | "time" | "ts" => Some(Field::Timestamp),
            "_" | "ignore" => Some(Field::Ignore),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Field::User => "user",
            Field::Item => "item",
            Field::Rating => "rating",
            Field::Timestamp => "timestamp",
            Field::Ignore => "_",
        }
    }
}

/// Column layout of a delimiter-separated interaction file.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub delimiter: String,
    pub columns: Vec<Field>,
    /// When set, the first line names the columns and overrides `columns`.
    pub header: bool,
    pub rating_min: f64,
    pub rating_max: f64,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            delimiter: ",".into(),
            columns: vec![Field::User, Field::Item, Field::Rating, Field::Timestamp],
            header: false,
            rating_min: 1.0,
            rating_max: 5.0,
        }
    }
}

impl Schema {
    /// MovieLens `ratings.dat` layout: `user::item::rating::timestamp`.
    pub fn movielens_dat() -> Self {
        Schema {
            delimiter: "::".into(),
            ..Schema::default()
        }
    }

    /// MovieLens-100K `u.data` layout (tab separated).
    pub fn tab() -> Self {
        Schema {
            delimiter: "\t".into(),
            ..Schema::default()
        }
    }

    /// Parses a comma-separated column order such as `item,user,rating,timestamp`.
    pub fn parse_columns(spec: &str) -> Result<Vec<Field>> {
        spec.split(',')
            .map(|name| {
                Field::parse(name).ok_or_else(|| Error::Schema(format!("unknown column name `{name}`")))
            })
            .collect()
    }

    pub fn columns_string(&self) -> String {
        self.columns.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
    }

    fn positions(columns: &[Field]) -> Result<[usize; 4]> {
        let find = |want: Field| {
            columns
                .iter()
                .position(|f| *f == want)
                .ok_or_else(|| Error::Schema(format!("missing column `{}`", want.name())))
        };
        Ok([
            find(Field::User)?,
            find(Field::Item)?,
            find(Field::Rating)?,
            find(Field::Timestamp)?,
        ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<InteractionRecord>,
    pub skipped: Vec<SkippedRow>,
}

pub fn load_interactions(path: &Path, schema: &Schema, lenient: bool) -> Result<LoadReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, schema, lenient)
}

/// Parses interaction text. Blank lines are ignored. In lenient mode bad
/// rows are skipped and reported; otherwise the first bad row is an error.
pub fn parse_interactions(text: &str, schema: &Schema, lenient: bool) -> Result<LoadReport> {
    if schema.delimiter.is_empty() {
        return Err(Error::Schema("empty delimiter".into()));
    }
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    let columns = if schema.header {
        let Some((_, head)) = lines.next() else {
            return Ok(LoadReport::default());
        };
        head.split(schema.delimiter.as_str())
            .map(|n| Field::parse(n).unwrap_or(Field::Ignore))
            .collect()
    } else {
        schema.columns.clone()
    };
    let pos = Schema::positions(&columns)?;
    let needed = pos.iter().max().copied().unwrap_or(0) + 1;

    let mut report = LoadReport::default();
    let mut first = true;
    for (line, raw) in lines {
        let fields: Vec<&str> = raw.split(schema.delimiter.as_str()).map(str::trim).collect();
        if first && !schema.header && fields.len() < needed {
            return Err(Error::Schema(format!(
                "line {line} has {} columns, schema `{}` needs {needed}",
                fields.len(),
                columns.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
            )));
        }
        first = false;
        match parse_row(&fields, pos, needed, schema) {
            Ok(rec) => report.records.push(rec),
            Err(reason) if lenient => report.skipped.push(SkippedRow { line, reason }),
            Err(detail) => return Err(Error::Row { line, detail }),
        }
    }
    Ok(report)
}

fn parse_row(
    fields: &[&str],
    [u, i, r, t]: [usize; 4],
    needed: usize,
    schema: &Schema,
) -> std::result::Result<InteractionRecord, String> {
    if fields.len() < needed {
        return Err(format!("expected {needed} columns, found {}", fields.len()));
    }
    let rating: f64 = fields[r]
        .parse()
        .map_err(|_| format!("unparsable rating `{}`", fields[r]))?;
    if !(rating >= schema.rating_min && rating <= schema.rating_max) {
        return Err(format!(
            "rating {rating} outside [{}, {}]",
            schema.rating_min, schema.rating_max
        ));
    }
    let timestamp: i64 = fields[t]
        .parse()
        .map_err(|_| format!("unparsable timestamp `{}`", fields[t]))?;
    if timestamp < 0 {
        return Err(format!("negative timestamp {timestamp}"));
    }
    if fields[u].is_empty() || fields[i].is_empty() {
        return Err("empty user or item id".into());
    }
    Ok(InteractionRecord {
        user_id: fields[u].to_string(),
        item_id: fields[i].to_string(),
        rating,
        timestamp,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub records: Vec<InteractionRecord>,
    pub removed_users: usize,
    pub removed_items: usize,
    /// Passes until the fixed point was reached.
    pub rounds: usize,
}

/// Removes users and items with fewer than `n` interactions, repeating
/// until no further removal happens.
pub fn filter_min_interactions(records: Vec<InteractionRecord>, n: usize) -> Result<FilterOutcome> {
    if n == 0 {
        return Err(Error::Config("min interactions must be >= 1".into()));
    }
    let users_before = distinct(&records, |r| &r.user_id);
    let items_before = distinct(&records, |r| &r.item_id);
    let mut current = records;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut per_user: HashMap<&str, usize> = HashMap::new();
        let mut per_item: HashMap<&str, usize> = HashMap::new();
        for r in &current {
            *per_user.entry(&r.user_id).or_default() += 1;
            *per_item.entry(&r.item_id).or_default() += 1;
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|r| per_user[r.user_id.as_str()] >= n && per_item[r.item_id.as_str()] >= n)
            .collect();
        if keep.iter().all(|k| *k) {
            break;
        }
        let mut it = keep.into_iter();
        current.retain(|_| it.next().unwrap_or(false));
    }
    if current.is_empty() {
        return Err(Error::Empty(format!(
            "no interactions survive the minimum-interaction filter n = {n}"
        )));
    }
    Ok(FilterOutcome {
        removed_users: users_before - distinct(&current, |r| &r.user_id),
        removed_items: items_before - distinct(&current, |r| &r.item_id),
        records: current,
        rounds,
    })
}

fn distinct<'a>(records: &'a [InteractionRecord], key: impl Fn(&'a InteractionRecord) -> &'a String) -> usize {
    records.iter().map(key).collect::<std::collections::HashSet<_>>().len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str) -> InteractionRecord {
        InteractionRecord {
            user_id: u.into(),
            item_id: i.into(),
            rating: 5.0,
            timestamp: 1,
        }
    }

    #[test]
    fn polarity_threshold_is_inclusive() {
        assert_eq!(polarity_of(4.0, DEFAULT_THRESHOLD), Polarity::Positive);
        assert_eq!(polarity_of(3.0, DEFAULT_THRESHOLD), Polarity::Negative);
        assert_eq!(polarity_of(5.0, DEFAULT_THRESHOLD), Polarity::Positive);
        assert_eq!(polarity_of(3.5, DEFAULT_THRESHOLD), Polarity::Negative);
    }

    #[test]
    fn parses_well_formed_file() {
        let text = "u1,i1,5,100\nu1,i2,3,200\nu2,i1,4,150\nu2,i3,1,300\n";
        let report = parse_interactions(text, &Schema::default(), false).unwrap();
        assert_eq!(report.records.len(), 4);
        assert!(report.skipped.is_empty());
        assert_eq!(report.records[1].item_id, "i2");
        assert_eq!(report.records[3].timestamp, 300);
    }

    #[test]
    fn lenient_mode_skips_bad_timestamp() {
        let text = "u1,i1,5,100\nu1,i2,3,yesterday\nu2,i1,4,150\nu2,i3,1,300\n";
        let report = parse_interactions(text, &Schema::default(), true).unwrap();
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].line, 2);

        let strict = parse_interactions(text, &Schema::default(), false);
        assert!(matches!(strict, Err(Error::Row { line: 2, .. })));
    }

    #[test]
    fn movielens_double_colon_round_trip() {
        let fixture = [
            ("1", "1193", 5.0, 978300760),
            ("1", "661", 3.0, 978302109),
            ("1", "914", 3.0, 978301968),
            ("2", "1357", 5.0, 978298709),
            ("2", "3068", 4.0, 978299000),
        ];
        let text: String = fixture
            .iter()
            .map(|(u, i, r, t)| format!("{u}::{i}::{r}::{t}\n"))
            .collect();
        let report = parse_interactions(&text, &Schema::movielens_dat(), false).unwrap();
        let parsed: Vec<_> = report
            .records
            .iter()
            .map(|r| (r.user_id.as_str(), r.item_id.as_str(), r.rating, r.timestamp))
            .collect();
        assert_eq!(parsed, fixture.to_vec());
    }

    #[test]
    fn column_override_and_header() {
        let text = "item\ttimestamp\tuser\trating\ni9\t5\tu3\t2\n";
        let schema = Schema {
            delimiter: "\t".into(),
            header: true,
            ..Schema::default()
        };
        let report = parse_interactions(text, &schema, false).unwrap();
        assert_eq!(report.records[0].user_id, "u3");
        assert_eq!(report.records[0].item_id, "i9");
        assert_eq!(report.records[0].rating, 2.0);

        let missing = "item,user,rating\ni1,u1,4\n";
        let schema = Schema {
            header: true,
            ..Schema::default()
        };
        assert!(matches!(
            parse_interactions(missing, &schema, false),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            parse_interactions("u1,i1,4\n", &Schema::default(), true),
            Err(Error::Schema(_))
        ));
        assert_eq!(
            Schema::parse_columns("item,user,rating,timestamp").unwrap()[0],
            Field::Item
        );
    }

    #[test]
    fn rating_outside_scale_is_a_row_error() {
        let report = parse_interactions("u,i,7,1\nu,i,3,1\n", &Schema::default(), true).unwrap();
        assert_eq!(report.records.len(), 1);
        assert!(report.skipped[0].reason.contains("outside"));
    }

    #[test]
    fn filter_is_identity_when_dense() {
        let recs: Vec<_> = ["a", "b"]
            .iter()
            .flat_map(|u| ["x", "y"].iter().map(move |i| rec(u, i)))
            .collect();
        let out = filter_min_interactions(recs.clone(), 2).unwrap();
        assert_eq!(out.records, recs);
        assert_eq!(out.rounds, 1);
    }

    #[test]
    fn filter_drops_sparse_user_only() {
        let mut recs = Vec::new();
        for u in ["a", "b", "c"] {
            for i in ["x", "y", "z"] {
                recs.push(rec(u, i));
            }
        }
        recs.push(rec("lonely", "x"));
        recs.push(rec("lonely", "y"));
        let out = filter_min_interactions(recs, 3).unwrap();
        assert_eq!(out.removed_users, 1);
        assert_eq!(out.removed_items, 0);
        assert!(out.records.iter().all(|r| r.user_id != "lonely"));
    }

    #[test]
    fn filter_empty_result_names_threshold() {
        let err = filter_min_interactions(vec![rec("a", "x")], 5).unwrap_err();
        assert!(err.to_string().contains("n = 5"));
    }

    /// Brute-force fixed point: repeatedly scan every (user, item) pair of an
    /// 8x8 grid and drop rows/columns below the threshold.
    fn brute_force_fixed_point(grid: &[[bool; 8]; 8], n: usize) -> Vec<(usize, usize)> {
        let mut alive_u = [true; 8];
        let mut alive_i = [true; 8];
        loop {
            let mut changed = false;
            for u in 0..8 {
                let c = (0..8).filter(|&i| alive_u[u] && alive_i[i] && grid[u][i]).count();
                if alive_u[u] && c < n {
                    alive_u[u] = false;
                    changed = true;
                }
            }
            for i in 0..8 {
                let c = (0..8).filter(|&u| alive_u[u] && alive_i[i] && grid[u][i]).count();
                if alive_i[i] && c < n {
                    alive_i[i] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut out = Vec::new();
        for u in 0..8 {
            for i in 0..8 {
                if grid[u][i] && alive_u[u] && alive_i[i] {
                    out.push((u, i));
                }
            }
        }
        out
    }

    #[test]
    fn filter_chain_reaction_matches_brute_force() {
        // users 0..5 x items 0..5 dense; user 6 only touches items 5,6;
        // item 6 is touched only by users 6 and 7; user 7 touches items 6,0.
        let mut grid = [[false; 8]; 8];
        for u in 0..5 {
            for i in 0..5 {
                grid[u][i] = true;
            }
        }
        grid[0][5] = true;
        grid[1][5] = true;
        grid[6][5] = true;
        grid[6][6] = true;
        grid[7][6] = true;
        grid[7][0] = true;
        let mut recs = Vec::new();
        for (u, row) in grid.iter().enumerate() {
            for (i, on) in row.iter().enumerate() {
                if *on {
                    recs.push(rec(&format!("u{u}"), &format!("i{i}")));
                }
            }
        }
        let out = filter_min_interactions(recs, 3).unwrap();
        let got: Vec<(usize, usize)> = out
            .records
            .iter()
            .map(|r| (r.user_id[1..].parse().unwrap(), r.item_id[1..].parse().unwrap()))
            .collect();
        assert_eq!(got, brute_force_fixed_point(&grid, 3));
        assert!(got.iter().all(|(u, _)| *u != 6 && *u != 7));
        assert!(out.rounds > 1);
    }
}
