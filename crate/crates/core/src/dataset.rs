//! Rating datasets: parsing, dense indexing, and summary statistics.
//!
//! Raw logs identify users and items by arbitrary integer ids. Models want
//! contiguous indices, so [`RatingsDataset`] stores every interaction with dense
//! indices plus the two bijections back to the raw ids. Statistics are computed
//! once at construction and never recomputed behind the caller's back.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed rating event, in dense index space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    /// Dense user index, `0..num_users`.
    pub user: u32,
    /// Dense item index, `0..num_items`.
    pub item: u32,
    /// Observed rating value.
    pub rating: f64,
    /// Event time in integer seconds.
    pub timestamp: i64,
}

/// Summary statistics of a dataset, computed once at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    /// Number of distinct users.
    pub num_users: u32,
    /// Number of distinct items.
    pub num_items: u32,
    /// Number of interactions.
    pub count: usize,
    /// Mean rating.
    pub r_mean: f64,
    /// Population variance of the ratings (divisor `count`, not `count - 1`).
    pub r_var: f64,
    /// Smallest observed rating.
    pub r_min: f64,
    /// Largest observed rating.
    pub r_max: f64,
    /// Fraction of the user-item grid with no rating: `1 - count / (users * items)`.
    pub sparsity: f64,
}

/// A ratings log with dense user/item indices and fixed statistics.
///
/// The interaction order is the file order of the source, which later stages
/// rely on for deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    interactions: Vec<Interaction>,
    raw_users: Vec<u64>,
    raw_items: Vec<u64>,
    user_index: HashMap<u64, u32>,
    item_index: HashMap<u64, u32>,
    stats: Stats,
}

impl RatingsDataset {
    /// Build a dataset from raw `(user, item, rating, timestamp)` rows, assigning
    /// dense indices in order of first appearance.
    pub fn from_raw_rows(rows: &[(u64, u64, f64, i64)]) -> Result<Self> {
        let mut raw_users = Vec::new();
        let mut raw_items = Vec::new();
        let mut user_index = HashMap::new();
        let mut item_index = HashMap::new();
        let mut interactions = Vec::with_capacity(rows.len());

        for &(raw_user, raw_item, rating, timestamp) in rows {
            let user = *user_index.entry(raw_user).or_insert_with(|| {
                raw_users.push(raw_user);
                (raw_users.len() - 1) as u32
            });
            let item = *item_index.entry(raw_item).or_insert_with(|| {
                raw_items.push(raw_item);
                (raw_items.len() - 1) as u32
            });
            interactions.push(Interaction {
                user,
                item,
                rating,
                timestamp,
            });
        }

        let stats = compute_stats(
            &interactions,
            raw_users.len() as u32,
            raw_items.len() as u32,
        )?;
        Ok(Self {
            interactions,
            raw_users,
            raw_items,
            user_index,
            item_index,
            stats,
        })
    }

    /// Build a dataset over an existing vocabulary. Interactions must already be
    /// dense-indexed against `raw_users` / `raw_items`.
    ///
    /// This is how a persisted train split is reloaded without shrinking the
    /// model shape to the users and items that happen to appear in it.
    pub fn from_dense_parts(
        interactions: Vec<Interaction>,
        raw_users: Vec<u64>,
        raw_items: Vec<u64>,
    ) -> Result<Self> {
        for it in &interactions {
            check_bounds(it, raw_users.len() as u32, raw_items.len() as u32)?;
        }
        let user_index = raw_users
            .iter()
            .enumerate()
            .map(|(i, &raw)| (raw, i as u32))
            .collect::<HashMap<_, _>>();
        let item_index = raw_items
            .iter()
            .enumerate()
            .map(|(i, &raw)| (raw, i as u32))
            .collect::<HashMap<_, _>>();
        if user_index.len() != raw_users.len() || item_index.len() != raw_items.len() {
            return Err(Error::ShapeMismatch(
                "duplicate raw id in vocabulary".into(),
            ));
        }
        let stats = compute_stats(
            &interactions,
            raw_users.len() as u32,
            raw_items.len() as u32,
        )?;
        Ok(Self {
            interactions,
            raw_users,
            raw_items,
            user_index,
            item_index,
            stats,
        })
    }

    /// A dataset with the same vocabulary but a subset of the interactions.
    pub fn with_interactions(&self, interactions: Vec<Interaction>) -> Result<Self> {
        Self::from_dense_parts(
            interactions,
            self.raw_users.clone(),
            self.raw_items.clone(),
        )
    }

    pub fn num_users(&self) -> u32 {
        self.raw_users.len() as u32
    }

    pub fn num_items(&self) -> u32 {
        self.raw_items.len() as u32
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    /// Raw user ids in dense-index order.
    pub fn raw_user_ids(&self) -> &[u64] {
        &self.raw_users
    }

    /// Raw item ids in dense-index order.
    pub fn raw_item_ids(&self) -> &[u64] {
        &self.raw_items
    }

    pub fn dense_user(&self, raw: u64) -> Option<u32> {
        self.user_index.get(&raw).copied()
    }

    pub fn dense_item(&self, raw: u64) -> Option<u32> {
        self.item_index.get(&raw).copied()
    }
}

fn check_bounds(it: &Interaction, num_users: u32, num_items: u32) -> Result<()> {
    if it.user >= num_users {
        return Err(Error::IndexOutOfBounds {
            entity: "user",
            index: it.user as usize,
            size: num_users as usize,
        });
    }
    if it.item >= num_items {
        return Err(Error::IndexOutOfBounds {
            entity: "item",
            index: it.item as usize,
            size: num_items as usize,
        });
    }
    Ok(())
}

/// Compute [`Stats`] over a slice of interactions. Errors on an empty slice,
/// since the mean of nothing is undefined.
fn compute_stats(interactions: &[Interaction], num_users: u32, num_items: u32) -> Result<Stats> {
    if interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let count = interactions.len();
    let sum: f64 = interactions.iter().map(|it| it.rating).sum();
    let r_mean = sum / count as f64;
    let sq_dev: f64 = interactions
        .iter()
        .map(|it| (it.rating - r_mean).powi(2))
        .sum();
    let r_var = sq_dev / count as f64;
    let r_min = interactions
        .iter()
        .map(|it| it.rating)
        .fold(f64::INFINITY, f64::min);
    let r_max = interactions
        .iter()
        .map(|it| it.rating)
        .fold(f64::NEG_INFINITY, f64::max);
    let grid = num_users as f64 * num_items as f64;
    let sparsity = 1.0 - count as f64 / grid;
    Ok(Stats {
        num_users,
        num_items,
        count,
        r_mean,
        r_var,
        r_min,
        r_max,
        sparsity,
    })
}

/// Parse the `UserID::MovieID::Rating::Timestamp` log format.
///
/// Lines are 1-indexed in error messages. Blank lines are skipped. A file with
/// no interactions is an error rather than an empty dataset.
pub fn parse_movielens<R: BufRead>(reader: R) -> Result<RatingsDataset> {
    parse_rows(reader, parse_movielens_line)
}

/// Parse the canonical `user,item,rating,timestamp` CSV written by
/// [`write_canonical`]. A leading header line is skipped if present.
pub fn parse_canonical<R: BufRead>(reader: R) -> Result<RatingsDataset> {
    parse_rows(reader, parse_canonical_line)
}

fn parse_rows<R, F>(reader: R, parse_line: F) -> Result<RatingsDataset>
where
    R: BufRead,
    F: Fn(usize, &str) -> Result<Option<(u64, u64, f64, i64)>>,
{
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(row) = parse_line(idx + 1, line)? {
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    RatingsDataset::from_raw_rows(&rows)
}

fn parse_movielens_line(line_no: usize, line: &str) -> Result<Option<(u64, u64, f64, i64)>> {
    let fields: Vec<&str> = line.split("::").collect();
    if fields.len() != 4 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 4 '::'-separated fields, found {}", fields.len()),
        });
    }
    Ok(Some(parse_fields(line_no, &fields)?))
}

fn parse_canonical_line(line_no: usize, line: &str) -> Result<Option<(u64, u64, f64, i64)>> {
    if line_no == 1 && line == CANONICAL_HEADER {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 4 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 4 comma-separated fields, found {}", fields.len()),
        });
    }
    Ok(Some(parse_fields(line_no, &fields)?))
}

fn parse_fields(line_no: usize, fields: &[&str]) -> Result<(u64, u64, f64, i64)> {
    let user: u64 = parse_field(line_no, fields[0], "user id")?;
    let item: u64 = parse_field(line_no, fields[1], "item id")?;
    let rating: f64 = parse_field(line_no, fields[2], "rating")?;
    let timestamp: i64 = parse_field(line_no, fields[3], "timestamp")?;
    if !rating.is_finite() {
        return Err(Error::Parse {
            line: line_no,
            message: format!("rating '{}' is not finite", fields[2]),
        });
    }
    Ok((user, item, rating, timestamp))
}

fn parse_field<T: std::str::FromStr>(line_no: usize, text: &str, what: &str) -> Result<T> {
    text.trim().parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("invalid {what} '{text}'"),
    })
}

const CANONICAL_HEADER: &str = "user,item,rating,timestamp";

/// Write the canonical CSV form: a header plus one `user,item,rating,timestamp`
/// row per interaction in dataset order, using raw ids so that re-parsing
/// rebuilds identical dense indices.
pub fn write_canonical<W: Write>(ds: &RatingsDataset, mut w: W) -> Result<()> {
    writeln!(w, "{CANONICAL_HEADER}")?;
    for it in ds.interactions() {
        writeln!(
            w,
            "{},{},{},{}",
            ds.raw_user_ids()[it.user as usize],
            ds.raw_item_ids()[it.item as usize],
            it.rating,
            it.timestamp
        )?;
    }
    Ok(())
}
