//! Train/test splitting.
//!
//! The evaluation protocol holds out each user's latest interaction and trains
//! on the rest, so the test set contains exactly one rating per user and the
//! model never sees the future of any user it is judged on. Validation sets are
//! sampled from the training interactions (they stay in the training set; the
//! gap between validation and test RMSE is the overfitting signal).

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{parse_canonical, write_canonical, Interaction, RatingsDataset};
use crate::error::{Error, Result};

/// Identifies the splitting protocol in manifests and reports.
pub const LEAVE_LATEST_OUT_TAG: &str = "leave-latest-out";

/// A chronological train/test partition of a dataset.
#[derive(Debug, Clone)]
pub struct SplitResult {
    /// Training interactions, in original dataset order, sharing the full
    /// vocabulary of the source dataset.
    pub train: RatingsDataset,
    /// One held-out interaction per user, ordered by dense user index.
    pub test: Vec<Interaction>,
    /// Protocol identifier, [`LEAVE_LATEST_OUT_TAG`].
    pub protocol_tag: String,
}

/// Hold out each user's chronologically latest interaction.
///
/// Timestamp ties break toward the later file position, so the split is a
/// deterministic function of the input. A user with a single interaction is an
/// error: holding it out would leave nothing to train that user on.
pub fn leave_latest_out(ds: &RatingsDataset) -> Result<SplitResult> {
    let num_users = ds.num_users() as usize;
    // Per user: position of the latest interaction seen so far, and count.
    let mut latest_pos: Vec<usize> = vec![usize::MAX; num_users];
    let mut counts: Vec<usize> = vec![0; num_users];

    for (pos, it) in ds.interactions().iter().enumerate() {
        let u = it.user as usize;
        counts[u] += 1;
        let newer = match latest_pos[u] {
            usize::MAX => true,
            prev => it.timestamp >= ds.interactions()[prev].timestamp,
        };
        if newer {
            latest_pos[u] = pos;
        }
    }

    for (u, &c) in counts.iter().enumerate() {
        if c < 2 {
            return Err(Error::SingleInteraction {
                raw_user: ds.raw_user_ids()[u],
            });
        }
    }

    let mut held_out = vec![false; ds.interactions().len()];
    for &pos in &latest_pos {
        held_out[pos] = true;
    }
    let test: Vec<Interaction> = latest_pos
        .iter()
        .map(|&pos| ds.interactions()[pos])
        .collect();
    let train_rows: Vec<Interaction> = ds
        .interactions()
        .iter()
        .enumerate()
        .filter(|(pos, _)| !held_out[*pos])
        .map(|(_, it)| *it)
        .collect();

    Ok(SplitResult {
        train: ds.with_interactions(train_rows)?,
        test,
        protocol_tag: LEAVE_LATEST_OUT_TAG.to_string(),
    })
}

/// Draw `size` training interactions uniformly without replacement.
///
/// The sample is a view for evaluation only; the sampled entries remain in the
/// training set. Equal seeds give equal samples.
pub fn sample_validation(
    train: &RatingsDataset,
    size: usize,
    seed: u64,
) -> Result<Vec<Interaction>> {
    let n = train.interactions().len();
    if size > n {
        return Err(Error::SampleTooLarge {
            requested: size,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: after i swaps, the prefix is a uniform sample.
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..size {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    Ok(indices[..size]
        .iter()
        .map(|&idx| train.interactions()[idx])
        .collect())
}

/// What a split directory records besides the interaction files themselves:
/// the protocol, the sampling seed, and the vocabulary that fixes model shapes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitManifest {
    pub protocol_tag: String,
    /// Seed used for validation sampling, when a validation set was written.
    pub validation_seed: Option<u64>,
    pub num_users: u32,
    pub num_items: u32,
    pub train_count: usize,
    pub test_count: usize,
    pub validation_count: Option<usize>,
    /// Raw user ids in dense-index order.
    pub users: Vec<u64>,
    /// Raw item ids in dense-index order.
    pub items: Vec<u64>,
}

/// A split directory loaded back into memory.
#[derive(Debug)]
pub struct LoadedSplit {
    pub train: RatingsDataset,
    pub test: Vec<Interaction>,
    pub validation: Option<Vec<Interaction>>,
    pub manifest: SplitManifest,
}

const TRAIN_FILE: &str = "train.csv";
const TEST_FILE: &str = "test.csv";
const VALIDATION_FILE: &str = "validation.csv";
const MANIFEST_FILE: &str = "manifest.json";

/// Persist a split (and optional validation sample) into `dir`.
///
/// Writes `train.csv`, `test.csv`, optionally `validation.csv`, and
/// `manifest.json`. Interaction files use raw ids; the manifest carries the
/// dense vocabulary so reloading reproduces exact model shapes.
pub fn write_split(
    dir: &Path,
    split: &SplitResult,
    validation: Option<&[Interaction]>,
    validation_seed: Option<u64>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let train = &split.train;

    let file = fs::File::create(dir.join(TRAIN_FILE))?;
    write_canonical(train, BufWriter::new(file))?;

    write_interactions(&dir.join(TEST_FILE), train, &split.test)?;
    if let Some(val) = validation {
        write_interactions(&dir.join(VALIDATION_FILE), train, val)?;
    }

    let manifest = SplitManifest {
        protocol_tag: split.protocol_tag.clone(),
        validation_seed,
        num_users: train.num_users(),
        num_items: train.num_items(),
        train_count: train.interactions().len(),
        test_count: split.test.len(),
        validation_count: validation.map(<[Interaction]>::len),
        users: train.raw_user_ids().to_vec(),
        items: train.raw_item_ids().to_vec(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

fn write_interactions(path: &Path, vocab: &RatingsDataset, rows: &[Interaction]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "user,item,rating,timestamp")?;
    for it in rows {
        writeln!(
            w,
            "{},{},{},{}",
            vocab.raw_user_ids()[it.user as usize],
            vocab.raw_item_ids()[it.item as usize],
            it.rating,
            it.timestamp
        )?;
    }
    Ok(())
}

/// Load a split directory written by [`write_split`].
pub fn read_split(dir: &Path) -> Result<LoadedSplit> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: SplitManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::MalformedFile {
            path: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;

    let train_raw = parse_canonical(BufReader::new(fs::File::open(dir.join(TRAIN_FILE))?))?;
    let train = reindex(&train_raw, &manifest)?;
    let test = read_interactions(&dir.join(TEST_FILE), &train)?;
    let validation = if manifest.validation_count.is_some() {
        Some(read_interactions(&dir.join(VALIDATION_FILE), &train)?)
    } else {
        None
    };

    if train.interactions().len() != manifest.train_count || test.len() != manifest.test_count {
        return Err(Error::ShapeMismatch(format!(
            "split files disagree with manifest counts in {}",
            dir.display()
        )));
    }
    Ok(LoadedSplit {
        train,
        test,
        validation,
        manifest,
    })
}

/// Rebuild a dataset against the manifest vocabulary, so users and items that
/// only occur in the held-out files keep their dense slots.
fn reindex(parsed: &RatingsDataset, manifest: &SplitManifest) -> Result<RatingsDataset> {
    let user_of: std::collections::HashMap<u64, u32> = manifest
        .users
        .iter()
        .enumerate()
        .map(|(i, &raw)| (raw, i as u32))
        .collect();
    let item_of: std::collections::HashMap<u64, u32> = manifest
        .items
        .iter()
        .enumerate()
        .map(|(i, &raw)| (raw, i as u32))
        .collect();
    let interactions = parsed
        .interactions()
        .iter()
        .map(|it| {
            let raw_user = parsed.raw_user_ids()[it.user as usize];
            let raw_item = parsed.raw_item_ids()[it.item as usize];
            let user = *user_of.get(&raw_user).ok_or_else(|| {
                Error::ShapeMismatch(format!("user {raw_user} missing from manifest vocabulary"))
            })?;
            let item = *item_of.get(&raw_item).ok_or_else(|| {
                Error::ShapeMismatch(format!("item {raw_item} missing from manifest vocabulary"))
            })?;
            Ok(Interaction {
                user,
                item,
                rating: it.rating,
                timestamp: it.timestamp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RatingsDataset::from_dense_parts(interactions, manifest.users.clone(), manifest.items.clone())
}

fn read_interactions(path: &Path, vocab: &RatingsDataset) -> Result<Vec<Interaction>> {
    let parsed = parse_canonical(BufReader::new(fs::File::open(path)?))?;
    parsed
        .interactions()
        .iter()
        .map(|it| {
            let raw_user = parsed.raw_user_ids()[it.user as usize];
            let raw_item = parsed.raw_item_ids()[it.item as usize];
            Ok(Interaction {
                user: vocab.dense_user(raw_user).ok_or_else(|| {
                    Error::ShapeMismatch(format!("user {raw_user} not in training vocabulary"))
                })?,
                item: vocab.dense_item(raw_item).ok_or_else(|| {
                    Error::ShapeMismatch(format!("item {raw_item} not in training vocabulary"))
                })?,
                rating: it.rating,
                timestamp: it.timestamp,
            })
        })
        .collect()
}
