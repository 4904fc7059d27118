//! Interaction data: per-user positive item lists for the train and test
//! splits, in the adjacency-line text format (`user item item ...`).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Implicit-feedback dataset with dense 0-based ids.
///
/// `train_pos[u]` is the positive set of user `u`; everything else is an
/// implicit negative. Lists are strictly sorted and the two splits are
/// disjoint per user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    n_users: usize,
    n_items: usize,
    train_pos: Vec<Vec<usize>>,
    test_pos: Vec<Vec<usize>>,
    item_popularity: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from raw per-user lists, sorting and deduplicating them.
    ///
    /// Lists shorter than `n_users` are padded with empty users. Fails if an id
    /// is out of range or an item appears in both splits for the same user.
    pub fn from_lists(
        n_users: usize,
        n_items: usize,
        mut train_pos: Vec<Vec<usize>>,
        mut test_pos: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if train_pos.len() > n_users || test_pos.len() > n_users {
            return Err(Error::InvalidArgument(format!(
                "more user rows than n_users = {n_users}"
            )));
        }
        train_pos.resize_with(n_users, Vec::new);
        test_pos.resize_with(n_users, Vec::new);
        for list in train_pos.iter_mut().chain(test_pos.iter_mut()) {
            list.sort_unstable();
            list.dedup();
            if let Some(&last) = list.last() {
                if last >= n_items {
                    return Err(Error::InvalidArgument(format!(
                        "item id {last} out of range for n_items = {n_items}"
                    )));
                }
            }
        }
        for (user, (train, test)) in train_pos.iter().zip(&test_pos).enumerate() {
            if let Some(item) = test.iter().find(|i| train.binary_search(i).is_ok()) {
                return Err(Error::InvalidArgument(format!(
                    "user {user}: item {item} is in both train and test"
                )));
            }
        }
        let item_popularity = popularity_counts(n_items, &train_pos);
        Ok(Dataset {
            n_users,
            n_items,
            train_pos,
            test_pos,
            item_popularity,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn train_pos(&self, user: usize) -> &[usize] {
        &self.train_pos[user]
    }

    pub fn test_pos(&self, user: usize) -> &[usize] {
        &self.test_pos[user]
    }

    pub fn train_lists(&self) -> &[Vec<usize>] {
        &self.train_pos
    }

    pub fn test_lists(&self) -> &[Vec<usize>] {
        &self.test_pos
    }

    pub fn item_popularity(&self) -> &[usize] {
        &self.item_popularity
    }

    pub fn is_train_positive(&self, user: usize, item: usize) -> bool {
        self.train_pos[user].binary_search(&item).is_ok()
    }

    pub fn is_test_positive(&self, user: usize, item: usize) -> bool {
        self.test_pos[user].binary_search(&item).is_ok()
    }

    pub fn n_train_interactions(&self) -> usize {
        self.train_pos.iter().map(Vec::len).sum()
    }

    pub fn n_test_interactions(&self) -> usize {
        self.test_pos.iter().map(Vec::len).sum()
    }

    /// All `(user, item)` training pairs in user-major order.
    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        self.train_pos
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .collect()
    }

    /// Returns a copy with the train split replaced; popularity is recomputed.
    pub fn with_train(&self, train_pos: Vec<Vec<usize>>) -> Result<Self> {
        Dataset::from_lists(self.n_users, self.n_items, train_pos, self.test_pos.clone())
    }

    /// Writes both splits as adjacency-line files.
    ///
    /// Users with an empty list are written as a bare user id so that the
    /// user count survives a round trip.
    pub fn save(&self, train_path: &Path, test_path: &Path) -> Result<()> {
        write_lists(train_path, &self.train_pos)?;
        write_lists(test_path, &self.test_pos)
    }
}

fn popularity_counts(n_items: usize, train_pos: &[Vec<usize>]) -> Vec<usize> {
    let mut counts = vec![0; n_items];
    for &item in train_pos.iter().flatten() {
        counts[item] += 1;
    }
    counts
}

fn write_lists(path: &Path, lists: &[Vec<usize>]) -> Result<()> {
    let mut out = Vec::new();
    for (user, items) in lists.iter().enumerate() {
        write!(out, "{user}").expect("write to vec");
        for item in items {
            write!(out, " {item}").expect("write to vec");
        }
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

type RawLines = Vec<(u64, Vec<u64>)>;

fn parse_lines(path: &Path) -> Result<RawLines> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        let parse = |tok: &str| {
            tok.parse::<u64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected a non-negative integer, found {tok:?}"),
            })
        };
        let user = parse(first)?;
        let items = tokens.map(parse).collect::<Result<Vec<_>>>()?;
        rows.push((user, items));
    }
    Ok(rows)
}

fn to_index(id: u64) -> Result<usize> {
    usize::try_from(id).map_err(|_| Error::InvalidArgument(format!("id {id} too large")))
}

fn assemble(train: RawLines, test: RawLines) -> Result<Dataset> {
    let max_user = train.iter().chain(&test).map(|(u, _)| *u).max();
    let max_item = train
        .iter()
        .chain(&test)
        .flat_map(|(_, items)| items.iter().copied())
        .max();
    let n_users = max_user.map_or(Ok(0), |u| to_index(u).map(|u| u + 1))?;
    let n_items = max_item.map_or(Ok(0), |i| to_index(i).map(|i| i + 1))?;
    let gather = |rows: RawLines| -> Result<Vec<Vec<usize>>> {
        let mut lists = vec![Vec::new(); n_users];
        for (user, items) in rows {
            let list = &mut lists[to_index(user)?];
            for item in items {
                list.push(to_index(item)?);
            }
        }
        Ok(lists)
    };
    Dataset::from_lists(n_users, n_items, gather(train)?, gather(test)?)
}

/// Loads a train/test split of adjacency-line files with dense ids.
///
/// `n_users` and `n_items` are one past the largest id seen in either file.
pub fn load_dataset(train_path: &Path, test_path: &Path) -> Result<Dataset> {
    assemble(parse_lines(train_path)?, parse_lines(test_path)?)
}

/// Id maps produced by [`load_dataset_remapped`]: `users[dense] = raw`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMaps {
    pub users: Vec<u64>,
    pub items: Vec<u64>,
}

/// Like [`load_dataset`] but first compacts raw ids to a dense range,
/// preserving their relative order.
pub fn load_dataset_remapped(train_path: &Path, test_path: &Path) -> Result<(Dataset, IdMaps)> {
    let train = parse_lines(train_path)?;
    let test = parse_lines(test_path)?;
    let mut users = BTreeMap::new();
    let mut items = BTreeMap::new();
    for (u, list) in train.iter().chain(&test) {
        users.insert(*u, 0u64);
        for i in list {
            items.insert(*i, 0u64);
        }
    }
    for (dense, v) in users.values_mut().enumerate() {
        *v = dense as u64;
    }
    for (dense, v) in items.values_mut().enumerate() {
        *v = dense as u64;
    }
    let remap = |rows: RawLines| -> RawLines {
        rows.into_iter()
            .map(|(u, list)| (users[&u], list.into_iter().map(|i| items[&i]).collect()))
            .collect()
    };
    let ds = assemble(remap(train), remap(test))?;
    let maps = IdMaps {
        users: users.keys().copied().collect(),
        items: items.keys().copied().collect(),
    };
    Ok((ds, maps))
}

/// Buckets items into `n_groups` popularity groups of near-equal size.
///
/// Items are ordered by ascending train popularity (ties by item id) and cut
/// into contiguous runs whose sizes differ by at most one. Group 0 holds the
/// least popular items.
pub fn popularity_groups(ds: &Dataset, n_groups: usize) -> Result<Vec<usize>> {
    if n_groups == 0 || n_groups > ds.n_items {
        return Err(Error::InvalidArgument(format!(
            "n_groups must be in 1..={}, got {n_groups}",
            ds.n_items
        )));
    }
    let mut order: Vec<usize> = (0..ds.n_items).collect();
    order.sort_by_key(|&i| (ds.item_popularity[i], i));
    let base = ds.n_items / n_groups;
    let extra = ds.n_items % n_groups;
    let mut groups = vec![0; ds.n_items];
    let mut pos = 0;
    for g in 0..n_groups {
        // the larger buckets go to the popular end
        let size = base + usize::from(g >= n_groups - extra);
        for &item in &order[pos..pos + size] {
            groups[item] = g;
        }
        pos += size;
    }
    Ok(groups)
}
