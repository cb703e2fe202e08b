//! Exact rank of integer matrices by fraction-free row reduction.
//!
//! Rows are kept sparse and reduced one at a time against the pivots found
//! so far. Reducing `r` by pivot row `p` with leading entry `a` at the
//! column where `r` has `c` gives `a·r − c·p`, which stays integral; each
//! result is divided by the gcd of its entries to keep numbers small.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type SparseRow = BTreeMap<usize, i128>;

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn normalize(row: &mut SparseRow) {
    let g = row.values().fold(0, |g, &v| gcd(g, v));
    if g > 1 {
        row.values_mut().for_each(|v| *v /= g);
    }
    if row.values().next().is_some_and(|&v| v < 0) {
        row.values_mut().for_each(|v| *v = -*v);
    }
}

/// Incremental row echelon form over the integers.
#[derive(Debug, Default)]
pub struct Echelon {
    pivots: BTreeMap<usize, SparseRow>,
}

impl Echelon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// Reduces `row` and keeps it as a new pivot if it is independent.
    /// Returns whether the rank grew.
    pub fn insert(&mut self, mut row: SparseRow) -> Result<bool> {
        row.retain(|_, v| *v != 0);
        loop {
            let Some((&lead, &c)) = row.iter().next() else {
                return Ok(false);
            };
            let Some(pivot) = self.pivots.get(&lead) else {
                normalize(&mut row);
                self.pivots.insert(lead, row);
                return Ok(true);
            };
            let a = pivot[&lead];
            let mut next = SparseRow::new();
            for (&k, &v) in &row {
                next.insert(k, v.checked_mul(a).ok_or(Error::Overflow)?);
            }
            for (&k, &p) in pivot {
                let e = next.entry(k).or_insert(0);
                *e = e
                    .checked_sub(c.checked_mul(p).ok_or(Error::Overflow)?)
                    .ok_or(Error::Overflow)?;
            }
            next.retain(|_, v| *v != 0);
            normalize(&mut next);
            row = next;
        }
    }
}

pub fn rank(rows: impl IntoIterator<Item = SparseRow>) -> Result<usize> {
    let mut e = Echelon::new();
    for r in rows {
        e.insert(r)?;
    }
    Ok(e.rank())
}

pub fn dense_row(values: &[i64]) -> SparseRow {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, &v)| (i, v as i128))
        .collect()
}
