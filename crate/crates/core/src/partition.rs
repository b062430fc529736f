//! Set partitions and the conversion between full and truncated correlation
//! tables, for bosonic and fermionic statistics.
//!
//! Indices in the public API are 1-based, matching the usual `{1..n}` labels.
//! Tables are stored densely by subset bitmask.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest ground set accepted by [`enumerate_partitions`].
pub const MAX_PARTITION_SIZE: usize = 12;
/// Largest index set a [`CorrelationTable`] can hold.
pub const MAX_TABLE_SIZE: usize = 20;

/// A partition of `{1..n}` into blocks, each block increasing, blocks ordered
/// by their smallest element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SetPartition {
    blocks: Vec<Vec<usize>>,
    ground_size: usize,
}

impl SetPartition {
    /// Validates and canonicalizes a block list.
    pub fn new(ground_size: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        if ground_size == 0 {
            return Err(Error::Domain("ground set must be nonempty".into()));
        }
        let mut seen = vec![false; ground_size + 1];
        for block in &mut blocks {
            if block.is_empty() {
                return Err(Error::Domain("empty block".into()));
            }
            block.sort_unstable();
            for &i in block.iter() {
                if i == 0 || i > ground_size {
                    return Err(Error::Domain(format!(
                        "index {i} outside 1..={ground_size}"
                    )));
                }
                if seen[i] {
                    return Err(Error::Domain(format!("index {i} appears twice")));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = (1..=ground_size).find(|&i| !seen[i]) {
            return Err(Error::Domain(format!("index {missing} not covered")));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Self {
            blocks,
            ground_size,
        })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn ground_size(&self) -> usize {
        self.ground_size
    }

    /// The blocks laid end to end: the image sequence of the block
    /// concatenation permutation.
    pub fn concatenation(&self) -> Vec<usize> {
        self.blocks.iter().flatten().copied().collect()
    }

    /// Block masks (bit `i-1` set for index `i`).
    pub fn block_masks(&self) -> impl Iterator<Item = u32> + '_ {
        self.blocks
            .iter()
            .map(|b| b.iter().fold(0u32, |m, &i| m | (1 << (i - 1))))
    }
}

/// All partitions of `{1..n}` in canonical form, via restricted growth strings.
pub fn enumerate_partitions(n: usize) -> Result<Vec<SetPartition>> {
    if n == 0 || n > MAX_PARTITION_SIZE {
        return Err(Error::SizeLimit {
            what: "partition ground size",
            value: n,
            max: MAX_PARTITION_SIZE,
        });
    }
    let mut out = Vec::with_capacity(bell_number(n) as usize);
    // rgs[i] is the block label of element i+1; max_prefix[i] = max(rgs[..=i]).
    let mut rgs = vec![0usize; n];
    let mut max_prefix = vec![0usize; n];
    loop {
        let n_blocks = max_prefix[n - 1] + 1;
        let mut blocks = vec![Vec::new(); n_blocks];
        for (i, &label) in rgs.iter().enumerate() {
            blocks[label].push(i + 1);
        }
        out.push(SetPartition {
            blocks,
            ground_size: n,
        });

        // Next string: bump the rightmost position that can still grow.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(out);
            }
            if rgs[i] <= max_prefix[i - 1] {
                rgs[i] += 1;
                max_prefix[i] = max_prefix[i - 1].max(rgs[i]);
                for j in i + 1..n {
                    rgs[j] = 0;
                    max_prefix[j] = max_prefix[i];
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Bell numbers via the Bell triangle.
pub fn bell_number(n: usize) -> u64 {
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &x in &row {
            let last = *next.last().unwrap();
            next.push(last + x);
        }
        row = next;
    }
    row[0]
}

/// Sign of the block-concatenation permutation.
pub fn fermionic_parity(partition: &SetPartition) -> i32 {
    let seq = partition.concatenation();
    let mut inversions = 0usize;
    for (a, &x) in seq.iter().enumerate() {
        inversions += seq[a + 1..].iter().filter(|&&y| y < x).count();
    }
    if inversions.is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// Exchange statistics used when weighting partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Bosonic,
    Fermionic,
}

impl Parity {
    pub fn sign(self, partition: &SetPartition) -> i32 {
        match self {
            Parity::Bosonic => 1,
            Parity::Fermionic => fermionic_parity(partition),
        }
    }

    /// Sign picked up by splitting `block` off the front of `block ∪ rest`
    /// when `block` holds the smallest index.
    fn split_sign(self, block: u32, rest: u32) -> f64 {
        match self {
            Parity::Bosonic => 1.0,
            Parity::Fermionic => {
                let mut crossings = 0u32;
                let mut b = block;
                while b != 0 {
                    let bit = b.trailing_zeros();
                    crossings += (rest & ((1u32 << bit) - 1)).count_ones();
                    b &= b - 1;
                }
                if crossings.is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Complex values on every nonempty increasing tuple of `{1..n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    n: usize,
    // Indexed by subset mask; slot 0 is unused and kept at zero.
    values: Vec<Complex64>,
}

impl CorrelationTable {
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_TABLE_SIZE {
            return Err(Error::SizeLimit {
                what: "correlation table size",
                value: n,
                max: MAX_TABLE_SIZE,
            });
        }
        Ok(Self {
            n,
            values: vec![Complex64::new(0.0, 0.0); 1 << n],
        })
    }

    /// Fills every entry from a function of the (1-based) tuple.
    pub fn from_fn(n: usize, mut f: impl FnMut(&[usize]) -> Complex64) -> Result<Self> {
        let mut table = Self::zeros(n)?;
        let mut tuple = Vec::with_capacity(n);
        for mask in 1..(1u32 << n) {
            mask_to_tuple(mask, &mut tuple);
            table.values[mask as usize] = f(&tuple);
        }
        Ok(table)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get_mask(&self, mask: u32) -> Complex64 {
        self.values[mask as usize]
    }

    pub fn set_mask(&mut self, mask: u32, value: Complex64) {
        assert!(
            mask != 0 && (mask as usize) < self.values.len(),
            "mask out of range"
        );
        self.values[mask as usize] = value;
    }

    pub fn get(&self, tuple: &[usize]) -> Result<Complex64> {
        Ok(self.values[self.tuple_mask(tuple)? as usize])
    }

    pub fn set(&mut self, tuple: &[usize], value: Complex64) -> Result<()> {
        let mask = self.tuple_mask(tuple)?;
        self.values[mask as usize] = value;
        Ok(())
    }

    /// The entry on the whole index set `(1..n)`.
    pub fn full(&self) -> Complex64 {
        self.values[(1usize << self.n) - 1]
    }

    /// Entries as (tuple, value), tuples ordered by mask.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, Complex64)> + '_ {
        (1..(1u32 << self.n)).map(move |mask| {
            let mut t = Vec::new();
            mask_to_tuple(mask, &mut t);
            (t, self.values[mask as usize])
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::Shape(format!(
                "tables of size {} and {}",
                self.n, other.n
            )));
        }
        Ok(self.values[1..]
            .iter()
            .zip(&other.values[1..])
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    fn tuple_mask(&self, tuple: &[usize]) -> Result<u32> {
        if tuple.is_empty() {
            return Err(Error::Domain("empty tuple".into()));
        }
        let mut mask = 0u32;
        let mut prev = 0usize;
        for &i in tuple {
            if i <= prev || i > self.n {
                return Err(Error::Domain(format!(
                    "tuple {tuple:?} is not strictly increasing within 1..={}",
                    self.n
                )));
            }
            mask |= 1 << (i - 1);
            prev = i;
        }
        Ok(mask)
    }
}

fn mask_to_tuple(mask: u32, out: &mut Vec<usize>) {
    out.clear();
    let mut m = mask;
    while m != 0 {
        out.push(m.trailing_zeros() as usize + 1);
        m &= m - 1;
    }
}

/// Iterates the nonempty submasks of `set` that contain its lowest bit.
fn blocks_with_min(set: u32) -> impl Iterator<Item = u32> {
    let low = set & set.wrapping_neg();
    let rest = set ^ low;
    // Walk submasks of `rest` downward, including 0.
    let mut sub = Some(rest);
    std::iter::from_fn(move || {
        let s = sub?;
        sub = if s == 0 { None } else { Some((s - 1) & rest) };
        Some(s | low)
    })
}

/// Full correlations from truncated ones: every tuple receives the signed sum
/// over its partitions of products of block values.
pub fn moments_from_cumulants(truncated: &CorrelationTable, parity: Parity) -> CorrelationTable {
    let n = truncated.n;
    let mut full = vec![Complex64::new(0.0, 0.0); 1 << n];
    full[0] = Complex64::new(1.0, 0.0);
    for set in 1..(1u32 << n) {
        let mut acc = Complex64::new(0.0, 0.0);
        for block in blocks_with_min(set) {
            let rest = set ^ block;
            acc += parity.split_sign(block, rest)
                * truncated.values[block as usize]
                * full[rest as usize];
        }
        full[set as usize] = acc;
    }
    full[0] = Complex64::new(0.0, 0.0);
    CorrelationTable { n, values: full }
}

/// Truncated correlations from full ones; inverse of [`moments_from_cumulants`].
pub fn cumulants_from_moments(full: &CorrelationTable, parity: Parity) -> CorrelationTable {
    let n = full.n;
    let mut trunc = vec![Complex64::new(0.0, 0.0); 1 << n];
    for set in 1..(1u32 << n) {
        let mut acc = full.values[set as usize];
        for block in blocks_with_min(set) {
            if block == set {
                continue;
            }
            let rest = set ^ block;
            acc -=
                parity.split_sign(block, rest) * trunc[block as usize] * full.values[rest as usize];
        }
        trunc[set as usize] = acc;
    }
    CorrelationTable { n, values: trunc }
}
