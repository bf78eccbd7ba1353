//! Set partitions and integer partitions.
//!
//! Set partitions are stored as canonical restricted-growth strings over
//! `0..n`; blocks are numbered in order of their least element. They
//! serialize as arrays of arrays of 1-based integers.

use std::collections::HashMap;
use std::hash::Hash;

use num_bigint::BigInt;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the ground size accepted by the public enumerators.
pub const MAX_ENUMERATION: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("ground set of size {size} exceeds the enumeration cap {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("element {element} is outside the ground set of size {size}")]
    OutOfRange { element: usize, size: usize },
    #[error("blocks are not a partition of 1..={0}")]
    NotAPartition(usize),
    #[error("integer partition parts must be positive and non-increasing")]
    BadParts,
}

/// A partition of `{0, ..., n-1}` in restricted-growth form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SetPartition {
    rgs: Vec<usize>,
}

impl SetPartition {
    /// Builds the canonical form from an arbitrary block assignment.
    pub fn from_assignment<T: Eq + Hash>(assignment: &[T]) -> Self {
        let mut seen: HashMap<&T, usize> = HashMap::new();
        let rgs = assignment
            .iter()
            .map(|a| {
                let next = seen.len();
                *seen.entry(a).or_insert(next)
            })
            .collect();
        Self { rgs }
    }

    /// Builds a partition from 0-based blocks.
    pub fn from_blocks(n: usize, blocks: &[Vec<usize>]) -> Result<Self, PartitionError> {
        let mut assignment = vec![usize::MAX; n];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(PartitionError::NotAPartition(n));
            }
            for &e in block {
                if e >= n {
                    return Err(PartitionError::OutOfRange { element: e + 1, size: n });
                }
                if assignment[e] != usize::MAX {
                    return Err(PartitionError::NotAPartition(n));
                }
                assignment[e] = b;
            }
        }
        if assignment.contains(&usize::MAX) {
            return Err(PartitionError::NotAPartition(n));
        }
        Ok(Self::from_assignment(&assignment))
    }

    pub fn discrete(n: usize) -> Self {
        Self { rgs: (0..n).collect() }
    }

    pub fn single_block(n: usize) -> Self {
        Self { rgs: vec![0; n] }
    }

    pub fn ground_size(&self) -> usize {
        self.rgs.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.rgs.iter().max().map_or(0, |m| m + 1)
    }

    /// Block index of every element.
    pub fn assignment(&self) -> &[usize] {
        &self.rgs
    }

    pub fn block_of(&self, element: usize) -> usize {
        self.rgs[element]
    }

    pub fn same_block(&self, a: usize, b: usize) -> bool {
        self.rgs[a] == self.rgs[b]
    }

    /// 0-based blocks sorted by least element.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.num_blocks()];
        for (e, &b) in self.rgs.iter().enumerate() {
            blocks[b].push(e);
        }
        blocks
    }

    /// Partition of `0..n` obtained by merging blocks of `self` according to
    /// a partition of its blocks.
    pub fn coarsen(&self, outer: &SetPartition) -> SetPartition {
        let merged: Vec<usize> = self.rgs.iter().map(|&b| outer.block_of(b)).collect();
        SetPartition::from_assignment(&merged)
    }

    /// True when every block of `self` lies inside a block of `other`.
    pub fn refines(&self, other: &SetPartition) -> bool {
        let mut image: Vec<Option<usize>> = vec![None; self.num_blocks()];
        for (e, &b) in self.rgs.iter().enumerate() {
            match image[b] {
                None => image[b] = Some(other.rgs[e]),
                Some(o) if o != other.rgs[e] => return false,
                _ => {}
            }
        }
        true
    }
}

impl Serialize for SetPartition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let one_based: Vec<Vec<usize>> =
            self.blocks().into_iter().map(|b| b.into_iter().map(|e| e + 1).collect()).collect();
        one_based.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SetPartition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let blocks: Vec<Vec<usize>> = Vec::deserialize(d)?;
        let n = blocks.iter().map(Vec::len).sum();
        let zero_based = blocks
            .iter()
            .map(|b| {
                b.iter()
                    .map(|&e| e.checked_sub(1).ok_or(PartitionError::OutOfRange { element: e, size: n }))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        SetPartition::from_blocks(n, &zero_based).map_err(serde::de::Error::custom)
    }
}

/// Lazy enumeration of restricted-growth strings of a fixed length.
#[derive(Clone, Debug)]
pub struct RgsIter {
    current: Option<Vec<usize>>,
    maxes: Vec<usize>,
}

impl RgsIter {
    pub fn new(n: usize) -> Self {
        Self { current: Some(vec![0; n]), maxes: vec![0; n] }
    }
}

impl Iterator for RgsIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().expect("checked above");
        let n = cur.len();
        let mut i = n;
        loop {
            if i <= 1 {
                self.current = None;
                break;
            }
            i -= 1;
            let bound = self.maxes[i - 1] + 1;
            if cur[i] < bound {
                cur[i] += 1;
                self.maxes[i] = self.maxes[i - 1].max(cur[i]);
                let top = self.maxes[i];
                cur[i + 1..n].fill(0);
                self.maxes[i + 1..n].fill(top);
                break;
            }
        }
        Some(out)
    }
}

/// All partitions of `0..n` without the size cap, lazily.
pub fn set_partitions_unchecked(n: usize) -> impl Iterator<Item = SetPartition> {
    RgsIter::new(n).map(|rgs| SetPartition { rgs })
}

/// All Bell(n) partitions of `0..n` in canonical order.
pub fn enumerate_set_partitions(n: usize) -> Result<Vec<SetPartition>, PartitionError> {
    if n > MAX_ENUMERATION {
        return Err(PartitionError::TooLarge { size: n, cap: MAX_ENUMERATION });
    }
    Ok(set_partitions_unchecked(n).collect())
}

/// All partitions of `0..n` whose blocks are monochromatic, lazily.
pub fn split_partitions(colors: &[u8]) -> impl Iterator<Item = SetPartition> + '_ {
    let classes: Vec<Vec<usize>> = (0..=2u8)
        .map(|c| (0..colors.len()).filter(|&v| colors[v] == c).collect())
        .filter(|c: &Vec<usize>| !c.is_empty())
        .collect();
    let n = colors.len();
    let per_class: Vec<Vec<Vec<usize>>> = classes.iter().map(|c| RgsIter::new(c.len()).collect()).collect();
    let sizes: Vec<usize> = per_class.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    (0..total).map(move |mut idx| {
        let mut assignment = vec![0usize; n];
        let mut offset = 0;
        for (k, class) in classes.iter().enumerate() {
            let rgs = &per_class[k][idx % sizes[k]];
            idx /= sizes[k];
            for (pos, &v) in class.iter().enumerate() {
                assignment[v] = offset + rgs[pos];
            }
            offset += class.len();
        }
        SetPartition::from_assignment(&assignment)
    })
}

/// Bell number by the triangle recursion.
pub fn bell(n: usize) -> BigInt {
    let mut row = vec![BigInt::one()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(row.last().cloned().expect("rows are nonempty"));
        for x in &row {
            let v = next.last().expect("pushed above") + x;
            next.push(v);
        }
        row = next;
    }
    row[0].clone()
}

/// Positions share a block iff their values coincide.
pub fn kernel<T: Eq + Hash>(indices: &[T]) -> SetPartition {
    SetPartition::from_assignment(indices)
}

/// A non-increasing sequence of positive integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct IntegerPartition {
    parts: Vec<usize>,
}

impl TryFrom<Vec<usize>> for IntegerPartition {
    type Error = PartitionError;

    fn try_from(parts: Vec<usize>) -> Result<Self, PartitionError> {
        IntegerPartition::new(parts)
    }
}

impl From<IntegerPartition> for Vec<usize> {
    fn from(p: IntegerPartition) -> Vec<usize> {
        p.parts
    }
}

impl IntegerPartition {
    pub fn new(parts: Vec<usize>) -> Result<Self, PartitionError> {
        if parts.contains(&0) || parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(PartitionError::BadParts);
        }
        Ok(Self { parts })
    }

    /// Sorts arbitrary positive parts into canonical order.
    pub fn from_unsorted(mut parts: Vec<usize>) -> Result<Self, PartitionError> {
        parts.sort_unstable_by(|a, b| b.cmp(a));
        Self::new(parts)
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn total(&self) -> usize {
        self.parts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Number of parts equal to `k`.
    pub fn multiplicity(&self, k: usize) -> usize {
        self.parts.iter().filter(|&&p| p == k).count()
    }

    /// `(2, ..., 2, 1^m)` of total `n`, when `n − m` is even and nonnegative.
    pub fn pairs_with_singletons(n: usize, m: usize) -> Option<Self> {
        if m > n || (n - m) % 2 == 1 {
            return None;
        }
        let mut parts = vec![2; (n - m) / 2];
        parts.extend(std::iter::repeat_n(1, m));
        Some(Self { parts })
    }

    /// `(3, 2, ..., 2)` of total `n`, for odd `n ≥ 3`.
    pub fn triple_with_pairs(n: usize) -> Option<Self> {
        if n < 3 || (n - 3) % 2 == 1 {
            return None;
        }
        let mut parts = vec![3];
        parts.extend(std::iter::repeat_n(2, (n - 3) / 2));
        Some(Self { parts })
    }
}

/// All integer partitions of `n`, in reverse lexicographic order.
pub fn integer_partitions(n: usize) -> Vec<IntegerPartition> {
    fn rec(rest: usize, max: usize, prefix: &mut Vec<usize>, out: &mut Vec<IntegerPartition>) {
        if rest == 0 {
            out.push(IntegerPartition { parts: prefix.clone() });
            return;
        }
        for k in (1..=max.min(rest)).rev() {
            prefix.push(k);
            rec(rest - k, k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut Vec::new(), &mut out);
    out
}

/// Non-increasing block sizes.
pub fn type_of(pi: &SetPartition) -> IntegerPartition {
    let mut sizes = vec![0usize; pi.num_blocks()];
    for &b in pi.assignment() {
        sizes[b] += 1;
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    IntegerPartition { parts: sizes }
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Number of set partitions of `[n]` of type `λ`: `n! / (Π λᵢ! · Π mₖ!)`.
pub fn count_of_type(lambda: &IntegerPartition) -> Result<BigInt, PartitionError> {
    let n = lambda.total();
    if n > MAX_ENUMERATION {
        return Err(PartitionError::TooLarge { size: n, cap: MAX_ENUMERATION });
    }
    Ok(count_of_type_unchecked(lambda))
}

pub(crate) fn count_of_type_unchecked(lambda: &IntegerPartition) -> BigInt {
    let mut den = BigInt::one();
    for &p in &lambda.parts {
        den *= factorial(p);
    }
    let mut k = 0;
    while k < lambda.parts.len() {
        let run = lambda.parts[k..].iter().take_while(|&&p| p == lambda.parts[k]).count();
        den *= factorial(run);
        k += run;
    }
    factorial(lambda.total()) / den
}

/// Number of pair partitions of `[n]`.
pub fn pair_partitions(n: usize) -> BigInt {
    if n % 2 == 1 {
        return BigInt::ZERO;
    }
    (1..n).step_by(2).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Restriction to an ascending subset, relabeled to `0..subset.len()` by
/// position in the subset.
pub fn restrict(pi: &SetPartition, subset: &[usize]) -> Result<SetPartition, PartitionError> {
    let n = pi.ground_size();
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&e| e >= n) {
        return Err(PartitionError::OutOfRange { element: bad + 1, size: n });
    }
    let assignment: Vec<usize> = sorted.iter().map(|&e| pi.block_of(e)).collect();
    Ok(SetPartition::from_assignment(&assignment))
}

/// True iff every block is monochromatic.
pub fn is_split(pi: &SetPartition, colors: &[u8]) -> bool {
    first_mixed_block(pi, colors).is_none()
}

/// The first block containing two colors, if any.
pub fn first_mixed_block(pi: &SetPartition, colors: &[u8]) -> Option<Vec<usize>> {
    let mut block_color: Vec<Option<u8>> = vec![None; pi.num_blocks()];
    for (e, &b) in pi.assignment().iter().enumerate() {
        match block_color[b] {
            None => block_color[b] = Some(colors[e]),
            Some(c) if c != colors[e] => return Some(pi.blocks()[b].clone()),
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::gaussian_moment;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn part(blocks: &[&[usize]]) -> SetPartition {
        let n = blocks.iter().map(|b| b.len()).sum();
        let zero: Vec<Vec<usize>> = blocks.iter().map(|b| b.iter().map(|e| e - 1).collect()).collect();
        SetPartition::from_blocks(n, &zero).unwrap()
    }

    fn bell_recursive(n: usize) -> u64 {
        // B(n+1) = Σ C(n,k) B(k)
        let mut b = vec![1u64];
        for m in 0..n {
            let mut s = 0u64;
            let mut c = 1u64;
            for (k, bk) in b.iter().enumerate() {
                s += c * bk;
                c = c * (m - k) as u64 / (k + 1) as u64;
            }
            b.push(s);
        }
        b[n]
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_set_partitions(0).unwrap().len(), 1);
        assert_eq!(enumerate_set_partitions(1).unwrap(), vec![SetPartition::discrete(1)]);
        assert_eq!(enumerate_set_partitions(3).unwrap().len(), 5);
        assert_eq!(enumerate_set_partitions(4).unwrap().len(), 15);
        for n in 0..=9 {
            let all = enumerate_set_partitions(n).unwrap();
            assert_eq!(all.len() as u64, bell_recursive(n));
            assert_eq!(bell(n).to_u64().unwrap(), bell_recursive(n));
            let mut dedup = all.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), all.len());
            assert!(all.windows(2).all(|w| w[0] < w[1]), "canonical order");
        }
        assert!(matches!(enumerate_set_partitions(13), Err(PartitionError::TooLarge { .. })));
    }

    #[test]
    fn kernels() {
        assert_eq!(kernel(&[7, 7, 2]), part(&[&[1, 2], &[3]]));
        assert_eq!(kernel(&[1, 2, 3]), SetPartition::discrete(3));
        assert_eq!(kernel(&[5, 3, 5, 3]), part(&[&[1, 3], &[2, 4]]));
    }

    #[test]
    fn types() {
        assert_eq!(type_of(&part(&[&[1, 2], &[3]])).parts(), &[2, 1]);
        assert_eq!(type_of(&SetPartition::discrete(4)).parts(), &[1, 1, 1, 1]);
        assert_eq!(type_of(&part(&[&[1, 2, 3]])).parts(), &[3]);
    }

    #[test]
    fn type_counts() {
        let c = |p: Vec<usize>| count_of_type(&IntegerPartition::new(p).unwrap()).unwrap();
        assert_eq!(c(vec![2, 2]), BigInt::from(3));
        assert_eq!(c(vec![3, 2]), BigInt::from(10));
        assert_eq!(c(vec![1; 6]), BigInt::from(1));
        for n in 0..=8 {
            let all = enumerate_set_partitions(n).unwrap();
            for lambda in integer_partitions(n) {
                let direct = all.iter().filter(|p| type_of(p) == lambda).count();
                assert_eq!(c(lambda.parts().to_vec()), BigInt::from(direct));
            }
        }
    }

    #[test]
    fn type_counts_sum_to_bell() {
        for n in 0..=10 {
            let total: BigInt =
                integer_partitions(n).iter().map(|l| count_of_type(l).unwrap()).sum();
            assert_eq!(total, bell(n));
        }
    }

    #[test]
    fn pair_partition_counts() {
        assert_eq!(pair_partitions(2), BigInt::from(1));
        assert_eq!(pair_partitions(4), BigInt::from(3));
        assert_eq!(pair_partitions(5), BigInt::from(0));
        for n in 0..=12 {
            assert_eq!(crate::Rational::from_integer(pair_partitions(n)), gaussian_moment(n));
            if n % 2 == 0 && n > 0 {
                let lambda = IntegerPartition::new(vec![2; n / 2]).unwrap();
                assert_eq!(count_of_type(&lambda).unwrap(), pair_partitions(n));
            }
        }
        let direct = enumerate_set_partitions(6)
            .unwrap()
            .into_iter()
            .filter(|p| type_of(p).parts().iter().all(|&s| s == 2))
            .count();
        assert_eq!(direct, 15);
    }

    #[test]
    fn restrictions() {
        let p = part(&[&[1, 3], &[2]]);
        assert_eq!(restrict(&p, &[0, 1]).unwrap(), SetPartition::discrete(2));
        let q = part(&[&[1, 2, 3]]);
        assert_eq!(restrict(&q, &[0, 2]).unwrap(), SetPartition::single_block(2));
        assert_eq!(restrict(&p, &[0, 1, 2]).unwrap(), p);
        assert!(restrict(&p, &[5]).is_err());
    }

    #[test]
    fn splitness() {
        assert!(is_split(&SetPartition::discrete(3), &[0, 1, 2]));
        assert!(!is_split(&SetPartition::single_block(2), &[1, 2]));
        assert!(is_split(&part(&[&[1, 2], &[3]]), &[0, 0, 1]));
    }

    #[test]
    fn split_enumeration_matches_filter() {
        let colors = [0u8, 1, 0, 2, 1, 0];
        let mut fast: Vec<_> = split_partitions(&colors).collect();
        let mut slow: Vec<_> =
            enumerate_set_partitions(6).unwrap().into_iter().filter(|p| is_split(p, &colors)).collect();
        fast.sort();
        slow.sort();
        assert_eq!(fast, slow);
    }

    #[test]
    fn named_families() {
        assert_eq!(IntegerPartition::pairs_with_singletons(5, 1).unwrap().parts(), &[2, 2, 1]);
        assert_eq!(IntegerPartition::pairs_with_singletons(5, 3).unwrap().parts(), &[2, 1, 1, 1]);
        assert!(IntegerPartition::pairs_with_singletons(5, 2).is_none());
        assert_eq!(IntegerPartition::triple_with_pairs(7).unwrap().parts(), &[3, 2, 2]);
        assert!(IntegerPartition::triple_with_pairs(4).is_none());
    }

    #[test]
    fn json_is_one_based() {
        let p = part(&[&[1, 3], &[2]]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[[1,3],[2]]");
        assert_eq!(serde_json::from_str::<SetPartition>(&s).unwrap(), p);
        let l = IntegerPartition::new(vec![3, 1]).unwrap();
        assert_eq!(serde_json::to_string(&l).unwrap(), "[3,1]");
        assert!(serde_json::from_str::<IntegerPartition>("[1,3]").is_err());
    }

    proptest! {
        #[test]
        fn kernel_invariant_under_injective_relabel(idx in proptest::collection::vec(0u32..5, 0..10)) {
            let relabeled: Vec<u32> = idx.iter().map(|&i| 3 * i + 17).collect();
            prop_assert_eq!(kernel(&idx), kernel(&relabeled));
        }

        #[test]
        fn restriction_is_functorial(idx in proptest::collection::vec(0u8..4, 1..10), seed in 0u64..1000) {
            let pi = kernel(&idx);
            let n = idx.len();
            let big: Vec<usize> = (0..n).filter(|i| (seed >> (i % 16)) & 1 == 1 || i % 3 == 0).collect();
            let small_pos: Vec<usize> = (0..big.len()).filter(|i| i % 2 == 0).collect();
            let small: Vec<usize> = small_pos.iter().map(|&i| big[i]).collect();
            let two_step = restrict(&restrict(&pi, &big).unwrap(), &small_pos).unwrap();
            prop_assert_eq!(two_step, restrict(&pi, &small).unwrap());
        }

        #[test]
        fn blocks_round_trip(idx in proptest::collection::vec(0u8..5, 0..10)) {
            let pi = kernel(&idx);
            let back = SetPartition::from_blocks(pi.ground_size(), &pi.blocks()).unwrap();
            prop_assert_eq!(back, pi);
        }
    }
}
