//! Single-server W-private retrieval by partitioning and coding.
//!
//! The user splits [K] into g = ceil(K/(M+1)) parts so that the part holding
//! the demand W contains nothing outside {W} u S, sends the parts in random
//! order, and gets back one XOR-sum per part. Subtracting its side information
//! from the sum over the demand's part yields X_W. Download is g messages.
//!
//! When (M+1) does not divide K the last labelled part P_g is smaller than the
//! others; the demand is placed into a labelled part chosen with probability
//! proportional to its size, which keeps P(W in P) = |P| / K.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::audit::{EnumerableScheme, QueryDistribution, SampleableScheme};
use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::model::{Database, DemandSpec, SideInfo};

pub type Part = BTreeSet<usize>;

/// Largest K for which exact enumeration is attempted.
pub const MAX_ENUMERATION_K: usize = 10;

/// Number of parts g = ceil(K / (M+1)).
pub fn part_count(k: usize, m: usize) -> usize {
    k.div_ceil(m + 1)
}

/// Sizes of the labelled parts P_1..P_g: M+1 for all but the last, which
/// takes the remaining K - (g-1)(M+1) indices.
pub fn part_sizes(k: usize, m: usize) -> Vec<usize> {
    let g = part_count(k, m);
    let mut sizes = vec![m + 1; g - 1];
    sizes.push(k - (g - 1) * (m + 1));
    sizes
}

fn check_params(spec: &DemandSpec, k: usize) -> Result<()> {
    if spec.m() >= k {
        return Err(Error::param(format!("M={} must be below K={k}", spec.m())));
    }
    spec.validate(k)
}

/// A set partition of [K].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    k: usize,
    parts: Vec<Part>,
}

impl Partition {
    /// Checks the parts are nonempty, disjoint, and cover [K].
    pub fn new(k: usize, parts: Vec<Part>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &parts {
            if p.is_empty() {
                return Err(Error::protocol("empty part"));
            }
            for &j in p {
                if !(1..=k).contains(&j) {
                    return Err(Error::protocol(format!("index {j} outside 1..={k}")));
                }
                if !seen.insert(j) {
                    return Err(Error::protocol(format!("index {j} appears in two parts")));
                }
            }
        }
        if seen.len() != k {
            return Err(Error::protocol("parts do not cover every message"));
        }
        Ok(Partition { k, parts })
    }

    pub fn messages(&self) -> usize {
        self.k
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    /// Position of the part containing message `j`.
    pub fn part_of(&self, j: usize) -> Option<usize> {
        self.parts.iter().position(|p| p.contains(&j))
    }

    /// Parts sorted lexicographically, each listed ascending.
    pub fn canonical(&self) -> Vec<Vec<usize>> {
        canonical_parts(
            self.parts
                .iter()
                .map(|p| p.iter().copied().collect())
                .collect(),
        )
    }

    /// True when the demand's part minus W lies inside S.
    pub fn serves(&self, spec: &DemandSpec) -> bool {
        self.part_of(spec.demand).is_some_and(|i| {
            self.parts[i]
                .iter()
                .all(|&j| j == spec.demand || spec.side.contains(&j))
        })
    }
}

fn canonical_parts(mut parts: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    parts.sort();
    parts
}

fn fmt_part(p: &[usize]) -> String {
    let items: Vec<String> = p.iter().map(ToString::to_string).collect();
    format!("{{{}}}", items.join(","))
}

/// Canonical encoding of an unordered partition, e.g. `{1,2},{3}`.
pub fn canonical_key(parts: &[Vec<usize>]) -> String {
    let parts = canonical_parts(parts.to_vec());
    parts
        .iter()
        .map(|p| fmt_part(p))
        .collect::<Vec<_>>()
        .join(",")
}

/// Encoding that keeps the transmitted order, e.g. `[{3},{1,2}]`.
pub fn ordered_key(parts: &[Vec<usize>]) -> String {
    let items: Vec<String> = parts
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.sort_unstable();
            fmt_part(&p)
        })
        .collect();
    format!("[{}]", items.join(","))
}

/// The random choices made while building a partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionDraw {
    /// 0-based label of the part that receives the demand.
    pub chosen: usize,
    /// Side-information indices placed with W when the short part P_g is
    /// chosen; all of S otherwise.
    pub side_pick: Vec<usize>,
    /// The unplaced indices in the order they fill the remaining parts.
    pub fill_order: Vec<usize>,
}

pub fn sample_draw<R: Rng + ?Sized>(
    spec: &DemandSpec,
    k: usize,
    rng: &mut R,
) -> Result<PartitionDraw> {
    check_params(spec, k)?;
    let sizes = part_sizes(k, spec.m());
    let g = sizes.len();
    // Label i is chosen with probability sizes[i] / K.
    let mut ticket = rng.gen_range(0..k);
    let chosen = sizes
        .iter()
        .position(|&s| {
            if ticket < s {
                true
            } else {
                ticket -= s;
                false
            }
        })
        .expect("sizes sum to K");
    let side: Vec<usize> = spec.side.iter().copied().collect();
    let side_pick = if chosen == g - 1 && sizes[g - 1] < spec.m() + 1 {
        side.choose_multiple(rng, sizes[g - 1] - 1)
            .copied()
            .collect()
    } else {
        side
    };
    let placed: BTreeSet<usize> = side_pick.iter().copied().chain([spec.demand]).collect();
    let mut fill_order: Vec<usize> = (1..=k).filter(|j| !placed.contains(j)).collect();
    fill_order.shuffle(rng);
    Ok(PartitionDraw {
        chosen,
        side_pick,
        fill_order,
    })
}

/// Builds the labelled partition P_1..P_g determined by `draw`.
pub fn assemble(spec: &DemandSpec, k: usize, draw: &PartitionDraw) -> Result<Partition> {
    check_params(spec, k)?;
    let sizes = part_sizes(k, spec.m());
    if draw.chosen >= sizes.len() {
        return Err(Error::param(format!(
            "no part with label {}",
            draw.chosen + 1
        )));
    }
    let mut demand_part: Part = draw.side_pick.iter().copied().collect();
    demand_part.insert(spec.demand);
    if demand_part.len() != sizes[draw.chosen]
        || !draw.side_pick.iter().all(|j| spec.side.contains(j))
    {
        return Err(Error::param("side pick does not fit the chosen part"));
    }
    let mut rest = draw.fill_order.iter().copied();
    let mut parts = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        if i == draw.chosen {
            parts.push(demand_part.clone());
        } else {
            let p: Part = rest.by_ref().take(size).collect();
            if p.len() != size {
                return Err(Error::param("fill order too short"));
            }
            parts.push(p);
        }
    }
    if rest.next().is_some() {
        return Err(Error::param("fill order too long"));
    }
    Partition::new(k, parts)
}

/// Draws the user's partition for demand `spec`.
pub fn build_partition<R: Rng + ?Sized>(
    spec: &DemandSpec,
    k: usize,
    rng: &mut R,
) -> Result<Partition> {
    let draw = sample_draw(spec, k, rng)?;
    assemble(spec, k, &draw)
}

/// The transmitted query: one characteristic vector per part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionQuery {
    k: usize,
    vectors: Vec<BitString>,
}

impl PartitionQuery {
    pub fn new(k: usize, vectors: Vec<BitString>) -> Result<Self> {
        if let Some(v) = vectors.iter().find(|v| v.len() != k) {
            return Err(Error::protocol(format!(
                "vector of length {} for K={k}",
                v.len()
            )));
        }
        Ok(PartitionQuery { k, vectors })
    }

    /// Characteristic vectors of `parts`, in the given order.
    pub fn from_parts(k: usize, parts: &[Part]) -> Self {
        let vectors = parts
            .iter()
            .map(|p| {
                let mut v = BitString::zeros(k);
                for &j in p {
                    v.set(j - 1, true);
                }
                v
            })
            .collect();
        PartitionQuery { k, vectors }
    }

    pub fn messages(&self) -> usize {
        self.k
    }

    pub fn vectors(&self) -> &[BitString] {
        &self.vectors
    }

    /// The index set of each vector, in transmitted order.
    pub fn parts(&self) -> Vec<Part> {
        self.vectors
            .iter()
            .map(|v| {
                v.iter()
                    .enumerate()
                    .filter(|(_, b)| *b)
                    .map(|(i, _)| i + 1)
                    .collect()
            })
            .collect()
    }

    /// Interprets the vectors as a partition, failing unless they are
    /// disjoint and cover [K].
    pub fn partition(&self) -> Result<Partition> {
        Partition::new(self.k, self.parts())
    }

    pub fn canonical_key(&self) -> String {
        let parts: Vec<Vec<usize>> = self
            .parts()
            .into_iter()
            .map(|p| p.into_iter().collect())
            .collect();
        canonical_key(&parts)
    }

    pub fn ordered_key(&self) -> String {
        let parts: Vec<Vec<usize>> = self
            .parts()
            .into_iter()
            .map(|p| p.into_iter().collect())
            .collect();
        ordered_key(&parts)
    }

    /// u16 K, u16 vector count, then each vector as a ceil(K/8)-byte bitmap.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.vectors.len() * self.k.div_ceil(8));
        out.extend_from_slice(&(self.k as u16).to_be_bytes());
        out.extend_from_slice(&(self.vectors.len() as u16).to_be_bytes());
        for v in &self.vectors {
            out.extend_from_slice(v.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::malformed("partition query header truncated"));
        }
        let k = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        let count = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
        let width = k.div_ceil(8);
        let body = &bytes[4..];
        if k == 0 || body.len() != count * width {
            return Err(Error::malformed(format!(
                "expected {count} bitmaps of {width} bytes, found {} bytes",
                body.len()
            )));
        }
        let vectors = body
            .chunks(width)
            .map(|c| BitString::from_bytes(c, k))
            .collect::<Result<_>>()?;
        PartitionQuery::new(k, vectors)
    }
}

/// Sends the parts in a fresh uniformly random order.
pub fn encode_query<R: Rng + ?Sized>(partition: &Partition, rng: &mut R) -> PartitionQuery {
    let mut parts = partition.parts().to_vec();
    parts.shuffle(rng);
    PartitionQuery::from_parts(partition.messages(), &parts)
}

/// One XOR-sum per query vector, in query order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionAnswer {
    pub sums: Vec<BitString>,
}

impl PartitionAnswer {
    pub fn answer_bits(&self) -> u64 {
        self.sums.iter().map(|s| s.len() as u64).sum()
    }

    /// u16 count, u32 bits per sum, then each sum in ceil(t/8) bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let t = self.sums.first().map_or(0, BitString::len);
        let mut out = Vec::with_capacity(6 + self.sums.len() * t.div_ceil(8));
        out.extend_from_slice(&(self.sums.len() as u16).to_be_bytes());
        out.extend_from_slice(&(t as u32).to_be_bytes());
        for s in &self.sums {
            out.extend_from_slice(s.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 {
            return Err(Error::malformed("partition answer header truncated"));
        }
        let count = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        let t = u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]) as usize;
        let width = t.div_ceil(8);
        let body = &bytes[6..];
        if body.len() != count * width || (count > 0 && t == 0) {
            return Err(Error::malformed("partition answer length mismatch"));
        }
        let sums = if count == 0 {
            Vec::new()
        } else {
            body.chunks(width)
                .map(|c| BitString::from_bytes(c, t))
                .collect::<Result<_>>()?
        };
        Ok(PartitionAnswer { sums })
    }
}

pub(crate) fn answer_parts(messages: &[BitString], parts: &[Vec<usize>]) -> Vec<BitString> {
    let t = messages[0].len();
    parts
        .iter()
        .map(|p| {
            let mut acc = BitString::zeros(t);
            for &j in p {
                acc.xor_assign(&messages[j - 1]).expect("equal lengths");
            }
            acc
        })
        .collect()
}

/// Server side: XOR of the messages selected by each vector.
pub fn server_answer(db: &Database, query: &PartitionQuery) -> Result<PartitionAnswer> {
    if query.messages() != db.len() {
        return Err(Error::protocol(format!(
            "query is over K={} but the database holds {} messages",
            query.messages(),
            db.len()
        )));
    }
    let parts: Vec<Vec<usize>> = query
        .parts()
        .into_iter()
        .map(|p| p.into_iter().collect())
        .collect();
    Ok(PartitionAnswer {
        sums: answer_parts(db.messages(), &parts),
    })
}

/// Recovers X_W from the sum over the part holding W.
pub fn decode(
    answer: &PartitionAnswer,
    query: &PartitionQuery,
    spec: &DemandSpec,
    side: &SideInfo,
) -> Result<BitString> {
    if answer.sums.len() != query.vectors().len() {
        return Err(Error::CorruptedTranscript(format!(
            "{} sums for {} query vectors",
            answer.sums.len(),
            query.vectors().len()
        )));
    }
    let parts = query.parts();
    let i = parts
        .iter()
        .position(|p| p.contains(&spec.demand))
        .ok_or_else(|| Error::CorruptedTranscript(format!("no part contains W={}", spec.demand)))?;
    let mut value = answer.sums[i].clone();
    for &j in parts[i].iter().filter(|&&j| j != spec.demand) {
        let x = side.get(&j).ok_or_else(|| {
            Error::CorruptedTranscript(format!(
                "part of W holds {j}, which is not side information"
            ))
        })?;
        value.xor_assign(x)?;
    }
    Ok(value)
}

/// All unordered partitions of `items` into blocks with the given sizes.
fn set_partitions(items: &[usize], sizes: &mut Vec<usize>) -> Vec<Vec<Vec<usize>>> {
    let Some(&first) = items.first() else {
        return if sizes.is_empty() {
            vec![vec![]]
        } else {
            vec![]
        };
    };
    let mut out = Vec::new();
    let distinct: BTreeSet<usize> = sizes.iter().copied().collect();
    for size in distinct {
        let pos = sizes.iter().position(|&s| s == size).unwrap();
        sizes.remove(pos);
        let others = &items[1..];
        for combo in combinations(others, size - 1) {
            let mut block = vec![first];
            block.extend(&combo);
            let rest: Vec<usize> = others
                .iter()
                .copied()
                .filter(|x| !combo.contains(x))
                .collect();
            for mut tail in set_partitions(&rest, sizes) {
                tail.insert(0, block.clone());
                out.push(tail);
            }
        }
        sizes.insert(pos, size);
    }
    out
}

fn combinations(items: &[usize], r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![vec![]];
    }
    if items.len() < r {
        return vec![];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        for mut tail in combinations(&items[i + 1..], r - 1) {
            tail.insert(0, x);
            out.push(tail);
        }
    }
    out
}

/// Exact distribution of the unordered partition for demand `spec`, keyed
/// by canonical part lists.
pub fn enumerate_partitions(
    spec: &DemandSpec,
    k: usize,
) -> Result<BTreeMap<Vec<Vec<usize>>, BigRational>> {
    check_params(spec, k)?;
    if k > MAX_ENUMERATION_K {
        return Err(Error::Capacity(format!(
            "K={k} exceeds the enumeration limit {MAX_ENUMERATION_K}"
        )));
    }
    let m = spec.m();
    let sizes = part_sizes(k, m);
    let g = sizes.len();
    let short = sizes[g - 1];
    let side: Vec<usize> = spec.side.iter().copied().collect();
    let mut out: BTreeMap<Vec<Vec<usize>>, BigRational> = BTreeMap::new();
    let kk = BigInt::from(k);

    let mut add_branch =
        |demand_part: Vec<usize>, mut rest_sizes: Vec<usize>, weight: BigRational| {
            let placed: BTreeSet<usize> = demand_part.iter().copied().collect();
            let rest: Vec<usize> = (1..=k).filter(|j| !placed.contains(j)).collect();
            let fills = set_partitions(&rest, &mut rest_sizes);
            let each = weight / BigInt::from(fills.len());
            for mut fill in fills {
                fill.push(demand_part.clone());
                *out.entry(canonical_parts(fill))
                    .or_insert_with(|| BigRational::from_integer(0.into())) += &each;
            }
        };

    // Demand lands in one of the g-1 full-size parts together with all of S.
    if g > 1 {
        let weight = BigRational::new(BigInt::from((g - 1) * (m + 1)), kk.clone());
        let mut rest_sizes = sizes.clone();
        rest_sizes.remove(0);
        let mut demand_part = side.clone();
        demand_part.push(spec.demand);
        add_branch(demand_part, rest_sizes, weight);
    }
    // Demand lands in the short part P_g with short-1 elements of S.
    let weight = BigRational::new(BigInt::from(short), kk);
    let picks = combinations(&side, short - 1);
    let each = weight / BigInt::from(picks.len());
    for pick in picks {
        let mut demand_part = pick;
        demand_part.push(spec.demand);
        add_branch(demand_part, sizes[..g - 1].to_vec(), each.clone());
    }
    Ok(out)
}

/// Exact distribution of the canonical (unordered) query for `spec`.
pub fn enumerate_queries(spec: &DemandSpec, k: usize) -> Result<QueryDistribution> {
    let entries = enumerate_partitions(spec, k)?
        .into_iter()
        .map(|(parts, p)| (canonical_key(&parts), p))
        .collect();
    QueryDistribution::new(entries)
}

/// The scheme's parameters, for auditing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionScheme {
    k: usize,
    m: usize,
}

impl PartitionScheme {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if k == 0 || m >= k {
            return Err(Error::param(format!("need 0 <= M < K, got K={k}, M={m}")));
        }
        Ok(PartitionScheme { k, m })
    }

    /// Download size in messages.
    pub fn download_messages(&self) -> usize {
        part_count(self.k, self.m)
    }
}

impl EnumerableScheme for PartitionScheme {
    fn name(&self) -> String {
        format!("partition(K={},M={})", self.k, self.m)
    }
    fn messages(&self) -> usize {
        self.k
    }
    fn side_size(&self) -> usize {
        self.m
    }
    fn query_distribution(&self, demand: &DemandSpec) -> Result<QueryDistribution> {
        enumerate_queries(demand, self.k)
    }
}

impl SampleableScheme for PartitionScheme {
    /// The transmitted order is kept, so the key also tests the shuffle.
    fn sample_query_key(&self, demand: &DemandSpec, rng: &mut dyn RngCore) -> Result<String> {
        let p = build_partition(demand, self.k, rng)?;
        Ok(encode_query(&p, rng).ordered_key())
    }
}

/// Negative-control variant that always transmits the demand's part first
/// and the other parts in canonical order. It leaks W and exists only to
/// show that the audits catch such leaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnshuffledPartitionScheme {
    k: usize,
    m: usize,
}

impl UnshuffledPartitionScheme {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        PartitionScheme::new(k, m)?;
        Ok(UnshuffledPartitionScheme { k, m })
    }

    fn order(demand: &DemandSpec, parts: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        let (mut first, rest): (Vec<_>, Vec<_>) =
            parts.into_iter().partition(|p| p.contains(&demand.demand));
        first.extend(canonical_parts(rest));
        first
    }
}

impl EnumerableScheme for UnshuffledPartitionScheme {
    fn name(&self) -> String {
        format!("unshuffled-partition(K={},M={})", self.k, self.m)
    }
    fn messages(&self) -> usize {
        self.k
    }
    fn side_size(&self) -> usize {
        self.m
    }
    fn query_distribution(&self, demand: &DemandSpec) -> Result<QueryDistribution> {
        let mut entries = BTreeMap::new();
        for (parts, p) in enumerate_partitions(demand, self.k)? {
            *entries
                .entry(ordered_key(&Self::order(demand, parts)))
                .or_insert_with(|| BigRational::from_integer(0.into())) += p;
        }
        QueryDistribution::new(entries)
    }
}

impl SampleableScheme for UnshuffledPartitionScheme {
    fn sample_query_key(&self, demand: &DemandSpec, rng: &mut dyn RngCore) -> Result<String> {
        let p = build_partition(demand, self.k, rng)?;
        Ok(ordered_key(&Self::order(demand, p.canonical())))
    }
}

/// Probability that `spec` yields exactly this unordered partition.
pub fn partition_probability(
    spec: &DemandSpec,
    k: usize,
    parts: &[Vec<usize>],
) -> Result<BigRational> {
    let key = canonical_parts(parts.to_vec());
    Ok(enumerate_partitions(spec, k)?
        .remove(&key)
        .unwrap_or_else(|| BigRational::from_integer(0.into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{audit_w, Prior};
    use crate::model::all_demands;
    use num_traits::Zero;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[usize]) -> Part {
        v.iter().copied().collect()
    }

    fn frac(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn bits(v: u32, t: u32) -> BitString {
        let mut s = BitString::zeros(t as usize);
        s.write_uint(0, t, v);
        s
    }

    #[test]
    fn example_two_partition_and_decode() {
        let spec = DemandSpec::new(8, 2, [4, 6]).unwrap();
        assert_eq!(part_sizes(8, 2), vec![3, 3, 2]);
        let draw = PartitionDraw {
            chosen: 2,
            side_pick: vec![6],
            fill_order: vec![1, 7, 8, 3, 4, 5],
        };
        let p = assemble(&spec, 8, &draw).unwrap();
        assert_eq!(p.parts(), &[set(&[1, 7, 8]), set(&[3, 4, 5]), set(&[2, 6])]);
        assert!(p.serves(&spec));

        let db = Database::new((1..=8).map(|j| bits(j * 3 + 1, 4)).collect()).unwrap();
        let q = PartitionQuery::from_parts(8, p.parts());
        let a = server_answer(&db, &q).unwrap();
        let x = |j: usize| db.message(j).unwrap().clone();
        assert_eq!(a.sums[0], x(1).xor(&x(7)).unwrap().xor(&x(8)).unwrap());
        assert_eq!(a.sums[1], x(3).xor(&x(4)).unwrap().xor(&x(5)).unwrap());
        assert_eq!(a.sums[2], x(2).xor(&x(6)).unwrap());
        let side = db.side_info(&spec.side).unwrap();
        assert_eq!(decode(&a, &q, &spec, &side).unwrap(), x(2));
    }

    #[test]
    fn example_two_posterior_is_one_eighth() {
        let report = audit_w(
            &PartitionScheme::new(8, 2).unwrap(),
            &Prior::uniform(8, 2).unwrap(),
        )
        .unwrap();
        let key = canonical_key(&[vec![1, 7, 8], vec![3, 4, 5], vec![2, 6]]);
        let rows = report.rows_for(&key);
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.posterior == frac(1, 8)));
        assert!(report.is_private());
    }

    #[test]
    fn no_side_information_gives_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for w in 1..=4 {
            let spec = DemandSpec::new(4, w, []).unwrap();
            let p = build_partition(&spec, 4, &mut rng).unwrap();
            assert_eq!(p.parts().len(), 4);
            assert!(p.parts().iter().all(|q| q.len() == 1));
        }
    }

    #[test]
    fn k3_m1_branch_probabilities() {
        let spec = DemandSpec::new(3, 1, [2]).unwrap();
        let dist = enumerate_partitions(&spec, 3).unwrap();
        assert_eq!(dist.len(), 2);
        assert_eq!(dist[&vec![vec![1, 2], vec![3]]], frac(2, 3));
        assert_eq!(dist[&vec![vec![1], vec![2, 3]]], frac(1, 3));
        let q = enumerate_queries(&spec, 3).unwrap();
        assert_eq!(q.probability("{1,2},{3}"), frac(2, 3));
        assert_eq!(q.probability("{1},{2,3}"), frac(1, 3));

        // the sampler agrees with the enumeration
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 30_000;
        let hits = (0..n)
            .filter(|_| {
                build_partition(&spec, 3, &mut rng).unwrap().canonical()
                    == vec![vec![1, 2], vec![3]]
            })
            .count();
        assert!((hits as f64 / n as f64 - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn k3_m1_decode_from_singleton_branch() {
        let spec = DemandSpec::new(3, 1, [2]).unwrap();
        let db = Database::new(vec![bits(0b01, 2), bits(0b11, 2), bits(0b10, 2)]).unwrap();
        let q = PartitionQuery::from_parts(3, &[set(&[2, 3]), set(&[1])]);
        let a = server_answer(&db, &q).unwrap();
        assert_eq!(a.sums[1], bits(0b01, 2));
        assert_eq!(
            decode(&a, &q, &spec, &db.side_info(&spec.side).unwrap()).unwrap(),
            bits(0b01, 2)
        );
    }

    #[test]
    fn divisible_case_is_deterministic_when_two_parts() {
        let spec = DemandSpec::new(4, 1, [2]).unwrap();
        let q = enumerate_queries(&spec, 4).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.probability("{1,2},{3,4}"), frac(1, 1));
    }

    #[test]
    fn enumeration_sums_to_one() {
        for k in 1..=6 {
            for m in 0..=2.min(k - 1) {
                for d in all_demands(k, m) {
                    let dist = enumerate_partitions(&d, k).unwrap();
                    let total: BigRational = dist.values().cloned().sum();
                    assert_eq!(total, frac(1, 1), "K={k} M={m} {d}");
                    for parts in dist.keys() {
                        let p = Partition::new(
                            k,
                            parts.iter().map(|v| v.iter().copied().collect()).collect(),
                        )
                        .unwrap();
                        assert!(p.serves(&d));
                        assert_eq!(parts.len(), part_count(k, m));
                    }
                }
            }
        }
        let d = DemandSpec::new(11, 1, []).unwrap();
        assert!(matches!(
            enumerate_partitions(&d, 11),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn answer_vector_checks() {
        let db = Database::new(vec![bits(1, 2), bits(3, 2)]).unwrap();
        let q = PartitionQuery::new(3, vec![BitString::zeros(3)]).unwrap();
        assert!(matches!(server_answer(&db, &q), Err(Error::Protocol(_))));
        let q = PartitionQuery::new(2, vec![BitString::zeros(2)]).unwrap();
        assert!(server_answer(&db, &q).unwrap().sums[0].is_zero());
        let q = PartitionQuery::from_parts(2, &[set(&[1, 2])]);
        assert_eq!(server_answer(&db, &q).unwrap().sums[0], bits(0b10, 2));
    }

    #[test]
    fn decode_without_demand_part_is_corrupt() {
        let spec = DemandSpec::new(3, 1, [2]).unwrap();
        let q = PartitionQuery::from_parts(3, &[set(&[2, 3])]);
        let a = PartitionAnswer {
            sums: vec![bits(0, 1)],
        };
        assert!(matches!(
            decode(&a, &q, &spec, &SideInfo::new()),
            Err(Error::CorruptedTranscript(_))
        ));
    }

    #[test]
    fn wire_layout() {
        let q = PartitionQuery::from_parts(9, &[set(&[1, 9]), set(&[2, 3, 4, 5, 6, 7, 8])]);
        assert_eq!(
            q.to_bytes(),
            vec![0, 9, 0, 2, 0b1000_0000, 0b1000_0000, 0b0111_1111, 0]
        );
        assert_eq!(PartitionQuery::from_bytes(&q.to_bytes()).unwrap(), q);
        assert!(PartitionQuery::from_bytes(&[0, 9, 0, 1, 0]).is_err());
    }

    #[test]
    fn shuffle_orders_are_uniform() {
        let p = Partition::new(3, vec![set(&[1]), set(&[2]), set(&[3])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for _ in 0..10_000 {
            *counts
                .entry(encode_query(&p, &mut rng).ordered_key())
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let obs: Vec<u64> = counts.values().copied().collect();
        assert!(crate::audit::chi_square_goodness_of_fit(&obs, &[1.0 / 6.0; 6]) > 0.01);
    }

    #[test]
    fn unshuffled_variant_leaks() {
        let r = audit_w(
            &UnshuffledPartitionScheme::new(4, 1).unwrap(),
            &Prior::uniform(4, 1).unwrap(),
        )
        .unwrap();
        assert!(!r.max_posterior_deviation.is_zero());
    }

    proptest! {
        #[test]
        fn decode_round_trip(k in 1usize..=9, m_seed in 0usize..9, seed in any::<u64>(), t in 1usize..20) {
            let m = m_seed % k;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let db = Database::random(k, t, &mut rng).unwrap();
            let spec = crate::model::sample_demand(k, m, &mut rng).unwrap();
            let p = build_partition(&spec, k, &mut rng).unwrap();
            prop_assert!(p.serves(&spec));
            let q = encode_query(&p, &mut rng);
            prop_assert_eq!(q.partition().unwrap().canonical(), p.canonical());
            let a = server_answer(&db, &q).unwrap();
            prop_assert_eq!(a.answer_bits(), (part_count(k, m) * t) as u64);
            let x = decode(&a, &q, &spec, &db.side_info(&spec.side).unwrap()).unwrap();
            prop_assert_eq!(&x, db.message(spec.demand).unwrap());
            prop_assert_eq!(PartitionAnswer::from_bytes(&a.to_bytes()).unwrap(), a);
        }
    }

    #[test]
    fn probability_lookup() {
        let spec = DemandSpec::new(3, 1, [2]).unwrap();
        assert_eq!(
            partition_probability(&spec, 3, &[vec![3], vec![2, 1]]).unwrap(),
            frac(2, 3)
        );
        assert!(partition_probability(&spec, 3, &[vec![1, 3], vec![2]])
            .unwrap()
            .is_zero());
    }
}
