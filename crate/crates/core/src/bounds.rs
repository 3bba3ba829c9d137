//! Capacity formulas and converse-side checks.
//!
//! The converse for the single-server schemes goes through index coding: a
//! scheme's answers, viewed as linear combinations of the messages, must let
//! every client of a suitable index-coding instance decode its demand from the
//! answers and its own side information. [`verify_linear_index_code`] checks
//! that with a rank test; [`mais_greedy`] builds the acyclic induced subgraph
//! whose size lower-bounds the number of transmissions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gf::{self, FieldSpec};
use crate::model::{subsets_excluding, DemandSpec};
use crate::partition::Partition;

fn check_km(k: usize, m: usize) -> Result<()> {
    if k == 0 || m >= k {
        return Err(Error::param(format!("need 0 <= M < K, got K={k}, M={m}")));
    }
    Ok(())
}

/// Single-server W-privacy capacity, 1 / ceil(K / (M + 1)).
pub fn capacity_w(k: usize, m: usize) -> Result<Ratio<u64>> {
    check_km(k, m)?;
    Ok(Ratio::new(1, k.div_ceil(m + 1) as u64))
}

/// Single-server (W, S)-privacy capacity, 1 / (K - M).
pub fn capacity_ws(k: usize, m: usize) -> Result<Ratio<u64>> {
    check_km(k, m)?;
    Ok(Ratio::new(1, (k - m) as u64))
}

/// Achievable rate with N replicated servers, (1 + 1/N + ... + 1/N^(g-1))^-1
/// with g = K / (M + 1).
pub fn multiserver_rate_lb(n: usize, k: usize, m: usize) -> Result<Ratio<u64>> {
    check_km(k, m)?;
    if n == 0 {
        return Err(Error::param("need at least one server"));
    }
    if k % (m + 1) != 0 {
        return Err(Error::param(format!(
            "M+1 = {} does not divide K = {k}",
            m + 1
        )));
    }
    let g = (k / (m + 1)) as u32;
    let n = n as u64;
    // sum_{i<g} N^-i = sum_{i<g} N^(g-1-i) / N^(g-1)
    let top = n
        .checked_pow(g - 1)
        .ok_or_else(|| Error::param("N^g overflows"))?;
    let mut num: u64 = 0;
    let mut p: u64 = 1;
    for _ in 0..g {
        num = num
            .checked_add(p)
            .ok_or_else(|| Error::param("N^g overflows"))?;
        p = p.saturating_mul(n);
    }
    Ok(Ratio::new(top, num))
}

/// Fewest transmissions a linear code can use when every (W, S) pair must
/// decode: K - M.
pub fn linear_code_lower_bound(k: usize, m: usize) -> usize {
    k.saturating_sub(m)
}

/// Directed side-information graph on vertices 1..=K; i -> j when client i
/// knows message j.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SideInfoGraph {
    out: Vec<BTreeSet<usize>>,
}

impl SideInfoGraph {
    pub fn new(out_neighbors: Vec<BTreeSet<usize>>) -> Result<Self> {
        let k = out_neighbors.len();
        for (i, n) in out_neighbors.iter().enumerate() {
            if n.contains(&(i + 1)) {
                return Err(Error::param(format!("self-loop at vertex {}", i + 1)));
            }
            if let Some(j) = n.iter().find(|&&j| j == 0 || j > k) {
                return Err(Error::param(format!(
                    "edge {} -> {j} leaves 1..={k}",
                    i + 1
                )));
            }
        }
        Ok(SideInfoGraph { out: out_neighbors })
    }

    pub fn vertices(&self) -> usize {
        self.out.len()
    }

    /// N(i) for 1-based i.
    pub fn out_neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.out[i - 1]
    }

    /// Some(M) when every vertex has out-degree M.
    pub fn out_degree(&self) -> Option<usize> {
        let d = self.out.first().map_or(0, BTreeSet::len);
        self.out.iter().all(|n| n.len() == d).then_some(d)
    }

    /// Each vertex gets M distinct out-neighbors chosen uniformly.
    pub fn random_out_regular<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Result<Self> {
        check_km(k, m)?;
        let out = (1..=k)
            .map(|i| {
                (1..=k)
                    .filter(|&j| j != i)
                    .choose_multiple(rng, m)
                    .into_iter()
                    .collect()
            })
            .collect();
        Self::new(out)
    }

    /// N(i) = {i+1, ..., i+M} mod K.
    pub fn circulant(k: usize, m: usize) -> Result<Self> {
        check_km(k, m)?;
        Self::new(
            (0..k)
                .map(|i| (1..=m).map(|d| (i + d) % k + 1).collect())
                .collect(),
        )
    }

    pub fn complete(k: usize) -> Result<Self> {
        Self::new(
            (1..=k)
                .map(|i| (1..=k).filter(|&j| j != i).collect())
                .collect(),
        )
    }

    /// Whether the subgraph induced by `set` has no directed cycle.
    pub fn is_acyclic_on(&self, set: &BTreeSet<usize>) -> bool {
        let mut indeg: BTreeMap<usize, usize> = set.iter().map(|&v| (v, 0)).collect();
        for &v in set {
            for j in self.out_neighbors(v).intersection(set) {
                *indeg.get_mut(j).unwrap() += 1;
            }
        }
        let mut ready: Vec<usize> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&v, _)| v)
            .collect();
        let mut done = 0;
        while let Some(v) = ready.pop() {
            done += 1;
            for j in self.out_neighbors(v).intersection(set) {
                let d = indeg.get_mut(j).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(*j);
                }
            }
        }
        done == set.len()
    }
}

impl fmt::Display for SideInfoGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.out.iter().enumerate() {
            write!(f, "{}:", i + 1)?;
            for j in n {
                write!(f, " {j}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One vertex per non-empty line, "i: j1 j2 ...". Vertices must be listed
/// as 1..=K, in any order.
impl FromStr for SideInfoGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for line in s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (head, tail) = line
                .split_once(':')
                .ok_or_else(|| Error::malformed(format!("missing ':' in {line:?}")))?;
            let i: usize = head
                .trim()
                .parse()
                .map_err(|_| Error::malformed(format!("bad vertex {head:?}")))?;
            let n = tail
                .split_whitespace()
                .map(|j| {
                    j.parse()
                        .map_err(|_| Error::malformed(format!("bad neighbor {j:?}")))
                })
                .collect::<Result<BTreeSet<usize>>>()?;
            if rows.insert(i, n).is_some() {
                return Err(Error::malformed(format!("vertex {i} listed twice")));
            }
        }
        let k = rows.len();
        if rows.keys().copied().ne(1..=k) {
            return Err(Error::malformed(format!(
                "vertices must be exactly 1..={k}"
            )));
        }
        Self::new(rows.into_values().collect())
    }
}

fn greedy(g: &SideInfoGraph, mut pick: impl FnMut(&BTreeSet<usize>) -> usize) -> BTreeSet<usize> {
    let mut candidates: BTreeSet<usize> = (1..=g.vertices()).collect();
    let mut z = BTreeSet::new();
    while !candidates.is_empty() {
        let i = pick(&candidates);
        z.insert(i);
        candidates.remove(&i);
        for j in g.out_neighbors(i) {
            candidates.remove(j);
        }
    }
    z
}

/// Greedy acyclic induced subgraph: repeatedly take a uniformly random
/// remaining vertex and discard its out-neighbors.
pub fn mais_greedy<R: Rng + ?Sized>(g: &SideInfoGraph, rng: &mut R) -> BTreeSet<usize> {
    greedy(g, |c| *c.iter().choose(rng).expect("non-empty"))
}

/// [`mais_greedy`] always taking the lowest remaining vertex.
pub fn mais_greedy_lowest(g: &SideInfoGraph) -> BTreeSet<usize> {
    greedy(g, |c| *c.first().expect("non-empty"))
}

/// Clients (demand, side set) over K messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexCodingInstance {
    pub messages: usize,
    pub clients: Vec<(usize, BTreeSet<usize>)>,
}

impl IndexCodingInstance {
    pub fn new(messages: usize, clients: Vec<(usize, BTreeSet<usize>)>) -> Result<Self> {
        for (f, s) in &clients {
            if !(1..=messages).contains(f) || s.iter().any(|j| !(1..=messages).contains(j)) {
                return Err(Error::param(format!(
                    "client ({f}, {s:?}) outside 1..={messages}"
                )));
            }
            if s.contains(f) {
                return Err(Error::param(format!(
                    "client demand {f} is in its side set"
                )));
            }
        }
        Ok(IndexCodingInstance { messages, clients })
    }

    /// One client per message, client i holding the given side set.
    /// Returns None unless every message is demanded exactly once.
    pub fn side_info_graph(&self) -> Option<SideInfoGraph> {
        let mut out = vec![None; self.messages];
        for (f, s) in &self.clients {
            if out[f - 1].replace(s.clone()).is_some() {
                return None;
            }
        }
        SideInfoGraph::new(out.into_iter().collect::<Option<Vec<_>>>()?).ok()
    }

    /// Instance with every (i, S) pair, |S| = M, i not in S.
    pub fn all_pairs(k: usize, m: usize) -> Result<Self> {
        check_km(k, m)?;
        let clients = (1..=k)
            .flat_map(|i| subsets_excluding(k, m, i).into_iter().map(move |s| (i, s)))
            .collect();
        Self::new(k, clients)
    }

    /// One client per message: the user's (W, S) for W, and for every other
    /// i the rest of its part, topped up with the lowest other indices until
    /// it holds M messages.
    pub fn from_partition(spec: &DemandSpec, partition: &Partition) -> Result<Self> {
        let k = partition.messages();
        let m = spec.m();
        spec.validate(k)?;
        if !partition.serves(spec) {
            return Err(Error::param(format!("partition does not serve {spec}")));
        }
        let mut clients = Vec::with_capacity(k);
        for i in 1..=k {
            if i == spec.demand {
                clients.push((i, spec.side.clone()));
                continue;
            }
            let part = &partition.parts()[partition.part_of(i).expect("partition covers [K]")];
            let mut s: BTreeSet<usize> = part.iter().copied().filter(|&j| j != i).collect();
            for j in (1..=k).filter(|&j| j != i) {
                if s.len() >= m {
                    break;
                }
                s.insert(j);
            }
            clients.push((i, s));
        }
        Self::new(k, clients)
    }
}

/// l coefficient vectors over GF(2^t), one per transmitted symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearEncoding {
    pub rows: Vec<Vec<u32>>,
}

impl LinearEncoding {
    pub fn new(rows: Vec<Vec<u32>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::param("an encoding needs at least one row"));
        }
        Ok(LinearEncoding { rows })
    }

    pub fn identity(k: usize) -> Self {
        LinearEncoding {
            rows: (0..k).map(|i| unit(k, i + 1)).collect(),
        }
    }

    /// 0/1 characteristic vectors of the given parts.
    pub fn from_parts(k: usize, parts: &[BTreeSet<usize>]) -> Self {
        LinearEncoding {
            rows: parts
                .iter()
                .map(|p| (1..=k).map(|j| p.contains(&j) as u32).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn unit(k: usize, j: usize) -> Vec<u32> {
    let mut v = vec![0; k];
    v[j - 1] = 1;
    v
}

/// Whether client (f, S) can decode: e_f lies in the span of the encoding
/// rows together with the unit vectors of S.
pub fn client_decodes(
    enc: &LinearEncoding,
    f: usize,
    side: &BTreeSet<usize>,
    k: usize,
    field: &FieldSpec,
) -> bool {
    let mut base: Vec<Vec<u32>> = enc.rows.clone();
    base.extend(side.iter().map(|&j| unit(k, j)));
    let r = gf::rank(&base, field);
    base.push(unit(k, f));
    gf::rank(&base, field) == r
}

/// Rank test of every client of the instance.
pub fn verify_linear_index_code(
    enc: &LinearEncoding,
    inst: &IndexCodingInstance,
    field: &FieldSpec,
) -> Result<bool> {
    let k = inst.messages;
    if let Some(row) = enc.rows.iter().find(|r| r.len() != k) {
        return Err(Error::param(format!(
            "encoding row of length {} for K = {k}",
            row.len()
        )));
    }
    if let Some(v) = enc.rows.iter().flatten().find(|&&v| !field.contains(v)) {
        return Err(Error::param(format!(
            "coefficient {v} outside GF(2^{})",
            field.width()
        )));
    }
    Ok(inst
        .clients
        .iter()
        .all(|(f, s)| client_decodes(enc, *f, s, k, field)))
}

/// Upper limit on the number of codes [`find_linear_code`] will try.
pub const MAX_EXHAUSTIVE_CODES: u64 = 1 << 22;

/// Exhaustively searches all `rows`-row encodings over `field` for one that
/// solves the instance.
pub fn find_linear_code(
    inst: &IndexCodingInstance,
    rows: usize,
    field: &FieldSpec,
) -> Result<Option<LinearEncoding>> {
    let k = inst.messages;
    let cells = (rows * k) as u32;
    let total = field
        .order()
        .checked_pow(cells)
        .filter(|&n| n <= MAX_EXHAUSTIVE_CODES)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "{} ^ {cells} codes exceed {MAX_EXHAUSTIVE_CODES}",
                field.order()
            ))
        })?;
    let q = field.order();
    for code in 0..total {
        let mut c = code;
        let mut flat = Vec::with_capacity(cells as usize);
        for _ in 0..cells {
            flat.push((c % q) as u32);
            c /= q;
        }
        let enc = LinearEncoding {
            rows: flat.chunks(k).map(<[u32]>::to_vec).collect(),
        };
        if inst
            .clients
            .iter()
            .all(|(f, s)| client_decodes(&enc, *f, s, k, field))
        {
            return Ok(Some(enc));
        }
    }
    Ok(None)
}

/// Random permutation of the clients, handy for shuffled rank tests.
pub fn shuffled_clients<R: Rng + ?Sized>(
    inst: &IndexCodingInstance,
    rng: &mut R,
) -> IndexCodingInstance {
    let mut clients = inst.clients.clone();
    clients.shuffle(rng);
    IndexCodingInstance {
        messages: inst.messages,
        clients,
    }
}
