//! Replicated-server retrieval without side information.
//!
//! With N servers and g messages of L = N^g bits, every server is asked for
//! sums of randomly-permuted bits. Round k sends sums over k messages:
//!
//! * exploitation: every (k-1)-sum downloaded from another server that does
//!   not involve the desired message θ is re-requested with a fresh θ bit
//!   added, so the known side sum cancels and one θ bit is learned;
//! * symmetry: for every k-subset without θ, (N-1)^(k-1) sums over fresh bits
//!   are requested so that each server sees the same number of atoms over
//!   every message subset, whatever θ is.
//!
//! Each server therefore receives (N-1)^(|T|-1) atoms over each subset T, and
//! the user recovers N^g bits of θ from N (N^g - 1) / (N - 1) downloads.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::bits::BitString;
use crate::error::{Error, Result};

/// Upper bound on L = N^g.
pub const MAX_SYMBOLS: u64 = 1 << 24;

/// A bit of one message, addressed by its (already permuted) position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolRef {
    /// 1-based message index in [g].
    pub message: usize,
    /// 1-based bit position in [L].
    pub slot: usize,
}

/// The XOR of at most one bit from each of a set of messages.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryAtom {
    refs: Vec<SymbolRef>,
}

impl QueryAtom {
    pub fn new(mut refs: Vec<SymbolRef>) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::protocol("atom without references"));
        }
        refs.sort();
        if refs.windows(2).any(|w| w[0].message == w[1].message) {
            return Err(Error::protocol("atom references one message twice"));
        }
        Ok(QueryAtom { refs })
    }

    pub fn refs(&self) -> &[SymbolRef] {
        &self.refs
    }

    pub fn messages(&self) -> BTreeSet<usize> {
        self.refs.iter().map(|r| r.message).collect()
    }

    pub fn involves(&self, message: usize) -> bool {
        self.refs.iter().any(|r| r.message == message)
    }

    pub fn slot_of(&self, message: usize) -> Option<usize> {
        self.refs
            .iter()
            .find(|r| r.message == message)
            .map(|r| r.slot)
    }
}

/// Position of an atom in the emitted per-server lists (both 0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomId {
    pub server: usize,
    pub index: usize,
}

/// Everything the user keeps to decode one retrieval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SjTranscript {
    pub servers: usize,
    pub messages: usize,
    pub theta: usize,
    pub per_server_atoms: Vec<Vec<QueryAtom>>,
    /// Mixed θ-atom -> the atom at another server holding its non-θ part.
    pub exploit_map: BTreeMap<AtomId, AtomId>,
    /// Per message, logical bit order -> physical 1-based slot.
    pub permutations: Vec<Vec<usize>>,
}

impl SjTranscript {
    pub fn symbols(&self) -> usize {
        self.permutations.first().map_or(0, Vec::len)
    }

    pub fn total_atoms(&self) -> usize {
        self.per_server_atoms.iter().map(Vec::len).sum()
    }
}

/// L = N^g, checked against [`MAX_SYMBOLS`].
pub fn symbol_count(n: usize, g: usize) -> Result<usize> {
    let l = (n as u64)
        .checked_pow(g as u32)
        .filter(|&l| l <= MAX_SYMBOLS);
    l.map(|l| l as usize).ok_or_else(|| {
        Error::param(format!(
            "N^g = {n}^{g} exceeds the supported {MAX_SYMBOLS} symbols"
        ))
    })
}

fn check(n: usize, g: usize, theta: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::param("the replicated scheme needs N >= 2 servers"));
    }
    if g == 0 {
        return Err(Error::param("need at least one message"));
    }
    if !(1..=g).contains(&theta) {
        return Err(Error::param(format!(
            "desired message {theta} outside 1..={g}"
        )));
    }
    symbol_count(n, g)
}

fn k_subsets(g: usize, k: usize) -> Vec<Vec<usize>> {
    crate::model::subsets_excluding(g + 1, k, g + 1)
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect()
}

/// Deterministic construction for given bit permutations, with atoms in
/// construction order (no shuffling).
pub fn build_with_permutations(
    n: usize,
    g: usize,
    theta: usize,
    permutations: Vec<Vec<usize>>,
) -> Result<SjTranscript> {
    let l = check(n, g, theta)?;
    if permutations.len() != g
        || permutations.iter().any(|p| {
            let s: BTreeSet<usize> = p.iter().copied().collect();
            p.len() != l || s.len() != l || s.iter().any(|&x| !(1..=l).contains(&x))
        })
    {
        return Err(Error::param(format!("need {g} permutations of 1..={l}")));
    }
    let mut next = vec![0usize; g];
    let mut fresh = |m: usize| {
        let slot = permutations[m - 1][next[m - 1]];
        next[m - 1] += 1;
        SymbolRef { message: m, slot }
    };

    // (atom, round) per server
    let mut atoms: Vec<Vec<(QueryAtom, usize)>> = vec![Vec::new(); n];
    let mut exploit = BTreeMap::new();
    for server in atoms.iter_mut() {
        for m in 1..=g {
            server.push((QueryAtom::new(vec![fresh(m)])?, 1));
        }
    }
    let mult = |k: usize| (n - 1).pow(k as u32 - 1);
    for k in 2..=g {
        for s in 0..n {
            for other in (0..n).filter(|&o| o != s) {
                let sources: Vec<(usize, QueryAtom)> = atoms[other]
                    .iter()
                    .enumerate()
                    .filter(|(_, (a, r))| *r == k - 1 && !a.involves(theta))
                    .map(|(i, (a, _))| (i, a.clone()))
                    .collect();
                for (i, src) in sources {
                    let mut refs = src.refs().to_vec();
                    refs.push(fresh(theta));
                    exploit.insert(
                        AtomId {
                            server: s,
                            index: atoms[s].len(),
                        },
                        AtomId {
                            server: other,
                            index: i,
                        },
                    );
                    atoms[s].push((QueryAtom::new(refs)?, k));
                }
            }
            for subset in k_subsets(g, k).into_iter().filter(|t| !t.contains(&theta)) {
                for _ in 0..mult(k) {
                    let refs = subset.iter().map(|&m| fresh(m)).collect();
                    atoms[s].push((QueryAtom::new(refs)?, k));
                }
            }
        }
    }
    if next.iter().any(|&c| c > l) || next[theta - 1] != l {
        return Err(Error::Internal(format!("slot usage {next:?} for L={l}")));
    }
    Ok(SjTranscript {
        servers: n,
        messages: g,
        theta,
        per_server_atoms: atoms
            .into_iter()
            .map(|v| v.into_iter().map(|(a, _)| a).collect())
            .collect(),
        exploit_map: exploit,
        permutations,
    })
}

/// Builds a fresh retrieval of message `theta` with private random bit
/// permutations and uniformly shuffled per-server atom lists.
pub fn build_queries<R: Rng + ?Sized>(
    n: usize,
    g: usize,
    theta: usize,
    rng: &mut R,
) -> Result<SjTranscript> {
    let l = check(n, g, theta)?;
    let perms = (0..g)
        .map(|_| {
            let mut p: Vec<usize> = (1..=l).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    let mut tr = build_with_permutations(n, g, theta, perms)?;

    // new position of each old atom, per server
    let mut moved: Vec<Vec<usize>> = Vec::with_capacity(n);
    for list in tr.per_server_atoms.iter_mut() {
        let mut order: Vec<usize> = (0..list.len()).collect();
        order.shuffle(rng);
        let mut pos = vec![0; list.len()];
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        *list = order.iter().map(|&old| list[old].clone()).collect();
        moved.push(pos);
    }
    let remap = |id: AtomId| AtomId {
        server: id.server,
        index: moved[id.server][id.index],
    };
    tr.exploit_map = tr
        .exploit_map
        .into_iter()
        .map(|(a, b)| (remap(a), remap(b)))
        .collect();
    Ok(tr)
}

/// Server side: one bit per atom, the XOR of its referenced bits.
pub fn server_answer(messages: &[BitString], atoms: &[QueryAtom]) -> Result<BitString> {
    let mut out = BitString::zeros(atoms.len());
    for (i, atom) in atoms.iter().enumerate() {
        let mut bit = false;
        for r in atom.refs() {
            let msg = r
                .message
                .checked_sub(1)
                .and_then(|m| messages.get(m))
                .ok_or_else(|| Error::protocol(format!("message {} out of range", r.message)))?;
            if !(1..=msg.len()).contains(&r.slot) {
                return Err(Error::protocol(format!(
                    "slot {} out of range 1..={}",
                    r.slot,
                    msg.len()
                )));
            }
            bit ^= msg.get(r.slot - 1);
        }
        out.set(i, bit);
    }
    Ok(out)
}

/// Recovers all L bits of message θ, in their original order.
pub fn decode(transcript: &SjTranscript, answers: &[BitString]) -> Result<BitString> {
    let l = transcript.symbols();
    let theta = transcript.theta;
    if answers.len() != transcript.servers
        || answers
            .iter()
            .zip(&transcript.per_server_atoms)
            .any(|(a, q)| a.len() != q.len())
    {
        return Err(Error::CorruptedTranscript(
            "answers do not align with the queries".into(),
        ));
    }
    let mut out = BitString::zeros(l);
    let mut seen = BTreeSet::new();
    for (s, atoms) in transcript.per_server_atoms.iter().enumerate() {
        for (i, atom) in atoms.iter().enumerate() {
            let Some(slot) = atom.slot_of(theta) else {
                continue;
            };
            let mut bit = answers[s].get(i);
            if atom.refs().len() > 1 {
                let target = transcript
                    .exploit_map
                    .get(&AtomId {
                        server: s,
                        index: i,
                    })
                    .ok_or_else(|| {
                        Error::CorruptedTranscript(format!(
                            "no side sum for atom {i} at server {}",
                            s + 1
                        ))
                    })?;
                let side = transcript
                    .per_server_atoms
                    .get(target.server)
                    .and_then(|a| a.get(target.index))
                    .ok_or_else(|| {
                        Error::CorruptedTranscript("exploit target out of range".into())
                    })?;
                let expect: Vec<SymbolRef> = atom
                    .refs()
                    .iter()
                    .copied()
                    .filter(|r| r.message != theta)
                    .collect();
                if target.server == s || side.refs() != expect.as_slice() {
                    return Err(Error::CorruptedTranscript(
                        "exploit target does not match".into(),
                    ));
                }
                bit ^= answers[target.server].get(target.index);
            }
            if slot == 0 || slot > l || !seen.insert(slot) {
                return Err(Error::CorruptedTranscript(format!(
                    "θ slot {slot} invalid or repeated"
                )));
            }
            out.set(slot - 1, bit);
        }
    }
    if seen.len() != l {
        return Err(Error::CorruptedTranscript(format!(
            "recovered {} of {l} bits",
            seen.len()
        )));
    }
    Ok(out)
}

/// Total downloaded bits N (N^g - 1) / (N - 1) and the rate N^g / total.
pub fn download_cost(n: usize, g: usize) -> Result<(u64, Ratio<u64>)> {
    if n < 2 {
        return Err(Error::param("the replicated scheme needs N >= 2 servers"));
    }
    let l = symbol_count(n, g)? as u64;
    let n = n as u64;
    let total = n * (l - 1) / (n - 1);
    Ok((total, Ratio::new(l, total)))
}

/// Number of atoms over each message subset.
pub fn subset_counts(atoms: &[QueryAtom]) -> BTreeMap<BTreeSet<usize>, usize> {
    let mut out = BTreeMap::new();
    for a in atoms {
        *out.entry(a.messages()).or_insert(0) += 1;
    }
    out
}

fn rank_slots(atoms: &[QueryAtom]) -> BTreeMap<SymbolRef, usize> {
    let mut per_msg: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for r in atoms.iter().flat_map(|a| a.refs()) {
        per_msg.entry(r.message).or_default().insert(r.slot);
    }
    per_msg
        .into_iter()
        .flat_map(|(m, slots)| {
            slots
                .into_iter()
                .enumerate()
                .map(move |(rank, slot)| (SymbolRef { message: m, slot }, rank + 1))
        })
        .collect()
}

fn fmt_atom(a: &QueryAtom, ranks: &BTreeMap<SymbolRef, usize>) -> String {
    let refs: Vec<String> = a
        .refs()
        .iter()
        .map(|r| format!("{}.{}", r.message, ranks[r]))
        .collect();
    refs.join("+")
}

/// Canonical shape of one server's query: slots replaced by their rank among
/// that message's slots at this server, atoms sorted.
pub fn shape_key(atoms: &[QueryAtom]) -> String {
    let ranks = rank_slots(atoms);
    let mut items: Vec<String> = atoms.iter().map(|a| fmt_atom(a, &ranks)).collect();
    items.sort();
    items.join(" ")
}

/// Like [`shape_key`] but keeps the transmitted atom order.
pub fn ordered_shape_key(atoms: &[QueryAtom]) -> String {
    let ranks = rank_slots(atoms);
    atoms
        .iter()
        .map(|a| fmt_atom(a, &ranks))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The message subset of each atom in transmitted order.
pub fn subset_sequence_key(atoms: &[QueryAtom]) -> String {
    atoms
        .iter()
        .map(|a| {
            a.messages()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Wire form of one server's atom list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SjQuery {
    pub atoms: Vec<QueryAtom>,
}

impl SjQuery {
    /// u32 atom count; per atom a u8 ref count then (u16 message, u32 slot).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.atoms.len() as u32).to_be_bytes().to_vec();
        for a in &self.atoms {
            out.push(a.refs().len() as u8);
            for r in a.refs() {
                out.extend_from_slice(&(r.message as u16).to_be_bytes());
                out.extend_from_slice(&(r.slot as u32).to_be_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::malformed("SJ query truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        let count = u32::from_be_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut atoms = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let refs_n = take(1)?[0] as usize;
            let mut refs = Vec::with_capacity(refs_n);
            for _ in 0..refs_n {
                let m = u16::from_be_bytes(take(2)?.try_into().unwrap()) as usize;
                let slot = u32::from_be_bytes(take(4)?.try_into().unwrap()) as usize;
                refs.push(SymbolRef { message: m, slot });
            }
            atoms.push(QueryAtom::new(refs).map_err(|e| Error::malformed(e.to_string()))?);
        }
        if !take(0)?.is_empty() || !cur_is_empty(bytes, &atoms) {
            return Err(Error::malformed("trailing bytes after SJ query"));
        }
        Ok(SjQuery { atoms })
    }
}

fn cur_is_empty(bytes: &[u8], atoms: &[QueryAtom]) -> bool {
    let used: usize = 4 + atoms.iter().map(|a| 1 + 6 * a.refs().len()).sum::<usize>();
    used == bytes.len()
}

/// u32 bit count, then the bits packed MSB-first.
pub fn answer_to_bytes(bits: &BitString) -> Vec<u8> {
    let mut out = (bits.len() as u32).to_be_bytes().to_vec();
    out.extend_from_slice(bits.as_bytes());
    out
}

pub fn answer_from_bytes(bytes: &[u8]) -> Result<BitString> {
    if bytes.len() < 4 {
        return Err(Error::malformed("SJ answer truncated"));
    }
    let n = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    BitString::from_bytes(&bytes[4..], n)
}
