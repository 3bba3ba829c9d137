//! The shared problem model: the replicated database, the user's demand and
//! side information, the uniform demand prior, and download-rate accounting.
//!
//! Message indices are 1-based throughout the crate, so `[K] = {1, ..., K}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};

/// Side-information messages keyed by their 1-based index.
pub type SideInfo = BTreeMap<usize, BitString>;

const DB_MAGIC: &[u8; 6] = b"PIRDB1";

/// K messages of t bits each, as stored by every server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Database {
    bits: usize,
    messages: Vec<BitString>,
}

impl Database {
    pub fn new(messages: Vec<BitString>) -> Result<Self> {
        let bits = messages
            .first()
            .map(BitString::len)
            .ok_or_else(|| Error::param("database needs at least one message"))?;
        if bits == 0 {
            return Err(Error::param("messages must be at least one bit long"));
        }
        if let Some(j) = messages.iter().position(|m| m.len() != bits) {
            return Err(Error::param(format!(
                "message {} has {} bits, expected {bits}",
                j + 1,
                messages[j].len()
            )));
        }
        if messages.len() > u16::MAX as usize {
            return Err(Error::param("at most 65535 messages are supported"));
        }
        Ok(Database { bits, messages })
    }

    pub fn random<R: Rng + ?Sized>(k: usize, t: usize, rng: &mut R) -> Result<Self> {
        Database::new((0..k).map(|_| BitString::random(t, rng)).collect())
    }

    /// Number of messages K.
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Bits per message t.
    pub fn message_bits(&self) -> usize {
        self.bits
    }

    /// Message `j`, 1-based.
    pub fn message(&self, j: usize) -> Result<&BitString> {
        j.checked_sub(1)
            .and_then(|i| self.messages.get(i))
            .ok_or_else(|| Error::param(format!("message index {j} outside 1..={}", self.len())))
    }

    pub fn messages(&self) -> &[BitString] {
        &self.messages
    }

    /// The side-information values X_S the user holds.
    pub fn side_info(&self, side: &BTreeSet<usize>) -> Result<SideInfo> {
        side.iter()
            .map(|&j| Ok((j, self.message(j)?.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * self.bits.div_ceil(8));
        out.extend_from_slice(DB_MAGIC);
        out.extend_from_slice(&(self.len() as u16).to_be_bytes());
        out.extend_from_slice(&(self.bits as u32).to_be_bytes());
        for m in &self.messages {
            out.extend_from_slice(m.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..6] != DB_MAGIC {
            return Err(Error::malformed("missing PIRDB1 header"));
        }
        let k = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;
        let t = u32::from_be_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let rec = t.div_ceil(8);
        let body = &bytes[12..];
        if body.len() != k * rec {
            return Err(Error::malformed(format!(
                "expected {} record bytes for K={k}, t={t}, found {}",
                k * rec,
                body.len()
            )));
        }
        let messages = if rec == 0 {
            Vec::new()
        } else {
            body.chunks(rec)
                .map(|c| BitString::from_bytes(c, t))
                .collect::<Result<Vec<_>>>()?
        };
        Database::new(messages)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Database::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// The user's private state: demand index W and side-information set S.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DemandSpec {
    pub demand: usize,
    pub side: BTreeSet<usize>,
}

impl DemandSpec {
    pub fn new(k: usize, demand: usize, side: impl IntoIterator<Item = usize>) -> Result<Self> {
        let spec = DemandSpec {
            demand,
            side: side.into_iter().collect(),
        };
        spec.validate(k)?;
        Ok(spec)
    }

    /// Side-information size M.
    pub fn m(&self) -> usize {
        self.side.len()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(1..=k).contains(&self.demand) {
            return Err(Error::param(format!(
                "demand {} outside 1..={k}",
                self.demand
            )));
        }
        if let Some(&j) = self.side.iter().find(|&&j| !(1..=k).contains(&j)) {
            return Err(Error::param(format!("side index {j} outside 1..={k}")));
        }
        if self.side.contains(&self.demand) {
            return Err(Error::param(
                "demand index cannot be in the side-information set",
            ));
        }
        Ok(())
    }
}

impl fmt::Display for DemandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side: Vec<String> = self.side.iter().map(ToString::to_string).collect();
        write!(f, "W={} S={{{}}}", self.demand, side.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub servers: usize,
    pub messages: usize,
    pub side: usize,
    pub bits: usize,
}

impl ProblemParams {
    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::param("need at least one server"));
        }
        if self.messages == 0 {
            return Err(Error::param("need at least one message"));
        }
        if self.side >= self.messages {
            return Err(Error::param(format!(
                "side-information size M={} must be below K={}",
                self.side, self.messages
            )));
        }
        Ok(())
    }
}

/// Download accounting for one retrieval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateReport {
    pub message_bits: u64,
    pub total_answer_bits: u64,
}

impl RateReport {
    pub fn rate(&self) -> Ratio<u64> {
        Ratio::new(self.message_bits, self.total_answer_bits)
    }
}

/// Rate of a retrieval, t over the summed answer lengths of all servers.
/// Answer length stands in for answer entropy; every scheme here returns
/// uniform independent symbols.
pub fn rate_of(t: u64, answer_bits: &[u64]) -> Result<RateReport> {
    if answer_bits.is_empty() {
        return Err(Error::param("no answers to account for"));
    }
    if answer_bits.contains(&0) {
        return Err(Error::param("answer lengths must be positive"));
    }
    if t == 0 {
        return Err(Error::param("message length must be positive"));
    }
    Ok(RateReport {
        message_bits: t,
        total_answer_bits: answer_bits.iter().sum(),
    })
}

fn check_km(k: usize, m: usize) -> Result<()> {
    if k == 0 || m >= k {
        return Err(Error::param(format!("need 0 <= M < K, got K={k}, M={m}")));
    }
    Ok(())
}

/// W uniform on [K], then S uniform among the M-subsets of [K] \ {W}.
pub fn sample_demand<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Result<DemandSpec> {
    check_km(k, m)?;
    let demand = rng.gen_range(1..=k);
    let side = index::sample(rng, k - 1, m)
        .into_iter()
        .map(|i| if i + 1 >= demand { i + 2 } else { i + 1 })
        .collect();
    Ok(DemandSpec { demand, side })
}

pub fn binomial(n: usize, r: usize) -> BigInt {
    if r > n {
        return BigInt::zero();
    }
    let r = r.min(n - r);
    (0..r).fold(BigInt::one(), |acc, i| acc * (n - i) / (i + 1))
}

/// The uniform joint law of (W, S): 1 / ((K - M) C(K, M)) when W is not in S.
pub fn joint_prior(
    demand: usize,
    side: &BTreeSet<usize>,
    k: usize,
    m: usize,
) -> Result<BigRational> {
    check_km(k, m)?;
    if side.len() != m {
        return Err(Error::param(format!("|S| = {} but M = {m}", side.len())));
    }
    if !(1..=k).contains(&demand) || side.iter().any(|j| !(1..=k).contains(j)) {
        return Err(Error::param("index outside [K]"));
    }
    if side.contains(&demand) {
        return Ok(BigRational::zero());
    }
    Ok(BigRational::new(
        BigInt::one(),
        BigInt::from(k - m) * binomial(k, m),
    ))
}

/// Every M-subset of [K] \ {exclude}, in lexicographic order.
pub fn subsets_excluding(k: usize, m: usize, exclude: usize) -> Vec<BTreeSet<usize>> {
    let pool: Vec<usize> = (1..=k).filter(|&j| j != exclude).collect();
    let mut out = Vec::new();
    let mut pick = Vec::with_capacity(m);
    fn rec(
        pool: &[usize],
        m: usize,
        start: usize,
        pick: &mut Vec<usize>,
        out: &mut Vec<BTreeSet<usize>>,
    ) {
        if pick.len() == m {
            out.push(pick.iter().copied().collect());
            return;
        }
        for i in start..pool.len() {
            if pool.len() - i < m - pick.len() {
                break;
            }
            pick.push(pool[i]);
            rec(pool, m, i + 1, pick, out);
            pick.pop();
        }
    }
    rec(&pool, m, 0, &mut pick, &mut out);
    out
}

/// Every valid (W, S) pair with |S| = M.
pub fn all_demands(k: usize, m: usize) -> Vec<DemandSpec> {
    (1..=k)
        .flat_map(|w| {
            subsets_excluding(k, m, w)
                .into_iter()
                .map(move |side| DemandSpec { demand: w, side })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn joint_prior_examples() {
        assert_eq!(
            joint_prior(1, &set(&[2]), 4, 1).unwrap(),
            BigRational::new(1.into(), 12.into())
        );
        assert!(joint_prior(1, &set(&[1, 2]), 4, 2).unwrap().is_zero());
        assert_eq!(
            joint_prior(1, &set(&[]), 5, 0).unwrap(),
            BigRational::new(1.into(), 5.into())
        );
        assert!(joint_prior(1, &set(&[2, 3]), 4, 1).is_err());
        assert!(joint_prior(1, &set(&[]), 4, 4).is_err());
    }

    #[test]
    fn joint_prior_sums_to_one() {
        for k in 1..=8 {
            for m in 0..k {
                let total: BigRational = all_demands(k, m)
                    .iter()
                    .map(|d| joint_prior(d.demand, &d.side, k, m).unwrap())
                    .sum();
                assert!(total.is_one(), "K={k} M={m}");
                assert_eq!(
                    all_demands(k, m).len(),
                    (k - m) * binomial(k, m).to_string().parse::<usize>().unwrap()
                );
            }
        }
    }

    #[test]
    fn sample_demand_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let d = sample_demand(4, 0, &mut rng).unwrap();
            assert!(d.side.is_empty());
            let d = sample_demand(4, 3, &mut rng).unwrap();
            let expect: BTreeSet<usize> = (1..=4).filter(|&j| j != d.demand).collect();
            assert_eq!(d.side, expect);
            d.validate(4).unwrap();
        }
        assert!(sample_demand(4, 4, &mut rng).is_err());
    }

    #[test]
    fn sample_demand_is_uniform_over_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut counts: BTreeMap<DemandSpec, u64> = BTreeMap::new();
        for _ in 0..n {
            *counts
                .entry(sample_demand(4, 1, &mut rng).unwrap())
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 12);
        for c in counts.values() {
            let p = *c as f64 / n as f64;
            assert!((p - 1.0 / 12.0).abs() < 0.005, "{p}");
        }
    }

    #[test]
    fn sampler_fits_joint_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 1..=6 {
            for m in 0..k.min(3) {
                let demands = all_demands(k, m);
                let index: BTreeMap<&DemandSpec, usize> =
                    demands.iter().enumerate().map(|(i, d)| (d, i)).collect();
                let n = 2000 * demands.len() as u64;
                let mut observed = vec![0u64; demands.len()];
                for _ in 0..n {
                    observed[index[&sample_demand(k, m, &mut rng).unwrap()]] += 1;
                }
                let expected: Vec<f64> = demands
                    .iter()
                    .map(|d| crate::audit::to_f64(&joint_prior(d.demand, &d.side, k, m).unwrap()))
                    .collect();
                let p = crate::audit::chi_square_goodness_of_fit(&observed, &expected);
                assert!(p > 0.01, "K={k} M={m} p={p}");
            }
        }
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate_of(4, &[3, 3]).unwrap().rate(), Ratio::new(2, 3));
        assert_eq!(rate_of(8, &[8]).unwrap().rate(), Ratio::new(1, 1));
        assert_eq!(rate_of(4, &[4, 4, 4]).unwrap().rate(), Ratio::new(1, 3));
        assert!(rate_of(4, &[]).is_err());
        assert!(rate_of(4, &[0, 4]).is_err());
    }

    #[test]
    fn database_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let db = Database::random(5, 13, &mut rng).unwrap();
        let bytes = db.to_bytes();
        assert_eq!(&bytes[..6], b"PIRDB1");
        assert_eq!(&bytes[6..12], &[0, 5, 0, 0, 0, 13]);
        assert_eq!(bytes.len(), 12 + 5 * 2);
        assert_eq!(Database::from_bytes(&bytes).unwrap(), db);
        assert!(Database::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Database::from_bytes(b"PIRDB2\0\x01\0\0\0\x08\x00").is_err());
    }

    #[test]
    fn demand_spec_validation() {
        assert!(DemandSpec::new(4, 1, [1]).is_err());
        assert!(DemandSpec::new(4, 5, []).is_err());
        assert!(DemandSpec::new(4, 1, [0]).is_err());
        assert_eq!(
            DemandSpec::new(4, 2, [4, 1]).unwrap().to_string(),
            "W=2 S={1,4}"
        );
    }
}
