//! Single-server (W,S)-private retrieval with a systematic MDS code.
//!
//! The user announces only M. The server returns the K - M parity symbols of
//! a systematic (2K - M, K) code whose generator is [I | P], with P a Cauchy
//! matrix. Any M known messages plus the K - M parities determine every
//! remaining message, so the query carries no information about (W, S).

use std::collections::BTreeMap;

use rand::RngCore;

use crate::audit::{EnumerableScheme, QueryDistribution, SampleableScheme};
use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::gf::{self, FieldSpec};
use crate::model::{Database, DemandSpec, SideInfo};

/// A systematic (2K - M, K) Cauchy code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MdsCodeSpec {
    k: usize,
    m: usize,
    field: FieldSpec,
    parity: Vec<Vec<u32>>,
}

/// Builds the parity matrix P[i][j] = 1 / (x_i + y_j) with
/// x = (0, ..., K-M-1) and y = (K-M, ..., 2K-M-1).
pub fn make_code(k: usize, m: usize, field: FieldSpec) -> Result<MdsCodeSpec> {
    if k == 0 || m >= k {
        return Err(Error::param(format!("need 0 <= M < K, got K={k}, M={m}")));
    }
    let n = (2 * k - m) as u64;
    if field.order() < n {
        return Err(Error::param(format!(
            "GF(2^{}) has {} elements but a ({n}, {k}) MDS code needs 2^t >= 2K-M = {n}",
            field.width(),
            field.order()
        )));
    }
    let r = k - m;
    let parity = (0..r as u32)
        .map(|x| {
            (0..k as u32)
                .map(|j| {
                    field
                        .inv(x ^ (r as u32 + j))
                        .expect("x_i and y_j are distinct")
                })
                .collect()
        })
        .collect();
    Ok(MdsCodeSpec {
        k,
        m,
        field,
        parity,
    })
}

/// Field width used for t-bit messages: the smallest divisor of t that is
/// large enough, so messages split into whole symbols. Falls back to the
/// smallest large-enough width (with zero padding) when no divisor fits.
pub fn symbol_width(k: usize, m: usize, t: usize) -> Result<u32> {
    if k == 0 || m >= k {
        return Err(Error::param(format!("need 0 <= M < K, got K={k}, M={m}")));
    }
    let n = (2 * k - m) as u64;
    let fits = |w: u32| (1u64 << w) >= n;
    if t < 64 && (1u64 << t) < n {
        return Err(Error::param(format!(
            "messages of {t} bits are too short: need t >= log2(2K-M) = log2({n})"
        )));
    }
    let max = gf::MAX_WIDTH.min(t as u32);
    (1..=max)
        .find(|&w| fits(w) && t % w as usize == 0)
        .or_else(|| (1..=gf::MAX_WIDTH).find(|&w| fits(w)))
        .ok_or_else(|| Error::param(format!("2K-M = {n} exceeds the largest supported field")))
}

impl MdsCodeSpec {
    /// The code a server and user agree on for K messages of t bits.
    pub fn for_messages(k: usize, m: usize, t: usize) -> Result<Self> {
        make_code(k, m, FieldSpec::new(symbol_width(k, m, t)?)?)
    }

    pub fn messages(&self) -> usize {
        self.k
    }

    pub fn side_size(&self) -> usize {
        self.m
    }

    pub fn length(&self) -> usize {
        2 * self.k - self.m
    }

    pub fn field(&self) -> &FieldSpec {
        &self.field
    }

    /// The (K - M) x K parity matrix.
    pub fn parity_matrix(&self) -> &[Vec<u32>] {
        &self.parity
    }

    /// Symbols per t-bit message.
    pub fn symbols_per_message(&self, t: usize) -> usize {
        t.div_ceil(self.field.width() as usize)
    }

    fn split(&self, msg: &BitString) -> Vec<u32> {
        let w = self.field.width();
        (0..self.symbols_per_message(msg.len()))
            .map(|i| msg.read_uint(i * w as usize, w))
            .collect()
    }

    fn join(&self, symbols: &[u32], t: usize) -> BitString {
        let w = self.field.width();
        let mut out = BitString::zeros(t);
        for (i, &s) in symbols.iter().enumerate() {
            out.write_uint(i * w as usize, w, s);
        }
        out
    }

    /// Parity symbols of the given messages, one vector per parity row.
    pub fn encode(&self, messages: &[BitString]) -> Result<Vec<Vec<u32>>> {
        if messages.len() != self.k {
            return Err(Error::param(format!(
                "{} messages for a K={} code",
                messages.len(),
                self.k
            )));
        }
        let symbols: Vec<Vec<u32>> = messages.iter().map(|x| self.split(x)).collect();
        let len = symbols[0].len();
        Ok(self
            .parity
            .iter()
            .map(|row| {
                (0..len)
                    .map(|e| {
                        row.iter()
                            .zip(&symbols)
                            .fold(0u32, |acc, (&c, x)| acc ^ self.field.mul(c, x[e]))
                    })
                    .collect()
            })
            .collect())
    }
}

/// The query: only the side-information size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MdsQuery {
    pub m: usize,
}

impl MdsQuery {
    pub fn to_bytes(&self) -> Vec<u8> {
        (self.m as u16).to_be_bytes().to_vec()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes {
            [a, b] => Ok(MdsQuery {
                m: u16::from_be_bytes([*a, *b]) as usize,
            }),
            _ => Err(Error::malformed(format!(
                "MDS query must be 2 bytes, got {}",
                bytes.len()
            ))),
        }
    }
}

/// K - M parity vectors over GF(2^w).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MdsAnswer {
    pub width: u32,
    pub parities: Vec<Vec<u32>>,
}

impl MdsAnswer {
    pub fn answer_bits(&self) -> u64 {
        self.parities
            .iter()
            .map(|p| p.len() as u64 * self.width as u64)
            .sum()
    }

    /// u16 count, u16 symbols per vector, then each vector's symbols packed
    /// MSB-first into ceil(symbols * w / 8) bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.parities.first().map_or(0, Vec::len);
        let w = self.width as usize;
        let mut out = (self.parities.len() as u16).to_be_bytes().to_vec();
        out.extend_from_slice(&(per as u16).to_be_bytes());
        for p in &self.parities {
            let mut bits = BitString::zeros(per * w);
            for (i, &v) in p.iter().enumerate() {
                bits.write_uint(i * w, self.width, v);
            }
            out.extend_from_slice(bits.as_bytes());
        }
        out
    }

    /// Parses an answer; the width comes from the agreed code.
    pub fn from_bytes(bytes: &[u8], width: u32) -> Result<Self> {
        if bytes.len() < 4 || width == 0 || width > gf::MAX_WIDTH {
            return Err(Error::malformed("MDS answer truncated or bad width"));
        }
        let count = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        let per = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
        let w = width as usize;
        let n = (per * w).div_ceil(8);
        let body = &bytes[4..];
        if body.len() != count * n {
            return Err(Error::malformed("MDS answer length mismatch"));
        }
        let parities = (0..count)
            .map(|c| {
                let bits = BitString::from_bytes(&body[c * n..(c + 1) * n], per * w)?;
                Ok((0..per).map(|i| bits.read_uint(i * w, width)).collect())
            })
            .collect::<Result<_>>()?;
        Ok(MdsAnswer { width, parities })
    }
}

/// Server side: the K - M parity symbols of the stored messages.
pub fn server_answer(db: &Database, query: &MdsQuery) -> Result<MdsAnswer> {
    if query.m >= db.len() {
        return Err(Error::protocol(format!(
            "side-information size {} must be below K={}",
            query.m,
            db.len()
        )));
    }
    let code = MdsCodeSpec::for_messages(db.len(), query.m, db.message_bits())
        .map_err(|e| Error::protocol(e.to_string()))?;
    Ok(MdsAnswer {
        width: code.field().width(),
        parities: code.encode(db.messages())?,
    })
}

/// Recovers every message outside S from the parities and X_S.
pub fn decode(
    answer: &MdsAnswer,
    code: &MdsCodeSpec,
    side: &SideInfo,
    t: usize,
) -> Result<BTreeMap<usize, BitString>> {
    let k = code.messages();
    if side.len() != code.side_size() {
        return Err(Error::param(format!(
            "{} side messages for M={}",
            side.len(),
            code.side_size()
        )));
    }
    if answer.width != code.field().width() || answer.parities.len() != k - code.side_size() {
        return Err(Error::CorruptedTranscript(
            "answer does not match the agreed code".into(),
        ));
    }
    let len = code.symbols_per_message(t);
    if answer.parities.iter().any(|p| p.len() != len) {
        return Err(Error::CorruptedTranscript(
            "parity vector length mismatch".into(),
        ));
    }
    let f = code.field();
    let known: Vec<(usize, Vec<u32>)> = side
        .iter()
        .map(|(&j, x)| {
            if !(1..=k).contains(&j) || x.len() != t {
                return Err(Error::param(format!("bad side-information entry {j}")));
            }
            Ok((j, code.split(x)))
        })
        .collect::<Result<_>>()?;
    let unknown: Vec<usize> = (1..=k).filter(|j| !side.contains_key(j)).collect();

    let mut a = Vec::with_capacity(unknown.len());
    let mut b = Vec::with_capacity(unknown.len());
    for (row, parity) in code.parity_matrix().iter().zip(&answer.parities) {
        a.push(unknown.iter().map(|&j| row[j - 1]).collect::<Vec<_>>());
        let rhs: Vec<u32> = (0..len)
            .map(|e| {
                known
                    .iter()
                    .fold(parity[e], |acc, (j, x)| acc ^ f.mul(row[j - 1], x[e]))
            })
            .collect();
        b.push(rhs);
    }
    let solved = gf::solve(&a, &b, f)
        .ok_or_else(|| Error::Internal("MDS decode system is singular".into()))?;
    Ok(unknown
        .into_iter()
        .zip(solved)
        .map(|(j, s)| (j, code.join(&s, t)))
        .collect())
}

/// The scheme's parameters, for auditing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MdsScheme {
    k: usize,
    m: usize,
}

impl MdsScheme {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if k == 0 || m >= k {
            return Err(Error::param(format!("need 0 <= M < K, got K={k}, M={m}")));
        }
        Ok(MdsScheme { k, m })
    }

    fn key(&self) -> String {
        format!("M={}", self.m)
    }
}

impl EnumerableScheme for MdsScheme {
    fn name(&self) -> String {
        format!("mds(K={},M={})", self.k, self.m)
    }
    fn messages(&self) -> usize {
        self.k
    }
    fn side_size(&self) -> usize {
        self.m
    }
    fn query_distribution(&self, demand: &DemandSpec) -> Result<QueryDistribution> {
        demand.validate(self.k)?;
        Ok(QueryDistribution::point(self.key()))
    }
}

impl SampleableScheme for MdsScheme {
    fn sample_query_key(&self, _: &DemandSpec, _: &mut dyn RngCore) -> Result<String> {
        Ok(self.key())
    }
}
