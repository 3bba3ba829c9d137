//! W-private retrieval from N replicated, non-colluding servers.
//!
//! The user partitions [K] into g = K/(M+1) parts of size M+1, one of them
//! {W} ∪ S, and sends the parts in a random order to every server. Each
//! part defines a super-message (the XOR of its members), and the user runs
//! the [`sun_jafar`](crate::sun_jafar) protocol for the super-message at the
//! position θ of W's part. X_W is that super-message minus the side
//! information.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audit::{EnumerableScheme, QueryDistribution, SampleableScheme};
use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::model::{Database, DemandSpec, ProblemParams, SideInfo};
use crate::partition::{self, build_partition, encode_query, Part, PartitionQuery};
use crate::sun_jafar::{self, SjQuery, SjTranscript};

/// g = K / (M + 1) and the required message length N^g.
pub fn shape(params: &ProblemParams) -> Result<(usize, usize)> {
    params.validate()?;
    let (n, k, m) = (params.servers, params.messages, params.side);
    if n < 2 {
        return Err(Error::param(
            "the multi-server scheme needs N >= 2; use the partition scheme for one server",
        ));
    }
    if k % (m + 1) != 0 {
        return Err(Error::param(format!("M+1 = {} must divide K = {k}", m + 1)));
    }
    let g = k / (m + 1);
    Ok((g, sun_jafar::symbol_count(n, g)?))
}

/// What every server receives: the shared partition plus its own atoms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperMessageQuery {
    pub partition: PartitionQuery,
    pub sj_queries: Vec<SjQuery>,
}

impl SuperMessageQuery {
    /// Partition block followed by server `n`'s SJ block (0-based n).
    pub fn server_payload(&self, n: usize) -> Vec<u8> {
        let mut out = self.partition.to_bytes();
        out.extend(self.sj_queries[n].to_bytes());
        out
    }
}

/// Splits a server payload back into its two blocks.
pub fn parse_payload(bytes: &[u8]) -> Result<(PartitionQuery, SjQuery)> {
    if bytes.len() < 4 {
        return Err(Error::malformed("multi-server query truncated"));
    }
    let k = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
    let count = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    let end = 4 + count * k.div_ceil(8);
    if bytes.len() < end {
        return Err(Error::malformed("multi-server partition block truncated"));
    }
    Ok((
        PartitionQuery::from_bytes(&bytes[..end])?,
        SjQuery::from_bytes(&bytes[end..])?,
    ))
}

/// The user's private decoding state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiServerContext {
    pub spec: DemandSpec,
    /// Parts in transmitted order.
    pub parts: Vec<Part>,
    /// 1-based position of W's part.
    pub theta: usize,
    pub transcript: SjTranscript,
}

/// Draws the partition and the SJ queries from independent streams seeded
/// off `rng`.
pub fn build<R: Rng + ?Sized>(
    spec: &DemandSpec,
    params: &ProblemParams,
    rng: &mut R,
) -> Result<(SuperMessageQuery, MultiServerContext)> {
    let (g, l) = shape(params)?;
    if params.bits != l {
        return Err(Error::param(format!(
            "messages must have t = N^g = {}^{g} = {l} bits, got {}",
            params.servers, params.bits
        )));
    }
    spec.validate(params.messages)?;
    if spec.m() != params.side {
        return Err(Error::param(format!(
            "|S| = {} but M = {}",
            spec.m(),
            params.side
        )));
    }
    let mut part_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut sj_rng = ChaCha8Rng::seed_from_u64(rng.gen());

    let p = build_partition(spec, params.messages, &mut part_rng)?;
    let query = encode_query(&p, &mut part_rng);
    let parts = query.parts();
    let theta = 1 + parts
        .iter()
        .position(|p| p.contains(&spec.demand))
        .ok_or_else(|| Error::Internal("demand not in any part".into()))?;
    let transcript = sun_jafar::build_queries(params.servers, g, theta, &mut sj_rng)?;
    let sj_queries = transcript
        .per_server_atoms
        .iter()
        .map(|a| SjQuery { atoms: a.clone() })
        .collect();
    Ok((
        SuperMessageQuery {
            partition: query,
            sj_queries,
        },
        MultiServerContext {
            spec: spec.clone(),
            parts,
            theta,
            transcript,
        },
    ))
}

/// X̂_i = XOR of the messages in the i-th transmitted part.
pub fn form_supermessages(db: &Database, query: &PartitionQuery) -> Result<Vec<BitString>> {
    if query.messages() != db.len() {
        return Err(Error::protocol(format!(
            "partition over K={} but the database holds {} messages",
            query.messages(),
            db.len()
        )));
    }
    query.partition()?;
    Ok(partition::server_answer(db, query)?.sums)
}

/// Server side: super-messages, then one SJ answer bit per atom.
pub fn server_answer(
    db: &Database,
    partition: &PartitionQuery,
    query: &SjQuery,
) -> Result<BitString> {
    let supers = form_supermessages(db, partition)?;
    sun_jafar::server_answer(&supers, &query.atoms)
}

/// X_W = X̂_θ XOR the side information in W's part.
pub fn decode(
    answers: &[BitString],
    ctx: &MultiServerContext,
    side: &SideInfo,
) -> Result<BitString> {
    let mut value = sun_jafar::decode(&ctx.transcript, answers)?;
    let part = &ctx.parts[ctx.theta - 1];
    for j in part.iter().filter(|&&j| j != ctx.spec.demand) {
        let x = side.get(j).ok_or_else(|| {
            Error::CorruptedTranscript(format!("W's part holds {j}, which is not side information"))
        })?;
        value.xor_assign(x)?;
    }
    Ok(value)
}

/// Parameters for auditing.
///
/// One server sees the transmitted parts and its atom list. The order of the
/// parts is uniform and independent of everything else, and the atom list's
/// distribution does not depend on θ, so the server's view is private
/// exactly when the unordered partition is. The enumerable distribution is
/// therefore that of the unordered partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiServerScheme {
    pub params: ProblemParams,
}

impl MultiServerScheme {
    pub fn new(servers: usize, k: usize, m: usize) -> Result<Self> {
        let mut params = ProblemParams {
            servers,
            messages: k,
            side: m,
            bits: 0,
        };
        params.bits = shape(&params)?.1;
        Ok(MultiServerScheme { params })
    }

    /// Total downloaded bits and the rate.
    pub fn download_cost(&self) -> Result<(u64, num_rational::Ratio<u64>)> {
        let (g, _) = shape(&self.params)?;
        sun_jafar::download_cost(self.params.servers, g)
    }
}

impl EnumerableScheme for MultiServerScheme {
    fn name(&self) -> String {
        format!(
            "multiserver(N={},K={},M={})",
            self.params.servers, self.params.messages, self.params.side
        )
    }
    fn messages(&self) -> usize {
        self.params.messages
    }
    fn side_size(&self) -> usize {
        self.params.side
    }
    fn query_distribution(&self, demand: &DemandSpec) -> Result<QueryDistribution> {
        partition::enumerate_queries(demand, self.params.messages)
    }
}

impl SampleableScheme for MultiServerScheme {
    /// Server 1's full view: ordered parts plus the rank-normalized atoms.
    fn sample_query_key(&self, demand: &DemandSpec, rng: &mut dyn RngCore) -> Result<String> {
        let (q, _) = build(demand, &self.params, rng)?;
        Ok(format!(
            "{}|{}",
            q.partition.ordered_key(),
            sun_jafar::ordered_shape_key(&q.sj_queries[0].atoms)
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{audit_statistical_w, audit_w, Prior};
    use crate::model::all_demands;
    use num_bigint::BigInt;
    use num_rational::{BigRational, Ratio};
    use std::collections::BTreeSet;

    fn params(n: usize, k: usize, m: usize) -> ProblemParams {
        MultiServerScheme::new(n, k, m).unwrap().params
    }

    fn round_trip(spec: &DemandSpec, p: &ProblemParams, seed: u64) -> (BitString, BitString, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let db = Database::random(p.messages, p.bits, &mut rng).unwrap();
        let (q, ctx) = build(spec, p, &mut rng).unwrap();
        let answers: Vec<BitString> = (0..p.servers)
            .map(|n| {
                let (pq, sq) = parse_payload(&q.server_payload(n)).unwrap();
                server_answer(&db, &pq, &sq).unwrap()
            })
            .collect();
        let side = db.side_info(&spec.side).unwrap();
        let got = decode(&answers, &ctx, &side).unwrap();
        let bits = answers.iter().map(|a| a.len() as u64).sum();
        (got, db.message(spec.demand).unwrap().clone(), bits)
    }

    #[test]
    fn example_four() {
        let p = params(2, 4, 1);
        assert_eq!(p.bits, 4);
        let spec = DemandSpec::new(4, 1, [2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (q, ctx) = build(&spec, &p, &mut rng).unwrap();
        let parts: BTreeSet<Part> = ctx.parts.iter().cloned().collect();
        assert_eq!(parts, [[1, 2].into(), [3, 4].into()].into());
        assert!(ctx.parts[ctx.theta - 1].contains(&1));

        let x = |v: u8| BitString::from_bytes(&[v << 4], 4).unwrap();
        let db = Database::new(vec![x(0b1010), x(0b0110), x(0b0011), x(0b0101)]).unwrap();
        let supers = form_supermessages(&db, &q.partition).unwrap();
        for (part, s) in ctx.parts.iter().zip(&supers) {
            let expect = if part.contains(&1) {
                x(0b1100)
            } else {
                x(0b0110)
            };
            assert_eq!(s, &expect);
        }
        let (got, want, bits) = round_trip(&spec, &p, 0);
        assert_eq!(got, want);
        assert_eq!(bits, 6);
    }

    #[test]
    fn supermessage_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let db = Database::random(3, 8, &mut rng).unwrap();
        let singles = PartitionQuery::from_parts(3, &[[2].into(), [1].into(), [3].into()]);
        let s = form_supermessages(&db, &singles).unwrap();
        assert_eq!(
            s,
            vec![
                db.messages()[1].clone(),
                db.messages()[0].clone(),
                db.messages()[2].clone()
            ]
        );
        let zero = Database::new(vec![BitString::zeros(8); 4]).unwrap();
        let q = PartitionQuery::from_parts(4, &[[1, 3].into(), [2, 4].into()]);
        assert!(form_supermessages(&zero, &q)
            .unwrap()
            .iter()
            .all(BitString::is_zero));
        let overlap = PartitionQuery::from_parts(4, &[[1, 3].into(), [3, 4].into()]);
        assert!(matches!(
            form_supermessages(&zero, &overlap),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn parameter_errors() {
        let spec = DemandSpec::new(5, 1, [2]).unwrap();
        let bad = ProblemParams {
            servers: 2,
            messages: 5,
            side: 1,
            bits: 8,
        };
        assert!(build(&spec, &bad, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let spec = DemandSpec::new(4, 1, [2]).unwrap();
        let wrong_t = ProblemParams {
            servers: 2,
            messages: 4,
            side: 1,
            bits: 8,
        };
        assert!(build(&spec, &wrong_t, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(MultiServerScheme::new(1, 4, 1).is_err());
    }

    #[test]
    fn no_side_information_is_plain_sun_jafar() {
        let p = params(2, 4, 0);
        assert_eq!(p.bits, 16);
        let spec = DemandSpec::new(4, 3, []).unwrap();
        let (_, ctx) = build(&spec, &p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(ctx.parts.iter().all(|p| p.len() == 1));
        let (got, want, bits) = round_trip(&spec, &p, 2);
        assert_eq!(got, want);
        assert_eq!(bits, 30);
    }

    #[test]
    fn six_messages_round_trip() {
        let p = params(2, 6, 1);
        assert_eq!(p.bits, 8);
        let scheme = MultiServerScheme { params: p };
        assert_eq!(scheme.download_cost().unwrap(), (14, Ratio::new(4, 7)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..100 {
            let spec = crate::model::sample_demand(6, 1, &mut rng).unwrap();
            let (got, want, bits) = round_trip(&spec, &p, seed);
            assert_eq!(got, want);
            assert_eq!(bits, 14);
        }
    }

    #[test]
    fn rates_match_the_bound() {
        for (n, k, m) in [
            (2, 4, 1),
            (2, 4, 0),
            (3, 4, 1),
            (2, 6, 2),
            (3, 6, 1),
            (2, 6, 1),
            (4, 3, 2),
        ] {
            let s = MultiServerScheme::new(n, k, m).unwrap();
            let (bits, rate) = s.download_cost().unwrap();
            assert_eq!(rate, crate::bounds::multiserver_rate_lb(n, k, m).unwrap());
            assert_eq!(Ratio::new(s.params.bits as u64, bits), rate);
        }
    }

    #[test]
    fn demand_part_is_uniform_given_the_query() {
        for (k, m) in [(4, 1), (6, 1), (6, 2), (6, 0), (3, 2)] {
            let scheme = MultiServerScheme::new(2, k, m).unwrap();
            let report = audit_w(&scheme, &Prior::uniform(k, m).unwrap()).unwrap();
            assert!(report.is_private(), "K={k} M={m}");
            // P(W in P_i | Q) = (M+1)/K for each part of each query
            let mut joint: std::collections::BTreeMap<Vec<Vec<usize>>, Vec<BigRational>> =
                Default::default();
            let demands = all_demands(k, m);
            let weight = BigRational::new(BigInt::from(1), BigInt::from(demands.len()));
            for d in &demands {
                for (parts, p) in partition::enumerate_partitions(d, k).unwrap() {
                    let e = joint
                        .entry(parts.clone())
                        .or_insert_with(|| vec![BigRational::from_integer(0.into()); parts.len()]);
                    let i = parts.iter().position(|q| q.contains(&d.demand)).unwrap();
                    e[i] += &weight * &p;
                }
            }
            for (parts, v) in joint {
                let total: BigRational = v.iter().sum();
                for x in v {
                    assert_eq!(
                        x / &total,
                        BigRational::new(BigInt::from(m + 1), BigInt::from(k)),
                        "{parts:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn server_view_is_statistically_private() {
        let scheme = MultiServerScheme::new(2, 4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let report = audit_statistical_w(&scheme, 4, 1, 4000, &mut rng).unwrap();
        assert!(report.min_p_value() > 0.001, "{report:?}");
    }

    #[test]
    fn supermessages_look_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = PartitionQuery::from_parts(4, &[[1, 2].into(), [3, 4].into()]);
        let mut counts = vec![0u64; 256];
        let trials = 20_000;
        for _ in 0..trials {
            let db = Database::random(4, 4, &mut rng).unwrap();
            let s = form_supermessages(&db, &q).unwrap();
            counts[(s[0].read_uint(0, 4) << 4 | s[1].read_uint(0, 4)) as usize] += 1;
        }
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / trials as f64;
                -p * p.log2()
            })
            .sum();
        assert!(h > 7.85, "joint entropy {h}");
    }
}
