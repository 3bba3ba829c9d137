//! Privacy audits.
//!
//! The exact audits enumerate, for every hypothesis (w, S), the distribution
//! of the query a scheme sends, and compute posteriors with exact rationals.
//! Because answers are a deterministic function of (query, messages) and the
//! messages are drawn independently of (W, S), the posterior given
//! (query, answer, messages) equals the posterior given the query alone, so a
//! query-level deviation of zero certifies privacy at the full-view level.
//! `tests::query_level_posterior_matches_full_view` checks this reduction on
//! a toy instance by enumerating the message realizations too.
//!
//! The statistical audit samples transcripts instead and compares empirical
//! conditional distributions with a chi-square homogeneity test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, RngCore};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{all_demands, joint_prior, DemandSpec};

/// Exact distribution of canonical query encodings for one (W, S).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryDistribution {
    entries: BTreeMap<String, BigRational>,
}

impl QueryDistribution {
    /// Validates that probabilities are positive and sum to exactly one.
    pub fn new(entries: BTreeMap<String, BigRational>) -> Result<Self> {
        if entries.values().any(|p| !p.is_positive()) {
            return Err(Error::Internal(
                "query probabilities must be positive".into(),
            ));
        }
        let total: BigRational = entries.values().cloned().sum();
        if !total.is_one() {
            return Err(Error::Internal(format!(
                "query probabilities sum to {total}"
            )));
        }
        Ok(QueryDistribution { entries })
    }

    /// A scheme whose query never varies.
    pub fn point(key: impl Into<String>) -> Self {
        QueryDistribution {
            entries: BTreeMap::from([(key.into(), BigRational::one())]),
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, BigRational> {
        &self.entries
    }

    pub fn probability(&self, key: &str) -> BigRational {
        self.entries
            .get(key)
            .cloned()
            .unwrap_or_else(BigRational::zero)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A scheme whose query distribution can be enumerated exactly.
pub trait EnumerableScheme {
    fn name(&self) -> String;
    fn messages(&self) -> usize;
    fn side_size(&self) -> usize;
    fn query_distribution(&self, demand: &DemandSpec) -> Result<QueryDistribution>;
}

/// A scheme from which canonical query encodings can be sampled.
pub trait SampleableScheme {
    fn sample_query_key(&self, demand: &DemandSpec, rng: &mut dyn RngCore) -> Result<String>;
}

/// A joint law over (W, S) with |S| = M, given as exact weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    k: usize,
    m: usize,
    weights: BTreeMap<DemandSpec, BigRational>,
}

impl Prior {
    /// The uniform law: W uniform, S uniform given W.
    pub fn uniform(k: usize, m: usize) -> Result<Self> {
        let weights = all_demands(k, m)
            .into_iter()
            .map(|d| {
                let p = joint_prior(d.demand, &d.side, k, m)?;
                Ok((d, p))
            })
            .collect::<Result<_>>()?;
        Ok(Prior { k, m, weights })
    }

    /// Normalizes arbitrary nonnegative weights. Pairs not listed get zero.
    pub fn from_weights(
        k: usize,
        m: usize,
        weights: impl IntoIterator<Item = (DemandSpec, BigRational)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (d, w) in weights {
            d.validate(k)?;
            if d.m() != m {
                return Err(Error::param(format!(
                    "hypothesis {d} does not have |S| = {m}"
                )));
            }
            if w.is_negative() {
                return Err(Error::param("prior weights must be nonnegative"));
            }
            *map.entry(d).or_insert_with(BigRational::zero) += w;
        }
        let total: BigRational = map.values().cloned().sum();
        if total.is_zero() {
            return Err(Error::param("prior has no mass"));
        }
        for w in map.values_mut() {
            *w = &*w / &total;
        }
        map.retain(|_, w| !w.is_zero());
        Ok(Prior { k, m, weights: map })
    }

    /// A random non-uniform prior with integer weights in 1..=1000.
    pub fn random<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Result<Self> {
        let weights: Vec<_> = all_demands(k, m)
            .into_iter()
            .map(|d| {
                (
                    d,
                    BigRational::from_integer(BigInt::from(rng.gen_range(1u32..=1000))),
                )
            })
            .collect();
        Prior::from_weights(k, m, weights)
    }

    pub fn messages(&self) -> usize {
        self.k
    }

    pub fn side_size(&self) -> usize {
        self.m
    }

    pub fn weight(&self, d: &DemandSpec) -> BigRational {
        self.weights
            .get(d)
            .cloned()
            .unwrap_or_else(BigRational::zero)
    }

    pub fn support(&self) -> impl Iterator<Item = (&DemandSpec, &BigRational)> {
        self.weights.iter()
    }

    pub fn demand_marginal(&self, w: usize) -> BigRational {
        self.weights
            .iter()
            .filter(|(d, _)| d.demand == w)
            .map(|(_, p)| p.clone())
            .sum()
    }
}

/// One line of the audit table.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorRow {
    pub query: String,
    pub hypothesis: String,
    pub posterior: BigRational,
    pub prior: BigRational,
    pub deviation: BigRational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub scheme: String,
    pub kind: AuditKind,
    pub max_posterior_deviation: BigRational,
    pub queries: usize,
    pub hypotheses: usize,
    pub rows: Vec<PosteriorRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditKind {
    Demand,
    DemandAndSide,
}

impl AuditReport {
    pub fn is_private(&self) -> bool {
        self.max_posterior_deviation.is_zero()
    }

    /// Tab-separated: query, hypothesis, posterior, prior, deviation.
    pub fn table(&self) -> String {
        let mut out = String::from("query\thypothesis\tposterior\tprior\tdeviation\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.query, r.hypothesis, r.posterior, r.prior, r.deviation
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let kind = match self.kind {
            AuditKind::Demand => "W",
            AuditKind::DemandAndSide => "(W,S)",
        };
        format!(
            "{} {kind}-privacy audit: {} queries x {} hypotheses, max |posterior - prior| = {} ({})",
            self.scheme,
            self.queries,
            self.hypotheses,
            self.max_posterior_deviation,
            if self.is_private() { "private" } else { "LEAKS" }
        )
    }

    /// The posterior rows for one canonical query.
    pub fn rows_for(&self, query: &str) -> Vec<&PosteriorRow> {
        self.rows.iter().filter(|r| r.query == query).collect()
    }
}

/// Upper bound on (query, hypothesis) pairs held in memory.
pub const MAX_AUDIT_CELLS: usize = 5_000_000;

fn run_audit<S: EnumerableScheme + ?Sized>(
    scheme: &S,
    prior: &Prior,
    kind: AuditKind,
) -> Result<AuditReport> {
    if prior.messages() != scheme.messages() || prior.side_size() != scheme.side_size() {
        return Err(Error::param(format!(
            "prior is over K={}, M={} but scheme has K={}, M={}",
            prior.messages(),
            prior.side_size(),
            scheme.messages(),
            scheme.side_size()
        )));
    }
    let label = |d: &DemandSpec| match kind {
        AuditKind::Demand => d.demand.to_string(),
        AuditKind::DemandAndSide => d.to_string(),
    };

    // Hypothesis labels and their prior marginals, including zero-mass ones.
    let mut hyp_prior: BTreeMap<String, BigRational> = BTreeMap::new();
    for d in all_demands(prior.messages(), prior.side_size()) {
        *hyp_prior.entry(label(&d)).or_insert_with(BigRational::zero) += prior.weight(&d);
    }

    // joint[query][hypothesis] = prior(w, S) * P(query | w, S)
    let mut joint: BTreeMap<String, BTreeMap<String, BigRational>> = BTreeMap::new();
    let mut cells = 0usize;
    for (d, p) in prior.support() {
        let dist = scheme.query_distribution(d)?;
        for (q, pq) in dist.entries() {
            let row = joint.entry(q.clone()).or_default();
            let slot = row.entry(label(d)).or_insert_with(|| {
                cells += 1;
                BigRational::zero()
            });
            *slot += p * pq;
        }
        if cells > MAX_AUDIT_CELLS {
            return Err(Error::Capacity(format!(
                "audit table reached {cells} cells (limit {MAX_AUDIT_CELLS})"
            )));
        }
    }

    let mut rows = Vec::new();
    let mut max_dev = BigRational::zero();
    for (q, row) in &joint {
        let marginal: BigRational = row.values().cloned().sum();
        if marginal.is_zero() {
            continue;
        }
        let mut column = BigRational::zero();
        for (h, h_prior) in &hyp_prior {
            let posterior = row.get(h).cloned().unwrap_or_else(BigRational::zero) / &marginal;
            column += &posterior;
            let deviation = (&posterior - h_prior).abs();
            if deviation > max_dev {
                max_dev = deviation.clone();
            }
            rows.push(PosteriorRow {
                query: q.clone(),
                hypothesis: h.clone(),
                posterior,
                prior: h_prior.clone(),
                deviation,
            });
        }
        if !column.is_one() {
            return Err(Error::Internal(format!(
                "posterior column for {q} sums to {column}"
            )));
        }
    }

    Ok(AuditReport {
        scheme: scheme.name(),
        kind,
        max_posterior_deviation: max_dev,
        queries: joint.len(),
        hypotheses: hyp_prior.len(),
        rows,
    })
}

/// Exact W-privacy audit: max over queries and w of |P(W=w | Q) - P(W=w)|.
pub fn audit_w<S: EnumerableScheme + ?Sized>(scheme: &S, prior: &Prior) -> Result<AuditReport> {
    run_audit(scheme, prior, AuditKind::Demand)
}

/// Exact (W,S)-privacy audit over joint hypotheses (w, S).
pub fn audit_ws<S: EnumerableScheme + ?Sized>(scheme: &S, prior: &Prior) -> Result<AuditReport> {
    run_audit(scheme, prior, AuditKind::DemandAndSide)
}

/// One labelled source of canonical query encodings.
pub struct Hypothesis<'a> {
    pub label: String,
    pub sampler: Box<dyn FnMut(&mut dyn RngCore) -> Result<String> + 'a>,
}

impl<'a> Hypothesis<'a> {
    pub fn new(
        label: impl Into<String>,
        sampler: impl FnMut(&mut dyn RngCore) -> Result<String> + 'a,
    ) -> Self {
        Hypothesis {
            label: label.into(),
            sampler: Box::new(sampler),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub total_variation: f64,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatisticalReport {
    pub samples_per_hypothesis: usize,
    pub distinct_queries: usize,
    pub pairs: Vec<PairwiseTest>,
    pub warning: Option<String>,
}

impl StatisticalReport {
    pub fn min_p_value(&self) -> f64 {
        self.pairs.iter().map(|p| p.p_value).fold(1.0, f64::min)
    }

    pub fn max_total_variation(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.total_variation)
            .fold(0.0, f64::max)
    }
}

pub const MIN_STATISTICAL_SAMPLES: usize = 1000;

/// Minimum expected count per cell before sparse cells are pooled.
const MIN_EXPECTED: f64 = 5.0;

/// Chi-square test of homogeneity for two count vectors over the same
/// categories. Categories with a pooled expected count below 5 in either
/// sample are merged into one bin.
pub fn chi_square_homogeneity(
    a: &BTreeMap<String, u64>,
    b: &BTreeMap<String, u64>,
) -> (f64, usize, f64) {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    if na == 0 || nb == 0 {
        return (0.0, 0, 1.0);
    }
    let n = (na + nb) as f64;
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for key in keys {
        let oa = *a.get(key).unwrap_or(&0) as f64;
        let ob = *b.get(key).unwrap_or(&0) as f64;
        let total = oa + ob;
        let (ea, eb) = (total * na as f64 / n, total * nb as f64 / n);
        if ea < MIN_EXPECTED || eb < MIN_EXPECTED {
            pooled.0 += oa;
            pooled.1 += ob;
        } else {
            bins.push((oa, ob));
        }
    }
    if pooled.0 + pooled.1 > 0.0 {
        bins.push(pooled);
    }
    if bins.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let mut stat = 0.0;
    for &(oa, ob) in &bins {
        let total = oa + ob;
        let ea = total * na as f64 / n;
        let eb = total * nb as f64 / n;
        stat += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let dof = bins.len() - 1;
    let p = ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(stat))
        .unwrap_or(1.0);
    (stat, dof, p)
}

/// Goodness-of-fit p-value of observed counts against expected probabilities.
pub fn chi_square_goodness_of_fit(observed: &[u64], expected: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = observed.len().saturating_sub(1);
    if dof == 0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(stat))
        .unwrap_or(1.0)
}

fn total_variation(a: &BTreeMap<String, u64>, b: &BTreeMap<String, u64>) -> f64 {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| {
            let pa = *a.get(k).unwrap_or(&0) as f64 / na as f64;
            let pb = *b.get(k).unwrap_or(&0) as f64 / nb as f64;
            (pa - pb).abs()
        })
        .sum::<f64>()
}

/// Samples `samples` canonical queries under each hypothesis and compares every
/// pair of empirical distributions.
pub fn audit_statistical<R: RngCore>(
    hypotheses: &mut [Hypothesis<'_>],
    samples: usize,
    rng: &mut R,
) -> Result<StatisticalReport> {
    let mut counts: Vec<BTreeMap<String, u64>> = Vec::with_capacity(hypotheses.len());
    for h in hypotheses.iter_mut() {
        let mut c = BTreeMap::new();
        for _ in 0..samples {
            *c.entry((h.sampler)(rng)?).or_insert(0) += 1;
        }
        counts.push(c);
    }
    let mut pairs = Vec::new();
    for i in 0..hypotheses.len() {
        for j in i + 1..hypotheses.len() {
            let (chi_square, dof, p_value) = chi_square_homogeneity(&counts[i], &counts[j]);
            pairs.push(PairwiseTest {
                a: hypotheses[i].label.clone(),
                b: hypotheses[j].label.clone(),
                total_variation: total_variation(&counts[i], &counts[j]),
                chi_square,
                dof,
                p_value,
            });
        }
    }
    let distinct: BTreeSet<&String> = counts.iter().flat_map(|c| c.keys()).collect();
    let warning = (samples < MIN_STATISTICAL_SAMPLES).then(|| {
        format!(
            "only {samples} samples per hypothesis; at least {MIN_STATISTICAL_SAMPLES} recommended"
        )
    });
    Ok(StatisticalReport {
        samples_per_hypothesis: samples,
        distinct_queries: distinct.len(),
        pairs,
        warning,
    })
}

/// Statistical W-privacy check: one hypothesis per demand index w, with S
/// drawn uniformly from the M-subsets not containing w.
pub fn audit_statistical_w<S: SampleableScheme + ?Sized, R: RngCore>(
    scheme: &S,
    k: usize,
    m: usize,
    samples: usize,
    rng: &mut R,
) -> Result<StatisticalReport> {
    let mut hyps: Vec<Hypothesis<'_>> = (1..=k)
        .map(|w| {
            let sides = crate::model::subsets_excluding(k, m, w);
            Hypothesis::new(format!("W={w}"), move |rng: &mut dyn RngCore| {
                let side = sides[rng.gen_range(0..sides.len())].clone();
                scheme.sample_query_key(&DemandSpec { demand: w, side }, rng)
            })
        })
        .collect();
    audit_statistical(&mut hyps, samples, rng)
}

/// Converts an exact rational to f64 for display.
pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
