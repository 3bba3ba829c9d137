use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pirsi::audit::{audit_statistical, audit_statistical_w, Hypothesis};
use pirsi::mds::MdsScheme;
use pirsi::multi_server::MultiServerScheme;
use pirsi::partition::{PartitionScheme, UnshuffledPartitionScheme};
use pirsi::sun_jafar::{build_queries, ordered_shape_key, shape_key, subset_sequence_key};

fn sj_hypotheses<'a>(
    n: usize,
    g: usize,
    server: usize,
    key: fn(&[pirsi::sun_jafar::QueryAtom]) -> String,
) -> Vec<Hypothesis<'a>> {
    (1..=g)
        .map(|theta| {
            Hypothesis::new(format!("theta={theta}"), move |rng: &mut dyn RngCore| {
                let tr = build_queries(n, g, theta, rng)?;
                Ok(key(&tr.per_server_atoms[server]))
            })
        })
        .collect()
}

#[test]
fn sun_jafar_shapes_do_not_depend_on_theta() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (server, key) in [
        (0, shape_key as fn(&[_]) -> String),
        (1, ordered_shape_key),
        (0, subset_sequence_key),
    ] {
        let mut h = sj_hypotheses(2, 3, server, key);
        let r = audit_statistical(&mut h, 10_000, &mut rng).unwrap();
        assert!(r.warning.is_none());
        assert!(r.min_p_value() > 0.01, "server {server}: {r:?}");
    }
}

#[test]
fn constant_scheme_has_zero_variation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r = audit_statistical_w(&MdsScheme::new(5, 2).unwrap(), 5, 2, 1000, &mut rng).unwrap();
    assert_eq!(r.max_total_variation(), 0.0);
    assert_eq!(r.distinct_queries, 1);
}

#[test]
fn shuffled_partition_passes_and_unshuffled_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ok =
        audit_statistical_w(&PartitionScheme::new(5, 1).unwrap(), 5, 1, 5000, &mut rng).unwrap();
    assert!(ok.min_p_value() > 0.001, "{ok:?}");
    let bad = audit_statistical_w(
        &UnshuffledPartitionScheme::new(5, 1).unwrap(),
        5,
        1,
        5000,
        &mut rng,
    )
    .unwrap();
    assert!(bad.min_p_value() < 1e-9);
}

#[test]
fn multiserver_view_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = audit_statistical_w(
        &MultiServerScheme::new(2, 6, 1).unwrap(),
        6,
        1,
        5000,
        &mut rng,
    )
    .unwrap();
    assert!(r.min_p_value() > 0.001, "{r:?}");
}

#[test]
fn few_samples_warn() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = audit_statistical_w(&MdsScheme::new(3, 1).unwrap(), 3, 1, 10, &mut rng).unwrap();
    assert!(r.warning.is_some());
}
