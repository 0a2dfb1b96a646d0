use msdpp::attributes::{build_bundle, AttributeKind, AttributeSpec, Direction, EmbeddingOptions};
use msdpp::dataio::{load_gallery, load_queries, write_jsonl_file};
use msdpp::synth::{gen_synthetic, SynthPlan};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_plan() -> SynthPlan {
    SynthPlan {
        n_items: 80,
        n_clusters: 4,
        n_queries: 3,
        dim: 6,
        ..SynthPlan::default()
    }
}

fn specs() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec::new("appearance", AttributeKind::Appearance, Direction::Increase, 0.4),
        AttributeSpec::new("time", AttributeKind::Time, Direction::Decrease, 0.3),
        AttributeSpec::new("geo", AttributeKind::Geo, Direction::Increase, 0.3),
    ]
}

#[test]
fn write_then_load_is_bit_exact() {
    let data = gen_synthetic(21, &small_plan()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("gallery.jsonl");
    let q = dir.path().join("queries.jsonl");
    write_jsonl_file(&g, &data.gallery).unwrap();
    write_jsonl_file(&q, &data.queries).unwrap();
    let gallery = load_gallery(&g).unwrap();
    let queries = load_queries(&q, Some(&gallery)).unwrap();
    assert_eq!(gallery, data.gallery);
    assert_eq!(queries, data.queries);
    for (a, b) in gallery.iter().zip(&data.gallery) {
        for (x, y) in a.appearance.iter().zip(&b.appearance) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn generator_is_independent_of_thread_count() {
    let plan = small_plan();
    let reference = gen_synthetic(5, &plan).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let parallel: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        (0..4).into_par_iter().map(|_| gen_synthetic(5, &plan).unwrap()).collect()
    });
    assert!(parallel.iter().all(|d| *d == reference));
}

#[test]
fn bundle_is_deterministic() {
    let data = gen_synthetic(2, &small_plan()).unwrap();
    let rel = data.queries[0].relevance_map();
    let opts = EmbeddingOptions::default();
    let a = build_bundle(&data.gallery, &rel, &specs(), 40, &opts).unwrap();
    let b = build_bundle(&data.gallery, &rel, &specs(), 40, &opts).unwrap();
    assert_eq!(a, b);
    for attr in &a.attributes {
        for i in 0..a.len() {
            assert_eq!(attr.raw.get(i, i), 1.0);
            assert_eq!(attr.kernel.get(i, i), 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gallery_order_does_not_matter(seed in any::<u64>()) {
        let data = gen_synthetic(9, &small_plan()).unwrap();
        let rel = data.queries[1].relevance_map();
        let opts = EmbeddingOptions::default();
        let reference = build_bundle(&data.gallery, &rel, &specs(), 30, &opts).unwrap();
        let mut shuffled = data.gallery.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let bundle = build_bundle(&shuffled, &rel, &specs(), 30, &opts).unwrap();
        prop_assert_eq!(bundle, reference);
    }
}
