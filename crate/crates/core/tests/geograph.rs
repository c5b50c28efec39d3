use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsensor::dataset::SensorLocation;
use vsensor::geograph::*;
use vsensor::seeded_rng;

fn random_locations(n: usize, seed: u64) -> Vec<SensorLocation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            SensorLocation::new(
                format!("S{i}"),
                rng.random_range(51.42..51.49),
                rng.random_range(-2.65..-2.53),
                0.0,
            )
            .unwrap()
        })
        .collect()
}

/// Textbook haversine written out independently of the library.
fn haversine_oracle(a: (f64, f64), b: (f64, f64)) -> f64 {
    let r = 6_371_000.0;
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().atan2((1.0 - h).sqrt())
}

/// All-pairs shortest hop counts by Floyd-Warshall.
fn diameter_oracle(g: &SpatialGraph) -> Option<usize> {
    let n = g.n_nodes();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (u, row) in d.iter_mut().enumerate() {
        row[u] = 0;
        for &v in g.neighbors(u) {
            row[v] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let m = d.iter().flatten().copied().max().unwrap();
    (m < inf).then_some(m)
}

/// Brute-force edge set: sort every other node by (distance, id).
fn knn_oracle(locs: &[SensorLocation], k: usize) -> HashSet<(usize, usize)> {
    let mut edges = HashSet::new();
    for i in 0..locs.len() {
        let mut others: Vec<usize> = (0..locs.len()).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| {
            let da = haversine_oracle(locs[i].coords(), locs[a].coords());
            let db = haversine_oracle(locs[i].coords(), locs[b].coords());
            da.total_cmp(&db).then(locs[a].id.cmp(&locs[b].id))
        });
        for &j in others.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges
}

fn edge_set(g: &SpatialGraph) -> HashSet<(usize, usize)> {
    g.edges().into_iter().map(|(u, v, _)| (u, v)).collect()
}

fn check_structure(g: &SpatialGraph) {
    for u in 0..g.n_nodes() {
        let adj = g.neighbors(u);
        assert!(adj.windows(2).all(|w| w[0] < w[1]), "unsorted adjacency at {u}");
        assert!(!adj.contains(&u), "self-loop at {u}");
        for &v in adj {
            assert!(g.neighbors(v).contains(&u), "asymmetric edge {u}-{v}");
        }
    }
}

#[test]
fn haversine_examples() {
    assert_eq!(haversine((51.0, -2.0), (51.0, -2.0)), 0.0);
    let half = haversine((0.0, 0.0), (0.0, 180.0));
    assert!((half - std::f64::consts::PI * 6_371_000.0).abs() < 1e-6);
    assert!((half - 20_015_087.0).abs() < 1.0);
    let bl = haversine((51.4545, -2.5879), (51.5072, -0.1276));
    assert!((bl - 170_500.0).abs() < 500.0, "{bl}");
    assert!((bl - haversine_oracle((51.4545, -2.5879), (51.5072, -0.1276))).abs() < 1e-6);
}

#[test]
fn eight_random_bristol_sensors_k3_seed7() {
    let locs = random_locations(8, 7);
    let g = build_knn_graph(&locs, 3).unwrap();
    check_structure(&g);
    assert_eq!(edge_set(&g), knn_oracle(&locs, 3));
    assert_eq!(g.diameter(), diameter_oracle(&g));
    for (u, v, len) in g.edges() {
        assert!((len - haversine_oracle(locs[u].coords(), locs[v].coords())).abs() < 1e-6);
    }
}

#[test]
fn sampling_examples() {
    let g = SpatialGraph::from_edges(4, &[(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
    let budget = SampleBudget::default();
    assert_eq!(budget.0, vec![3, 5]);
    let nb = sample_neighborhood(&g, 0, &budget, &mut seeded_rng(0));
    let mut hop1 = nb.hop1.clone();
    hop1.sort();
    assert_eq!(hop1, vec![1, 2]);
    let iso = sample_neighborhood(&g, 3, &budget, &mut seeded_rng(0));
    assert!(iso.hop1.is_empty() && iso.hop2.is_empty());

    let g8 = build_knn_graph(&random_locations(8, 7), 3).unwrap();
    for node in 0..8 {
        let a = sample_neighborhood(&g8, node, &budget, &mut seeded_rng(42));
        let b = sample_neighborhood(&g8, node, &budget, &mut seeded_rng(42));
        assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn triangle_inequality(
        a in (-80.0f64..80.0, -179.0f64..179.0),
        b in (-80.0f64..80.0, -179.0f64..179.0),
        c in (-80.0f64..80.0, -179.0f64..179.0),
    ) {
        let (ab, bc, ac) = (haversine(a, b), haversine(b, c), haversine(a, c));
        prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-6);
        prop_assert!((ab - haversine(b, a)).abs() < 1e-6);
    }

    #[test]
    fn knn_graphs_match_brute_force(n in 2usize..14, k in 1usize..6, seed in 0u64..10_000) {
        let locs = random_locations(n, seed);
        let g = build_knn_graph(&locs, k).unwrap();
        check_structure(&g);
        prop_assert_eq!(edge_set(&g), knn_oracle(&locs, k));
        prop_assert_eq!(g.diameter(), diameter_oracle(&g));
        if k >= n - 1 {
            prop_assert_eq!(g.n_edges(), n * (n - 1) / 2);
        }
    }

    #[test]
    fn construction_is_permutation_equivariant(n in 2usize..12, k in 1usize..5, seed in 0u64..10_000, shuffle in 0u64..10_000) {
        use rand::seq::SliceRandom;
        let locs = random_locations(n, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        // new position of old index i is perm[i]
        let mut relabeled = locs.clone();
        for (i, &p) in perm.iter().enumerate() {
            relabeled[p] = locs[i].clone();
        }
        let g = build_knn_graph(&locs, k).unwrap();
        let h = build_knn_graph(&relabeled, k).unwrap();
        let mapped: HashSet<(usize, usize)> = edge_set(&g)
            .into_iter()
            .map(|(u, v)| (perm[u].min(perm[v]), perm[u].max(perm[v])))
            .collect();
        prop_assert_eq!(mapped, edge_set(&h));
    }

    #[test]
    fn samples_are_duplicate_free_subsets(n in 2usize..14, k in 1usize..6, seed in 0u64..10_000, b0 in 1usize..6, b1 in 1usize..7) {
        let g = build_knn_graph(&random_locations(n, seed), k).unwrap();
        let budget = SampleBudget(vec![b0, b1]);
        let mut rng = seeded_rng(seed);
        for node in 0..n {
            let nb = sample_neighborhood(&g, node, &budget, &mut rng);
            prop_assert_eq!(nb.hop1.len(), b0.min(g.degree(node)));
            prop_assert_eq!(nb.hop2.len(), nb.hop1.len());
            let set: HashSet<_> = nb.hop1.iter().collect();
            prop_assert_eq!(set.len(), nb.hop1.len());
            for (&u, second) in nb.hop1.iter().zip(&nb.hop2) {
                prop_assert!(g.has_edge(node, u));
                prop_assert_eq!(second.len(), b1.min(g.degree(u)));
                let s2: HashSet<_> = second.iter().collect();
                prop_assert_eq!(s2.len(), second.len());
                for &w in second {
                    prop_assert!(g.has_edge(u, w));
                }
            }
        }
    }
}
