use pitchmap::teams::{cluster_teams, ColorVec, TeamError};
use proptest::prelude::*;

fn colors() -> impl Strategy<Value = Vec<(u64, ColorVec)>> {
    prop::collection::vec((0.0f64..255.0, 0.0f64..255.0, 0.0f64..255.0), 2..24).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (r, g, b))| (i as u64 * 3 + 1, ColorVec::new(r, g, b)))
            .collect()
    })
}

fn inertia(points: &[ColorVec], labels: &[u8]) -> Option<f64> {
    let mut c = [[0.0; 3]; 2];
    let mut n = [0.0; 2];
    for (p, &l) in points.iter().zip(labels) {
        let l = l as usize;
        n[l] += 1.0;
        c[l][0] += p.r;
        c[l][1] += p.g;
        c[l][2] += p.b;
    }
    if n[0] == 0.0 || n[1] == 0.0 {
        return None;
    }
    let cent: Vec<ColorVec> = (0..2).map(|k| ColorVec::new(c[k][0] / n[k], c[k][1] / n[k], c[k][2] / n[k])).collect();
    Some(points.iter().zip(labels).map(|(p, &l)| p.dist2(&cent[l as usize])).sum())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn no_single_move_lowers_inertia(input in colors()) {
        let a = match cluster_teams(&input) {
            Ok(a) => a,
            Err(TeamError::Degenerate { .. }) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let points: Vec<ColorVec> = input.iter().map(|c| c.1).collect();
        let labels: Vec<u8> = input.iter().map(|c| a.labels[&c.0]).collect();
        let base = inertia(&points, &labels).unwrap();
        prop_assert!((base - a.inertia).abs() <= 1e-9 * (1.0 + base));
        for i in 0..labels.len() {
            let mut moved = labels.clone();
            moved[i] = 1 - moved[i];
            if let Some(v) = inertia(&points, &moved) {
                prop_assert!(v >= base - 1e-9 * (1.0 + base), "moving {i} lowers inertia {base} -> {v}");
            }
        }
    }

    #[test]
    fn partition_ignores_input_order(input in colors(), r in any::<u64>()) {
        let mut shuffled = input.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, (r.wrapping_mul(i as u64 + 11) % (i as u64 + 1)) as usize);
        }
        match (cluster_teams(&input), cluster_teams(&shuffled)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(TeamError::Degenerate { .. }), Err(TeamError::Degenerate { .. })) => {}
            (a, b) => panic!("{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn darker_centroid_is_team_zero(input in colors()) {
        if let Ok(a) = cluster_teams(&input) {
            prop_assert!(a.centroids[0].luminance() <= a.centroids[1].luminance());
            prop_assert!(a.labels.values().any(|&l| l == 0) && a.labels.values().any(|&l| l == 1));
        }
    }
}
