use std::collections::BTreeSet;

use proptest::prelude::*;
use stagewise::eval::{accuracy, aggregate, compare_reports, phase_jaccard, phase_recall, VideoMetrics};

/// Brute-force reference: builds explicit frame index sets and counts them.
struct Oracle {
    acc: f64,
    jacc: f64,
    rec: f64,
}

fn frames_where(seq: &[usize], c: usize) -> BTreeSet<usize> {
    (0..seq.len()).filter(|&t| seq[t] == c).collect()
}

fn oracle(pred: &[usize], gt: &[usize]) -> Oracle {
    let agree: BTreeSet<usize> = (0..gt.len()).filter(|&t| pred[t] == gt[t]).collect();
    let phases: BTreeSet<usize> = gt.iter().copied().collect();
    let (mut j, mut r) = (0.0, 0.0);
    for &c in &phases {
        let p = frames_where(pred, c);
        let g = frames_where(gt, c);
        let inter = p.intersection(&g).count() as f64;
        let union = p.union(&g).count() as f64;
        j += inter / union;
        r += inter / g.len() as f64;
    }
    let n = phases.len() as f64;
    Oracle {
        acc: agree.len() as f64 / gt.len() as f64,
        jacc: j / n,
        rec: r / n,
    }
}

fn pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..=50, 1usize..=4).prop_flat_map(|(t, c)| (prop::collection::vec(0..c, t), prop::collection::vec(0..c, t)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_set_oracle((pred, gt) in pair()) {
        let o = oracle(&pred, &gt);
        prop_assert!((accuracy(&pred, &gt).unwrap() - o.acc).abs() <= 1e-12);
        prop_assert!((phase_jaccard(&pred, &gt).unwrap().1 - o.jacc).abs() <= 1e-12);
        prop_assert!((phase_recall(&pred, &gt).unwrap().1 - o.rec).abs() <= 1e-12);
    }

    #[test]
    fn perfect_iff_equal((pred, gt) in pair()) {
        let m = VideoMetrics::compute("v", &pred, &gt).unwrap();
        let all_one = m.acc == 1.0 && m.jacc == 1.0 && m.rec == 1.0;
        prop_assert_eq!(all_one, pred == gt);
    }

    #[test]
    fn relabeling_invariance((pred, gt) in pair(), shift in 1usize..4) {
        let perm = |s: &[usize]| s.iter().map(|&c| (c + shift) % 4).collect::<Vec<_>>();
        let a = VideoMetrics::compute("v", &pred, &gt).unwrap();
        let b = VideoMetrics::compute("v", &perm(&pred), &perm(&gt)).unwrap();
        prop_assert!((a.acc - b.acc).abs() <= 1e-12);
        prop_assert!((a.jacc - b.jacc).abs() <= 1e-12);
        prop_assert!((a.rec - b.rec).abs() <= 1e-12);
    }

    #[test]
    fn values_in_unit_interval((pred, gt) in pair()) {
        let m = VideoMetrics::compute("v", &pred, &gt).unwrap();
        for v in [m.acc, m.jacc, m.rec] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let present: BTreeSet<usize> = gt.iter().copied().collect();
        prop_assert_eq!(m.per_phase.keys().copied().collect::<BTreeSet<_>>(), present);
    }

    #[test]
    fn aggregate_is_order_invariant(accs in prop::collection::vec(0.0f64..=1.0, 1..8)) {
        let vids: Vec<VideoMetrics> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| VideoMetrics { id: format!("v{i}"), acc: a, jacc: a, rec: a, per_phase: Default::default() })
            .collect();
        let mut rev = vids.clone();
        rev.reverse();
        prop_assert_eq!(aggregate(vids).unwrap(), aggregate(rev).unwrap());
    }
}

#[test]
fn hand_examples() {
    let (p, g) = ([0, 0, 1, 1], [0, 1, 1, 1]);
    assert_eq!(accuracy(&p, &g).unwrap(), 0.75);
    assert!((phase_jaccard(&p, &g).unwrap().1 - 7.0 / 12.0).abs() < 1e-12);
    assert!((phase_recall(&p, &g).unwrap().1 - 5.0 / 6.0).abs() < 1e-12);
    let (per, mean) = phase_jaccard(&[0, 0], &[0, 1]).unwrap();
    assert_eq!((per[&0], per[&1], mean), (0.5, 0.0, 0.25));
    assert_eq!(accuracy(&[1, 1], &[0, 0]).unwrap(), 0.0);
    let (per, _) = phase_recall(&[2, 2, 2], &[0, 1, 1]).unwrap();
    assert!(per.values().all(|&r| r == 0.0));
}

fn report(accs: &[f64]) -> stagewise::eval::MetricsReport {
    aggregate(
        accs.iter()
            .enumerate()
            .map(|(i, &a)| VideoMetrics {
                id: format!("v{i}"),
                acc: a,
                jacc: a,
                rec: a,
                per_phase: Default::default(),
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn comparison_deltas() {
    let a = report(&[0.8, 0.9, 0.7]);
    let same = compare_reports(&a, &a).unwrap();
    assert_eq!(same.delta.acc, 0.0);
    assert_eq!(same.ties, 3);

    let b = report(&[0.82, 0.92, 0.72]);
    let ab = compare_reports(&a, &b).unwrap();
    assert!((ab.delta.acc - 0.02).abs() < 1e-12);
    assert_eq!(ab.wins_b, 3);
    let ba = compare_reports(&b, &a).unwrap();
    assert_eq!(ab.delta.acc, -ba.delta.acc);
    assert_eq!(ab.delta.jacc, -ba.delta.jacc);

    let other = report(&[0.8, 0.9]);
    assert!(compare_reports(&a, &other).is_err());
}
