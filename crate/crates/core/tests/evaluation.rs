use proptest::prelude::*;

use umix::data::{Dataset, Split};
use umix::eval::{evaluate_predictions, kde_report, select_checkpoint, SelectionCriterion};
use umix::model::{Layer, ModelParams};
use umix::train::Checkpoint;

fn dataset(labels: Vec<usize>, groups: Vec<usize>, num_groups: usize) -> Dataset {
    let x: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
    Dataset::new("t", Split::Val, 1, x, labels, Some(groups), 2, num_groups).unwrap()
}

fn case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>)> {
    (4usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0usize..2, n),
            prop::collection::vec(0usize..2, n),
            prop::collection::vec(0usize..3, n),
        )
    })
}

proptest! {
    #[test]
    fn worst_is_the_minimum_group((labels, preds, groups) in case()) {
        let mut groups = groups;
        groups[0] = 0;
        groups[1] = 1;
        groups[2] = 2;
        let data = dataset(labels, groups, 3);
        let r = evaluate_predictions(&preds, &data).unwrap();
        let min = r.per_group_acc.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = r.per_group_acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(r.worst_acc, min);
        prop_assert_eq!(r.per_group_acc[r.worst_group], min);
        prop_assert!(r.avg_acc >= r.worst_acc - 1e-15 && r.avg_acc <= max + 1e-15);
    }

    #[test]
    fn kde_curves_have_unit_mass(u in prop::collection::vec(prop::sample::select(vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]), 12..80)) {
        let groups: Vec<usize> = (0..u.len()).map(|i| i % 3).collect();
        let k = kde_report(&u, &groups, 3).unwrap();
        for g in 0..3 {
            prop_assert!((k.mass(g) - 1.0).abs() <= 0.1, "group {} mass {}", g, k.mass(g));
        }
    }
}

/// One-feature GLM whose predictions on `x = 0, 1, …` are fixed by the
/// bias and slope.
fn threshold(slope: f64, bias: f64) -> ModelParams {
    ModelParams::glm(Layer::new(1, 2, vec![0.0, slope], vec![0.0, bias]).unwrap())
}

#[test]
fn selection_beats_every_other_checkpoint() {
    let n = 40;
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i % 3 == 0)).collect();
    let groups: Vec<usize> = (0..n).map(|i| (i * 7) % 4).collect();
    let data = dataset(labels, groups, 4);
    let checkpoints: Vec<Checkpoint> = (0..25)
        .map(|e| {
            let slope = ((e * 37) % 11) as f64 / 5.0 - 1.0;
            let bias = -(((e * 13) % 17) as f64) * 2.0 + 10.0;
            Checkpoint {
                epoch: e,
                params: threshold(slope, bias),
            }
        })
        .collect();
    for criterion in [SelectionCriterion::WorstGroup, SelectionCriterion::Average] {
        let s = select_checkpoint(&checkpoints, &data, criterion).unwrap();
        for (k, c) in checkpoints.iter().enumerate() {
            let r = umix::eval::evaluate(&c.params, &data).unwrap();
            let score = match criterion {
                SelectionCriterion::WorstGroup => r.worst_acc,
                SelectionCriterion::Average => r.avg_acc,
            };
            assert!(s.score >= score);
            if score == s.score {
                assert!(s.index <= k);
            }
        }
    }
}
