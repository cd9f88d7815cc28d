use std::sync::OnceLock;

use adaptsim::analysis::{linear_cka, spearman};
use adaptsim::numkit::{softmax, Network, Tensor};
use adaptsim::policy::{
    argmax_action, log_prob, log_prob_grad, policy_forward, predict, reinforce_update,
    sample_action, BestActionTable, PolicyModel,
};
use adaptsim::scenegen::{draw_properties, render_dataset, GenSpec, Param, SimParams};
use adaptsim::tasks::{build_task, subsample_task, Family, SplitRole, TaskData, TaskSpec};
use proptest::prelude::*;

fn flags(m: usize) -> impl Strategy<Value = SimParams> {
    proptest::collection::vec(any::<bool>(), m).prop_map(|f| SimParams::new(f).unwrap())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Tensor::from_vec(&[rows, cols], v).unwrap())
}

fn small_task() -> &'static TaskData {
    static TASK: OnceLock<TaskData> = OnceLock::new();
    TASK.get_or_init(|| {
        build_task(TaskSpec {
            name: "pose-sensitive-prop".into(),
            family: Family::PoseSensitive,
            variant: 0,
            num_classes: 4,
            train_size: 41,
            test_size: 12,
            image_size: 16,
            seed: 9,
            role: SplitRole::Seen,
        })
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_is_a_distribution(z in proptest::collection::vec(-50.0f64..50.0, 1..12), shift in -100.0f64..100.0) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_heads_lie_on_the_simplex(seed in any::<u64>(), m in 1usize..=8, x in proptest::collection::vec(-2.0f64..2.0, 5), eps in 0.0f64..=1.0) {
        let mut model = PolicyModel::new(5, &[6], m, seed).unwrap();
        let a = SimParams::all_on(m);
        reinforce_update(&mut model, &x, &a, 40.0, 0.0, 0.05).unwrap();
        let pi = policy_forward(&model, &x).unwrap();
        prop_assert_eq!(pi.len(), m);
        for p in &pi {
            prop_assert!(p[0] >= 0.0 && p[1] >= 0.0);
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(predict(&model, &x).unwrap(), argmax_action(&pi));
        prop_assert_eq!(sample_action(&pi, eps, seed).unwrap().m(), m);
    }

    #[test]
    fn log_prob_gradient_is_linear_in_the_gap(seed in any::<u64>(), a in flags(4), gap in 0.5f64..30.0) {
        let x = [0.3, -0.7, 1.1];
        let model = PolicyModel::new(3, &[5], 4, seed).unwrap();
        let g = log_prob_grad(&model, &x, &a).unwrap().flatten();
        let (mut one, mut scaled) = (model.clone(), model.clone());
        reinforce_update(&mut one, &x, &a, gap, 0.0, 1e-3).unwrap();
        reinforce_update(&mut scaled, &x, &a, 2.0 * gap, 0.0, 1e-3).unwrap();
        let base: Vec<f64> = model.net.params().iter().flat_map(|t| t.data().to_vec()).collect();
        let d1: Vec<f64> = one.net.params().iter().flat_map(|t| t.data().to_vec()).collect();
        let d2: Vec<f64> = scaled.net.params().iter().flat_map(|t| t.data().to_vec()).collect();
        for i in 0..base.len() {
            prop_assert!((d1[i] - base[i] - 1e-3 * gap * g[i]).abs() < 1e-12);
            prop_assert!((d2[i] - base[i] - 2.0 * (d1[i] - base[i])).abs() < 1e-12);
        }
        prop_assert!(log_prob(&one, &x, &a).unwrap() >= log_prob(&model, &x, &a).unwrap());
    }

    #[test]
    fn batch_gradient_is_the_mean_of_its_halves(seed in any::<u64>(), labels in proptest::collection::vec(0usize..3, 8)) {
        let net = Network::builder(&[4], seed).dense(5).unwrap().relu().unwrap().dense(3).unwrap().build().unwrap();
        let rows: Vec<Vec<f64>> = (0..8).map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect()).collect();
        let batch = Tensor::stack(&[4], &rows).unwrap();
        let (_, whole) = net.loss_and_grad(&batch, &labels).unwrap();
        let (_, lo) = net.loss_and_grad(&batch.select_rows(&[0, 1, 2]), &labels[..3]).unwrap();
        let (_, hi) = net.loss_and_grad(&batch.select_rows(&[3, 4, 5, 6, 7]), &labels[3..]).unwrap();
        let mut mixed = lo.clone();
        mixed.scale(3.0 / 8.0);
        mixed.add_scaled(&hi, 5.0 / 8.0);
        for (a, b) in whole.flatten().iter().zip(mixed.flatten()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn toggling_one_flag_changes_only_its_property(p in flags(8), bit in 0usize..8, seed in any::<u64>(), index in 0u64..1000) {
        let q = p.clone().with(bit, !p.get(bit));
        let a = draw_properties(&p, seed, index, 1, 2);
        let b = draw_properties(&q, seed, index, 1, 2);
        let param = Param::ALL[bit];
        prop_assert_eq!(a.rotation_deg == b.rotation_deg, param != Param::Rotation);
        prop_assert_eq!(a.scale == b.scale, param != Param::Distance);
        prop_assert_eq!(a.intensity == b.intensity, param != Param::LightIntensity);
        prop_assert_eq!(a.tint == b.tint, param != Param::LightColor);
        prop_assert_eq!(a.light_angle_deg == b.light_angle_deg, param != Param::LightDirection);
        prop_assert_eq!(a.blur_sigma == b.blur_sigma, param != Param::FocusBlur);
        prop_assert_eq!(a.background == b.background, param != Param::Background);
        prop_assert_eq!(a.materials == b.materials, param != Param::Materials);
    }

    #[test]
    fn best_table_keeps_the_running_maximum(offers in proptest::collection::vec((0usize..3, 0u32..16, 0.0f64..100.0), 1..40)) {
        let mut table = BestActionTable::new(3);
        let mut best = [f64::NEG_INFINITY; 3];
        for (task, code, reward) in offers {
            let action = SimParams::decode(code, 4).unwrap();
            let improved = table.offer(task, &action, reward);
            prop_assert_eq!(improved, reward > best[task]);
            best[task] = best[task].max(reward);
            prop_assert_eq!(table.entries[task].as_ref().unwrap().reward, best[task]);
        }
    }

    #[test]
    fn cka_is_bounded_symmetric_and_invariant(x in matrix(9, 3), y in matrix(9, 4), scale in 0.1f64..50.0, shift in -5.0f64..5.0) {
        prop_assume!(linear_cka(&x, &x).is_ok() && linear_cka(&y, &y).is_ok());
        let c = linear_cka(&x, &y).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert!((c - linear_cka(&y, &x).unwrap()).abs() < 1e-12);
        let moved = Tensor::from_vec(&[9, 3], x.data().iter().map(|v| scale * v + shift).collect()).unwrap();
        prop_assert!((c - linear_cka(&moved, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn spearman_ignores_monotone_maps(v in proptest::collection::vec(-10.0f64..10.0, 3..20)) {
        let w: Vec<f64> = v.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        prop_assume!(v.iter().any(|x| *x != v[0]));
        prop_assert!((spearman(&v, &w).unwrap() - 1.0).abs() < 1e-12);
        let r = spearman(&v, &v.iter().map(|x| -x).collect::<Vec<_>>()).unwrap();
        prop_assert!((r + 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rendered_pixels_stay_in_unit_range_and_labels_balance(p in flags(8), seed in any::<u64>(), per_class in 1usize..4) {
        let set = render_dataset(&GenSpec {
            num_classes: 3,
            images_per_class: per_class,
            image_size: 16,
            seed,
            params: p,
        }).unwrap();
        prop_assert!(set.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for c in 0..3 {
            prop_assert_eq!(set.labels.iter().filter(|&&l| l == c).count(), per_class);
        }
    }

    #[test]
    fn subsampling_keeps_classes_balanced(fraction in 0.01f64..=1.0, seed in any::<u64>()) {
        let task = small_task();
        let sub = subsample_task(task, fraction, seed).unwrap();
        let expected = ((fraction * 41.0).ceil() as usize).min(41);
        prop_assert_eq!(sub.train.len(), expected);
        prop_assert_eq!(&sub.test, &task.test);
        let counts: Vec<usize> = (0..4).map(|c| sub.train.labels.iter().filter(|&&l| l == c).count()).collect();
        let available: Vec<usize> = (0..4).map(|c| task.train.labels.iter().filter(|&&l| l == c).count()).collect();
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        prop_assert!(spread <= 1 || counts.iter().zip(&available).any(|(c, a)| c == a));
        let row = task.train.image_shape().iter().product::<usize>();
        for (i, &l) in sub.train.labels.iter().enumerate() {
            let img = &sub.train.images.data()[i * row..(i + 1) * row];
            let found = (0..task.train.len()).any(|j| task.train.labels[j] == l && &task.train.images.data()[j * row..(j + 1) * row] == img);
            prop_assert!(found);
        }
    }
}
