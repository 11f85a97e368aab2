use blockrank::bir::{mutual_information, BinRange, MiConfig};
use blockrank::mann::{train, Activation, ArchitectureSpec, BlockSpec, MannModel, OutputHead, TrainConfig};
use blockrank::matrix::Matrix;
use blockrank::stats::{bonferroni, spearman, wilcoxon_signed_rank, WilcoxonMode};
use blockrank::vargrad::{vargrad, VarGradConfig};
use proptest::prelude::*;

fn model_from(sizes: &[usize], hidden: usize, n_b: usize, blender: usize, activation: Activation, weights: &[f64]) -> MannModel {
    let spec = BlockSpec::contiguous(sizes).unwrap();
    let mut arch = ArchitectureSpec::with_widths(&spec, OutputHead::LinearRegression, n_b, &[blender]);
    arch.activation = activation;
    for w in &mut arch.branch_widths {
        *w = vec![hidden];
    }
    let mut m = MannModel::zeroed(arch, spec).unwrap();
    for (i, w) in m.weights_mut().iter_mut().enumerate() {
        *w = weights[i % weights.len()];
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn input_gradient_matches_central_differences(
        sizes in prop::collection::vec(1usize..4, 1..4),
        hidden in 1usize..5,
        n_b in 1usize..4,
        blender in 1usize..5,
        act in prop::sample::select(vec![Activation::Tanh, Activation::Sigmoid, Activation::Identity]),
        weights in prop::collection::vec(-1.0f64..1.0, 7..23),
        z_seed in prop::collection::vec(-2.0f64..2.0, 12),
    ) {
        let m = model_from(&sizes, hidden, n_b, blender, act, &weights);
        let z: Vec<f64> = (0..m.n_features()).map(|i| z_seed[i % z_seed.len()]).collect();
        let g = m.input_gradient_standardized(&z).unwrap();
        let h = 1e-4;
        for n in 0..z.len() {
            let mut up = z.clone();
            let mut down = z.clone();
            up[n] += h;
            down[n] -= h;
            let fd = (m.forward_standardized(&up).unwrap() - m.forward_standardized(&down).unwrap()) / (2.0 * h);
            if g[n].abs() > 1e-6 {
                prop_assert!((g[n] - fd).abs() / g[n].abs().max(fd.abs()) < 1e-4, "coord {n}: {} vs {fd}", g[n]);
            }
        }
    }

    #[test]
    fn mi_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 2..200),
        bins in 2usize..16,
        per_variable in any::<bool>(),
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| (x * 1.7 + i as f64).sin()).collect();
        let cfg = MiConfig { bins, range: if per_variable { BinRange::PerVariableMinMax } else { BinRange::JointMinMax } };
        let ab = mutual_information(&a, &b, &cfg).unwrap();
        let ba = mutual_information(&b, &a, &cfg).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0 && ab <= cfg.max_bits());
        let aa = mutual_information(&a, &a, &cfg).unwrap();
        prop_assert!(ab <= aa + 1e-12);
    }

    #[test]
    fn spearman_invariant_under_monotone_maps(
        a in prop::collection::vec(-10.0f64..10.0, 2..30),
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| (x + i as f64 * 0.37).cos()).collect();
        let base = spearman(&a, &b);
        let mapped: Vec<f64> = a.iter().map(|x| (x * scale + shift).exp()).collect();
        match base {
            Ok(r) => {
                let m = spearman(&mapped, &b).unwrap();
                prop_assert!((r - m).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
            Err(_) => prop_assert!(spearman(&mapped, &b).is_err() || a.iter().all(|x| *x == a[0])),
        }
    }

    #[test]
    fn wilcoxon_symmetric_and_in_unit_interval(
        a in prop::collection::vec(-3i32..4, 1..30),
        b in prop::collection::vec(-3i32..4, 1..30),
    ) {
        let n = a.len().min(b.len());
        let a: Vec<f64> = a[..n].iter().map(|&x| x as f64).collect();
        let b: Vec<f64> = b[..n].iter().map(|&x| x as f64 * 0.5).collect();
        let ab = wilcoxon_signed_rank(&a, &b).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a).unwrap();
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
        prop_assert!(bonferroni(ab.p_value, 10) <= 1.0);
    }
}

/// Exact p from enumerating every sign assignment, with ranks doubled to stay integral.
fn enumerated_p(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|&x| x != 0.0).collect();
    let r: Vec<u64> = d
        .iter()
        .map(|x| {
            let lt = d.iter().filter(|y| y.abs() < x.abs()).count() as u64;
            let eq = d.iter().filter(|y| y.abs() == x.abs()).count() as u64;
            2 * lt + eq + 1
        })
        .collect();
    let w: u64 = d.iter().zip(&r).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total = 1u64 << d.len();
    let (mut lo, mut hi) = (0u64, 0u64);
    for mask in 0..total {
        let s: u64 = (0..d.len()).filter(|i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        lo += (s <= w) as u64;
        hi += (s >= w) as u64;
    }
    (2.0 * lo.min(hi) as f64 / total as f64).min(1.0)
}

proptest! {
    #[test]
    fn exact_wilcoxon_matches_enumeration(d in prop::collection::vec(-4i32..5, 1..=10)) {
        let a: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        let zeros = vec![0.0; a.len()];
        let r = wilcoxon_signed_rank(&a, &zeros).unwrap();
        if r.n_nonzero == 0 {
            prop_assert_eq!(r.mode, WilcoxonMode::NoDifferences);
            prop_assert_eq!(r.p_value, 1.0);
        } else {
            prop_assert_eq!(r.mode, WilcoxonMode::Exact);
            prop_assert!((r.p_value - enumerated_p(&a)).abs() < 1e-12);
        }
    }
}

#[test]
fn vargrad_separates_curved_from_irrelevant_feature() {
    // y = x1²: the gradient along x1 changes with x1, the one along x2 does not.
    let n = 600;
    let rows: Vec<f64> = (0..n)
        .flat_map(|i| {
            let x1 = ((i * 37) % 101) as f64 / 25.0 - 2.0;
            let x2 = ((i * 53) % 97) as f64 / 24.0 - 2.0;
            [x1, x2]
        })
        .collect();
    let x = Matrix::from_vec(n, 2, rows);
    let y: Vec<f64> = x.iter_rows().map(|r| r[0] * r[0]).collect();
    let spec = BlockSpec::contiguous(&[1, 1]).unwrap();
    let arch = ArchitectureSpec::with_widths(&spec, OutputHead::LinearRegression, 4, &[16]);
    let model = train(&x, &y, &spec, &arch, &TrainConfig { epochs: 150, seed: 3, ..Default::default() }).unwrap();
    let fi = vargrad(&model, &x, &VarGradConfig { noise_std: 0.3, seed: 1, ..Default::default() }).unwrap();
    assert!(fi.scores[0] > 10.0 * fi.scores[1], "{:?}", fi.scores);
}
