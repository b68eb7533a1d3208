//! Property tests over randomly generated inputs.

use std::collections::HashSet;

use proptest::prelude::*;

use neurosteer::balance::{knn_same_class, smote_balance, SmoteConfig};
use neurosteer::convnet::{init_model, Architecture};
use neurosteer::dsp::{baseline_correct, car, fast_ica, reconstruct, welch_psd, VizEpoch, VizEpochSet, WelchParams};
use neurosteer::epoching::{
    extract_epochs, normalize, peak_amplitude, reject_outliers, split_shuffle, Epoch, EpochSet, SplitMode, WindowSpec,
};
use neurosteer::metrics::{class_metrics, confusion};
use neurosteer::montage;
use neurosteer::signal_model::{decode_recording, encode_recording, format_triggers, parse_triggers};
use neurosteer::{Class, Recording, TriggerEvent};

fn class_of(v: u8) -> Class {
    Class::from_u8(v % 3).unwrap()
}

fn epoch(data: Vec<f64>, n_channels: usize, label: Class, trigger_index: u32, window_index: u8) -> Epoch {
    let len = data.len() / n_channels;
    Epoch { data, len, n_channels, label, trigger_index, window_index, synthetic: false }
}

/// Epoch sets with `len = 6`, 2 channels and every class present.
fn epoch_sets(min: usize, max: usize) -> impl Strategy<Value = EpochSet> {
    prop::collection::vec((prop::collection::vec(-50.0f64..50.0, 12), 0u8..3), min..max).prop_map(|rows| {
        let epochs = rows
            .into_iter()
            .enumerate()
            .map(|(i, (data, l))| epoch(data, 2, if i < 3 { class_of(i as u8) } else { class_of(l) }, i as u32, 0))
            .collect();
        EpochSet::new(epochs)
    })
}

fn recordings(max_ch: usize, max_t: usize) -> impl Strategy<Value = Recording> {
    (1..=max_ch, 1..=max_t).prop_flat_map(|(ch, t)| {
        prop::collection::vec(-1e4f32..1e4, ch * t).prop_map(move |v| {
            let names = montage::standard_names()[..ch].to_vec();
            Recording::new(names, 512, v.into_iter().map(f64::from).collect()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eegr_round_trip_is_exact(rec in recordings(8, 200)) {
        let back = decode_recording(&encode_recording(&rec)).unwrap();
        prop_assert_eq!(back, rec);
    }

    #[test]
    fn trigger_csv_round_trip_keeps_order(gaps in prop::collection::vec((1u64..5000, 0u8..3), 1..60)) {
        let mut at = 0;
        let triggers: Vec<TriggerEvent> = gaps
            .iter()
            .map(|&(g, l)| {
                at += g;
                TriggerEvent::new(at, class_of(l))
            })
            .collect();
        let back = parse_triggers(&format_triggers(&triggers)).unwrap();
        prop_assert!(back.windows(2).all(|w| w[0].sample_index < w[1].sample_index));
        prop_assert_eq!(back, triggers);
    }

    #[test]
    fn epoch_labels_follow_triggers(labels in prop::collection::vec(0u8..3, 1..8)) {
        let spec = WindowSpec::default();
        let n = 2000 * labels.len() + 2000;
        let rec = Recording::new(montage::standard_names(), 512, vec![0.5; 64 * n]).unwrap();
        let triggers: Vec<TriggerEvent> =
            labels.iter().enumerate().map(|(i, &l)| TriggerEvent::new(2000 * i as u64, class_of(l))).collect();
        let set = extract_epochs(&rec, &triggers, &spec).unwrap();
        let mut expected = [0usize; 3];
        for t in &triggers {
            expected[t.label.index()] += spec.offsets.len();
        }
        prop_assert_eq!(set.class_counts(), expected);
        prop_assert_eq!(set.len(), triggers.len() * spec.offsets.len());
    }

    #[test]
    fn rejection_fraction_matches_sort_oracle(peaks in prop::collection::hash_set(1u32..1_000_000, 90..400)) {
        let peaks: Vec<f64> = peaks.into_iter().map(|p| p as f64 / 100.0).collect();
        let set = EpochSet::new(
            peaks.iter().enumerate().map(|(i, &p)| epoch(vec![p, -0.5 * p], 1, class_of(i as u8), i as u32, 0)).collect(),
        );
        let (kept, report) = reject_outliers(&set, 10.0, 90.0).unwrap();
        let frac = kept.len() as f64 / set.len() as f64;
        prop_assert!((0.78..=0.82).contains(&frac), "retained {frac}");
        for e in &set.epochs {
            let s = peak_amplitude(e);
            let inside = s >= report.low && s <= report.high;
            prop_assert_eq!(inside, kept.epochs.contains(e));
        }
    }

    #[test]
    fn rejection_ignores_order_and_shrinks_monotonically(set in epoch_sets(20, 120), seed in any::<u64>()) {
        let (kept, _) = reject_outliers(&set, 10.0, 90.0).unwrap();
        let mut shuffled = set.epochs.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let (kept2, _) = reject_outliers(&EpochSet::new(shuffled), 10.0, 90.0).unwrap();
        let ids = |s: &EpochSet| s.epochs.iter().map(|e| e.trigger_index).collect::<HashSet<_>>();
        prop_assert_eq!(ids(&kept), ids(&kept2));
        if kept.len() >= 10 {
            let (again, _) = reject_outliers(&kept, 10.0, 90.0).unwrap();
            prop_assert!(again.len() <= kept.len());
            prop_assert!(set.len() - kept.len() + 3 >= kept.len() - again.len());
        }
    }

    #[test]
    fn normalize_moments_and_idempotence(set in epoch_sets(3, 12)) {
        let once = normalize(&set);
        let twice = normalize(&once);
        for (a, b) in once.epochs.iter().zip(&twice.epochs) {
            let n = a.data.len() as f64;
            let mean = a.data.iter().sum::<f64>() / n;
            let var = a.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grouped_split_is_seeded_and_keeps_groups(n_trig in 4usize..60, seed in any::<u64>()) {
        let epochs = (0..n_trig)
            .flat_map(|t| (0..2u8).map(move |w| epoch(vec![t as f64, w as f64], 1, class_of(t as u8), t as u32, w)))
            .collect();
        let set = EpochSet::new(epochs);
        let (tr, va) = split_shuffle(&set, 0.7, seed, SplitMode::Grouped).unwrap();
        let (tr2, va2) = split_shuffle(&set, 0.7, seed, SplitMode::Grouped).unwrap();
        prop_assert_eq!(&tr, &tr2);
        prop_assert_eq!(&va, &va2);
        prop_assert_eq!(tr.len() + va.len(), set.len());
        let target = (0.7 * set.len() as f64).floor() as usize;
        prop_assert!(tr.len() == target || tr.len() + 1 == target);
        let train_ids: HashSet<u32> = tr.epochs.iter().map(|e| e.trigger_index).collect();
        prop_assert!(va.epochs.iter().all(|e| !train_ids.contains(&e.trigger_index)));
    }

    #[test]
    fn smote_is_balanced_convex_and_seeded(set in epoch_sets(20, 50), k in 1usize..5, seed in any::<u64>()) {
        prop_assume!(set.class_counts().iter().all(|&c| c > k));
        let cfg = SmoteConfig { k_neighbors: k, seed };
        let out = smote_balance(&set, &cfg).unwrap();
        prop_assert_eq!(&out, &smote_balance(&set, &cfg).unwrap());
        let counts = out.class_counts();
        prop_assert!(counts.iter().all(|&c| c == *set.class_counts().iter().max().unwrap()));
        for o in &set.epochs {
            prop_assert_eq!(out.epochs.iter().filter(|e| !e.synthetic && *e == o).count(), 1);
        }
        for s in out.epochs.iter().filter(|e| e.synthetic) {
            let parent = set.epochs.iter().position(|e| e.trigger_index == s.trigger_index).unwrap();
            let nn = knn_same_class(&set, parent, k).unwrap();
            let p = &set.epochs[parent].data;
            let best = nn.iter().map(|&j| {
                let q = &set.epochs[j].data;
                let d2: f64 = p.iter().zip(q).map(|(a, b)| (b - a).powi(2)).sum();
                let u = if d2 > 0.0 {
                    (s.data.iter().zip(p).zip(q).map(|((x, a), b)| (x - a) * (b - a)).sum::<f64>() / d2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                s.data.iter().zip(p).zip(q).map(|((x, a), b)| (x - a - u * (b - a)).abs()).fold(0.0, f64::max)
            }).fold(f64::INFINITY, f64::min);
            prop_assert!(best < 1e-9, "residual {best}");
        }
    }

    #[test]
    fn confusion_ignores_pair_order(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200), seed in any::<u64>()) {
        let (a, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let (a2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(confusion(&a, &p).unwrap(), confusion(&a2, &p2).unwrap());
    }

    #[test]
    fn metric_identities(counts in prop::array::uniform3(prop::array::uniform3(0u64..500))) {
        let cm = neurosteer::metrics::ConfusionMatrix::from_counts(counts);
        prop_assume!(cm.total() > 0);
        let m = class_metrics(&cm).unwrap();
        let weighted: f64 = (0..3).map(|c| m.recall[c] * cm.row_sum(c) as f64).sum::<f64>() / cm.total() as f64;
        prop_assert!((weighted - m.accuracy).abs() < 1e-12);
        for c in 0..3 {
            let (p, r, f) = (m.precision[c], m.recall[c], m.f1[c]);
            if p + r > 0.0 {
                prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
            }
            for v in [p, r, f] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn car_is_idempotent_and_pure(rec in recordings(6, 64)) {
        prop_assume!(rec.n_channels() >= 2);
        let copy = rec.clone();
        let once = car(&rec).unwrap();
        let twice = car(&once).unwrap();
        prop_assert_eq!(&rec, &copy);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        for t in 0..once.n_samples() {
            let mean: f64 = (0..once.n_channels()).map(|c| once.get(c, t)).sum::<f64>() / once.n_channels() as f64;
            prop_assert!(mean.abs() < 1e-8);
        }
    }

    #[test]
    fn baseline_correction_is_idempotent(values in prop::collection::vec(-100.0f64..100.0, 2 * 40)) {
        let set = VizEpochSet {
            channels: vec!["Cz".into(), "Pz".into()],
            fs: 100,
            prestim: 20,
            len: 40,
            epochs: vec![VizEpoch { label: Class::Left, trigger_index: 0, data: values }],
        };
        let copy = set.clone();
        let once = baseline_correct(&set, 200.0).unwrap();
        let twice = baseline_correct(&once, 200.0).unwrap();
        prop_assert_eq!(&set, &copy);
        for c in 0..2 {
            let pre = &once.channel(&once.epochs[0], c)[..20];
            prop_assert!((pre.iter().sum::<f64>() / 20.0).abs() < 1e-12);
        }
        for (a, b) in once.epochs[0].data.iter().zip(&twice.epochs[0].data) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn welch_is_quadratically_homogeneous(x in prop::collection::vec(-10.0f64..10.0, 2048..3000), c in 0.01f64..100.0) {
        let p = welch_psd(&x, 512.0, WelchParams::default()).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        let q = welch_psd(&scaled, 512.0, WelchParams::default()).unwrap();
        for (a, b) in p.power.iter().zip(&q.power) {
            prop_assert!((b - c * c * a).abs() <= 1e-9 * (c * c * a).abs().max(1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let model = init_model(Architecture::small(), seed).unwrap();
        let n = Architecture::small().input_size();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| scale * rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let (_, probs) = model.predict(&x).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ica_full_reconstruction_matches_projection(seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let n = 2000;
        let names = montage::standard_names()[..6].to_vec();
        let data: Vec<f64> = (0..6 * n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let rec = Recording::new(names, 512, data).unwrap();
        let copy = rec.clone();
        let ica = fast_ica(&rec, 3, seed).unwrap();
        let back = reconstruct(&ica, &rec, &[true; 3]).unwrap();
        prop_assert_eq!(&rec, &copy);
        // projection onto the retained subspace: mean + A·W·(x − mean)
        let mut x = nalgebra::DMatrix::from_fn(6, n, |c, t| rec.get(c, t) - ica.mean[c]);
        x = &ica.mixing * (&ica.unmixing * x);
        for c in 0..6 {
            for t in 0..n {
                prop_assert!((back.get(c, t) - (x[(c, t)] + ica.mean[c])).abs() < 1e-6);
            }
        }
    }
}
