use proptest::prelude::*;

use wavepolyp::contrast::{contrast_index, BinaryMask};
use wavepolyp::data::{dice, iou, synth_generate, synth_sample, Split, SplitSpec, SynthConfig, AREA_RANGE, ChromaMode};
use wavepolyp::tensor::{Tape, Tensor};
use wavepolyp::wavelet::{dwt2, idwt2, wavedec2, waverec2, Matrix2D};

fn matrix(max_half: usize) -> impl Strategy<Value = Matrix2D> {
    (1..=max_half, 1..=max_half).prop_flat_map(|(hr, hc)| {
        prop::collection::vec(-10.0f64..10.0, 4 * hr * hc)
            .prop_map(move |v| Matrix2D::new(2 * hr, 2 * hc, v).unwrap())
    })
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(0u8..=1, h * w),
            prop::collection::vec(0u8..=1, h * w),
        )
            .prop_map(move |(a, b)| (BinaryMask::new(h, w, a).unwrap(), BinaryMask::new(h, w, b).unwrap()))
    })
}

fn chroma() -> impl Strategy<Value = ChromaMode> {
    prop_oneof![Just(ChromaMode::Achromatic), Just(ChromaMode::Matched), Just(ChromaMode::Opposed)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haar_reconstructs_and_conserves_energy(x in matrix(12)) {
        let s = dwt2(&x).unwrap();
        prop_assert!(idwt2(&s).unwrap().max_abs_diff(&x) <= 1e-12);
        let e = s.ll.energy() + s.hl.energy() + s.lh.energy() + s.hh.energy();
        prop_assert!((e - x.energy()).abs() <= 1e-9 * x.energy().max(1.0));
    }

    #[test]
    fn multilevel_reconstruction(levels in 1usize..4, seed in any::<u64>()) {
        let n = 8 << levels;
        let mut rng = wavepolyp::rng::SplitMix64::new(seed);
        let x = Matrix2D::from_fn(n, n / 2, |_, _| rng.uniform(-1.0, 1.0));
        let p = wavedec2(&x, levels).unwrap();
        prop_assert_eq!(p.levels(), levels);
        prop_assert!(waverec2(&p).unwrap().max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn tensor_haar_matches_matrix_haar(x in matrix(6)) {
        let (r, c) = x.dims();
        let mut tape = Tape::inference();
        let v = tape.constant(Tensor::new(&[1, 1, r, c], x.as_slice().to_vec()).unwrap());
        let y = tape.haar_dwt(v).unwrap();
        let s = dwt2(&x).unwrap();
        let n = (r / 2) * (c / 2);
        let got = tape.value(y).data();
        for (i, band) in [&s.ll, &s.hl, &s.lh, &s.hh].into_iter().enumerate() {
            prop_assert_eq!(&got[i * n..(i + 1) * n], band.as_slice());
        }
        let back = tape.haar_idwt(y).unwrap();
        prop_assert!(tape.value(back).data().iter().zip(x.as_slice()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn window_partition_round_trips(n in 1usize..3, c in 1usize..4, hw in 1usize..4, ww in 1usize..4, win in 1usize..4, seed in any::<u64>()) {
        let (h, w) = (hw * win, ww * win);
        let mut rng = wavepolyp::rng::SplitMix64::new(seed);
        let t = Tensor::from_fn(&[n, c, h, w], |_| rng.next_f64());
        let mut tape = Tape::inference();
        let x = tape.constant(t.clone());
        let p = tape.window_partition(x, win).unwrap();
        prop_assert_eq!(tape.value(p).shape(), &[n * hw * ww, win * win, c][..]);
        let m = tape.window_merge(p, n, h, w, win).unwrap();
        prop_assert_eq!(tape.value(m), &t);
    }

    #[test]
    fn contrast_index_range_and_label_symmetry(x in matrix(8), seed in any::<u64>()) {
        let (r, c) = x.dims();
        let mut rng = wavepolyp::rng::SplitMix64::new(seed);
        let mask = BinaryMask::from_fn(r, c, |_, _| rng.next_f64() < 0.5);
        prop_assume!(mask.is_mixed());
        let ci = contrast_index(&x, &mask, 1e-8).unwrap();
        prop_assert!((0.0..1.0).contains(&ci));
        prop_assert_eq!(contrast_index(&x, &mask.inverted(), 1e-8).unwrap(), ci);
        prop_assert!((contrast_index(&x.scaled(3.0), &mask, 1e-8).unwrap() - ci).abs() < 1e-8);
    }

    #[test]
    fn dice_dominates_iou((a, b) in mask_pair()) {
        let d = dice(&a, &b).unwrap();
        let j = iou(&a, &b).unwrap();
        prop_assert!(d >= j);
        prop_assert_eq!(d == j, d == 0.0 || d == 1.0);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-12);
        prop_assert_eq!(d, dice(&b, &a).unwrap());
    }

    #[test]
    fn splits_are_disjoint_exhaustive_and_deterministic(n in 0usize..300, seed in any::<u64>(), val in 0.0f64..0.5, test in 0.0f64..0.5) {
        let spec = SplitSpec { seed, val, test };
        let a = spec.assign(n).unwrap();
        prop_assert_eq!(&a, &spec.assign(n).unwrap());
        prop_assert_eq!(a.len(), n);
        let count = |s| a.iter().filter(|&&x| x == s).count();
        prop_assert_eq!(count(Split::Val), (n as f64 * val).floor() as usize);
        prop_assert_eq!(count(Split::Test), (n as f64 * test).floor() as usize);
        prop_assert_eq!(count(Split::Train) + count(Split::Val) + count(Split::Test), n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_masks_stay_in_area_range(seed in any::<u64>(), index in 0usize..1000, mode in chroma(), delta in 0.01f64..0.4) {
        let cfg = SynthConfig { seed, count: 1, size: 32, luma_delta: delta, chroma_mode: mode, ..SynthConfig::default() };
        let s = synth_sample(&cfg, index).unwrap();
        let f = s.mask.fraction();
        prop_assert!((AREA_RANGE.0..=AREA_RANGE.1).contains(&f), "fraction {}", f);
        prop_assert!(s.image.planes().iter().all(|p| p.as_slice().iter().all(|v| (0.0..=1.0).contains(v))));
        prop_assert_eq!(s, synth_sample(&cfg, index).unwrap());
    }

    #[test]
    fn corpus_is_a_pure_function_of_its_config(seed in any::<u64>(), count in 1usize..5) {
        let cfg = SynthConfig { seed, count, size: 32, ..SynthConfig::default() };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.samples.iter().all(|s| s.mask.is_mixed()));
    }
}
