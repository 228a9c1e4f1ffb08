use proptest::prelude::*;
use serde_json::{json, Map};

use stcl::datagen::augment::{reverse_slices, rotate90, Augmentation, Plane};
use stcl::format::{decode, encode, Payload};
use stcl::metrics::{self, Summary};
use stcl::tensor::{conv2d, ConvKernel, FeatureMap};
use stcl::volume::Volume;

fn mask_pair(n: usize) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
}

fn small_volume() -> impl Strategy<Value = Volume> {
    (1usize..6, 1usize..6, 1usize..6, 1usize..3).prop_flat_map(|(d, h, w, c)| {
        prop::collection::vec(-10.0f32..10.0, d * h * w * c)
            .prop_map(move |data| Volume::from_data(d, h, w, c, data).unwrap())
    })
}

fn augmentation() -> impl Strategy<Value = Augmentation> {
    (0usize..3, 0u8..4, any::<bool>(), -2i32..=2, -2i32..=2).prop_map(|(p, q, r, dy, dx)| Augmentation {
        plane: Plane::ALL[p],
        quarter_turns: q,
        reversed: r,
        shift: (dy, dx),
    })
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded((a, b) in mask_pair(64)) {
        match (metrics::dice(&a, &b), metrics::dice(&b, &a)) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x, y);
                prop_assert!((0.0..=1.0).contains(&x));
                prop_assert_eq!(x == 1.0, a == b);
            }
            (Err(_), Err(_)) => prop_assert!(a.iter().chain(&b).all(|v| !v)),
            _ => prop_assert!(false, "dice definedness is asymmetric"),
        }
    }

    #[test]
    fn metrics_ignore_voxel_order((a, b) in mask_pair(48), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..a.len()).collect();
        let mut state = seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let pa: Vec<bool> = order.iter().map(|&i| a[i]).collect();
        let pb: Vec<bool> = order.iter().map(|&i| b[i]).collect();
        prop_assert_eq!(metrics::dice(&a, &b).ok(), metrics::dice(&pa, &pb).ok());
        prop_assert_eq!(metrics::rvd(&a, &b).ok(), metrics::rvd(&pa, &pb).ok());
    }

    #[test]
    fn intensity_metrics_only_see_overlap(
        (a, b) in mask_pair(40),
        values in prop::collection::vec(1.0f64..255.0, 160),
        noise in prop::collection::vec(1.0f64..255.0, 40),
    ) {
        let (pi, gi) = (&values[..40], &values[40..80]);
        let (pc, gc) = (&values[80..120], &values[120..]);
        let outside = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(&noise).enumerate().map(|(i, (&x, &n))| if a[i] && b[i] { x } else { n }).collect()
        };
        let r1 = metrics::icvf_rmse(pi, gi, &a, &b).map(|r| r.value).ok();
        let r2 = metrics::icvf_rmse(&outside(pi), &outside(gi), &a, &b).map(|r| r.value).ok();
        prop_assert_eq!(r1, r2);
        let h1 = metrics::diff_hu(pc, gc, &a, &b).ok();
        let h2 = metrics::diff_hu(&outside(pc), &outside(gc), &a, &b).ok();
        prop_assert_eq!(h1, h2);
    }

    #[test]
    fn summary_brackets_its_mean(xs in prop::collection::vec(-100.0f64..100.0, 1..20)) {
        let s = Summary::of(&xs).unwrap();
        prop_assert!(s.min <= s.mean + 1e-12 && s.mean <= s.max + 1e-12);
        prop_assert!(s.std >= 0.0);
    }

    #[test]
    fn four_quarter_turns_are_the_identity(v in small_volume()) {
        let mut r = v.clone();
        for _ in 0..4 {
            r = rotate90(&r, 1);
        }
        prop_assert_eq!(&r, &v);
        prop_assert_eq!(&reverse_slices(&reverse_slices(&v)), &v);
    }

    #[test]
    fn shift_free_augmentations_permute_voxels(v in small_volume(), mut aug in augmentation()) {
        aug.shift = (0, 0);
        let out = aug.apply(&v);
        let mut a: Vec<u32> = v.data.iter().map(|x| x.to_bits()).collect();
        let mut b: Vec<u32> = out.data.iter().map(|x| x.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn windowed_augmentation_matches_full(v in small_volume(), aug in augmentation(), a in 0usize..6, b in 0usize..6) {
        let full = aug.apply(&v);
        let (start, end) = (a.min(b) % full.slices, a.max(b) % full.slices);
        let (start, count) = (start.min(end), start.max(end) - start.min(end) + 1);
        let win = aug.apply_window(&v, start, count);
        let per = full.rows * full.cols * full.channels;
        prop_assert_eq!(&win.data[..], &full.data[start * per..(start + count) * per]);
    }

    #[test]
    fn containers_round_trip_bit_exactly(
        bits in prop::collection::vec(any::<u32>(), 1..64),
        tag in "[a-z]{0,8}",
    ) {
        let mut meta = Map::new();
        meta.insert("tag".into(), json!(tag));
        let payload = Payload::F32(bits.iter().map(|&b| f32::from_bits(b)).collect());
        let bytes = encode(&meta, &[bits.len()], &payload).unwrap();
        let back = decode(&bytes).unwrap();
        let Payload::F32(values) = back.payload else { panic!("dtype changed") };
        prop_assert_eq!(values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bits);
        prop_assert_eq!(back.meta.get("tag"), Some(&json!(tag)));
        prop_assert_eq!(back.dims, vec![values.len()]);
    }

    #[test]
    fn convolution_is_affine(
        h in 1usize..9, w in 1usize..9, ci in 1usize..4, co in 1usize..4, stride in 1usize..3, seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = ConvKernel::uniform(3, 3, ci, co, stride, &mut rng).unwrap();
        let mut map = || FeatureMap::new(h, w, ci, (0..h * w * ci).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (x, y) = (map(), map());
        let sum = FeatureMap::new(h, w, ci, x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect()).unwrap();
        let zero = conv2d(&FeatureMap::zeros(h, w, ci), &k).unwrap();
        let (cx, cy, cs) = (conv2d(&x, &k).unwrap(), conv2d(&y, &k).unwrap(), conv2d(&sum, &k).unwrap());
        for i in 0..cs.data().len() {
            let expect = cx.data()[i] + cy.data()[i] - zero.data()[i];
            prop_assert!((cs.data()[i] - expect).abs() < 1e-12);
        }
    }
}
