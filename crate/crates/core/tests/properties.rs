use aaaseg::anmetrics::{dice, evaluate_case, jaccard, max_axial_diameter};
use aaaseg::postseg::{label_components, largest_component, otsu_threshold};
use aaaseg::prep::{resample_nearest, resample_trilinear, window_level};
use aaaseg::volcore::{foreground_count, BinaryMask3D, Geometry, Volume3D};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = BinaryMask3D> {
    (1usize..7, 1usize..7, 1usize..5).prop_flat_map(|(x, y, z)| {
        prop::collection::vec(any::<bool>(), x * y * z)
            .prop_map(move |data| BinaryMask3D::new(Geometry::with_dims([x, y, z]).unwrap(), data).unwrap())
    })
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask3D, BinaryMask3D)> {
    mask_strategy().prop_flat_map(|a| {
        let g = *a.geometry();
        prop::collection::vec(any::<bool>(), g.len())
            .prop_map(move |data| (a.clone(), BinaryMask3D::new(g, data).unwrap()))
    })
}

proptest! {
    #[test]
    fn overlap_scores_are_bounded_and_symmetric((a, b) in mask_pair()) {
        let (d, j) = (dice(&a, &b).unwrap(), jaccard(&a, &b).unwrap());
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
        prop_assert!(j <= d + 1e-12);
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn components_partition_the_foreground(m in mask_strategy()) {
        let lab = label_components(&m);
        prop_assert_eq!(lab.sizes.len(), lab.count);
        prop_assert_eq!(lab.sizes.iter().sum::<usize>(), foreground_count(&m));
        for (l, &on) in lab.labels.iter().zip(m.data()) {
            prop_assert_eq!(*l > 0, on);
        }
        let big = largest_component(&m);
        prop_assert_eq!(foreground_count(&big), lab.sizes.iter().copied().max().unwrap_or(0));
        prop_assert!(big.data().iter().zip(m.data()).all(|(b, o)| !*b || *o));
    }

    #[test]
    fn resampling_to_own_dims_is_identity(m in mask_strategy()) {
        prop_assert_eq!(resample_nearest(&m, m.dims()).unwrap(), m.clone());
        let v = Volume3D::from_fn(*m.geometry(), |x, y, z| (x * 7 + y * 3 + z) as f32);
        prop_assert_eq!(resample_trilinear(&v, v.dims()).unwrap(), v);
    }

    #[test]
    fn windowing_stays_in_range(vals in prop::collection::vec(-2000.0f32..3000.0, 1..64)) {
        let n = vals.len();
        let v = Volume3D::new(Geometry::with_dims([n, 1, 1]).unwrap(), vals).unwrap();
        let w = window_level(&v, 40.0, 400.0).unwrap();
        prop_assert!(w.data().iter().all(|x| (0.0..=255.0).contains(x)));
    }
}

#[test]
fn disk_diameter_matches_its_extent() {
    let g = Geometry::new([41, 41, 3], [0.5, 0.5, 2.0], [0.0; 3]).unwrap();
    let m = BinaryMask3D::from_fn(g, |x, y, z| {
        let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
        z == 1 && dx * dx + dy * dy <= 100.0
    });
    let d = max_axial_diameter(&m);
    // voxel centres on a radius-10 disk: the extreme centres are 20 voxels apart
    assert!((d.max_diameter_mm - 10.0).abs() < 1e-9, "{}", d.max_diameter_mm);
    assert_eq!(d.slice_index, Some(1));
    assert_eq!(d.profile_mm[0], 0.0);
}

#[test]
fn evaluation_of_a_mask_against_itself_is_perfect() {
    let g = Geometry::new([12, 10, 6], [0.8, 0.8, 1.5], [0.0; 3]).unwrap();
    let m = BinaryMask3D::from_fn(g, |x, y, z| (2..9).contains(&x) && (3..8).contains(&y) && z > 0);
    let r = evaluate_case(&m, &m).unwrap();
    assert_eq!((r.dice, r.jaccard, r.diameter_abs_err_mm), (1.0, 1.0, 0.0));
    assert_eq!(r.rel_vol_diff, Some(0.0));
    assert_eq!(r.slice_deviation, Some(0));
    assert!((r.volume_mm3 - 7.0 * 5.0 * 5.0 * 0.8 * 0.8 * 1.5).abs() < 1e-9);

    let empty = BinaryMask3D::empty(g);
    let r = evaluate_case(&empty, &empty).unwrap();
    assert!(r.both_empty && r.dice == 1.0);
    assert_eq!(r.rel_vol_diff, None);
}

#[test]
fn otsu_separates_two_clusters() {
    let vals: Vec<f32> = (0..200).map(|i| if i % 2 == 0 { 0.1 } else { 0.9 }).collect();
    let v = Volume3D::new(Geometry::with_dims([200, 1, 1]).unwrap(), vals).unwrap();
    let t = otsu_threshold(&v).unwrap();
    assert!(t > 0.1 && t <= 0.9, "{t}");
}
