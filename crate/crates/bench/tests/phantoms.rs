use mvms_bench::phantom::{
    make_phantom, random_ellipses, shepp_logan_ellipses, EllipseRanges, PhantomKind, PhantomSpec,
};
use proptest::prelude::*;

/// Half-height of the axis-aligned box around a rotated ellipse.
fn y_extent(a: f64, b: f64, phi: f64) -> f64 {
    ((a * phi.sin()).powi(2) + (b * phi.cos()).powi(2)).sqrt()
}

#[test]
fn shepp_logan_mirror_symmetric_away_from_off_axis_ellipses() {
    // ellipses centred on the vertical axis and unrotated are mirror
    // symmetric on their own; rows none of the others touch must be too
    let off_axis: Vec<(f64, f64)> = shepp_logan_ellipses()
        .into_iter()
        .filter(|e| e.x0 != 0.0 || e.phi != 0.0)
        .map(|e| {
            let h = y_extent(e.a, e.b, e.phi);
            (e.y0 - h, e.y0 + h)
        })
        .collect();
    assert_eq!(off_axis.len(), 4);

    let m = 128;
    let mut spec = PhantomSpec::new(PhantomKind::SheppLogan, (m, m), 0);
    spec.supersample = 1;
    let img = make_phantom(&spec).unwrap();
    let mut checked = 0;
    for i in 0..m {
        let y = 1.0 - (2 * i + 1) as f64 / m as f64;
        let half = 1.0 / m as f64;
        if off_axis
            .iter()
            .any(|&(lo, hi)| y + half >= lo && y - half <= hi)
        {
            continue;
        }
        checked += 1;
        for j in 0..m / 2 {
            assert_eq!(img[[i, j]], img[[i, m - 1 - j]], "row {i} col {j}");
        }
    }
    assert!(checked > m / 3, "only {checked} rows checked");
}

#[test]
fn shepp_logan_is_asymmetric_where_the_table_is() {
    let mut spec = PhantomSpec::new(PhantomKind::SheppLogan, (128, 128), 0);
    spec.supersample = 1;
    let img = make_phantom(&spec).unwrap();
    let mirrored = img.slice(ndarray::s![.., ..;-1]);
    assert!((&img - &mirrored).iter().any(|&d| d != 0.0));
}

#[test]
fn random_ellipses_respect_ranges() {
    let r = EllipseRanges::default();
    for seed in 0..20 {
        let e = random_ellipses(&r, seed);
        assert!(e.len() > r.count.0 && e.len() <= 1 + r.count.1);
        for inner in &e[1..] {
            assert!(inner.x0.hypot(inner.y0) <= r.centre_radius + 1e-12);
            assert!((r.axis.0..r.axis.1).contains(&inner.a));
            assert!((r.value.0..r.value.1).contains(&inner.value));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phantoms_lie_in_unit_interval(seed in any::<u64>(), m in 4usize..40, n in 4usize..40) {
        let img = make_phantom(&PhantomSpec::new(PhantomKind::RandomEllipses, (m, n), seed)).unwrap();
        prop_assert_eq!(img.dim(), (m, n));
        prop_assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let again = make_phantom(&PhantomSpec::new(PhantomKind::RandomEllipses, (m, n), seed)).unwrap();
        prop_assert_eq!(img, again);
    }

    #[test]
    fn disk_lies_in_unit_interval(radius in 0.0f64..1.5, m in 1usize..30) {
        let mut spec = PhantomSpec::new(PhantomKind::Disk, (m, m), 0);
        spec.radius = radius;
        let img = make_phantom(&spec).unwrap();
        prop_assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
