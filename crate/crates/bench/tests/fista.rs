use mvms_bench::fista::{fista_tv, tv, FistaConfig};
use mvms_bench::metrics::psnr;
use mvms_bench::phantom::{make_phantom, PhantomKind, PhantomSpec};
use mvms_tomo::{GeometryConfig, ScanGeometry};
use ndarray::Array2;

fn toy() -> ScanGeometry {
    GeometryConfig::toy_fan_60().build().unwrap()
}

#[test]
fn heavy_regularisation_flattens_a_constant_object() {
    let g = toy();
    let x = Array2::from_elem(g.grid(), 0.5);
    let y = g
        .forward_project(x.view(), &g.sparse_subset(15).unwrap())
        .unwrap();
    let r = fista_tv(&g, &y, &FistaConfig::new(1e3)).unwrap();
    let mean = r.image.mean().unwrap();
    let var = r.image.mapv(|v| (v - mean).powi(2)).mean().unwrap();
    assert!(var < 1e-4, "variance {var}");
    assert!(tv(&r.image) < 0.05 * tv(&g.fbp(&y).unwrap()));
}

#[test]
fn objective_never_increases() {
    let g = toy();
    let x = make_phantom(&PhantomSpec::new(PhantomKind::RandomEllipses, g.grid(), 4)).unwrap();
    let y = g
        .forward_project(x.view(), &g.sparse_subset(15).unwrap())
        .unwrap();
    let r = fista_tv(&g, &y, &FistaConfig::new(0.03)).unwrap();
    assert_eq!(r.objective.len(), 100);
    for w in r.objective.windows(2) {
        assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
    }
    assert!(r.objective[99] < 0.1 * r.objective[0]);
    assert!(r.image.iter().all(|&v| v >= 0.0));
}

#[test]
fn beats_fbp_at_fifteen_of_sixty_views() {
    let g = toy();
    let sub = g.sparse_subset(15).unwrap();
    for seed in 0..3 {
        let x = make_phantom(&PhantomSpec::new(
            PhantomKind::RandomEllipses,
            g.grid(),
            seed,
        ))
        .unwrap();
        let y = g.forward_project(x.view(), &sub).unwrap();
        let fbp = psnr(g.fbp(&y).unwrap().view(), x.view(), 1.0).unwrap();
        let tv = psnr(
            fista_tv(&g, &y, &FistaConfig::new(0.03))
                .unwrap()
                .image
                .view(),
            x.view(),
            1.0,
        )
        .unwrap();
        assert!(tv > fbp, "seed {seed}: {tv} vs {fbp}");
    }
}

#[test]
fn non_positive_weight_is_rejected() {
    let g = toy();
    let y = g
        .forward_project(
            Array2::zeros(g.grid()).view(),
            &g.sparse_subset(15).unwrap(),
        )
        .unwrap();
    for lambda in [0.0, -1.0, f64::NAN] {
        assert!(fista_tv(&g, &y, &FistaConfig::new(lambda)).is_err());
    }
}
