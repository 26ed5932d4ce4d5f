use std::collections::BTreeSet;

use funnybench::render::{render_scene, RenderConfig};
use funnybench::scenegen::{
    catalog, sample_class_space, PartSlot, Primitive, SceneSpec, BIRD_UNIT,
};

/// Local bird coordinates to pixel coordinates for the identity viewpoint.
fn to_px(p: [f64; 2], res: f64) -> [f64; 2] {
    [
        (0.5 + p[0] * BIRD_UNIT) * res,
        (0.5 + p[1] * BIRD_UNIT) * res,
    ]
}

/// Even-odd scanline fill sampled at pixel centres.
fn scanline_fill(poly: &[[f64; 2]], res: usize) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for j in 0..res {
        let yc = j as f64 + 0.5;
        let mut xs: Vec<f64> = Vec::new();
        for k in 0..poly.len() {
            let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
            if (a[1] <= yc) != (b[1] <= yc) {
                xs.push(a[0] + (yc - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            for i in 0..res {
                let xc = i as f64 + 0.5;
                if xc >= span[0] && xc <= span[1] {
                    out.insert((i, j));
                }
            }
        }
    }
    out
}

#[test]
fn beak_pixels_match_scanline_fill_minus_the_eye() {
    let res = 64;
    let space = sample_class_space(7);
    let class = (0..space.len())
        .find(|&c| space.class(c).variant(PartSlot::Beak) == 0)
        .expect("some class uses beak 0");
    let scene = SceneSpec::canonical(class, 1);
    let (_, map) = render_scene(&space, &scene, &RenderConfig::default());

    let cat = catalog();
    let Primitive::Polygon(beak) = &cat.variant(PartSlot::Beak, 0).primitives[0] else {
        panic!("beak 0 is a polygon");
    };
    let beak_px: Vec<[f64; 2]> = beak.iter().map(|&p| to_px(p, res as f64)).collect();
    let eye = &cat
        .variant(PartSlot::Eye, space.class(class).variant(PartSlot::Eye))
        .primitives[0];
    let Primitive::Ellipse {
        center,
        radii,
        angle_deg,
    } = *eye
    else {
        panic!("eyes are ellipses");
    };
    assert_eq!(angle_deg, 0.0);
    let c = to_px(center, res as f64);
    let r = [
        radii[0] * BIRD_UNIT * res as f64,
        radii[1] * BIRD_UNIT * res as f64,
    ];
    let in_eye = |(i, j): (usize, usize)| {
        let dx = (i as f64 + 0.5 - c[0]) / r[0];
        let dy = (j as f64 + 0.5 - c[1]) / r[1];
        dx * dx + dy * dy <= 1.0
    };

    let want: BTreeSet<(usize, usize)> = scanline_fill(&beak_px, res)
        .into_iter()
        .filter(|&p| !in_eye(p))
        .collect();
    let got: BTreeSet<(usize, usize)> = (0..res * res)
        .filter(|&p| map.labels[p] == PartSlot::Beak.label())
        .map(|p| (p % res, p / res))
        .collect();
    assert!(want.len() > 20);
    assert_eq!(got, want);
}

#[test]
fn removing_a_part_only_touches_its_footprint() {
    let space = sample_class_space(3);
    let cfg = RenderConfig::default();
    for class in [0, 17, 33] {
        let scene = funnybench::scenegen::sample_scene(&space, class, 40 + class as u64);
        let (full, full_map) = render_scene(&space, &scene, &cfg);
        for slot in PartSlot::ALL {
            let mut without = scene.clone();
            without.present_parts = scene.present_parts.without(slot);
            let (img, _) = render_scene(&space, &without, &cfg);
            let fp = funnybench::render::entity_footprint(&space, &scene, &cfg, slot.label());
            let halo =
                funnybench::render::dilate_mask(&fp, 2 * cfg.outline_width as usize + 1).unwrap();
            for p in 0..full.pixels() {
                if !halo.bits[p] {
                    assert_eq!(
                        full.data[p * 3..p * 3 + 3],
                        img.data[p * 3..p * 3 + 3],
                        "{slot} pixel {p}"
                    );
                }
            }
            assert!(full_map.labels.iter().all(|&l| l != slot.label()) || fp.count() > 0);
        }
    }
}
