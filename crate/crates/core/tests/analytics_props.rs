mod common;

use std::collections::HashMap;
use std::f64::consts::PI;

use admgeo_core::analytics::{
    aggregate_by, combination_table, kde_raster, select_representatives, ssim, GrayImage, GroupKey,
};
use admgeo_core::geo::EARTH_RADIUS_M;
use admgeo_core::synth::{random_expr, ExprContext};
use admgeo_core::{BBox, CancelToken, FrameRef, LatLon, ModelId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn keys() -> [GroupKey; 6] {
    [
        GroupKey::Region,
        GroupKey::Street,
        GroupKey::Weather,
        GroupKey::TimeOfDay,
        GroupKey::StreetType,
        GroupKey::ActualAction,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pooled_accuracy_is_weighted_group_mean(seed in 0u64..10_000, trips in 2usize..12) {
        let d = common::synthetic_dataset(seed, &common::small_spec(trips, 25));
        let all: Vec<u32> = (0..d.index().len() as u32).collect();
        let models = d.store().models().to_vec();
        for key in keys() {
            let groups = aggregate_by(d.frames_with_trips(&all), key, &models);
            prop_assert_eq!(groups.iter().map(|g| g.count).sum::<u64>(), all.len() as u64);
            for m in &models {
                let pooled = d.frames(&all).filter(|f| f.correct[m]).count() as f64 / all.len() as f64;
                let weighted = groups
                    .iter()
                    .map(|g| g.models[m].accuracy.unwrap() * g.count as f64)
                    .sum::<f64>()
                    / all.len() as f64;
                prop_assert!((pooled - weighted).abs() <= 1e-12, "{} vs {}", pooled, weighted);
            }
        }
    }

    #[test]
    fn combination_rows_equal_recount(seed in 0u64..10_000) {
        let d = common::synthetic_dataset(seed, &common::small_spec(8, 30));
        let ctx = ExprContext::from_store(d.store());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let models = d.store().models().to_vec();
        for _ in 0..10 {
            let ids = d.query(&random_expr(&mut rng, &ctx, 3)).unwrap();
            let subset: Vec<ModelId> = models.iter().filter(|_| rng.random_bool(0.7)).cloned().collect();
            let table = combination_table(d.frames(&ids), &subset).unwrap();
            let mut recount: HashMap<Vec<bool>, u64> = HashMap::new();
            for f in d.frames(&ids) {
                *recount.entry(subset.iter().map(|m| f.correct[m]).collect()).or_default() += 1;
            }
            prop_assert_eq!(table.rows.len(), 1 << subset.len());
            prop_assert_eq!(table.rows.iter().map(|r| r.count).sum::<u64>(), ids.len() as u64);
            prop_assert_eq!(table.total, ids.len() as u64);
            for row in &table.rows {
                prop_assert_eq!(row.count, recount.get(&row.pattern).copied().unwrap_or(0));
            }
        }
    }
}

fn kde_box() -> BBox {
    BBox { min_lat: 40.70, min_lon: -74.03, max_lat: 40.75, max_lon: -73.97 }
}

fn interior_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<LatLon> {
    // At least ~1.1 km (7 bandwidths of 150 m) from every edge.
    (0..n)
        .map(|_| LatLon::new(rng.random_range(40.71..40.74), rng.random_range(-74.016..-73.984)))
        .collect()
}

#[test]
fn kde_mass_is_point_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = interior_points(&mut rng, 100);
    let r = kde_raster(&pts, kde_box(), 220, 200, 150.0, &CancelToken::new()).unwrap();
    let mass: f64 = r.values.iter().sum::<f64>() * r.cell_area_m2();
    assert!((mass - 100.0).abs() <= 1.0, "{mass}");
}

#[test]
fn kde_cell_equals_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = interior_points(&mut rng, 25);
    let b = kde_box();
    let r = kde_raster(&pts, b, 60, 50, 150.0, &CancelToken::new()).unwrap();
    let c = b.center();
    let xy = |p: &LatLon| {
        (
            EARTH_RADIUS_M * (p.lon - c.lon).to_radians() * c.lat.to_radians().cos(),
            EARTH_RADIUS_M * (p.lat - c.lat).to_radians(),
        )
    };
    let peak = 1.0 / (2.0 * PI * 150.0 * 150.0);
    for (row, col) in [(10, 10), (25, 30), (40, 55)] {
        let (cx, cy) = xy(&r.cell_center(row, col));
        let direct: f64 = pts
            .iter()
            .map(|p| {
                let (px, py) = xy(p);
                let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                peak * (-d2 / (2.0 * 150.0 * 150.0)).exp()
            })
            .sum();
        // Truncation at six bandwidths drops at most exp(-18) of the peak per point.
        assert!((r.get(row, col) - direct).abs() <= 25.0 * peak * 2e-8, "{row},{col}");
    }
}

#[test]
fn kde_is_translation_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = interior_points(&mut rng, 100);
    let b = kde_box();
    let shift = 0.0137;
    let moved: Vec<LatLon> = pts.iter().map(|p| LatLon::new(p.lat, p.lon + shift)).collect();
    let mb = BBox { min_lon: b.min_lon + shift, max_lon: b.max_lon + shift, ..b };
    let r0 = kde_raster(&pts, b, 120, 100, 150.0, &CancelToken::new()).unwrap();
    let r1 = kde_raster(&moved, mb, 120, 100, 150.0, &CancelToken::new()).unwrap();
    let max = r0.values.iter().cloned().fold(0.0, f64::max);
    for (a, c) in r0.values.iter().zip(&r1.values) {
        assert!((a - c).abs() <= 1e-9 * max, "{a} vs {c}");
    }
}

fn random_image(rng: &mut ChaCha8Rng) -> GrayImage {
    let pixels = (0..32 * 32).map(|_| rng.random_range(0.0f32..=255.0).round()).collect();
    GrayImage::new(32, 32, pixels).unwrap()
}

/// Global SSIM straight from the formula.
fn oracle_ssim(a: &GrayImage, b: &GrayImage) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = (
        a.pixels().iter().map(|&v| f64::from(v)).collect(),
        b.pixels().iter().map(|&v| f64::from(v)).collect(),
    );
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cov = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Farthest-point selection written out plainly.
fn oracle_greedy(images: &[GrayImage], k: usize) -> Vec<usize> {
    let mut selected = vec![0];
    while selected.len() < k.min(images.len()) {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..images.len() {
            if selected.contains(&i) {
                continue;
            }
            let d = selected
                .iter()
                .map(|&s| 1.0 - oracle_ssim(&images[s], &images[i]))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        selected.push(best.unwrap().0);
    }
    selected
}

fn fref(idx: u32) -> FrameRef {
    FrameRef { trip_id: "t".into(), frame_idx: idx }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_identity_and_symmetry(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_image(&mut rng), random_image(&mut rng));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((ab - oracle_ssim(&a, &b)).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn greedy_selection_replays(seed in any::<u64>(), n in 1usize..12, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images: Vec<GrayImage> = (0..n).map(|_| random_image(&mut rng)).collect();
        let cands = images.iter().enumerate().map(|(i, img)| (fref(i as u32), Some(img.clone()))).collect();
        let got = select_representatives(cands, k, 300, &CancelToken::new()).unwrap();
        let want: Vec<FrameRef> = oracle_greedy(&images, k).into_iter().map(|i| fref(i as u32)).collect();
        prop_assert_eq!(got.selected, want);
    }
}

fn cluster_base(c: usize) -> GrayImage {
    match c {
        0 => GrayImage::from_fn(32, 32, |x, _| (x * 8) as f32),
        1 => GrayImage::from_fn(32, 32, |_, y| (y * 8) as f32),
        _ => GrayImage::from_fn(32, 32, |x, y| if (x / 4 + y / 4) % 2 == 0 { 230.0 } else { 20.0 }),
    }
}

fn jitter(img: &GrayImage, rng: &mut ChaCha8Rng) -> GrayImage {
    let pixels = img.pixels().iter().map(|v| (v + rng.random_range(-4.0f32..4.0)).clamp(0.0, 255.0)).collect();
    GrayImage::new(32, 32, pixels).unwrap()
}

#[test]
fn three_clusters_yield_one_representative_each() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut images = Vec::new();
    let mut cluster_of = Vec::new();
    // Interleave clusters so frame order does not give the answer away.
    for i in 0..15 {
        let c = (i * 7) % 3;
        images.push(jitter(&cluster_base(c), &mut rng));
        cluster_of.push(c);
    }
    for i in 0..images.len() {
        for j in 0..i {
            let s = ssim(&images[i], &images[j]).unwrap();
            if cluster_of[i] == cluster_of[j] {
                assert!(s > 0.95, "within {s}");
            } else {
                assert!(s < 0.5, "across {s}");
            }
        }
    }
    let cands = images.iter().enumerate().map(|(i, img)| (fref(i as u32), Some(img.clone()))).collect();
    let got = select_representatives(cands, 3, 300, &CancelToken::new()).unwrap();
    let mut covered: Vec<usize> = got.selected.iter().map(|f| cluster_of[f.frame_idx as usize]).collect();
    covered.sort();
    assert_eq!(covered, vec![0, 1, 2]);
}

#[test]
fn selection_respects_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cands: Vec<_> = (0..350).map(|i| (fref(i), Some(random_image(&mut rng)))).collect();
    let got = select_representatives(cands, 1000, 300, &CancelToken::new()).unwrap();
    assert_eq!(got.selected.len(), 300);
}
