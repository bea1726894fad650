use qrsr::qr::{decode_warped, encode, rasterize, CodeConfig};
use qrsr::tilt::{simulate_tilt, tilt_homography, TiltSpec};
use qrsr::Error;

/// Rotates the centred plane point about the vertical axis and projects it
/// through a pinhole at distance `f` in front of the plane.
fn pinhole(x: f64, y: f64, side: f64, degrees: f64, focal: f64) -> (f64, f64) {
    let f = focal * side;
    let (px, py) = (x - side / 2.0, y - side / 2.0);
    let theta = degrees.to_radians();
    let (rx, ry, rz) = (px * theta.cos(), py, px * theta.sin());
    (f * rx / (f + rz), f * ry / (f + rz))
}

#[test]
fn corners_at_45_degrees_match_pinhole_projection() {
    let side = 740.0;
    let spec = TiltSpec::new(45.0);
    let (h, width, height) = tilt_homography(740, &spec).unwrap();
    let corners = [(0.0, 0.0), (side, 0.0), (0.0, side), (side, side)];
    let projected: Vec<(f64, f64)> = corners
        .iter()
        .map(|&(x, y)| pinhole(x, y, side, 45.0, spec.focal))
        .collect();
    let min_u = projected.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_u = projected.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let max_v = projected.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    assert_eq!(width, (max_u - min_u).ceil() as usize);
    assert_eq!(height, (2.0 * max_v).ceil() as usize);
    for (&(x, y), &(u, v)) in corners.iter().zip(&projected) {
        let (hu, hv) = h.apply(x, y);
        let (eu, ev) = (u - min_u, v + height as f64 / 2.0);
        assert!(
            (hu - eu).abs() < 1e-9 && (hv - ev).abs() < 1e-9,
            "({x},{y}) → ({hu},{hv}) vs ({eu},{ev})"
        );
    }
    // The near edge (x = 0 with sin > 0 lies closer to the camera) is taller.
    let left = projected[2].1 - projected[0].1;
    let right = projected[3].1 - projected[1].1;
    assert!(left > right);
}

#[test]
fn interior_points_follow_the_same_projection() {
    let side = 740.0;
    for deg in [-60.0, -15.0, 10.0, 30.0, 45.0] {
        let spec = TiltSpec::new(deg);
        let (h, _, height) = tilt_homography(740, &spec).unwrap();
        let (ou, ov) = h.apply(0.0, 0.0);
        let (pu, pv) = pinhole(0.0, 0.0, side, deg, spec.focal);
        for (x, y) in [(100.0, 200.0), (370.0, 370.0), (700.5, 13.25)] {
            let (hu, hv) = h.apply(x, y);
            let (u, v) = pinhole(x, y, side, deg, spec.focal);
            assert!((hu - ou - (u - pu)).abs() < 1e-9, "{deg}° u");
            assert!((hv - ov - (v - pv)).abs() < 1e-9, "{deg}° v");
            assert!((hv - (v + height as f64 / 2.0)).abs() < 1e-9);
        }
    }
}

#[test]
fn clean_rasters_scan_through_moderate_tilts() {
    let cfg = CodeConfig::default();
    for payload in [
        &b"Thanks reviewer!"[..],
        b"",
        b"https://example.org/some/longer/path?q=1",
    ] {
        let raster = rasterize(&encode(payload, &cfg).unwrap(), &cfg);
        for deg in [0.0, 15.0, 30.0, 45.0, -45.0] {
            let t = simulate_tilt(&raster, &TiltSpec::new(deg)).unwrap();
            let d = decode_warped(&t.image, &cfg, &t.unwarp).unwrap();
            assert_eq!(d.payload, payload, "{deg}°");
            assert!(d.report.is_clean(), "{deg}°: {:?}", d.report);
        }
    }
}

#[test]
fn right_angle_tilts_are_rejected() {
    for deg in [90.0, -90.0, 120.0, f64::NAN] {
        assert!(matches!(
            tilt_homography(100, &TiltSpec::new(deg)),
            Err(Error::DegenerateProjection(_))
        ));
    }
}

#[test]
fn zero_tilt_keeps_pixels() {
    let cfg = CodeConfig::default();
    let raster = rasterize(&encode(b"z", &cfg).unwrap(), &cfg);
    let t = simulate_tilt(&raster, &TiltSpec::new(0.0)).unwrap();
    assert_eq!(t.image.data(), raster.data());
}
