use qrsr::desk;
use qrsr::qr::{decode, encode, rasterize, CodeConfig, ModuleMatrix};
use qrsr::refine::{mpgd_polish, pgd_refine, repair, Phase, RefineConfig, RefineTrace, StepRule};
use qrsr::srl::srl;
use qrsr::PixelImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> CodeConfig {
    CodeConfig {
        version: 1,
        module_px: 6,
        quiet_px: 6,
        ..CodeConfig::default()
    }
}

fn noisy(y: &ModuleMatrix, cfg: &CodeConfig, seed: u64, amount: f64) -> PixelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = rasterize(y, cfg).to_rgb();
    for v in x.data_mut() {
        *v = (*v * (1.0 - amount) + amount * rng.gen::<f64>()).clamp(0.0, 1.0);
    }
    x
}

fn both_phases(x: &PixelImage, y: &ModuleMatrix, cfg: &RefineConfig) -> (PixelImage, RefineTrace) {
    let (out, mut trace) = pgd_refine(x, y, x, cfg).unwrap();
    if trace.final_error_rate == 0.0 {
        return (out, trace);
    }
    let (out, polish) = mpgd_polish(&out, y, x, cfg).unwrap();
    trace.records.extend(polish.records);
    trace.stops.extend(polish.stops);
    trace.final_error_rate = polish.final_error_rate;
    trace.converged = polish.converged;
    (out, trace)
}

/// With the gates unchanged between iterations the accepted step may not
/// raise the objective.
#[test]
fn backtracking_descends_while_gates_hold() {
    let c = small();
    let y = encode(b"descent", &c).unwrap();
    let mut checked = 0;
    for seed in 0..6 {
        let x = noisy(&y, &c, seed, 0.9);
        let cfg = RefineConfig {
            nudge: 0.0,
            ..Default::default()
        };
        let (_, trace) = both_phases(&x, &y, &cfg);
        for pair in trace.records.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.phase == b.phase && a.gate == b.gate && a.phi_modules == b.phi_modules && a.step > 0.0 {
                assert!(
                    b.objective <= a.objective,
                    "seed {seed}: {} → {}",
                    a.objective,
                    b.objective
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn iterates_stay_in_the_unit_cube() {
    let c = small();
    let y = encode(b"clamp", &c).unwrap();
    let side = c.image_side();
    let inputs = [
        PixelImage::new(side, side, 3, 0.0).unwrap(),
        PixelImage::new(side, side, 3, 1.0).unwrap(),
        rasterize(&y.inverted(), &c).to_rgb(),
    ];
    for x in inputs {
        let x = x.with_grid(c.geometry()).unwrap();
        for step in [StepRule::default(), StepRule::Fixed { gamma: 50.0 }] {
            let cfg = RefineConfig {
                step,
                max_iters: 40,
                polish_iters: 40,
                ..Default::default()
            };
            let (out, _) = both_phases(&x, &y, &cfg);
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn trace_error_rates_are_recomputable() {
    let c = small();
    let y = encode(b"trace", &c).unwrap();
    let x = noisy(&y, &c, 1, 0.8);
    let (out, trace) = both_phases(&x, &y, &RefineConfig::default());
    let first = &trace.records[0];
    let at_start = srl(&x, &y).unwrap();
    assert_eq!(first.error_rate, at_start.error_rate);
    assert_eq!(first.mismatch_count, at_start.mismatch_count);
    assert_eq!(trace.final_error_rate, srl(&out, &y).unwrap().error_rate);
    for r in &trace.records {
        assert_eq!(r.phi_modules.len(), r.mismatch_count);
        assert_eq!(r.error_rate, r.mismatch_count as f64 / y.cells().len() as f64);
    }
    for line in trace.to_jsonl().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("error_rate").is_some());
    }
}

#[test]
fn converged_traces_always_decode() {
    let c = small();
    let y = encode(b"certify", &c).unwrap();
    let mut converged = 0;
    for seed in 0..8 {
        let x = noisy(&y, &c, 100 + seed, 0.95);
        let (out, trace) = both_phases(&x, &y, &RefineConfig::default());
        if trace.converged {
            converged += 1;
            let d = decode(&out, &c).unwrap();
            assert_eq!(d.payload, b"certify");
            assert!(d.report.is_clean());
        }
    }
    assert!(converged > 0);
}

#[test]
fn inverted_version3_code_is_repaired() {
    let c = CodeConfig::default();
    let y = encode(b"Thanks reviewer!", &c).unwrap();
    let x = rasterize(&y.inverted(), &c).to_rgb();
    let (out, trace) = both_phases(&x, &y, &RefineConfig::default());
    assert!(trace.converged, "final error rate {}", trace.final_error_rate);
    assert!(trace.records.iter().any(|r| r.phase == Phase::Guided && r.gate));
    let d = decode(&out, &c).unwrap();
    assert_eq!(d.payload, b"Thanks reviewer!");
}

/// The repaired image keeps the photo's texture instead of collapsing to a
/// binary raster.
#[test]
fn repaired_blend_scans_and_keeps_texture() {
    let c = CodeConfig::default();
    let items = desk::corpus(b"Thanks reviewer!", &c, 1).unwrap();
    let r = repair(&items[0].blend, b"Thanks reviewer!", &c, &RefineConfig::default()).unwrap();
    assert!(r.scannable());
    assert!(r.trace.converged);
    let touched: std::collections::HashSet<u32> = r
        .trace
        .records
        .iter()
        .flat_map(|rec| rec.phi_modules.iter().copied())
        .collect();
    let grid = c.geometry();
    let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
    for k in 0..grid.module_count() {
        if touched.contains(&(k as u32)) {
            continue;
        }
        let (x0, y0) = grid.module_origin(k / grid.modules, k % grid.modules);
        for i in 0..grid.module_px {
            for j in 0..grid.module_px {
                let v = r.image.get(x0 + j, y0 + i, 1);
                n += 1.0;
                sum += v;
                sq += v * v;
            }
        }
    }
    let variance = sq / n - (sum / n).powi(2);
    assert!(variance > 1e-3, "variance {variance}");
}

/// Heavier perceptual weighting never leaves the output further from the
/// input photo.
#[test]
fn perceptual_distance_falls_as_lambda2_grows() {
    let c = small();
    for seed in 0..3 {
        let photo = desk::photo(seed, c.image_side());
        let mut last = f64::INFINITY;
        for lambda2 in [2.0, 3.0, 5.0, 10.0] {
            let cfg = RefineConfig {
                lambda2,
                ..Default::default()
            };
            let r = repair(&photo, b"hi", &c, &cfg).unwrap();
            assert!(r.scannable(), "seed {seed}, λ2 = {lambda2}");
            assert!(!r.trace.gate_never_fired());
            let p = cfg.perceptual.value(&r.image, &photo).unwrap();
            assert!(p <= last, "seed {seed}: λ2 = {lambda2} gave {p} after {last}");
            last = p;
        }
    }
}
