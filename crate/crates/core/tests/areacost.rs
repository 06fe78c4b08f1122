use std::path::Path;

use archsim_core::areacost::{
    area_cost_report, calibrate_against, calibrate_overheads, die_area, die_cost, load_area_params, memory_cost,
    AreaParams, CalibrationReference,
};
use archsim_core::{preset_by_name, MemoryProtocol, PriceTable, WaferParams};

fn shipped(name: &str) -> AreaParams {
    load_area_params(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs/area")
            .join(name),
    )
    .unwrap()
}

#[test]
fn shipped_calibration_closes_on_reference_die() {
    let a100 = preset_by_name("a100").unwrap();
    let p = shipped("a100-calibrated.toml");
    assert_eq!(p.scheduler_width, Some(32));
    let total = die_area(&a100, &p).total();
    assert!((total - 826.0).abs() < 1e-9, "{total}");

    // Refitting from the defaults reproduces the frozen overheads.
    let cal = calibrate_overheads(&a100, &shipped("default.toml"), 826.0, 32, 0.5);
    assert!(cal.diagnostic.is_none());
    assert_eq!(cal.per_lane_overhead_mm2, p.per_lane_overhead_mm2);
    assert_eq!(cal.per_core_overhead_mm2, p.per_core_overhead_mm2);
    let lanes = 108.0 * 4.0 * 32.0;
    assert!((cal.per_lane_overhead_mm2 * lanes + cal.per_core_overhead_mm2 * 108.0 - cal.residual_mm2).abs() < 1e-9);
}

#[test]
fn shipped_defaults_match_code_defaults() {
    assert_eq!(shipped("default.toml"), AreaParams::default());
    assert_eq!(shipped("zero.toml"), AreaParams::zero());
}

#[test]
fn closure_holds_for_any_split_and_reference() {
    let p = AreaParams::default();
    for name in ["a100", "mi210"] {
        let sys = preset_by_name(name).unwrap();
        let base = die_area(&sys, &p).total();
        for reference in [base, base + 1.0, base * 1.7] {
            for fraction in [0.0, 0.25, 0.5, 1.0] {
                let cal = calibrate_overheads(&sys, &p, reference, 16, fraction);
                let fitted = AreaParams {
                    per_lane_overhead_mm2: cal.per_lane_overhead_mm2,
                    per_core_overhead_mm2: cal.per_core_overhead_mm2,
                    scheduler_width: Some(16),
                    ..p.clone()
                };
                let total = die_area(&sys, &fitted).total();
                assert!(
                    (total - reference).abs() < 1e-9 * reference,
                    "{name} {reference} {fraction}: {total}"
                );
            }
        }
    }
}

#[test]
fn too_small_reference_clamps_with_diagnostic() {
    let a100 = preset_by_name("a100").unwrap();
    let cal = calibrate_overheads(&a100, &AreaParams::default(), 10.0, 32, 0.5);
    assert_eq!((cal.per_lane_overhead_mm2, cal.per_core_overhead_mm2), (0.0, 0.0));
    assert!(cal.residual_mm2 < 0.0);
    assert!(cal.diagnostic.unwrap().contains("exceeds"));
}

#[test]
fn multi_reference_calibration_averages() {
    let p = AreaParams::default();
    let refs = [
        CalibrationReference {
            system: preset_by_name("a100").unwrap(),
            reference_total_mm2: 826.0,
            scheduler_width: 32,
        },
        CalibrationReference {
            system: preset_by_name("mi210").unwrap(),
            reference_total_mm2: 700.0,
            scheduler_width: 16,
        },
    ];
    let each: Vec<_> = refs
        .iter()
        .map(|r| calibrate_overheads(&r.system, &p, r.reference_total_mm2, r.scheduler_width, 0.5))
        .collect();
    let avg = calibrate_against(&refs, &p, 0.5).unwrap();
    assert_eq!(
        avg.per_lane_overhead_mm2,
        (each[0].per_lane_overhead_mm2 + each[1].per_lane_overhead_mm2) / 2.0
    );
    assert_eq!(
        avg.per_core_overhead_mm2,
        (each[0].per_core_overhead_mm2 + each[1].per_core_overhead_mm2) / 2.0
    );
    assert!(calibrate_against(&[], &p, 0.5).is_err());
}

#[test]
fn report_totals_are_sums() {
    let sys = preset_by_name("mi210").unwrap();
    let (p, w, prices) = (AreaParams::default(), WaferParams::default(), PriceTable::default());
    let r = area_cost_report(&sys, &p, &w, &prices).unwrap();
    assert_eq!(r.total_mm2, r.breakdown.total());
    assert_eq!(r.die_cost_usd, die_cost(r.total_mm2, &w).unwrap());
    assert_eq!(
        r.memory_cost_usd,
        memory_cost(64.0, MemoryProtocol::Hbm2e, &prices).unwrap()
    );
    assert_eq!(r.memory_cost_usd, 64.0 * 7.0);
    assert_eq!(r.total_cost_usd, r.die_cost_usd + r.memory_cost_usd);
}
