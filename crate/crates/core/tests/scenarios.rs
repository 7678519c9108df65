use chrono::NaiveDate;
use proptest::prelude::*;

use hems_core::domain::{step_storage, validate_scenario, GridParams, MonthPolicy, PriceSeries, Scenario, StorageParams, TimeGrid};
use hems_core::peak_tariff::TieredPeakSchedule;

/// January with the reference device and tariff, flat 3 kW load.
fn january() -> Scenario {
    let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let grid = TimeGrid::build(start, 31 * 24, 1.0, 24, MonthPolicy::Whole).unwrap();
    let n = grid.periods();
    Scenario {
        grid,
        load: vec![3.0; n],
        prices: PriceSeries {
            tou: vec![0.4; n],
            day_ahead: vec![1.0; n],
            announcement_hour: 13,
        },
        storage: StorageParams::default(),
        grid_params: GridParams::default(),
        peak: TieredPeakSchedule::reference(20.0).unwrap(),
    }
}

#[test]
fn reference_parameters_are_valid() {
    let s = january();
    assert!(validate_scenario(&s).is_empty());
    assert_eq!(s.storage.capacity, 40.0);
    assert_eq!(s.storage.q_init, 20.0);
}

#[test]
fn load_below_minus_c_is_reported() {
    let mut s = january();
    s.load[17] = -25.0;
    let v = validate_scenario(&s);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].period, Some(17));
    assert!(v[0].message.contains("below -C"), "{}", v[0]);
}

#[test]
fn initial_charge_above_capacity_is_reported() {
    let mut s = january();
    s.storage.q_init = 1.5 * s.storage.capacity;
    s.load[0] = f64::NAN;
    let v = validate_scenario(&s);
    // scanning does not stop at the first problem
    assert_eq!(v.len(), 2);
    assert!(v.iter().any(|x| x.message.contains("q_init")));
}

#[test]
fn grid_partition_sums_to_periods() {
    let s = january();
    let total: usize = (0..s.grid.num_months())
        .map(|k| s.grid.month_days(k).iter().map(|d| d.periods.len()).sum::<usize>())
        .sum();
    assert_eq!(total, s.periods());
}

proptest! {
    #[test]
    fn storage_step_is_affine(
        q1 in 0.0..40.0f64, c1 in 0.0..20.0f64, d1 in 0.0..20.0f64,
        q2 in 0.0..40.0f64, c2 in 0.0..20.0f64, d2 in 0.0..20.0f64,
        a in -3.0..3.0f64,
    ) {
        let st = StorageParams::default();
        let f = |q, c, d| step_storage(q, c, d, &st, 1.0);
        let zero = f(0.0, 0.0, 0.0);
        prop_assert_eq!(zero, 0.0);
        let sum = f(q1 + q2, c1 + c2, d1 + d2);
        prop_assert!((sum - (f(q1, c1, d1) + f(q2, c2, d2))).abs() < 1e-9);
        let scaled = f(a * q1, a * c1, a * d1);
        prop_assert!((scaled - a * f(q1, c1, d1)).abs() < 1e-9);
    }
}
