use std::path::Path;

use ndtslam::PipelineConfig;
use proptest::prelude::*;

fn parse(text: &str) -> PipelineConfig {
    PipelineConfig::parse(text, Path::new("test.txt")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn echo_round_trips(
        class in prop::sample::select(vec!["sparse", "sub-urban", "dense-urban"]),
        traffic in prop::sample::select(vec!["normal", "dense"]),
        seed in any::<u64>(),
        c in (1e-6f64..10.0, 1e-6f64..10.0, 1e-6f64..10.0, 1e-6f64..10.0),
        cell in 0.2f64..4.0,
        levels in 1usize..5,
        speed in 0.0f64..20.0,
        timing in prop::sample::select(vec!["wall", "deterministic"]),
        std_mode in prop::sample::select(vec!["population", "sample"]),
    ) {
        let text = format!(
            "scenario.urbanization = {class}\nscenario.traffic = {traffic}\nscenario.seed = {seed}\n\
             uncertainty.c_t = {}\nuncertainty.c_n = {}\nuncertainty.c_p = {}\nuncertainty.c_r = {}\n\
             registration.cell_size = {cell}\nregistration.levels = {levels}\nscenario.speed = {speed}\n\
             registration.timing = {timing}\neval.std = {std_mode}\n",
            c.0, c.1, c.2, c.3
        );
        let cfg = parse(&text);
        let echoed = cfg.to_text();
        prop_assert_eq!(&parse(&echoed), &cfg);
        prop_assert_eq!(parse(&echoed).to_text(), echoed);
    }
}

#[test]
fn preset_keys_set_the_scenario() {
    let cfg = parse("scenario.urbanization = dense-urban\nscenario.traffic = dense\n");
    assert_eq!(cfg.scenario.building_height_min, 50.0);
    assert_eq!(cfg.scenario.vehicle_count, 10);
}

#[test]
fn bad_values_name_key_and_line() {
    let e = PipelineConfig::parse("\nregistration.levels = 0\n", Path::new("x.txt")).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("registration.levels"), "{msg}");
    let e = PipelineConfig::parse("uncertainty.c_t = abc\n", Path::new("x.txt")).unwrap_err();
    assert!(e.to_string().contains("x.txt:1"), "{e}");
}
