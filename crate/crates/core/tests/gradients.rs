mod common;

use vgs::encoders::EncoderConfig;
use vgs::objectives::ScenarioName;

#[test]
fn scenario_gradients_match_central_differences() {
    let cfg = EncoderConfig::desk();
    for (i, scenario) in ScenarioName::ALL.into_iter().enumerate() {
        let samples = common::gradient_check(&cfg, scenario, 20, 1e-3, 100 + i as u64);
        assert_eq!(samples.len(), 20, "{scenario}: too few smooth coordinates");
        for s in &samples {
            assert!(s.rel_err < 1e-4, "{scenario} {}[{}]: {s:?}", s.name, s.index);
        }
    }
}
