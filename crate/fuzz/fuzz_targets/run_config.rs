//! Run configurations: an accepted config always yields a valid plan and
//! reparses from its own serialization.

#![no_main]

use alterwave::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_json_str(text) else {
        return;
    };
    let plan = cfg.plan().expect("accepted config has a plan");
    plan.validate().expect("plan of an accepted config validates");
    let again = serde_json::to_string(&cfg).unwrap();
    let back = RunConfig::from_json_str(&again).expect("serialized config reparses");
    assert_eq!(back, cfg);
});
