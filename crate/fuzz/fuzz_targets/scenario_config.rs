#![no_main]

use dhps::simnet::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = serde_json::from_slice::<Scenario>(data) else { return };
    if s.validate().is_ok() {
        let _ = s.server_config();
    }
    let text = serde_json::to_string(&s).expect("serializable");
    let back: Scenario = serde_json::from_str(&text).expect("round trip");
    assert_eq!(back, s);
});
