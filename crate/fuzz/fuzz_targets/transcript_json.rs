#![no_main]

use dhps::server::Transcript;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(t) = serde_json::from_slice::<Transcript>(data) else { return };
    let first = serde_json::to_value(&t).expect("serializable");
    let back: Transcript = serde_json::from_value(first.clone()).expect("round trip");
    assert_eq!(serde_json::to_value(&back).unwrap(), first);
});
