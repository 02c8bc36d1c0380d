#![no_main]

use libfuzzer_sys::fuzz_target;
use preimage_forge::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::from_json(text) {
        let printed = config.to_json();
        assert_eq!(RunConfig::from_json(&printed).expect("printed config parses"), config);
    }
});
