#![no_main]

use libfuzzer_sys::fuzz_target;
use preimage_forge::kernels::Kernel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(kernel) = Kernel::from_csv(text) {
        let back = Kernel::from_csv(&kernel.to_csv()).expect("written kernel parses");
        assert_eq!(back.weights(), kernel.weights());
    }
});
