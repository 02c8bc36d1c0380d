#![no_main]

use libfuzzer_sys::fuzz_target;
use preimage_forge::grid::{decode_ppm_bytes, encode_ppm_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(image) = decode_ppm_bytes(data) {
        // Anything that decodes re-encodes to a file that decodes to the same image.
        let bytes = encode_ppm_bytes(&image).expect("decoded image encodes");
        assert_eq!(decode_ppm_bytes(&bytes).expect("re-encoded image decodes"), image);
    }
});
