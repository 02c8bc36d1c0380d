#![no_main]

use libfuzzer_sys::fuzz_target;
use preimage_forge::cnn::{load_model_bytes, save_model_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = load_model_bytes(data) {
        let bytes = save_model_bytes(&net);
        let again = load_model_bytes(&bytes).expect("saved model loads");
        assert_eq!(save_model_bytes(&again), bytes);
    }
});
