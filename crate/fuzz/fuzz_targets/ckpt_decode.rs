#![no_main]

use libfuzzer_sys::fuzz_target;
use spacetime::numerics::{decode_ckpt, encode_ckpt};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_ckpt(data) {
        let bytes = encode_ckpt(&t);
        assert_eq!(encode_ckpt(&decode_ckpt(&bytes).unwrap()), bytes);
    }
});
