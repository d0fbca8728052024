#![no_main]

use libfuzzer_sys::fuzz_target;
use spacetime::sst::{decode_sst, encode_sst};

fuzz_target!(|data: &[u8]| {
    if let Ok(x) = decode_sst(data) {
        let bytes = encode_sst(&x);
        assert_eq!(decode_sst(&bytes).unwrap(), x);
    }
});
