#![no_main]

use libfuzzer_sys::fuzz_target;
use spacetime::image::{decode_ppm, decode_ppm_sequence};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_ppm(data) {
        assert_eq!(decode_ppm(&img.encode_ppm()).unwrap().encode_ppm(), img.encode_ppm());
    }
    let _ = decode_ppm_sequence(data);
});
