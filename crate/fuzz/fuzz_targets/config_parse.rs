#![no_main]

use libfuzzer_sys::fuzz_target;
use spacetime::config::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Config::parse(text) {
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        let _ = spacetime::pipeline::PipelineConfig::from_config(&c);
    }
});
