#![no_main]

use bundlecodec::dataio::{decode_latents, encode_latents};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = decode_latents(data) {
        assert_eq!(encode_latents(&records).unwrap(), data);
    }
});
