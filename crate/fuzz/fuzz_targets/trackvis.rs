#![no_main]

use bundlecodec::dataio::parse_trackvis;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_trackvis(data);
});
