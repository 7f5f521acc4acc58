#![no_main]

use bundlecodec::dataio::BndDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = BndDataset::from_bytes(data) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(ds.to_bytes().unwrap(), data);
    }
});
