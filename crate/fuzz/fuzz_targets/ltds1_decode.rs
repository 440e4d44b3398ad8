#![no_main]

use coral_core::longtail_data::LabeledDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Accepted buffers must re-encode to the same bytes.
    if let Ok(ds) = LabeledDataset::decode(data) {
        assert_eq!(ds.encode(), data);
    }
});
