#![no_main]

use eal_core::tensor::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(store) = decode_checkpoint(data) else { return };
    let bytes = encode_checkpoint(&store);
    let again = decode_checkpoint(&bytes).unwrap();
    assert_eq!(again.len(), store.len());
});
