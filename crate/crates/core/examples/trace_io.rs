//! Write a trace bundle to disk, inspect its header and read it back.
//!
//! cargo run --example trace_io

use archfuzz::engine::{run_training_step, Backend};
use archfuzz::fuzz::{generate_models, GenerationConfig};
use archfuzz::trace::{decode, encode, read_trace, write_trace, MAGIC};

fn main() {
    let cfg = GenerationConfig { n_models: 1, max_vertices: 6, seed: 11, ..Default::default() };
    let spec = generate_models(&cfg).unwrap().specs.remove(0);
    let trace = run_training_step(&spec, Backend::REORDERED).into_trace(&spec);

    let bytes = encode(&trace).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    println!("{} bytes, format version {version}, manifest {manifest_len} bytes", bytes.len());
    println!("{}", String::from_utf8_lossy(&bytes[20..20 + manifest_len.min(400)]));

    let path = std::env::temp_dir().join("archfuzz-example").join("reordered.trace");
    write_trace(&trace, &path).unwrap();
    let back = read_trace(&path).unwrap();
    println!("round trip bit-identical: {}", back.bitwise_eq(&trace));

    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 3);
    println!("truncated file: {}", decode(&truncated).unwrap_err());
}
