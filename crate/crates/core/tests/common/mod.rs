#![allow(dead_code)]

use admgeo_core::ingest::ingest_trips;
use admgeo_core::synth::{generate_synthetic, SynthSpec};
use admgeo_core::{Config, Dataset, Store};

pub fn small_spec(n_trips: usize, frames_per_trip: usize) -> SynthSpec {
    SynthSpec {
        n_trips,
        frames_per_trip,
        images: None,
        ..SynthSpec::default()
    }
}

/// In-memory store holding a generated dataset.
pub fn synthetic_store(seed: u64, spec: &SynthSpec) -> Store {
    let data = generate_synthetic(seed, spec).unwrap();
    let mut store = Store::in_memory(Config::default());
    store.put_geometry(data.segments, data.regions).unwrap();
    let mut lines = Vec::new();
    for t in &data.trips {
        serde_json::to_writer(&mut lines, t).unwrap();
        lines.push(b'\n');
    }
    let report = ingest_trips(lines.as_slice(), &mut store, &Config::default()).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    store
}

pub fn synthetic_dataset(seed: u64, spec: &SynthSpec) -> Dataset {
    Dataset::from_store(synthetic_store(seed, spec))
}
