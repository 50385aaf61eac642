//! Exact nearest-neighbour search over a small store, saved and reloaded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarnn::{ExampleStore, TargetPayload};

fn main() -> rarnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ExampleStore::new(8);
    for id in 0..1000u64 {
        let v: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.add(id, &v, TargetPayload::Label((id % 2) as u8))?;
    }
    store.freeze();

    let query: Vec<f32> = store.vector(42).to_vec();
    for hit in store.search(&query, 3, &[])? {
        println!("id {:>4}  distance {:.5}", hit.id, hit.distance);
    }
    // leave-one-out, as done for training examples
    let (hit, target) = store.nearest_target(&query, &[42])?;
    println!("nearest other example: {} -> {target:?}", hit.id);

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("index.rknn");
    store.save(&path)?;
    let loaded = ExampleStore::load(&path)?;
    assert_eq!(
        loaded.search(&query, 3, &[])?,
        store.search(&query, 3, &[])?
    );
    println!(
        "round-tripped {} vectors through {}",
        loaded.len(),
        path.display()
    );
    Ok(())
}
