//! Additive attention over four regions, then the two-way mix with a
//! retrieved vector, serialized the way `attend` writes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rarnn::attention::{
    additive_attention, multi_level_attention, AdditiveAttnParams, AttnStep, AttnTrace,
    MultiLevelAttnParams,
};
use rarnn::{ParamStore, Tape, Tensor};

fn main() -> rarnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let att = AdditiveAttnParams::register(&mut store, "att", 4, 4, 6, &mut rng)?;
    let ml = MultiLevelAttnParams::register(&mut store, "ml", 4, 4, 6, &mut rng)?;

    let mut tape = Tape::new();
    let regions = tape.constant(Tensor::from_rows(&[
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.5, 0.5, 0.5, 0.5],
    ])?);
    let h = tape.constant(Tensor::vector(vec![0.2, -0.3, 0.9, 0.1]));
    let r = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0, 1.0]));
    let (c, alpha) = additive_attention(&mut tape, &store, &att, regions, h)?;
    let (mixed, hat) = multi_level_attention(&mut tape, &store, &ml, c, r, h)?;

    let hat = tape.value(hat).data();
    let trace = AttnTrace {
        steps: vec![AttnStep {
            token: "dog".into(),
            alpha_regions: tape.value(alpha).data().to_vec(),
            alpha_image: hat[0],
            alpha_retrieved: hat[1],
        }],
    };
    println!("{}", trace.to_json());
    println!("mixed context {:?}", tape.value(mixed).data());
    Ok(())
}
