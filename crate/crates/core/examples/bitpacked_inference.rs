//! Train a posterior, read out the MAP binary network, pack it into 64-bit
//! words and check the packed evaluator against the reference one.

use std::time::Instant;

use bmnn::bitpack::{pack, packed_eval, PackedNetwork};
use bmnn::teacher::{make_teacher, sample_stream};
use bmnn::{bmnn_eval, MfbConfig, MfbEngine, PosteriorParams};

fn main() -> bmnn::Result<()> {
    let m = 21;
    let teacher = make_teacher(m, 1)?;
    let mut posterior = PosteriorParams::init_prior(teacher.topology(), 2);
    let mut engine = MfbEngine::new(teacher.topology(), MfbConfig::default());
    for s in sample_stream(&teacher, 50_000, 3) {
        engine.step(&mut posterior, &s)?;
    }

    let map = posterior.clip_map();
    let bytes = pack(&map).to_bytes();
    println!("{m}x{m}x1 MAP network: {} weights in {} bytes", teacher.topology().weight_count(), bytes.len());
    let net = PackedNetwork::from_bytes(&bytes)?;

    let test = sample_stream(&teacher, 10_000, 4);
    let started = Instant::now();
    let packed: Vec<Vec<i8>> = test.iter().map(|s| packed_eval(&net, &s.x)).collect::<bmnn::Result<_>>()?;
    let packed_time = started.elapsed();
    let started = Instant::now();
    let reference: Vec<Vec<i8>> = test.iter().map(|s| bmnn_eval(&map, &s.x)).collect::<bmnn::Result<_>>()?;
    let reference_time = started.elapsed();

    assert_eq!(packed, reference);
    let errors = test.iter().zip(&packed).filter(|(s, y)| f64::from(y[0]) != s.y[0]).count();
    println!("identical outputs on {} inputs, test error {:.4}", test.len(), errors as f64 / test.len() as f64);
    println!("packed {packed_time:?}, reference {reference_time:?}");
    Ok(())
}
