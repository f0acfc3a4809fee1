//! Saving and loading models: posterior fields and BackProp weights as JSON,
//! MAP networks as packed binary files.

use bmnn::backprop::RealNetParams;
use bmnn::bitpack::{pack, PackedNetwork};
use bmnn::harness::{Model, Scorer};
use bmnn::{ConvergingTopology, MfbConfig, PosteriorParams};

fn main() -> bmnn::Result<()> {
    let dir = std::env::temp_dir().join("bmnn-model-io");
    std::fs::create_dir_all(&dir)?;
    let topology: ConvergingTopology = "12x6x2".parse()?;

    let posterior = PosteriorParams::init_prior(&topology, 1);
    let real = RealNetParams::init(&topology, 1e-3, 2);
    posterior.save(&dir.join("posterior.json"))?;
    real.save(&dir.join("backprop.json"))?;
    std::fs::write(dir.join("map.bmnn"), pack(&posterior.clip_map()).to_bytes())?;

    assert_eq!(PosteriorParams::load(&dir.join("posterior.json"))?, posterior);
    assert_eq!(RealNetParams::load(&dir.join("backprop.json"), 1e-3)?, real);
    let packed = PackedNetwork::from_bytes(&std::fs::read(dir.join("map.bmnn"))?)?;
    assert_eq!(packed.unpack(), posterior.clip_map());

    let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
    for name in ["posterior.json", "backprop.json", "map.bmnn"] {
        let model = Model::load(&dir.join(name))?;
        let mut scorer = Scorer::new(&model, MfbConfig::default());
        for a in model.algorithms() {
            println!("{name:<15} {:<9} {:?}", a.name(), scorer.scores(a, &x)?);
        }
    }
    Ok(())
}
