//! Seeded random streams. Each consumer draws from its own stream so that
//! adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers; values are part of the reproducibility contract.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    SynthAnchors = 1,
    SynthPrototypes = 2,
    SynthShift = 3,
    SynthSourceNoise = 4,
    SynthTargetNoise = 5,
    SynthCaptionMap = 6,
    SynthCaptionNoise = 7,
    SupervisorInit = 10,
    SupervisorShuffle = 11,
    ClassifierInit = 20,
    ClassifierShuffle = 21,
    AnchorInit = 22,
    TargetSubsample = 30,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
