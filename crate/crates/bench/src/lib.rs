//! Seeded inputs shared by the benchmarks.

use aaaseg::nnengine::Tensor5;
use aaaseg::phantom::{generate_phantom, PhantomSpec};
use aaaseg::volcore::{BinaryMask3D, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: [usize; 5], seed: u64) -> Tensor5 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor5::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn random_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)]).collect()
}

/// The default phantom for `seed`.
pub fn phantom(seed: u64) -> (Volume3D, BinaryMask3D) {
    let spec = PhantomSpec {
        seed,
        ..PhantomSpec::default_v1()
    };
    generate_phantom(&spec).expect("default phantom spec is valid")
}
