//! Fixtures shared by the solver benchmarks.

use wgdp_core::problem::AffineGenerator;
use wgdp_core::{DatasetCollection, Instance, RandomStream};

/// A random affine problem with `p` groups in dimension `d`, plus a
/// collection of `n` points per group and a finite-support instance.
pub struct Fixture {
    pub generator: AffineGenerator,
    pub collection: DatasetCollection,
    pub instance: Instance,
}

pub fn fixture(d: usize, p: usize, n: usize) -> Fixture {
    let mut rng = RandomStream::new(42);
    let generator = AffineGenerator::new(d, p, 1.0, 2.0, &mut rng).expect("valid generator");
    let collection = generator.collection(n, &mut rng).expect("valid collection");
    let instance = generator.instance(8, &mut rng).expect("valid instance");
    Fixture { generator, collection, instance }
}
