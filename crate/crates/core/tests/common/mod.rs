#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratum::blocks::{BlockPartition, Lambda};
use stratum::linalg::{c, CMat, C64};
use stratum::pfaffian::CoalescedSystem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cmat(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMat {
    CMat::from_fn(r, k, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn partition(rng: &mut ChaCha8Rng, n: usize) -> BlockPartition {
    let mut sizes = Vec::new();
    let mut left = n;
    while left > 0 {
        let p = rng.gen_range(1..=left.min(3));
        sizes.push(p);
        left -= p;
    }
    if sizes.len() == 1 && n > 1 {
        sizes = vec![n - 1, 1];
    }
    BlockPartition::new(&sizes).unwrap()
}

/// Points on a perturbed circle, pairwise separated by at least ~0.5.
pub fn lambda_values(rng: &mut ChaCha8Rng, s: usize) -> Vec<C64> {
    (0..s)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / s as f64 + rng.gen_range(-0.2..0.2);
            C64::from_polar(1.0 + 0.3 * s as f64 / 3.0, th) + c(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1))
        })
        .collect()
}

pub fn system(rng: &mut ChaCha8Rng, n: usize) -> CoalescedSystem {
    let p = partition(rng, n);
    let lam = lambda_values(rng, p.s());
    let a = cmat(rng, n, n);
    CoalescedSystem::new(Lambda::new(lam, p, 1e-10).unwrap(), a).unwrap()
}

/// Random block-diagonal matrices, one per block.
pub fn dblocks(rng: &mut ChaCha8Rng, p: &BlockPartition) -> Vec<CMat> {
    (0..p.s()).map(|_| p.block_diagonal(&cmat(rng, p.n(), p.n()))).collect()
}
