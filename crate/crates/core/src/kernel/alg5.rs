//! Random-increments port selection (RFC 6056 Algorithm 5).

use rand::Rng;

/// Increment bound suggested by RFC 6056.
pub const RFC_DEFAULT_N: u32 = 500;

/// Advances `counter` by a uniform draw in `1..=n` and maps it into the
/// ephemeral range.
pub fn alg5_next_port<R: Rng + ?Sized>(
    counter: &mut u64,
    n: u32,
    min_ephemeral: u16,
    num_ephemeral: u32,
    rng: &mut R,
) -> u16 {
    assert!(n >= 1, "increment bound must be positive");
    *counter += u64::from(rng.random_range(1..=n));
    min_ephemeral + (*counter % u64::from(num_ephemeral)) as u16
}

/// Stateful wrapper around [`alg5_next_port`].
#[derive(Debug, Clone)]
pub struct Alg5Allocator {
    pub counter: u64,
    pub n: u32,
    pub min_ephemeral: u16,
    pub num_ephemeral: u32,
}

impl Alg5Allocator {
    pub fn new(n: u32, min_ephemeral: u16, max_ephemeral: u16) -> Self {
        Self {
            counter: 0,
            n,
            min_ephemeral,
            num_ephemeral: u32::from(max_ephemeral) - u32::from(min_ephemeral) + 1,
        }
    }

    pub fn next_port<R: Rng + ?Sized>(&mut self, rng: &mut R) -> u16 {
        alg5_next_port(&mut self.counter, self.n, self.min_ephemeral, self.num_ephemeral, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn n_one_is_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = Alg5Allocator::new(1, 32768, 60999);
        let ports: Vec<u16> = (0..5).map(|_| a.next_port(&mut rng)).collect();
        assert_eq!(ports, vec![32769, 32770, 32771, 32772, 32773]);
    }

    #[test]
    fn mean_advance_is_half_n_plus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [8u32, 81, RFC_DEFAULT_N] {
            let mut counter = 0u64;
            let draws = 100_000;
            for _ in 0..draws {
                alg5_next_port(&mut counter, n, 32768, 28232, &mut rng);
            }
            let mean = counter as f64 / draws as f64;
            let expected = (f64::from(n) + 1.0) / 2.0;
            assert!((mean - expected).abs() / expected < 0.01, "n={n} mean={mean}");
        }
    }

    #[test]
    fn ports_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = Alg5Allocator::new(RFC_DEFAULT_N, 32768, 60999);
        for _ in 0..10_000 {
            assert!((32768..=60999).contains(&a.next_port(&mut rng)));
        }
    }
}
