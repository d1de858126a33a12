//! Strong-probable-prime testing with the witnesses checked in parallel.
//!
//! A Miller–Rabin round asks whether `n` is a *strong probable prime* to a
//! base `a`: write `n − 1 = 2^s · d` with `d` odd, and check that either
//! `a^d ≡ 1 (mod n)` or `a^(2^r · d) ≡ n − 1` for some `r < s`. A composite
//! number can fool individual bases but never many independent ones, so the
//! standard hardening is to run dozens of bases — which are entirely
//! independent of one another and therefore an ideal farm workload.
//!
//! [`rabin_miller`] distributes the bases over a [`farm`] on the given
//! backend. The closure captures the (potentially huge) candidate behind an
//! `Arc`, so under the distributed backend only the 8-byte base and a
//! 1-byte verdict cross the serialization boundary per task. The combined
//! verdict is reduced on the coordinator: composite if and only if some
//! base fails, reporting the first failing base in list order, so the
//! parallel verdict is identical to a sequential scan.

use std::sync::Arc;

use flows::{farm, lift, BackendConf, FlowError};
use num_bigint::BigUint;
use num_traits::One;
use thiserror::Error;

/// Rejected input to [`rabin_miller`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidInput {
    /// The candidate must be odd and greater than 3.
    #[error("candidate must be an odd integer greater than 3, got {0}")]
    BadCandidate(BigUint),
    /// At least one base is required.
    #[error("at least one base is required")]
    NoBases,
    /// Every base must lie in `[2, n − 2]`.
    #[error("base {base} at index {index} is outside [2, n-2]")]
    BaseOutOfRange {
        /// Position of the offending base.
        index: usize,
        /// The offending base.
        base: u64,
    },
}

/// Why [`rabin_miller`] failed: the input was rejected up front, or the
/// parallel evaluation itself failed.
#[derive(Debug, Error)]
pub enum RabinError {
    /// The input violated a precondition.
    #[error(transparent)]
    Invalid(#[from] InvalidInput),
    /// A backend failure while evaluating the bases.
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// The outcome of a multi-base strong-probable-prime test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Every base passed; `n` is prime with overwhelming probability.
    ProbablePrime,
    /// Some base witnessed compositeness; the first one is reported.
    Composite {
        /// Index of the failing base in the input list.
        index: usize,
        /// The failing base itself.
        base: u64,
    },
}

/// The per-base strong-probable-prime check, with `n − 1 = 2^s · d`
/// decomposed once up front and shared by every base.
#[derive(Debug, Clone)]
pub struct BaseChecker {
    n: BigUint,
    n_minus_1: BigUint,
    d: BigUint,
    s: u64,
}

impl BaseChecker {
    /// Prepares the decomposition. The candidate must be odd and greater
    /// than 3.
    pub fn new(n: &BigUint) -> Result<Self, InvalidInput> {
        if n <= &BigUint::from(3u8) || !n.bit(0) {
            return Err(InvalidInput::BadCandidate(n.clone()));
        }
        let n_minus_1 = n - BigUint::one();
        let s = n_minus_1
            .trailing_zeros()
            .expect("n - 1 of an odd n > 3 is nonzero");
        let d = &n_minus_1 >> s;
        Ok(BaseChecker {
            n: n.clone(),
            n_minus_1,
            d,
            s,
        })
    }

    /// True if `n` is a strong probable prime to `base`.
    pub fn passes(&self, base: u64) -> bool {
        let mut x = BigUint::from(base).modpow(&self.d, &self.n);
        if x.is_one() || x == self.n_minus_1 {
            return true;
        }
        for _ in 1..self.s {
            x = x.modpow(&BigUint::from(2u8), &self.n);
            if x == self.n_minus_1 {
                return true;
            }
        }
        false
    }
}

fn validate_bases(n: &BigUint, bases: &[u64]) -> Result<(), InvalidInput> {
    if bases.is_empty() {
        return Err(InvalidInput::NoBases);
    }
    let max = n - BigUint::from(2u8);
    for (index, &base) in bases.iter().enumerate() {
        if base < 2 || BigUint::from(base) > max {
            return Err(InvalidInput::BaseOutOfRange { index, base });
        }
    }
    Ok(())
}

/// How many farm slices a conf naturally supports.
fn conf_width(conf: &BackendConf) -> usize {
    match conf {
        BackendConf::Sequential(_) => 1,
        BackendConf::Pool(pc) => pc.workers,
        BackendConf::Dist(dc) => dc.workers,
    }
}

/// Tests `n` against every base in parallel and reduces to one [`Verdict`].
///
/// The candidate must be odd and greater than 3; bases must be nonempty and
/// each within `[2, n − 2]`.
pub fn rabin_miller(
    n: &BigUint,
    bases: &[u64],
    conf: &BackendConf,
) -> Result<Verdict, RabinError> {
    let checker = Arc::new(BaseChecker::new(n)?);
    validate_bases(n, bases)?;
    let per_base = Arc::clone(&checker);
    let check = lift(move |base: u64| per_base.passes(base));
    let results = farm(conf, conf_width(conf), check)
        .run(bases.to_vec())
        .map_err(RabinError::Flow)?;
    Ok(reduce(bases, &results))
}

/// The trivially sequential reference: same checks, same reduction, no
/// flows involved at all.
pub fn rabin_miller_seq(n: &BigUint, bases: &[u64]) -> Result<Verdict, InvalidInput> {
    let checker = BaseChecker::new(n)?;
    validate_bases(n, bases)?;
    let results: Vec<bool> = bases.iter().map(|&b| checker.passes(b)).collect();
    Ok(reduce(bases, &results))
}

fn reduce(bases: &[u64], results: &[bool]) -> Verdict {
    for (index, (&base, &passed)) in bases.iter().zip(results).enumerate() {
        if !passed {
            return Verdict::Composite { index, base };
        }
    }
    Verdict::ProbablePrime
}

/// `2^exp − 1`, the Mersenne candidates the benchmark exercises.
pub fn mersenne(exp: u32) -> BigUint {
    (BigUint::one() << exp) - BigUint::one()
}

/// The first `k` primes, in order — the conventional base set.
pub fn first_primes(k: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(k);
    let mut candidate = 2u64;
    while primes.len() < k {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| !candidate.is_multiple_of(p))
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}
