//! Schnorr signatures and CoSi collective signing over a prime-order subgroup.
//!
//! Two groups are provided: a hand-checkable toy group (p=23, q=11, g=2) used
//! by the test vectors, and a 62-bit safe-prime group used by simulation runs.
//! The adversary model never depends on the bit strength of the simulation
//! group; it only needs signatures the in-process adversary cannot forge
//! without the corresponding secret key, which both groups provide.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A Schnorr group: prime modulus `p`, prime subgroup order `q` with
/// `q | p - 1`, and a generator `g` of the order-`q` subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupParams {
    pub p: u64,
    pub q: u64,
    pub g: u64,
}

/// Tiny group whose arithmetic can be checked by hand. Test vectors only.
pub const TOY_GROUP: GroupParams = GroupParams { p: 23, q: 11, g: 2 };

/// Safe-prime group (p = 2q + 1, both prime; g = 4 generates the order-q
/// subgroup of squares) used by simulation scenarios.
pub const SIM_GROUP: GroupParams = GroupParams {
    p: 2_305_843_009_213_699_919,
    q: 1_152_921_504_606_849_959,
    g: 4,
};

fn modmul(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn modpow(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc: u64 = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = modmul(acc, base, m);
        }
        base = modmul(base, base, m);
        exp >>= 1;
    }
    acc
}

impl GroupParams {
    pub fn pow_g(&self, exp: u64) -> u64 {
        modpow(self.g, exp, self.p)
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        modmul(a, b, self.p)
    }

    pub fn pow(&self, base: u64, exp: u64) -> u64 {
        modpow(base, exp, self.p)
    }

    fn scalar_add(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + b as u128) % self.q as u128) as u64
    }

    fn scalar_mul(&self, a: u64, b: u64) -> u64 {
        modmul(a % self.q, b % self.q, self.q)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("cannot aggregate an empty participant set")]
    EmptyAggregation,
    #[error("bitmap has {got} bits, expected {want}")]
    BitmapLength { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub sk: u64,
    pub pk: u64,
}

/// Deterministic key generation: `sk` uniform in `[1, q-1]` from a seeded
/// generator, `pk = g^sk`.
pub fn keygen(group: &GroupParams, seed: u64) -> KeyPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sk = rng.gen_range(1..group.q);
    KeyPair { sk, pk: group.pow_g(sk) }
}

/// A plain Schnorr signature: commitment `R = g^k`, response `s = k + c*sk`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub commitment: u64,
    pub response: u64,
}

/// Challenge scalar `H(R || message) mod q`.
pub fn challenge(group: &GroupParams, commitment: u64, message: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(commitment.to_be_bytes());
    h.update(message);
    let digest = h.finalize();
    let wide = u128::from_be_bytes(digest[..16].try_into().unwrap());
    (wide % group.q as u128) as u64
}

fn derive_nonce(group: &GroupParams, sk: u64, nonce_seed: u64, message: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"nonce");
    h.update(sk.to_be_bytes());
    h.update(nonce_seed.to_be_bytes());
    h.update(message);
    let digest = h.finalize();
    let wide = u128::from_be_bytes(digest[..16].try_into().unwrap());
    // range [1, q-1]
    (wide % (group.q as u128 - 1)) as u64 + 1
}

/// Signs with a forced nonce and challenge. Primitive behind [`sign`], exposed
/// so test vectors stay pure arithmetic rather than hash-dependent.
pub fn sign_with(group: &GroupParams, sk: u64, k: u64, c: u64) -> Signature {
    Signature {
        commitment: group.pow_g(k),
        response: group.scalar_add(k, group.scalar_mul(c, sk)),
    }
}

pub fn sign(group: &GroupParams, sk: u64, message: &[u8], nonce_seed: u64) -> Signature {
    let k = derive_nonce(group, sk, nonce_seed, message);
    let r = group.pow_g(k);
    let c = challenge(group, r, message);
    sign_with(group, sk, k, c)
}

/// Verifies `g^s = R * pk^c` for a forced challenge.
pub fn verify_with(group: &GroupParams, pk: u64, c: u64, sig: &Signature) -> bool {
    group.pow_g(sig.response) == group.mul(sig.commitment, group.pow(pk, c))
}

pub fn verify(group: &GroupParams, pk: u64, message: &[u8], sig: &Signature) -> bool {
    let c = challenge(group, sig.commitment, message);
    verify_with(group, pk, c, sig)
}

/// Which nodes did or did not take part in an aggregate artifact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParticipationBitmap {
    bits: Vec<bool>,
}

impl ParticipationBitmap {
    pub fn empty(n: usize) -> ParticipationBitmap {
        ParticipationBitmap { bits: vec![false; n] }
    }

    pub fn from_indices(n: usize, idx: impl IntoIterator<Item = usize>) -> ParticipationBitmap {
        let mut b = ParticipationBitmap::empty(n);
        for i in idx {
            b.set(i);
        }
        b
    }

    pub fn set(&mut self, i: usize) {
        self.bits[i] = true;
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits.get(i).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// Commitment phase: pick a secret `v`, publish `V = g^v`.
pub fn cosi_commit(group: &GroupParams, seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = rng.gen_range(1..group.q);
    (v, group.pow_g(v))
}

/// Aggregates Schnorr commitments by multiplication.
pub fn cosi_aggregate_commitments(
    group: &GroupParams,
    commitments: &[u64],
) -> Result<u64, CryptoError> {
    if commitments.is_empty() {
        return Err(CryptoError::EmptyAggregation);
    }
    Ok(commitments.iter().fold(1u64, |acc, &v| group.mul(acc, v)))
}

/// Collective challenge over the aggregate commitment and the message.
pub fn cosi_challenge(group: &GroupParams, agg_commitment: u64, message: &[u8]) -> u64 {
    challenge(group, agg_commitment, message)
}

/// Partial response `r_i = v_i + c * sk_i`.
pub fn cosi_respond(group: &GroupParams, v: u64, c: u64, sk: u64) -> u64 {
    group.scalar_add(v, group.scalar_mul(c, sk))
}

/// Checks one partial response against its individual commitment.
pub fn cosi_partial_verify(group: &GroupParams, commitment: u64, pk: u64, c: u64, r: u64) -> bool {
    group.pow_g(r) == group.mul(commitment, group.pow(pk, c))
}

pub fn cosi_aggregate_responses(
    group: &GroupParams,
    responses: &[u64],
) -> Result<u64, CryptoError> {
    if responses.is_empty() {
        return Err(CryptoError::EmptyAggregation);
    }
    Ok(responses.iter().fold(0u64, |acc, &r| group.scalar_add(acc, r)))
}

/// A collective signature plus participation metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveSignature {
    pub bitmap: ParticipationBitmap,
    pub aggregate_commitment: u64,
    pub aggregate_response: u64,
}

/// Verifies `g^r = V * (prod of participating pks)^c` with a forced challenge.
pub fn cosi_verify_with(
    group: &GroupParams,
    pks: &[u64],
    sig: &CollectiveSignature,
    c: u64,
) -> bool {
    if sig.bitmap.len() != pks.len() || sig.bitmap.popcount() == 0 {
        return false;
    }
    let agg_pk = sig
        .bitmap
        .indices()
        .fold(1u64, |acc, i| group.mul(acc, pks[i]));
    group.pow_g(sig.aggregate_response)
        == group.mul(sig.aggregate_commitment, group.pow(agg_pk, c))
}

pub fn cosi_verify(
    group: &GroupParams,
    pks: &[u64],
    message: &[u8],
    sig: &CollectiveSignature,
) -> bool {
    let c = cosi_challenge(group, sig.aggregate_commitment, message);
    cosi_verify_with(group, pks, sig, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_group_is_well_formed() {
        let g = SIM_GROUP;
        assert_eq!(g.p, 2 * g.q + 1);
        assert_eq!(g.pow_g(g.q), 1);
        assert_ne!(g.g, 1);
    }

    #[test]
    fn keygen_toy_vectors() {
        // sk=3 over the toy group gives pk = 2^3 mod 23 = 8
        let kp = KeyPair { sk: 3, pk: TOY_GROUP.pow_g(3) };
        assert_eq!(kp.pk, 8);
        // seeded keygen never produces sk = 0 and is deterministic
        for seed in 0..200 {
            let a = keygen(&TOY_GROUP, seed);
            let b = keygen(&TOY_GROUP, seed);
            assert_eq!(a, b);
            assert!(a.sk >= 1 && a.sk < TOY_GROUP.q);
            assert_eq!(a.pk, TOY_GROUP.pow_g(a.sk));
        }
    }

    #[test]
    fn schnorr_toy_vector() {
        // sk=3, k=5, forced c=7 -> R=9, s=4; g^4 = 16 = 9 * 8^7 mod 23
        let sig = sign_with(&TOY_GROUP, 3, 5, 7);
        assert_eq!(sig, Signature { commitment: 9, response: 4 });
        assert!(verify_with(&TOY_GROUP, 8, 7, &sig));
        // wrong key (sk'=4 -> pk=16) fails
        assert!(!verify_with(&TOY_GROUP, 16, 7, &sig));
    }

    #[test]
    fn sign_verify_and_mutation() {
        let kp = keygen(&TOY_GROUP, 42);
        let msg = b"attested entry";
        let sig = sign(&TOY_GROUP, kp.sk, msg, 7);
        assert!(verify(&TOY_GROUP, kp.pk, msg, &sig));
        let mut flipped = msg.to_vec();
        flipped[0] ^= 1;
        assert!(!verify(&TOY_GROUP, kp.pk, &flipped, &sig));
    }

    #[test]
    fn sign_verify_fuzz_sim_group() {
        // 1000 seeded (message, keypair) pairs: sign-then-verify always true;
        // any single-bit mutation always false.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..1000u64 {
            let kp = keygen(&SIM_GROUP, i);
            let mut msg = vec![0u8; 24];
            rng.fill(&mut msg[..]);
            let sig = sign(&SIM_GROUP, kp.sk, &msg, i);
            assert!(verify(&SIM_GROUP, kp.pk, &msg, &sig));
            let bit: usize = rng.gen_range(0..msg.len() * 8);
            let mut mutated = msg.clone();
            mutated[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&SIM_GROUP, kp.pk, &mutated, &sig));
        }
    }

    #[test]
    fn cosi_two_signer_vector() {
        // sk1=3 (v1=5), sk2=4 (v2=2), forced c=7:
        // Vhat = 2^7 mod 23 = 13, rhat = (5+21)+(2+28) mod 11 = 1,
        // agg pk = 8*16 mod 23 = 13, and g^1 = 2 = 13 * 13^7 mod 23.
        let g = &TOY_GROUP;
        let vhat = cosi_aggregate_commitments(g, &[g.pow_g(5), g.pow_g(2)]).unwrap();
        assert_eq!(vhat, 13);
        let r1 = cosi_respond(g, 5, 7, 3);
        let r2 = cosi_respond(g, 2, 7, 4);
        let rhat = cosi_aggregate_responses(g, &[r1, r2]).unwrap();
        assert_eq!(rhat, 1);
        let pks = [g.pow_g(3), g.pow_g(4)];
        let sig = CollectiveSignature {
            bitmap: ParticipationBitmap::from_indices(2, [0, 1]),
            aggregate_commitment: vhat,
            aggregate_response: rhat,
        };
        assert!(cosi_verify_with(g, &pks, &sig, 7));
        // omitting one response while leaving its bit set cannot balance
        let bad = CollectiveSignature {
            aggregate_response: r1,
            ..sig.clone()
        };
        assert!(!cosi_verify_with(g, &pks, &bad, 7));
    }

    #[test]
    fn cosi_single_signer_matches_plain_schnorr() {
        let g = &TOY_GROUP;
        let kp = keygen(g, 5);
        let msg = b"solo";
        let (v, big_v) = cosi_commit(g, 17);
        let vhat = cosi_aggregate_commitments(g, &[big_v]).unwrap();
        let c = cosi_challenge(g, vhat, msg);
        let r = cosi_respond(g, v, c, kp.sk);
        let sig = CollectiveSignature {
            bitmap: ParticipationBitmap::from_indices(1, [0]),
            aggregate_commitment: vhat,
            aggregate_response: r,
        };
        assert!(cosi_verify(g, &[kp.pk], msg, &sig));
        // identical verification equation to plain Schnorr
        assert!(verify(g, kp.pk, msg, &Signature { commitment: vhat, response: r }));
    }

    #[test]
    fn cosi_rejects_empty_participant_set() {
        assert_eq!(
            cosi_aggregate_commitments(&TOY_GROUP, &[]),
            Err(CryptoError::EmptyAggregation)
        );
        assert_eq!(
            cosi_aggregate_responses(&TOY_GROUP, &[]),
            Err(CryptoError::EmptyAggregation)
        );
    }

    #[test]
    fn cosi_all_subsets_of_five_keys() {
        // Aggregation homomorphism: over every non-empty subset of a 5-key
        // set, the collective signature verifies iff every partial response
        // used the common challenge.
        let g = &SIM_GROUP;
        let keys: Vec<KeyPair> = (0..5).map(|i| keygen(g, 1000 + i)).collect();
        let pks: Vec<u64> = keys.iter().map(|k| k.pk).collect();
        let msg = b"subset";
        for mask in 1u32..32 {
            let members: Vec<usize> = (0..5).filter(|i| mask & (1 << i) != 0).collect();
            let mut secrets = Vec::new();
            let mut commitments = Vec::new();
            for &i in &members {
                let (v, big_v) = cosi_commit(g, 7000 + i as u64);
                secrets.push(v);
                commitments.push(big_v);
            }
            let vhat = cosi_aggregate_commitments(g, &commitments).unwrap();
            let c = cosi_challenge(g, vhat, msg);
            let responses: Vec<u64> = members
                .iter()
                .zip(&secrets)
                .map(|(&i, &v)| cosi_respond(g, v, c, keys[i].sk))
                .collect();
            for (k, (&i, &v)) in members.iter().zip(&secrets).enumerate() {
                assert!(cosi_partial_verify(g, commitments[k], pks[i], c, responses[k]));
                assert!(!cosi_partial_verify(g, commitments[k], pks[i], c.wrapping_add(1) % g.q, responses[k]));
                let _ = v;
            }
            let rhat = cosi_aggregate_responses(g, &responses).unwrap();
            let sig = CollectiveSignature {
                bitmap: ParticipationBitmap::from_indices(5, members.iter().copied()),
                aggregate_commitment: vhat,
                aggregate_response: rhat,
            };
            assert!(cosi_verify(g, &pks, msg, &sig));

            // a response computed with a stale challenge breaks the aggregate
            let mut wrong = responses.clone();
            wrong[0] = cosi_respond(g, secrets[0], c.wrapping_add(1) % g.q, keys[members[0]].sk);
            let rhat_bad = cosi_aggregate_responses(g, &wrong).unwrap();
            let bad = CollectiveSignature { aggregate_response: rhat_bad, ..sig };
            assert!(!cosi_verify(g, &pks, msg, &bad));
        }
    }

    #[test]
    fn challenge_is_deterministic() {
        let c1 = cosi_challenge(&SIM_GROUP, 12345, b"m");
        let c2 = cosi_challenge(&SIM_GROUP, 12345, b"m");
        assert_eq!(c1, c2);
        assert_ne!(c1, cosi_challenge(&SIM_GROUP, 12346, b"m"));
    }
}
