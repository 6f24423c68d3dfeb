//! Deterministic request streams: ids 1..=count with either the SHA-256
//! checksum of the id or fixed-size random bytes as payload.

use crate::batch::Request;
use crate::harness::scenario::{PayloadSpec, WorkloadSpec};
use crate::time::SimTime;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Expands a workload spec into timed arrival groups.
pub fn generate_workload(spec: &WorkloadSpec, seed: u64) -> Vec<(SimTime, Vec<Request>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x776f726b6c6f6164); // "workload"
    let mut out = Vec::new();
    let mut group = Vec::with_capacity(spec.batch);
    let mut groups = 0u64;
    for id in 1..=spec.count {
        let payload = match spec.payload {
            PayloadSpec::Digest => Sha256::digest(id.to_be_bytes()).to_vec(),
            PayloadSpec::Random { bytes } => {
                let mut buf = vec![0u8; bytes];
                rng.fill_bytes(&mut buf);
                buf
            }
        };
        group.push(Request { id, payload });
        if group.len() == spec.batch {
            let at = SimTime::from_ms(spec.start_ms + groups as f64 * spec.interval_ms);
            out.push((at, std::mem::take(&mut group)));
            groups += 1;
        }
    }
    if !group.is_empty() {
        let at = SimTime::from_ms(spec.start_ms + groups as f64 * spec.interval_ms);
        out.push((at, group));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_workload_matches_sha256_of_id() {
        let spec = WorkloadSpec {
            count: 3,
            batch: 10,
            interval_ms: 10.0,
            start_ms: 0.0,
            payload: PayloadSpec::Digest,
        };
        let arrivals = generate_workload(&spec, 0);
        assert_eq!(arrivals.len(), 1);
        let reqs = &arrivals[0].1;
        assert_eq!(reqs.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(reqs[0].payload, Sha256::digest(1u64.to_be_bytes()).to_vec());
        assert_eq!(reqs[0].payload.len(), 32);
    }

    #[test]
    fn batching_and_arrival_times() {
        let spec = WorkloadSpec {
            count: 25,
            batch: 10,
            interval_ms: 5.0,
            start_ms: 100.0,
            payload: PayloadSpec::Digest,
        };
        let arrivals = generate_workload(&spec, 1);
        assert_eq!(arrivals.len(), 3);
        assert_eq!(arrivals[0].0, SimTime::from_ms(100.0));
        assert_eq!(arrivals[2].0, SimTime::from_ms(110.0));
        assert_eq!(arrivals[2].1.len(), 5);
    }

    #[test]
    fn random_payload_is_seed_deterministic() {
        let spec = WorkloadSpec {
            count: 5,
            batch: 5,
            interval_ms: 1.0,
            start_ms: 0.0,
            payload: PayloadSpec::Random { bytes: 1024 },
        };
        let a = generate_workload(&spec, 42);
        let b = generate_workload(&spec, 42);
        let c = generate_workload(&spec, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a[0].1[0].payload.len(), 1024);
    }

    #[test]
    fn empty_workload() {
        let spec = WorkloadSpec {
            count: 0,
            batch: 10,
            interval_ms: 1.0,
            start_ms: 0.0,
            payload: PayloadSpec::Digest,
        };
        assert!(generate_workload(&spec, 0).is_empty());
    }
}
