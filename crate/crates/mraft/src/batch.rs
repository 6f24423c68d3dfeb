//! Client requests and the batch encoding carried inside a log entry.
//!
//! Wire form: `count:u32` then per request `id:u64, len:u32, payload`.
//! All integers big-endian.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub payload: Vec<u8>,
}

impl Request {
    /// Encoded size of this request inside a batch, used against the batch
    /// byte cap.
    pub fn encoded_len(&self) -> usize {
        8 + 4 + self.payload.len()
    }
}

pub fn encode_batch(reqs: &[Request]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + reqs.iter().map(Request::encoded_len).sum::<usize>());
    out.extend_from_slice(&(reqs.len() as u32).to_be_bytes());
    for r in reqs {
        out.extend_from_slice(&r.id.to_be_bytes());
        out.extend_from_slice(&(r.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&r.payload);
    }
    out
}

pub fn decode_batch(bytes: &[u8]) -> Option<Vec<Request>> {
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Option<&[u8]> {
        let s = bytes.get(*at..*at + n)?;
        *at += n;
        Some(s)
    };
    let count = u32::from_be_bytes(take(&mut at, 4)?.try_into().ok()?) as usize;
    let mut reqs = Vec::with_capacity(count);
    for _ in 0..count {
        let id = u64::from_be_bytes(take(&mut at, 8)?.try_into().ok()?);
        let len = u32::from_be_bytes(take(&mut at, 4)?.try_into().ok()?) as usize;
        let payload = take(&mut at, len)?.to_vec();
        reqs.push(Request { id, payload });
    }
    if at != bytes.len() {
        return None;
    }
    Some(reqs)
}

/// Request ids contained in an encoded batch; empty when the payload is not a
/// well-formed batch.
pub fn batch_ids(bytes: &[u8]) -> Vec<u64> {
    decode_batch(bytes).map(|rs| rs.iter().map(|r| r.id).collect()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(reqs in proptest::collection::vec(
            (any::<u64>(), proptest::collection::vec(any::<u8>(), 0..64)), 0..8))
        {
            let reqs: Vec<Request> =
                reqs.into_iter().map(|(id, payload)| Request { id, payload }).collect();
            let bytes = encode_batch(&reqs);
            prop_assert_eq!(decode_batch(&bytes).unwrap(), reqs);
        }
    }

    #[test]
    fn rejects_trailing_garbage() {
        let mut bytes = encode_batch(&[Request { id: 1, payload: vec![9] }]);
        bytes.push(0);
        assert!(decode_batch(&bytes).is_none());
        assert!(decode_batch(&[1, 2]).is_none());
    }
}
