//! One-way delivery delays between nodes.

use crate::time::SimTime;

/// The five Azure regions of the reference deployment, with measured
/// round-trip times in milliseconds between them.
pub const REGIONS: [&str; 5] = [
    "eastus",
    "canadacentral",
    "uksouth",
    "westeurope",
    "southeastasia",
];

/// Symmetric region-to-region round-trip times (ms). The diagonal is the
/// intra-region VM round trip.
pub const REGION_RTT_MS: [[f64; 5]; 5] = [
    [1.71, 27.89, 75.34, 82.82, 219.86],
    [27.89, 3.50, 90.00, 93.94, 218.11],
    [75.34, 90.00, 1.27, 8.95, 156.12],
    [82.82, 93.94, 8.95, 2.35, 160.39],
    [219.86, 218.11, 156.12, 160.39, 2.12],
];

/// n x n one-way delays in milliseconds. Not required to be symmetric;
/// the diagonal (self-delivery) is unused by replicas, which never send to
/// themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyMatrix {
    n: usize,
    delays_ms: Vec<Vec<f64>>,
}

impl LatencyMatrix {
    /// Explicit one-way delays. Panics on a ragged or negative matrix.
    pub fn explicit(delays_ms: Vec<Vec<f64>>) -> LatencyMatrix {
        let n = delays_ms.len();
        for row in &delays_ms {
            assert_eq!(row.len(), n, "latency matrix must be square");
            for &d in row {
                assert!(d >= 0.0, "latency must be non-negative");
            }
        }
        LatencyMatrix { n, delays_ms }
    }

    pub fn uniform(n: usize, ms: f64) -> LatencyMatrix {
        assert!(ms >= 0.0);
        LatencyMatrix { n, delays_ms: vec![vec![ms; n]; n] }
    }

    /// One-way delays from the measured region round trips: nodes are
    /// assigned to the five regions round-robin and each one-way delay is
    /// half the measured RTT.
    pub fn table1(n: usize) -> LatencyMatrix {
        let mut delays = vec![vec![0.0; n]; n];
        for (i, row) in delays.iter_mut().enumerate() {
            for (j, d) in row.iter_mut().enumerate() {
                if i != j {
                    *d = REGION_RTT_MS[i % 5][j % 5] / 2.0;
                }
            }
        }
        LatencyMatrix { n, delays_ms: delays }
    }

    pub fn region_of(node: usize) -> &'static str {
        REGIONS[node % 5]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delay(&self, from: usize, to: usize) -> SimTime {
        SimTime::from_ms(self.delays_ms[from][to])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_matrix_is_taken_verbatim() {
        // a message sent at t=0 over a 219.86 ms one-way link arrives at
        // exactly 219.86 ms (before jitter)
        let m = LatencyMatrix::explicit(vec![
            vec![0.0, 219.86],
            vec![219.86, 0.0],
        ]);
        assert_eq!(m.delay(0, 1), SimTime::from_ms(219.86));
    }

    #[test]
    fn table1_round_robin_and_halving() {
        let m = LatencyMatrix::table1(11);
        // nodes 0 and 4: East US and Southeast Asia, RTT 219.86
        assert_eq!(m.delay(0, 4), SimTime::from_ms(219.86 / 2.0));
        // node 5 wraps around to East US again
        assert_eq!(m.delay(0, 5), SimTime::from_ms(1.71 / 2.0));
        assert_eq!(m.delay(5, 0), m.delay(0, 5));
        assert_eq!(m.delay(1, 2), SimTime::from_ms(45.0));
        assert_eq!(m.delay(3, 3), SimTime::ZERO);
        assert_eq!(LatencyMatrix::region_of(9), "southeastasia");
    }

    #[test]
    fn region_rtt_table_is_symmetric() {
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(REGION_RTT_MS[i][j], REGION_RTT_MS[j][i]);
            }
        }
    }

    #[test]
    #[should_panic(expected = "square")]
    fn rejects_ragged_matrix() {
        LatencyMatrix::explicit(vec![vec![0.0, 1.0], vec![0.0]]);
    }
}
