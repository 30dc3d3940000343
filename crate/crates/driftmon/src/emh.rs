//! Exponentially decayed moving histograms.
//!
//! A [`MovingHistogram`] summarizes the recent past of one feature in a
//! fixed-size weight vector. Every update decays all existing weights by a
//! factor determined by the half-life and then adds unit weight to the bin of
//! the new observation, so an observation's influence halves after `n_half`
//! further events (event-based decay) or after `tau_half` seconds (time-based
//! decay). Memory and per-update cost are constant in stream length.
//!
//! The running total weight is maintained recursively alongside the bins and
//! resummed from the bins at a fixed update interval to stop floating-point
//! drift from accumulating over long streams.

use thiserror::Error;

use crate::event::TimestampNs;

const NANOS_PER_SEC: f64 = 1e9;

/// Updates between exact recomputations of the running total weight.
const RESUM_INTERVAL: u32 = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum EmhError {
    #[error("half-life must be positive and finite, got {0}")]
    InvalidHalfLife(f64),
    #[error("bin index {index} out of range for {bins} bins")]
    BinOutOfRange { index: usize, bins: usize },
    #[error("event timestamp {ts}ns precedes last seen {last}ns")]
    OutOfOrderEvent { ts: TimestampNs, last: TimestampNs },
    #[error("histogram holds no weight yet")]
    EmptyHistogram,
    #[error("invalid seed distribution: {0}")]
    InvalidSeed(String),
}

/// Decay speed, expressed in events or in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalfLife {
    /// An observation's weight halves after this many subsequent events.
    Events(f64),
    /// An observation's weight halves after this many seconds, regardless of
    /// how many events arrive in between.
    TimeSecs(f64),
}

impl HalfLife {
    pub fn events(n_half: f64) -> Result<Self, EmhError> {
        if !(n_half.is_finite() && n_half > 0.0) {
            return Err(EmhError::InvalidHalfLife(n_half));
        }
        Ok(HalfLife::Events(n_half))
    }

    pub fn time_secs(tau_half: f64) -> Result<Self, EmhError> {
        if !(tau_half.is_finite() && tau_half > 0.0) {
            return Err(EmhError::InvalidHalfLife(tau_half));
        }
        Ok(HalfLife::TimeSecs(tau_half))
    }

    /// Half-life measured in events, converting time-based half-lives with
    /// the given average event rate.
    pub fn events_equivalent(&self, events_per_sec: f64) -> f64 {
        match self {
            HalfLife::Events(n) => *n,
            HalfLife::TimeSecs(tau) => tau * events_per_sec,
        }
    }
}

/// What to do when a time-decayed histogram sees a timestamp earlier than the
/// last one it ingested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutOfOrderPolicy {
    /// Fail the update.
    #[default]
    Reject,
    /// Treat the event as if it arrived at the last seen timestamp.
    ClampToLast,
}

impl std::str::FromStr for OutOfOrderPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reject" => Ok(OutOfOrderPolicy::Reject),
            "clamp" => Ok(OutOfOrderPolicy::ClampToLast),
            other => Err(format!(
                "unknown out-of-order policy '{other}' (expected reject or clamp)"
            )),
        }
    }
}

impl std::fmt::Display for OutOfOrderPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutOfOrderPolicy::Reject => f.write_str("reject"),
            OutOfOrderPolicy::ClampToLast => f.write_str("clamp"),
        }
    }
}

/// Fixed-size histogram with exponentially decaying weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingHistogram {
    weights: Vec<f64>,
    total_weight: f64,
    last_timestamp: Option<TimestampNs>,
    half_life: HalfLife,
    policy: OutOfOrderPolicy,
    updates_since_resum: u32,
}

impl MovingHistogram {
    /// Creates an empty histogram with the given number of bins.
    pub fn new(bin_count: usize, half_life: HalfLife, policy: OutOfOrderPolicy) -> Self {
        MovingHistogram {
            weights: vec![0.0; bin_count],
            total_weight: 0.0,
            last_timestamp: None,
            half_life,
            policy,
            updates_since_resum: 0,
        }
    }

    /// Creates a histogram pre-loaded with `mass` total weight spread across
    /// bins in proportion to `probs`, as if it had already seen a long stream
    /// distributed that way. `last_timestamp` anchors time-based decay for
    /// the first real update.
    pub fn seeded(
        probs: &[f64],
        mass: f64,
        half_life: HalfLife,
        policy: OutOfOrderPolicy,
        last_timestamp: Option<TimestampNs>,
    ) -> Result<Self, EmhError> {
        if probs.is_empty() {
            return Err(EmhError::InvalidSeed("no bins".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(EmhError::InvalidSeed(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(EmhError::InvalidSeed(format!(
                "mass must be positive and finite, got {mass}"
            )));
        }
        Ok(MovingHistogram {
            weights: probs.iter().map(|p| p * mass).collect(),
            total_weight: probs.iter().sum::<f64>() * mass,
            last_timestamp,
            half_life,
            policy,
            updates_since_resum: 0,
        })
    }

    pub(crate) fn from_parts(
        weights: Vec<f64>,
        total_weight: f64,
        last_timestamp: Option<TimestampNs>,
        half_life: HalfLife,
        policy: OutOfOrderPolicy,
        updates_since_resum: u32,
    ) -> Self {
        MovingHistogram {
            weights,
            total_weight,
            last_timestamp,
            half_life,
            policy,
            updates_since_resum,
        }
    }

    pub fn bin_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn last_timestamp(&self) -> Option<TimestampNs> {
        self.last_timestamp
    }

    pub fn half_life(&self) -> HalfLife {
        self.half_life
    }

    pub fn policy(&self) -> OutOfOrderPolicy {
        self.policy
    }

    pub(crate) fn updates_since_resum(&self) -> u32 {
        self.updates_since_resum
    }

    /// Decays all weights one step and adds unit weight to `bin`.
    pub fn update(&mut self, bin: usize, ts: TimestampNs) -> Result<(), EmhError> {
        if bin >= self.weights.len() {
            return Err(EmhError::BinOutOfRange {
                index: bin,
                bins: self.weights.len(),
            });
        }
        let decay = match self.half_life {
            HalfLife::Events(n_half) => (-1.0 / n_half).exp2(),
            HalfLife::TimeSecs(tau_half) => {
                let dt_ns = match self.last_timestamp {
                    None => 0,
                    Some(last) if ts >= last => ts - last,
                    Some(last) => match self.policy {
                        OutOfOrderPolicy::Reject => {
                            return Err(EmhError::OutOfOrderEvent { ts, last });
                        }
                        OutOfOrderPolicy::ClampToLast => 0,
                    },
                };
                (-(dt_ns as f64 / NANOS_PER_SEC) / tau_half).exp2()
            }
        };
        for w in &mut self.weights {
            *w *= decay;
        }
        self.weights[bin] += 1.0;
        self.total_weight = self.total_weight * decay + 1.0;
        self.last_timestamp = Some(self.last_timestamp.map_or(ts, |last| last.max(ts)));
        self.updates_since_resum += 1;
        if self.updates_since_resum >= RESUM_INTERVAL {
            self.recompute_total();
        }
        Ok(())
    }

    /// Recomputes the running total from the bin weights.
    pub fn recompute_total(&mut self) {
        self.total_weight = self.weights.iter().sum();
        self.updates_since_resum = 0;
    }

    /// Normalizes the weights into a probability vector.
    pub fn to_distribution(&self) -> Result<Vec<f64>, EmhError> {
        if self.total_weight <= 0.0 {
            return Err(EmhError::EmptyHistogram);
        }
        Ok(self.weights.iter().map(|w| w / self.total_weight).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, rel: f64) {
        let scale = a.abs().max(b.abs()).max(1e-100);
        assert!(
            (a - b).abs() <= rel * scale,
            "expected {a} and {b} to agree within relative {rel}"
        );
    }

    #[test]
    fn two_updates_match_hand_computation() {
        let mut h = MovingHistogram::new(2, HalfLife::events(1.0).unwrap(), Default::default());
        h.update(0, 0).unwrap();
        h.update(1, 1).unwrap();
        assert_eq!(h.weights(), &[0.5, 1.0]);
        assert_eq!(h.total_weight(), 1.5);
        assert_eq!(h.last_timestamp(), Some(1));
    }

    #[test]
    fn weight_halves_after_one_half_life_of_events() {
        let n_half = 20.0;
        let mut h = MovingHistogram::new(2, HalfLife::events(n_half).unwrap(), Default::default());
        h.update(0, 0).unwrap();
        for i in 0..20 {
            h.update(1, i + 1).unwrap();
        }
        assert_close(h.weights()[0], 0.5, 1e-12);
    }

    #[test]
    fn time_decay_follows_gaps_not_event_count() {
        let tau = 10.0;
        let mut h = MovingHistogram::new(2, HalfLife::time_secs(tau).unwrap(), Default::default());
        h.update(0, 0).unwrap();
        h.update(1, 10_000_000_000).unwrap();
        assert_close(h.weights()[0], 0.5, 1e-12);
        h.update(1, 10_000_000_000).unwrap();
        assert_close(h.weights()[0], 0.5, 1e-12);
    }

    #[test]
    fn out_of_order_policy_rejects_or_clamps() {
        let hl = HalfLife::time_secs(5.0).unwrap();
        let mut strict = MovingHistogram::new(1, hl, OutOfOrderPolicy::Reject);
        strict.update(0, 100).unwrap();
        assert_eq!(
            strict.update(0, 50).unwrap_err(),
            EmhError::OutOfOrderEvent { ts: 50, last: 100 }
        );

        let mut lenient = MovingHistogram::new(1, hl, OutOfOrderPolicy::ClampToLast);
        lenient.update(0, 100).unwrap();
        lenient.update(0, 50).unwrap();
        assert_eq!(lenient.total_weight(), 2.0);
        assert_eq!(lenient.last_timestamp(), Some(100));
    }

    #[test]
    fn event_decay_ignores_timestamp_order() {
        let mut h = MovingHistogram::new(1, HalfLife::events(4.0).unwrap(), Default::default());
        h.update(0, 100).unwrap();
        h.update(0, 50).unwrap();
        assert_eq!(h.last_timestamp(), Some(100));
    }

    #[test]
    fn seeded_histogram_reproduces_the_seed_distribution() {
        let probs = [0.5, 0.25, 0.25];
        let h = MovingHistogram::seeded(
            &probs,
            144.0,
            HalfLife::events(100.0).unwrap(),
            Default::default(),
            Some(7),
        )
        .unwrap();
        let dist = h.to_distribution().unwrap();
        for (d, p) in dist.iter().zip(probs.iter()) {
            assert_close(*d, *p, 1e-12);
        }
        assert_close(h.total_weight(), 144.0, 1e-12);
        assert_eq!(h.last_timestamp(), Some(7));
    }

    #[test]
    fn seeded_rejects_bad_inputs() {
        let hl = HalfLife::events(10.0).unwrap();
        assert!(MovingHistogram::seeded(&[], 1.0, hl, Default::default(), None).is_err());
        assert!(MovingHistogram::seeded(&[0.5, -0.5], 1.0, hl, Default::default(), None).is_err());
        assert!(MovingHistogram::seeded(&[1.0], 0.0, hl, Default::default(), None).is_err());
        assert!(MovingHistogram::seeded(&[1.0], f64::NAN, hl, Default::default(), None).is_err());
    }

    #[test]
    fn empty_histogram_has_no_distribution() {
        let h = MovingHistogram::new(3, HalfLife::events(5.0).unwrap(), Default::default());
        assert_eq!(h.to_distribution().unwrap_err(), EmhError::EmptyHistogram);
    }

    #[test]
    fn invalid_half_lives_are_rejected() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(HalfLife::events(bad).is_err());
            assert!(HalfLife::time_secs(bad).is_err());
        }
    }

    #[test]
    fn running_total_stays_consistent_over_long_streams() {
        let mut h = MovingHistogram::new(4, HalfLife::events(50.0).unwrap(), Default::default());
        for i in 0..200_000i64 {
            h.update((i % 4) as usize, i).unwrap();
        }
        let running = h.total_weight();
        h.recompute_total();
        assert_close(running, h.total_weight(), 1e-9);
    }

    /// Direct all-pairs evaluation of the decayed weights, as a slow oracle
    /// for the recursive update.
    fn oracle_weights(updates: &[(usize, TimestampNs)], bins: usize, hl: HalfLife) -> Vec<f64> {
        let mut out = vec![0.0; bins];
        if updates.is_empty() {
            return out;
        }
        let n = updates.len();
        let last_ts = updates.iter().map(|u| u.1).max().unwrap();
        for (i, (bin, ts)) in updates.iter().enumerate() {
            let age = match hl {
                HalfLife::Events(n_half) => (n - 1 - i) as f64 / n_half,
                HalfLife::TimeSecs(tau) => (last_ts - ts) as f64 / NANOS_PER_SEC / tau,
            };
            out[*bin] += (-age).exp2();
        }
        out
    }

    proptest! {
        #[test]
        fn recursive_update_matches_direct_summation_event_decay(
            bins_and_updates in (2usize..8).prop_flat_map(|bins| {
                (Just(bins), proptest::collection::vec((0..bins, 0i64..1_000_000), 1..200))
            }),
            n_half in 2.0f64..500.0,
        ) {
            let (bins, mut updates) = bins_and_updates;
            updates.sort_by_key(|u| u.1);
            let hl = HalfLife::events(n_half).unwrap();
            let mut h = MovingHistogram::new(bins, hl, Default::default());
            for (bin, ts) in &updates {
                h.update(*bin, *ts).unwrap();
            }
            let expect = oracle_weights(&updates, bins, hl);
            for (w, e) in h.weights().iter().zip(expect.iter()) {
                prop_assert!((w - e).abs() <= 1e-9 * e.max(1e-12));
            }
        }

        #[test]
        fn recursive_update_matches_direct_summation_time_decay(
            bins_and_updates in (2usize..8).prop_flat_map(|bins| {
                (Just(bins), proptest::collection::vec((0..bins, 0i64..500_000_000_000), 1..200))
            }),
            tau in 1.0f64..5_000.0,
        ) {
            let (bins, mut updates) = bins_and_updates;
            updates.sort_by_key(|u| u.1);
            let hl = HalfLife::time_secs(tau).unwrap();
            let mut h = MovingHistogram::new(bins, hl, Default::default());
            for (bin, ts) in &updates {
                h.update(*bin, *ts).unwrap();
            }
            let expect = oracle_weights(&updates, bins, hl);
            for (w, e) in h.weights().iter().zip(expect.iter()) {
                prop_assert!((w - e).abs() <= 1e-9 * e.max(1e-12));
            }
        }

        #[test]
        fn distribution_sums_to_one(
            updates in proptest::collection::vec((0usize..5, 0i64..1_000_000), 1..300),
            n_half in 1.0f64..200.0,
        ) {
            let mut updates = updates;
            updates.sort_by_key(|u| u.1);
            let mut h = MovingHistogram::new(5, HalfLife::events(n_half).unwrap(), Default::default());
            for (bin, ts) in &updates {
                h.update(*bin, *ts).unwrap();
            }
            let dist = h.to_distribution().unwrap();
            let sum: f64 = dist.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(dist.iter().all(|p| *p >= 0.0));
        }
    }
}
