//! Activation-rate schedules and per-epoch freeze plans.
//!
//! An epoch activates `l_a = round(r_a · L_c)` of the `L_c` convolutional
//! layers (rounding half up) and freezes the remaining `l_i = L_c − l_a`.
//! Frozen layers still run forward; they are only excluded from the backward
//! pass and from parameter updates.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Step schedule of activation rates keyed by fraction of the run.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSchedule {
    milestones: Vec<(f64, f64)>,
    total_epochs: usize,
}

impl RateSchedule {
    pub fn new(milestones: Vec<(f64, f64)>, total_epochs: usize) -> Result<RateSchedule> {
        let key = "ra_schedule";
        match milestones.first() {
            None => return Err(Error::config(key, "schedule has no milestones")),
            Some((f, _)) if *f != 0.0 => return Err(Error::config(key, "first milestone must be at fraction 0")),
            _ => {}
        }
        for w in milestones.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::config(key, "milestone fractions must be strictly increasing"));
            }
        }
        for (f, r) in &milestones {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::config(key, format!("fraction {f} outside [0, 1]")));
            }
            if !(0.0..=1.0).contains(r) {
                return Err(Error::config(key, format!("rate {r} outside [0, 1]")));
            }
        }
        if total_epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        Ok(RateSchedule {
            milestones,
            total_epochs,
        })
    }

    /// Constant rate for every epoch.
    pub fn constant(rate: f64, total_epochs: usize) -> Result<RateSchedule> {
        RateSchedule::new(vec![(0.0, rate)], total_epochs)
    }

    /// Parses `fraction:rate` pairs, e.g. `0:1.0,0.25:0.8,0.5:0.6,0.75:0.4`.
    pub fn parse(text: &str, total_epochs: usize) -> Result<RateSchedule> {
        RateSchedule::new(parse_pairs("ra_schedule", text)?, total_epochs)
    }

    pub fn milestones(&self) -> &[(f64, f64)] {
        &self.milestones
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    /// Rate of the last milestone with `fraction · total_epochs ≤ epoch`.
    pub fn rate_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} out of range for a {}-epoch schedule",
                self.total_epochs
            )));
        }
        let e = epoch as f64;
        let total = self.total_epochs as f64;
        Ok(self
            .milestones
            .iter()
            .take_while(|(f, _)| f * total <= e)
            .last()
            .map(|(_, r)| *r)
            .expect("first milestone is at fraction 0"))
    }
}

impl fmt::Display for RateSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.milestones.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses a comma-separated list of `key:value` number pairs.
pub fn parse_pairs(key: &str, text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| Error::config(key, format!("expected `a:b`, got `{pair}`")))?;
            let num = |s: &str| {
                f64::from_str(s.trim())
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::config(key, format!("`{s}` is not a number")))
            };
            Ok((num(a)?, num(b)?))
        })
        .collect()
}

/// `round(rate · l_c)` with halves rounded up.
pub fn active_count(rate: f64, l_c: usize) -> usize {
    // The small bias absorbs representation error in products like 0.35 · 10.
    let x = rate * l_c as f64;
    ((x + 0.5 + 1e-9).floor() as usize).min(l_c)
}

/// Which convolutional layers train during one epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezePlan {
    pub epoch: usize,
    pub active_layers: BTreeSet<usize>,
    pub l_a: usize,
    pub l_i: usize,
}

impl FreezePlan {
    /// Every layer active.
    pub fn all_active(l_c: usize, epoch: usize) -> FreezePlan {
        FreezePlan {
            epoch,
            active_layers: (0..l_c).collect(),
            l_a: l_c,
            l_i: 0,
        }
    }

    pub fn l_c(&self) -> usize {
        self.l_a + self.l_i
    }

    pub fn is_active(&self, layer: usize) -> bool {
        self.active_layers.contains(&layer)
    }
}

/// Draws the epoch's active layers uniformly without replacement.
///
/// The random stream is a ChaCha8 generator seeded with `rng_seed` on stream
/// `epoch`, so `(rng_seed, epoch)` fully determines the plan.
pub fn plan_epoch(l_c: usize, rate: f64, rng_seed: u64, epoch: usize) -> Result<FreezePlan> {
    if l_c == 0 {
        return Err(Error::InvalidArgument(
            "plan_epoch needs at least one conv layer".into(),
        ));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("activation rate {rate} outside [0, 1]")));
    }
    let l_a = active_count(rate, l_c);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(epoch as u64);
    let active_layers: BTreeSet<usize> = rand::seq::index::sample(&mut rng, l_c, l_a).into_iter().collect();
    Ok(FreezePlan {
        epoch,
        active_layers,
        l_a,
        l_i: l_c - l_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transfer(total: usize) -> RateSchedule {
        RateSchedule::parse("0:1.0,0.25:0.8,0.5:0.6,0.75:0.4", total).unwrap()
    }

    #[test]
    fn transfer_schedule_steps() {
        let s = transfer(8);
        let rates: Vec<f64> = (0..8).map(|e| s.rate_at(e).unwrap()).collect();
        assert_eq!(rates, vec![1.0, 1.0, 0.8, 0.8, 0.6, 0.6, 0.4, 0.4]);
        assert_eq!(s.rate_at(0).unwrap(), 1.0);
        assert_eq!(s.rate_at(6).unwrap(), 0.4);
    }

    #[test]
    fn constant_schedule() {
        let s = RateSchedule::parse("0:1.0", 5).unwrap();
        assert!((0..5).all(|e| s.rate_at(e).unwrap() == 1.0));
        assert!(s.rate_at(5).is_err());
    }

    #[test]
    fn malformed_schedules_rejected() {
        assert!(RateSchedule::parse("0.1:1.0", 4).is_err());
        assert!(RateSchedule::parse("0:1.0,0.5:0.8,0.5:0.6", 4).is_err());
        assert!(RateSchedule::parse("0:1.5", 4).is_err());
        assert!(RateSchedule::parse("0:x", 4).is_err());
        assert!(RateSchedule::parse("", 4).is_err());
        assert!(RateSchedule::parse("0:1", 0).is_err());
    }

    #[test]
    fn display_round_trips() {
        let s = transfer(8);
        assert_eq!(RateSchedule::parse(&s.to_string(), 8).unwrap(), s);
    }

    #[test]
    fn full_and_partial_plans() {
        let p = plan_epoch(10, 1.0, 3, 0).unwrap();
        assert_eq!(p.active_layers.len(), 10);
        assert_eq!(p.l_i, 0);
        let p = plan_epoch(10, 0.4, 3, 0).unwrap();
        assert_eq!((p.l_a, p.l_i), (4, 6));
        let p = plan_epoch(10, 0.0, 3, 0).unwrap();
        assert!(p.active_layers.is_empty());
    }

    #[test]
    fn plans_are_deterministic() {
        let a = plan_epoch(7, 0.6, 42, 3).unwrap();
        let b = plan_epoch(7, 0.6, 42, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.l_a, 4);
        assert!(a.active_layers.iter().all(|&l| l < 7));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(active_count(0.5, 1), 1);
        assert_eq!(active_count(0.25, 2), 1);
        assert_eq!(active_count(0.4, 3), 1);
        assert_eq!(active_count(0.35, 10), 4);
        assert_eq!(active_count(0.0, 9), 0);
        assert_eq!(active_count(1.0, 9), 9);
    }
}
