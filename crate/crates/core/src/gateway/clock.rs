//! NTP-style clock offset estimation from ping/pong exchanges.

use serde::Serialize;
use thiserror::Error;

use crate::ids::Millis;

/// One exchange: server send `t0`, device receive `t1`, device send `t2`,
/// server receive `t3`. `t0`/`t3` are server clock, `t1`/`t2` device clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClockSample {
    pub t0: Millis,
    pub t1: Millis,
    pub t2: Millis,
    pub t3: Millis,
}

impl ClockSample {
    /// Device clock minus server clock, rounded toward negative infinity.
    pub fn offset(&self) -> Millis {
        ((self.t1 - self.t0) + (self.t2 - self.t3)).div_euclid(2)
    }

    /// Round trip minus device processing time.
    pub fn rtt(&self) -> Millis {
        (self.t3 - self.t0) - (self.t2 - self.t1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClockEstimate {
    pub offset: Millis,
    pub rtt: Millis,
    /// Worst-case offset error bound: half the round trip, rounded up.
    pub confidence: Millis,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("no clock samples")]
    NoSamples,
}

impl ClockError {
    pub fn code(&self) -> &'static str {
        "E_NO_SAMPLES"
    }
}

/// Take the minimum-RTT sample (earliest on ties); asymmetric delay is
/// least able to distort it.
pub fn estimate(samples: &[ClockSample]) -> Result<ClockEstimate, ClockError> {
    let best = samples
        .iter()
        .enumerate()
        .min_by_key(|(i, s)| (s.rtt(), *i))
        .map(|(_, s)| s)
        .ok_or(ClockError::NoSamples)?;
    let rtt = best.rtt().max(0);
    Ok(ClockEstimate { offset: best.offset(), rtt, confidence: (rtt + 1).div_euclid(2) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_delay_recovers_offset_exactly() {
        // device is 300 ms ahead, 20 ms each way
        let s = ClockSample { t0: 1000, t1: 1320, t2: 1320, t3: 1040 };
        assert_eq!(s.offset(), 300);
        assert_eq!(s.rtt(), 40);
        let e = estimate(&[s]).unwrap();
        assert_eq!((e.offset, e.confidence), (300, 20));
    }

    #[test]
    fn picks_min_rtt_and_floors() {
        let slow = ClockSample { t0: 0, t1: 150, t2: 150, t3: 100 };
        let fast = ClockSample { t0: 0, t1: -7, t2: -7, t3: 5 };
        let e = estimate(&[slow, fast]).unwrap();
        assert_eq!(e.rtt, 5);
        // ((-7) + (-12)) / 2 = -9.5 -> -10
        assert_eq!(e.offset, -10);
        assert_eq!(e.confidence, 3);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(estimate(&[]).unwrap_err().code(), "E_NO_SAMPLES");
    }
}
