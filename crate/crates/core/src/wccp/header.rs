use thiserror::Error;

use crate::sim::SimTime;

/// Size of the congestion header on the wire.
pub const HEADER_BYTES: u32 = 12;

/// Per-packet congestion state: the sender's permit rate and control
/// interval (never modified in transit) and the feedback field that
/// forwarders may lower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CongestionHeader {
    /// Sender permit rate, bytes/second.
    pub rp: f64,
    /// Sender control interval.
    pub tc: SimTime,
    /// Feedback, signed bytes/second.
    pub fb: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum HeaderError {
    #[error("congestion header needs {HEADER_BYTES} bytes, got {0}")]
    Truncated(usize),
    #[error("rp must be positive")]
    ZeroRate,
    #[error("tc must be positive")]
    ZeroInterval,
}

impl CongestionHeader {
    /// Big-endian layout: rp u32 bytes/s, tc u32 microseconds, fb i32
    /// bytes/s. Values are rounded and saturated to the field width.
    pub fn encode(&self) -> [u8; 12] {
        let rp = self.rp.round().clamp(0.0, u32::MAX as f64) as u32;
        let tc = self.tc.as_micros().min(u32::MAX as u64) as u32;
        let fb = self.fb.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32;
        let mut out = [0u8; 12];
        out[0..4].copy_from_slice(&rp.to_be_bytes());
        out[4..8].copy_from_slice(&tc.to_be_bytes());
        out[8..12].copy_from_slice(&fb.to_be_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, HeaderError> {
        if buf.len() < HEADER_BYTES as usize {
            return Err(HeaderError::Truncated(buf.len()));
        }
        let word = |i: usize| <[u8; 4]>::try_from(&buf[i..i + 4]).expect("4 bytes");
        let rp = u32::from_be_bytes(word(0));
        let tc = u32::from_be_bytes(word(4));
        let fb = i32::from_be_bytes(word(8));
        if rp == 0 {
            return Err(HeaderError::ZeroRate);
        }
        if tc == 0 {
            return Err(HeaderError::ZeroInterval);
        }
        Ok(Self {
            rp: rp as f64,
            tc: SimTime::from_micros(tc as u64),
            fb: fb as f64,
        })
    }
}

/// Lowers the feedback field to the local offer. `rp` and `tc` pass through.
pub fn overwrite_feedback(header: CongestionHeader, f_local: f64) -> CongestionHeader {
    CongestionHeader {
        fb: header.fb.min(f_local),
        ..header
    }
}

/// The destination copies the data packet's header into its ACK verbatim.
pub fn echo_feedback(data_header: &CongestionHeader) -> CongestionHeader {
    *data_header
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hdr(fb: f64) -> CongestionHeader {
        CongestionHeader {
            rp: 5060.0,
            tc: SimTime::from_millis(200),
            fb,
        }
    }

    #[test]
    fn wire_layout_is_big_endian() {
        let h = CongestionHeader {
            rp: 1000.0,
            tc: SimTime::from_micros(200_000),
            fb: -10.0,
        };
        let b = h.encode();
        assert_eq!(&b[0..4], &[0, 0, 0x03, 0xE8]);
        assert_eq!(&b[4..8], &[0, 0x03, 0x0D, 0x40]);
        assert_eq!(&b[8..12], &[0xFF, 0xFF, 0xFF, 0xF6]);
        assert_eq!(CongestionHeader::decode(&b).unwrap(), h);
    }

    #[test]
    fn decode_rejects_short_and_zero_fields() {
        assert_eq!(CongestionHeader::decode(&[0; 5]), Err(HeaderError::Truncated(5)));
        assert_eq!(CongestionHeader::decode(&[0; 12]), Err(HeaderError::ZeroRate));
        let mut b = hdr(0.0).encode();
        b[4..8].copy_from_slice(&[0; 4]);
        assert_eq!(CongestionHeader::decode(&b), Err(HeaderError::ZeroInterval));
    }

    #[test]
    fn min_rule() {
        assert_eq!(overwrite_feedback(hdr(1000.0), 250.0).fb, 250.0);
        assert_eq!(overwrite_feedback(hdr(-10.0), 250.0).fb, -10.0);
        let out = overwrite_feedback(hdr(1000.0), 250.0);
        assert_eq!((out.rp, out.tc), (5060.0, SimTime::from_millis(200)));
    }

    #[test]
    fn path_fold_takes_the_bottleneck() {
        let offers = [400.0, -10.0, 250.0];
        // every ordering of the path delivers the same minimum
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for ord in orders {
            let h = ord
                .iter()
                .fold(hdr(25_000.0), |h, &i| overwrite_feedback(h, offers[i]));
            assert_eq!(h.fb, -10.0);
        }
    }

    #[test]
    fn echo_is_verbatim() {
        assert_eq!(echo_feedback(&hdr(-10.0)).fb, -10.0);
        assert_eq!(echo_feedback(&hdr(0.0)).fb, 0.0);
        let a = echo_feedback(&hdr(3.0));
        let b = echo_feedback(&hdr(-7.0));
        assert_eq!((a.fb, b.fb), (3.0, -7.0));
    }

    proptest! {
        #[test]
        fn codec_round_trips_integral_values(rp in 1u32.., tc in 1u32.., fb in any::<i32>()) {
            let h = CongestionHeader { rp: rp as f64, tc: SimTime::from_micros(tc as u64), fb: fb as f64 };
            prop_assert_eq!(CongestionHeader::decode(&h.encode()).unwrap(), h);
        }

        #[test]
        fn feedback_non_increasing_along_path(init in -1e6f64..1e6, offers in proptest::collection::vec(-1e6f64..1e6, 0..12)) {
            let mut h = hdr(init);
            for f in offers {
                let next = overwrite_feedback(h, f);
                prop_assert!(next.fb <= h.fb);
                h = next;
            }
        }
    }
}
