//! Address-event packets and their wire encoding.
//!
//! Layout, least-significant bit first (68 bits used of a 128-bit word):
//!
//! | bits    | field      | encoding                 |
//! |---------|------------|--------------------------|
//! | 0..6    | dx         | two's complement, 6 bit  |
//! | 6..12   | dy         | two's complement, 6 bit  |
//! | 12..34  | dst_neuron | unsigned, 22 bit         |
//! | 34..50  | weight     | two's complement, 16 bit |
//! | 50..66  | step_tag   | unsigned, 16 bit         |
//! | 66      | vc         | 0 = XY, 1 = YX           |
//! | 67      | relayed    | one-shot relay flag      |

use std::fmt;

use thiserror::Error;

pub const OFFSET_BITS: u32 = 6;
pub const NEURON_BITS: u32 = 22;
pub const WORD_BITS: u32 = 68;

const OFFSET_MIN: i8 = -(1 << (OFFSET_BITS - 1));
const OFFSET_MAX: i8 = (1 << (OFFSET_BITS - 1)) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum VirtualChannel {
    /// Dimension order x then y.
    #[default]
    Xy,
    /// Dimension order y then x.
    Yx,
}

impl VirtualChannel {
    pub fn index(self) -> usize {
        match self {
            VirtualChannel::Xy => 0,
            VirtualChannel::Yx => 1,
        }
    }
}

/// A spike in flight. Offsets are the remaining hops to the destination
/// chiplet; they are the only header fields routers change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AerEvent {
    pub dx: i8,
    pub dy: i8,
    pub dst_neuron: u32,
    pub weight: i16,
    /// Source step, modulo 2^16.
    pub step_tag: u16,
    pub vc: VirtualChannel,
    pub relayed: bool,
}

impl AerEvent {
    pub fn remaining_hops(&self) -> u32 {
        self.dx.unsigned_abs() as u32 + self.dy.unsigned_abs() as u32
    }

    pub fn at_destination(&self) -> bool {
        self.dx == 0 && self.dy == 0
    }
}

/// Step tags wrap at 16 bits; the kernel compares them modulo.
pub fn step_tag_of(step: u64) -> u16 {
    (step & 0xFFFF) as u16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AerWord(pub u128);

impl fmt::Display for AerWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:017x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("field `{field}` value {value} does not fit in {bits} bits")]
    Overflow {
        field: &'static str,
        value: i64,
        bits: u32,
    },
    #[error("word has bits set above bit {WORD_BITS}")]
    StrayBits,
}

pub fn encode_event(e: &AerEvent) -> Result<AerWord, EncodeError> {
    for (field, v) in [("dx", e.dx), ("dy", e.dy)] {
        if !(OFFSET_MIN..=OFFSET_MAX).contains(&v) {
            return Err(EncodeError::Overflow {
                field,
                value: v as i64,
                bits: OFFSET_BITS,
            });
        }
    }
    if e.dst_neuron >= 1 << NEURON_BITS {
        return Err(EncodeError::Overflow {
            field: "dst_neuron",
            value: e.dst_neuron as i64,
            bits: NEURON_BITS,
        });
    }
    let mask6 = (1u128 << OFFSET_BITS) - 1;
    let mut w = (e.dx as u8 as u128) & mask6;
    w |= ((e.dy as u8 as u128) & mask6) << 6;
    w |= (e.dst_neuron as u128) << 12;
    w |= (e.weight as u16 as u128) << 34;
    w |= (e.step_tag as u128) << 50;
    w |= (e.vc.index() as u128) << 66;
    w |= (e.relayed as u128) << 67;
    Ok(AerWord(w))
}

pub fn decode_event(word: AerWord) -> Result<AerEvent, EncodeError> {
    let w = word.0;
    if w >> WORD_BITS != 0 {
        return Err(EncodeError::StrayBits);
    }
    // Sign-extend 6-bit fields by shifting into the top of an i8.
    let sext6 = |bits: u128| ((bits as u8) << 2) as i8 >> 2;
    Ok(AerEvent {
        dx: sext6(w & 0x3F),
        dy: sext6((w >> 6) & 0x3F),
        dst_neuron: ((w >> 12) & ((1 << NEURON_BITS) - 1)) as u32,
        weight: ((w >> 34) & 0xFFFF) as u16 as i16,
        step_tag: ((w >> 50) & 0xFFFF) as u16,
        vc: if (w >> 66) & 1 == 1 {
            VirtualChannel::Yx
        } else {
            VirtualChannel::Xy
        },
        relayed: (w >> 67) & 1 == 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_event_is_zero_word() {
        assert_eq!(encode_event(&AerEvent::default()).unwrap(), AerWord(0));
    }

    #[test]
    fn neuron_field_overflow() {
        let e = AerEvent {
            dst_neuron: 1 << 22,
            ..Default::default()
        };
        let err = encode_event(&e).unwrap_err();
        assert!(matches!(err, EncodeError::Overflow { field: "dst_neuron", .. }));
        // 2.35e6 neurons per chiplet fits with headroom.
        let ok = AerEvent {
            dst_neuron: 2_349_999,
            ..Default::default()
        };
        assert!(encode_event(&ok).is_ok());
    }

    #[test]
    fn offset_overflow_names_field() {
        let e = AerEvent {
            dy: 32,
            ..Default::default()
        };
        assert_eq!(
            encode_event(&e).unwrap_err(),
            EncodeError::Overflow {
                field: "dy",
                value: 32,
                bits: 6
            }
        );
        let e = AerEvent {
            dx: -32,
            ..Default::default()
        };
        assert!(encode_event(&e).is_ok());
    }

    #[test]
    fn stray_bits_rejected() {
        assert_eq!(decode_event(AerWord(1 << 68)), Err(EncodeError::StrayBits));
    }

    fn arb_event() -> impl Strategy<Value = AerEvent> {
        (
            -32i8..=31,
            -32i8..=31,
            0u32..(1 << 22),
            any::<i16>(),
            any::<u16>(),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(dx, dy, dst_neuron, weight, step_tag, yx, relayed)| AerEvent {
                dx,
                dy,
                dst_neuron,
                weight,
                step_tag,
                vc: if yx { VirtualChannel::Yx } else { VirtualChannel::Xy },
                relayed,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encode_decode_is_identity(e in arb_event()) {
            let w = encode_event(&e).unwrap();
            prop_assert!(w.0 >> WORD_BITS == 0);
            prop_assert_eq!(decode_event(w).unwrap(), e);
        }
    }
}
