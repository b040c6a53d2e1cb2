//! Binary frame codec for cross-domain messages.
//!
//! Layout, fixed and versioned:
//!
//! ```text
//! magic "SPLT" (4 bytes)
//! version   u8 = 1
//! msg_type  u8   1=Cut 2=Grad 3=Logits 4=LossGrad 5=Control
//! round     u32 LE
//! domain    u16 LE   (0 for messages not tied to a domain)
//! ndim      u8
//! dims      u32 LE, one per dimension (absent when ndim = 0)
//! payload   f64 LE, row-major, product(dims) values (empty when ndim = 0)
//! crc32     u32 LE, IEEE CRC-32 of every preceding byte
//! ```
//!
//! Control frames carry no tensor (`ndim = 0`). The declared element count
//! is capped at 2³²; anything larger is rejected before allocation.

use crate::error::{Error, Result};
use crate::protocol::{CutMessage, Frame, GradMessage, MessageKind, StageMessage};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SPLT";
pub const VERSION: u8 = 1;

const MAX_ELEMENTS: u128 = 1 << 32;

/// Serializes a message to its exact byte layout.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let (kind, round, domain, tensor) = match frame {
        Frame::Cut(m) => (MessageKind::Cut, m.round, m.domain, Some(&m.activations)),
        Frame::Grad(m) => (MessageKind::Grad, m.round, m.domain, Some(&m.gradients)),
        Frame::Logits(m) => (MessageKind::Logits, m.round, 0, Some(&m.tensor)),
        Frame::LossGrad(m) => (MessageKind::LossGrad, m.round, 0, Some(&m.tensor)),
        Frame::Control { round } => (MessageKind::Control, *round, 0, None),
    };
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(kind as u8);
    out.extend_from_slice(&round.to_le_bytes());
    out.extend_from_slice(&domain.to_le_bytes());
    match tensor {
        Some(t) => encode_tensor(t, &mut out),
        None => out.push(0),
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Appends the codec's tensor framing: `ndim u8 | dims u32 LE | f64 LE`.
/// The same framing serializes parameter checkpoints.
pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Parses one tensor in the codec's framing starting at `*pos`, advancing
/// `*pos` past it.
pub fn decode_tensor(bytes: &[u8], pos: &mut usize) -> Result<Tensor> {
    let mut c = Cursor { bytes, pos: *pos };
    let ndim = c.u8("ndim")? as usize;
    if ndim == 0 {
        return Err(Error::Format("tensor with zero dimensions".into()));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut n: u128 = 1;
    for i in 0..ndim {
        let d = c.u32(&format!("dim {i}"))?;
        if d == 0 {
            return Err(Error::Format(format!("dimension {i} is zero")));
        }
        dims.push(d as usize);
        n *= d as u128;
        if n > MAX_ELEMENTS {
            return Err(Error::Limit(format!(
                "declared element count exceeds {MAX_ELEMENTS}"
            )));
        }
    }
    // Validate against the bytes on hand before allocating anything sized
    // by untrusted dims.
    let available = (bytes.len() - c.pos) as u128;
    if n * 8 > available {
        return Err(Error::Incomplete(format!(
            "payload declares {n} values but only {available} bytes remain"
        )));
    }
    let mut data = Vec::with_capacity(n as usize);
    for _ in 0..n {
        data.push(c.f64("payload")?);
    }
    *pos = c.pos;
    Tensor::new(dims, data)
}

/// CRC of an encoded frame (its last four bytes).
pub fn frame_crc(bytes: &[u8]) -> Result<u32> {
    if bytes.len() < 4 {
        return Err(Error::Incomplete("frame shorter than its checksum".into()));
    }
    let tail = &bytes[bytes.len() - 4..];
    Ok(u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Incomplete(format!(
                "frame ends inside {what} (need {n} bytes at offset {})",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(f64::from_le_bytes(arr))
    }
}

/// Parses exactly one frame; the inverse of [`encode_frame`].
pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:02X?}, expected {MAGIC:02X?}"
        )));
    }
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported frame version {version}"
        )));
    }
    let type_byte = c.u8("msg_type")?;
    let kind = MessageKind::from_byte(type_byte)
        .ok_or_else(|| Error::Format(format!("unknown message type {type_byte}")))?;
    let round = c.u32("round")?;
    let domain = c.u16("domain")?;

    // Peek at ndim: zero means no tensor (control frames).
    let ndim_pos = c.pos;
    let ndim = c.u8("ndim")?;
    let tensor = if ndim == 0 {
        None
    } else {
        let mut pos = ndim_pos;
        let t = decode_tensor(bytes, &mut pos)?;
        c.pos = pos;
        Some(t)
    };

    let body_end = c.pos;
    let stored = c.u32("crc32")?;
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after frame",
            bytes.len() - c.pos
        )));
    }
    let actual = crc32fast::hash(&bytes[..body_end]);
    if stored != actual {
        return Err(Error::Corruption(format!(
            "crc mismatch: stored {stored:08X}, computed {actual:08X}"
        )));
    }

    let frame = match kind {
        MessageKind::Cut => Frame::Cut(CutMessage {
            round,
            domain,
            batch_rows: tensor.as_ref().map_or(0, Tensor::rows),
            activations: tensor.ok_or_else(|| Error::Format("cut frame without tensor".into()))?,
        }),
        MessageKind::Grad => Frame::Grad(GradMessage {
            round,
            domain,
            gradients: tensor.ok_or_else(|| Error::Format("grad frame without tensor".into()))?,
        }),
        MessageKind::Logits => Frame::Logits(StageMessage {
            round,
            tensor: tensor.ok_or_else(|| Error::Format("logits frame without tensor".into()))?,
        }),
        MessageKind::LossGrad => Frame::LossGrad(StageMessage {
            round,
            tensor: tensor
                .ok_or_else(|| Error::Format("loss-grad frame without tensor".into()))?,
        }),
        MessageKind::Control => {
            if tensor.is_some() {
                return Err(Error::Format("control frame with a tensor payload".into()));
            }
            Frame::Control { round }
        }
    };
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_uniform, RngState};
    use proptest::prelude::*;

    #[test]
    fn hand_encoded_cut_frame() {
        // Cut, round 7, domain 2, one-element tensor holding 1.0.
        let msg = CutMessage {
            round: 7,
            domain: 2,
            batch_rows: 1,
            activations: Tensor::new(vec![1], vec![1.0]).unwrap(),
        };
        let bytes = encode_frame(&Frame::Cut(msg));
        let expected_header: &[u8] = &[
            0x53, 0x50, 0x4C, 0x54, // "SPLT"
            0x01, // version
            0x01, // msg_type Cut
            0x07, 0x00, 0x00, 0x00, // round
            0x02, 0x00, // domain
            0x01, // ndim
            0x01, 0x00, 0x00, 0x00, // dims[0]
        ];
        assert_eq!(&bytes[..expected_header.len()], expected_header);
        let payload: &[u8] = &[0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xF0, 0x3F];
        assert_eq!(&bytes[expected_header.len()..expected_header.len() + 8], payload);
        assert_eq!(bytes.len(), expected_header.len() + 8 + 4);
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        assert_eq!(frame_crc(&bytes).unwrap(), crc);
    }

    #[test]
    fn two_dimensional_shape_is_preserved() {
        let msg = CutMessage {
            round: 7,
            domain: 2,
            batch_rows: 1,
            activations: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
        };
        let bytes = encode_frame(&Frame::Cut(msg));
        // ndim 2, dims [1, 1].
        assert_eq!(bytes[12], 0x02);
        assert_eq!(&bytes[13..21], &[1, 0, 0, 0, 1, 0, 0, 0]);
        match decode_frame(&bytes).unwrap() {
            Frame::Cut(m) => assert_eq!(m.activations.shape(), &[1, 1]),
            other => panic!("wrong frame {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = RngState::new(404);
        let t = rng_uniform(&mut rng, &[3, 5], -100.0, 100.0).unwrap();
        let frame = Frame::Grad(GradMessage {
            round: 12,
            domain: 4,
            gradients: t.clone(),
        });
        let bytes = encode_frame(&frame);
        match decode_frame(&bytes).unwrap() {
            Frame::Grad(m) => {
                assert_eq!(m.round, 12);
                assert_eq!(m.domain, 4);
                assert_eq!(m.gradients, t);
                let same_bits = m
                    .gradients
                    .data()
                    .iter()
                    .zip(t.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same_bits);
            }
            other => panic!("wrong frame {other:?}"),
        }
    }

    #[test]
    fn control_frame_has_no_tensor() {
        let bytes = encode_frame(&Frame::Control { round: 3 });
        assert!(matches!(
            decode_frame(&bytes).unwrap(),
            Frame::Control { round: 3 }
        ));
    }

    #[test]
    fn empty_input_is_incomplete() {
        assert!(matches!(decode_frame(&[]).unwrap_err(), Error::Incomplete(_)));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_frame(&Frame::Control { round: 0 });
        bytes[0] = b'X';
        assert!(matches!(decode_frame(&bytes).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn flipped_last_byte_is_detected() {
        let mut rng = RngState::new(1);
        let t = rng_uniform(&mut rng, &[2, 2], 0.0, 1.0).unwrap();
        let mut bytes = encode_frame(&Frame::Logits(StageMessage { round: 1, tensor: t }));
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        assert!(matches!(
            decode_frame(&bytes).unwrap_err(),
            Error::Corruption(_)
        ));
    }

    #[test]
    fn truncation_is_incomplete() {
        let mut rng = RngState::new(2);
        let t = rng_uniform(&mut rng, &[2, 3], 0.0, 1.0).unwrap();
        let bytes = encode_frame(&Frame::Cut(CutMessage {
            round: 1,
            domain: 0,
            batch_rows: 2,
            activations: t,
        }));
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(decode_frame(cut).unwrap_err(), Error::Incomplete(_)));
    }

    #[test]
    fn oversized_dims_are_rejected_before_allocation() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.push(VERSION);
        bytes.push(MessageKind::Cut as u8);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.push(2);
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_frame(&bytes).unwrap_err(), Error::Limit(_)));
    }

    proptest! {
        #[test]
        fn fuzz_roundtrip(
            rows in 1usize..8,
            cols in 1usize..8,
            round in any::<u32>(),
            domain in any::<u16>(),
            seed in any::<u64>(),
            kind in 1u8..=4,
        ) {
            let mut rng = RngState::new(seed);
            let t = rng_uniform(&mut rng, &[rows, cols], -1e6, 1e6).unwrap();
            let frame = match kind {
                1 => Frame::Cut(CutMessage { round, domain, batch_rows: rows, activations: t }),
                2 => Frame::Grad(GradMessage { round, domain, gradients: t }),
                3 => Frame::Logits(StageMessage { round, tensor: t }),
                _ => Frame::LossGrad(StageMessage { round, tensor: t }),
            };
            let bytes = encode_frame(&frame);
            let back = decode_frame(&bytes).unwrap();
            prop_assert_eq!(encode_frame(&back), bytes);
        }

        #[test]
        fn fuzz_single_byte_corruption_detected(
            seed in any::<u64>(),
            pos_pick in any::<u64>(),
            flip in 1u8..=255,
        ) {
            let mut rng = RngState::new(seed);
            let t = rng_uniform(&mut rng, &[2, 3], -10.0, 10.0).unwrap();
            let bytes = encode_frame(&Frame::Cut(CutMessage {
                round: 9, domain: 1, batch_rows: 2, activations: t,
            }));
            let pos = (pos_pick % bytes.len() as u64) as usize;
            let mut corrupted = bytes.clone();
            corrupted[pos] ^= flip;
            prop_assert!(decode_frame(&corrupted).is_err());
        }
    }
}
