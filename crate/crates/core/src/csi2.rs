//! CSI-2 style framing and RAW10 bit packing.
//!
//! Only the parts of the link that shape the emitted bit pattern are modeled:
//! a line-start sync pattern, the RAW10 long-packet payload, a line-end sync
//! pattern, and zero-level line/frame blanking. ECC, CRC, lane distribution
//! and scrambling are left out.

use serde::{Deserialize, Serialize};

use crate::{Error, GrayImage, Result};

/// Packs 10-bit pixels, four at a time, into five bytes: the four high bytes
/// followed by one byte holding the four 2-bit remainders (p0 in bits 1:0).
pub fn pack_raw10(pixels: &[u16]) -> Result<Vec<u8>> {
    if !pixels.len().is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "RAW10 packing needs a multiple of 4 pixels, got {}",
            pixels.len()
        )));
    }
    if let Some((i, p)) = pixels.iter().enumerate().find(|(_, &p)| p > 1023) {
        return Err(Error::InvalidArgument(format!("pixel {i} = {p} exceeds 10 bits")));
    }
    let mut out = Vec::with_capacity(pixels.len() / 4 * 5);
    for g in pixels.chunks_exact(4) {
        out.extend(g.iter().map(|&p| (p >> 2) as u8));
        out.push(
            g.iter()
                .enumerate()
                .fold(0u8, |acc, (k, &p)| acc | (((p & 3) as u8) << (2 * k))),
        );
    }
    Ok(out)
}

pub fn unpack_raw10(bytes: &[u8]) -> Result<Vec<u16>> {
    if !bytes.len().is_multiple_of(5) {
        return Err(Error::InvalidArgument(format!(
            "RAW10 data length must be a multiple of 5, got {}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(bytes.len() / 5 * 4);
    for g in bytes.chunks_exact(5) {
        let low = g[4];
        for k in 0..4 {
            out.push(((g[k] as u16) << 2) | ((low >> (2 * k)) & 3) as u16);
        }
    }
    Ok(out)
}

/// Width rounded up to the RAW10 group size.
pub fn padded_width(width: usize) -> usize {
    width.div_ceil(4) * 4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineTiming {
    pub bit_rate_hz: f64,
    /// Line-start short packet plus long-packet header.
    pub header_bits: usize,
    /// Line-end short packet.
    pub trailer_bits: usize,
    pub line_blank_bits: usize,
    pub frame_blank_bits: usize,
}

impl LineTiming {
    /// 64-bit header and trailer, line blanking of a quarter of the payload,
    /// frame blanking of four line durations.
    pub fn default_for_width(bit_rate_hz: f64, width: usize) -> Self {
        let payload = payload_bits(width);
        let line_blank = payload / 4;
        let line = 64 + payload + 64 + line_blank;
        Self {
            bit_rate_hz,
            header_bits: 64,
            trailer_bits: 64,
            line_blank_bits: line_blank,
            frame_blank_bits: 4 * line,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bit_rate_hz.is_finite() && self.bit_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bit rate must be positive, got {}",
                self.bit_rate_hz
            )));
        }
        Ok(())
    }

    pub fn bits_per_line(&self, width: usize) -> usize {
        self.header_bits + payload_bits(width) + self.trailer_bits + self.line_blank_bits
    }

    /// Bits from one frame start to the next, including the leading frame blank.
    pub fn bits_per_frame(&self, width: usize, height: usize) -> usize {
        self.frame_blank_bits + height * self.bits_per_line(width)
    }
}

pub fn payload_bits(width: usize) -> usize {
    padded_width(width) * 10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Print,
    Vein,
}

impl Modality {
    /// Frame-parity assignment: even frames carry the print image.
    pub fn for_frame(k: usize) -> Self {
        if k.is_multiple_of(2) {
            Modality::Print
        } else {
            Modality::Vein
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Alternating,
    Single,
}

/// Serialized link traffic. Bit indices are positions at the link bit rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketStream {
    pub bits: Vec<u8>,
    /// Index of each line's first payload bit.
    pub line_starts: Vec<usize>,
    /// Index of each frame's first bit (the first line's sync header).
    pub frame_starts: Vec<usize>,
    pub modality_schedule: Vec<Modality>,
    pub width: usize,
    pub height: usize,
}

impl PacketStream {
    pub fn frame_count(&self) -> usize {
        self.frame_starts.len()
    }

    /// Drops the first `n` frames, as if the capture began later. Frame and
    /// line indices are shifted so the remaining stream starts at the kept
    /// frame's leading blank.
    pub fn skip_frames(&self, n: usize, timing: &LineTiming) -> Result<PacketStream> {
        if n >= self.frame_count() {
            return Err(Error::InvalidArgument(format!(
                "cannot skip {n} of {} frames",
                self.frame_count()
            )));
        }
        let cut = self.frame_starts[n] - timing.frame_blank_bits;
        Ok(PacketStream {
            bits: self.bits[cut..].to_vec(),
            line_starts: self.line_starts[n * self.height..].iter().map(|s| s - cut).collect(),
            frame_starts: self.frame_starts[n..].iter().map(|s| s - cut).collect(),
            modality_schedule: self.modality_schedule[n..].to_vec(),
            width: self.width,
            height: self.height,
        })
    }

    /// Pixel codes for `line` (global line index), including padding.
    pub fn line_pixels(&self, line: usize) -> Vec<u16> {
        let start = self.line_starts[line];
        let nbits = payload_bits(self.width);
        let bytes: Vec<u8> = self.bits[start..start + nbits]
            .chunks_exact(8)
            .map(|b| b.iter().fold(0u8, |acc, &bit| (acc << 1) | bit))
            .collect();
        unpack_raw10(&bytes).expect("payload is whole RAW10 groups")
    }
}

fn sync_pattern(len: usize) -> impl Iterator<Item = u8> {
    (0..len).map(|i| if i % 2 == 0 { 1 } else { 0 })
}

/// Serializes frames into a timed bit stream. Every frame is preceded by a
/// frame blank, so the first frame is delimited like all others.
pub fn packetize(frames: &[GrayImage], timing: &LineTiming, schedule: Schedule) -> Result<PacketStream> {
    timing.validate()?;
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames to packetize".into()))?;
    let (width, height) = first.dims();
    for (k, f) in frames.iter().enumerate() {
        if f.dims() != (width, height) {
            return Err(Error::DimensionMismatch(format!(
                "frame {k} is {}x{}, frame 0 is {width}x{height}",
                f.width(),
                f.height()
            )));
        }
    }
    let pw = padded_width(width);
    let total = frames.len() * timing.bits_per_frame(width, height);
    let mut bits = Vec::with_capacity(total);
    let mut line_starts = Vec::with_capacity(frames.len() * height);
    let mut frame_starts = Vec::with_capacity(frames.len());
    let mut row = vec![0u16; pw];

    for frame in frames {
        bits.resize(bits.len() + timing.frame_blank_bits, 0);
        frame_starts.push(bits.len());
        for r in 0..height {
            bits.extend(sync_pattern(timing.header_bits));
            line_starts.push(bits.len());
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = if c < width {
                    (frame.get(r, c) * 1023.0).round() as u16
                } else {
                    0
                };
            }
            for byte in pack_raw10(&row)? {
                bits.extend((0..8).rev().map(|b| (byte >> b) & 1));
            }
            bits.extend(sync_pattern(timing.trailer_bits));
            bits.resize(bits.len() + timing.line_blank_bits, 0);
        }
    }
    debug_assert_eq!(bits.len(), total);

    let modality_schedule = (0..frames.len())
        .map(|k| match schedule {
            Schedule::Alternating => Modality::for_frame(k),
            Schedule::Single => Modality::Print,
        })
        .collect();
    Ok(PacketStream {
        bits,
        line_starts,
        frame_starts,
        modality_schedule,
        width,
        height,
    })
}
