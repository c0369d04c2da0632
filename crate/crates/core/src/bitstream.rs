//! `.nvc` container: a fixed 32-byte header followed by one record per frame.
//!
//! All integers are little-endian.
//!
//! ```text
//! header (32 bytes)
//!   0  magic        b"NVCS"
//!   4  version      u16  (= 1)
//!   6  reserved     u16  (= 0)
//!   8  width        u32
//!  12  height       u32
//!  16  gop_size     u32
//!  20  model_id     u32  (lambda index of the model that produced the stream)
//!  24  frame_count  u32
//!  28  crc32        u32  (IEEE CRC-32 of bytes 0..28)
//! frame record
//!      frame_type   u8   (0 = I, 1 = P)
//!      chunk_count  u8   (2 for I, 4 for P)
//!      chunks...
//! chunk
//!      kind         u8   (0 intra_hyper, 1 intra_main, 2 motion_hyper,
//!                         3 motion_main, 4 res_hyper, 5 res_main)
//!      symbol_min   i32
//!      symbol_max   i32
//!      length       u32  (payload bytes)
//!      payload      [u8; length]
//! ```

use crate::entropy::Bottleneck;
use crate::error::{NvcError, Result};

pub const MAGIC: [u8; 4] = *b"NVCS";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 32;
const CHUNK_HEADER_BYTES: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FrameType {
    I,
    P,
}

impl FrameType {
    fn canonical_chunks(self) -> &'static [Bottleneck] {
        match self {
            FrameType::I => &[Bottleneck::IntraHyper, Bottleneck::IntraMain],
            FrameType::P => &[
                Bottleneck::MotionHyper,
                Bottleneck::MotionMain,
                Bottleneck::ResHyper,
                Bottleneck::ResMain,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub gop_size: u32,
    pub model_id: u32,
    pub frame_count: u32,
}

/// One range-coded payload with the symbol range its tables were built over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub kind: Bottleneck,
    pub symbol_min: i32,
    pub symbol_max: i32,
    pub payload: Vec<u8>,
}

impl Chunk {
    pub fn coded_len(&self) -> usize {
        CHUNK_HEADER_BYTES + self.payload.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub frame_type: FrameType,
    pub chunks: Vec<Chunk>,
}

impl FrameRecord {
    pub fn coded_len(&self) -> usize {
        2 + self.chunks.iter().map(Chunk::coded_len).sum::<usize>()
    }

    pub fn chunk(&self, kind: Bottleneck) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NvcBitstream {
    pub header: StreamHeader,
    pub frames: Vec<FrameRecord>,
}

impl NvcBitstream {
    pub fn byte_len(&self) -> usize {
        HEADER_BYTES + self.frames.iter().map(FrameRecord::coded_len).sum::<usize>()
    }

    /// `8 * size / (W * H * frames)`; zero for an empty stream.
    pub fn bits_per_pixel(&self) -> f64 {
        let pixels =
            self.header.width as f64 * self.header.height as f64 * self.frames.len() as f64;
        if pixels == 0.0 {
            0.0
        } else {
            8.0 * self.byte_len() as f64 / pixels
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_stream(&self.header, &self.frames)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_stream(bytes)
    }
}

fn check_order(index: usize, gop_size: u32, frame: &FrameRecord) -> Result<()> {
    let expect_i = gop_size == 0 || index % gop_size as usize == 0;
    if expect_i && frame.frame_type != FrameType::I {
        return Err(NvcError::ChunkOrder(format!(
            "frame {index} starts a GOP but is not an I-frame"
        )));
    }
    if !expect_i && frame.frame_type != FrameType::P {
        return Err(NvcError::ChunkOrder(format!(
            "frame {index} is inside a GOP but is not a P-frame"
        )));
    }
    let kinds: Vec<Bottleneck> = frame.chunks.iter().map(|c| c.kind).collect();
    if kinds != frame.frame_type.canonical_chunks() {
        return Err(NvcError::ChunkOrder(format!(
            "frame {index} ({:?}) carries chunks {:?}",
            frame.frame_type,
            kinds.iter().map(|k| k.name()).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

fn encode_header(h: &StreamHeader) -> [u8; HEADER_BYTES] {
    let mut b = [0u8; HEADER_BYTES];
    b[0..4].copy_from_slice(&MAGIC);
    b[4..6].copy_from_slice(&VERSION.to_le_bytes());
    b[8..12].copy_from_slice(&h.width.to_le_bytes());
    b[12..16].copy_from_slice(&h.height.to_le_bytes());
    b[16..20].copy_from_slice(&h.gop_size.to_le_bytes());
    b[20..24].copy_from_slice(&h.model_id.to_le_bytes());
    b[24..28].copy_from_slice(&h.frame_count.to_le_bytes());
    let crc = crc32fast::hash(&b[..28]);
    b[28..32].copy_from_slice(&crc.to_le_bytes());
    b
}

/// Serializes a header and its frames. Frames must be in canonical order and
/// `header.frame_count` must match.
pub fn write_stream(header: &StreamHeader, frames: &[FrameRecord]) -> Result<Vec<u8>> {
    if header.frame_count as usize != frames.len() {
        return Err(NvcError::ChunkOrder(format!(
            "header declares {} frames, {} given",
            header.frame_count,
            frames.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_BYTES);
    out.extend_from_slice(&encode_header(header));
    for (i, f) in frames.iter().enumerate() {
        check_order(i, header.gop_size, f)?;
        out.push(match f.frame_type {
            FrameType::I => 0,
            FrameType::P => 1,
        });
        out.push(f.chunks.len() as u8);
        for c in &f.chunks {
            out.push(c.kind.tag());
            out.extend_from_slice(&c.symbol_min.to_le_bytes());
            out.extend_from_slice(&c.symbol_max.to_le_bytes());
            out.extend_from_slice(&(c.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&c.payload);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(NvcError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(NvcError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_header(bytes: &[u8]) -> Result<StreamHeader> {
    if bytes.len() < 4 {
        return Err(NvcError::Truncated);
    }
    if bytes[0..4] != MAGIC {
        return Err(NvcError::BadMagic);
    }
    if bytes.len() < HEADER_BYTES {
        return Err(NvcError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(NvcError::UnsupportedVersion(version));
    }
    let crc = u32::from_le_bytes(bytes[28..32].try_into().unwrap());
    if crc != crc32fast::hash(&bytes[..28]) || bytes[6..8] != [0, 0] {
        return Err(NvcError::HeaderChecksum);
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    Ok(StreamHeader {
        width: word(8),
        height: word(12),
        gop_size: word(16),
        model_id: word(20),
        frame_count: word(24),
    })
}

fn read_frame(cur: &mut Cursor<'_>) -> Result<FrameRecord> {
    let frame_type = match cur.u8()? {
        0 => FrameType::I,
        1 => FrameType::P,
        t => return Err(NvcError::CorruptStream(format!("unknown frame type {t}"))),
    };
    let n = cur.u8()? as usize;
    let mut chunks = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = cur.u8()?;
        let kind = Bottleneck::from_tag(tag)
            .ok_or_else(|| NvcError::CorruptStream(format!("unknown chunk kind {tag}")))?;
        let symbol_min = cur.i32()?;
        let symbol_max = cur.i32()?;
        let len = cur.u32()? as usize;
        let payload = cur.take(len)?.to_vec();
        chunks.push(Chunk {
            kind,
            symbol_min,
            symbol_max,
            payload,
        });
    }
    Ok(FrameRecord { frame_type, chunks })
}

/// Parses a full stream. Errors inside a frame record name the frame index.
pub fn read_stream(bytes: &[u8]) -> Result<NvcBitstream> {
    let header = read_header(bytes)?;
    let mut cur = Cursor {
        data: bytes,
        pos: HEADER_BYTES,
    };
    let mut frames = Vec::with_capacity(header.frame_count.min(1 << 16) as usize);
    for i in 0..header.frame_count as usize {
        let f = read_frame(&mut cur)
            .and_then(|f| check_order(i, header.gop_size, &f).map(|_| f))
            .map_err(|e| e.in_frame(i))?;
        frames.push(f);
    }
    if cur.pos != bytes.len() {
        return Err(NvcError::CorruptStream(format!(
            "{} trailing bytes after last frame",
            bytes.len() - cur.pos
        )));
    }
    Ok(NvcBitstream { header, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(kind: Bottleneck, n: usize) -> Chunk {
        Chunk {
            kind,
            symbol_min: -3,
            symbol_max: 4,
            payload: (0..n as u8).collect(),
        }
    }

    fn sample() -> NvcBitstream {
        let i = FrameRecord {
            frame_type: FrameType::I,
            chunks: vec![chunk(Bottleneck::IntraHyper, 5), chunk(Bottleneck::IntraMain, 40)],
        };
        let p = FrameRecord {
            frame_type: FrameType::P,
            chunks: vec![
                chunk(Bottleneck::MotionHyper, 5),
                chunk(Bottleneck::MotionMain, 9),
                chunk(Bottleneck::ResHyper, 5),
                chunk(Bottleneck::ResMain, 17),
            ],
        };
        NvcBitstream {
            header: StreamHeader {
                width: 64,
                height: 64,
                gop_size: 10,
                model_id: 2,
                frame_count: 3,
            },
            frames: vec![i, p.clone(), p],
        }
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = NvcBitstream {
            header: StreamHeader {
                width: 16,
                height: 16,
                gop_size: 10,
                model_id: 0,
                frame_count: 0,
            },
            frames: vec![],
        };
        let bytes = s.to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES);
        assert_eq!(read_stream(&bytes).unwrap().header.frame_count, 0);
    }

    #[test]
    fn i_p_p_structure() {
        let s = sample();
        let bytes = s.to_bytes().unwrap();
        assert_eq!(bytes.len(), s.byte_len());
        let back = read_stream(&bytes).unwrap();
        assert_eq!(back, s);
        let types: Vec<_> = back.frames.iter().map(|f| f.frame_type).collect();
        assert_eq!(types, vec![FrameType::I, FrameType::P, FrameType::P]);
        let counts: Vec<_> = back.frames.iter().map(|f| f.chunks.len()).collect();
        assert_eq!(counts, vec![2, 4, 4]);
    }

    #[test]
    fn bpp_accounting() {
        let s = sample();
        let bytes = s.to_bytes().unwrap();
        let expect = 8.0 * bytes.len() as f64 / (64.0 * 64.0 * 3.0);
        assert!((s.bits_per_pixel() - expect).abs() < 1e-12);
    }

    #[test]
    fn distinct_header_errors() {
        let bytes = sample().to_bytes().unwrap();
        let mut b = bytes.clone();
        b[0] ^= 1;
        assert!(matches!(read_stream(&b), Err(NvcError::BadMagic)));
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(read_stream(&b), Err(NvcError::UnsupportedVersion(9))));
        let mut b = bytes.clone();
        b[9] ^= 0x40;
        assert!(matches!(read_stream(&b), Err(NvcError::HeaderChecksum)));
        assert!(matches!(read_stream(&bytes[..20]), Err(NvcError::Truncated)));
    }

    #[test]
    fn every_single_byte_header_corruption_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for pos in 0..HEADER_BYTES {
            for flip in [0x01u8, 0x80, 0xFF] {
                let mut b = bytes.clone();
                b[pos] ^= flip;
                assert!(read_stream(&b).is_err(), "byte {pos} ^ {flip:#x} accepted");
            }
        }
    }

    #[test]
    fn truncation_names_the_frame() {
        let bytes = sample().to_bytes().unwrap();
        let err = read_stream(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            NvcError::Frame { index, source } => {
                assert_eq!(index, 2);
                assert!(matches!(*source, NvcError::Truncated));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn chunk_order_enforced() {
        let mut s = sample();
        s.frames[1].chunks.swap(0, 1);
        assert!(matches!(s.to_bytes(), Err(NvcError::ChunkOrder(_))));
        let mut s = sample();
        s.header.gop_size = 2;
        assert!(matches!(s.to_bytes(), Err(NvcError::ChunkOrder(_))));
    }
}
