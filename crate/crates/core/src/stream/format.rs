use std::io::{self, Read, Write};

use super::StreamError;

pub const MAGIC: &[u8; 8] = b"DETSTRM1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_BYTES: u64 = 24;

const GUARD_END: u8 = 0x00;
const GUARD_DATA: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u16,
    pub detectors_per_cycle: u32,
    pub observables: u16,
    /// Zero for unbounded shots, which end at a terminator frame.
    pub cycles_per_shot: u64,
}

impl StreamHeader {
    pub fn new(detectors_per_cycle: u32, observables: u16, cycles_per_shot: Option<u64>) -> Self {
        StreamHeader {
            version: FORMAT_VERSION,
            detectors_per_cycle,
            observables,
            cycles_per_shot: cycles_per_shot.unwrap_or(0),
        }
    }

    pub fn frame_bytes(&self) -> usize {
        (self.detectors_per_cycle as usize).div_ceil(8)
    }

    pub fn shot_cycles(&self) -> Option<u64> {
        (self.cycles_per_shot > 0).then_some(self.cycles_per_shot)
    }

    pub fn to_bytes(&self) -> [u8; HEADER_BYTES as usize] {
        let mut out = [0u8; HEADER_BYTES as usize];
        out[..8].copy_from_slice(MAGIC);
        out[8..10].copy_from_slice(&self.version.to_le_bytes());
        out[10..14].copy_from_slice(&self.detectors_per_cycle.to_le_bytes());
        out[14..16].copy_from_slice(&self.observables.to_le_bytes());
        out[16..24].copy_from_slice(&self.cycles_per_shot.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8; HEADER_BYTES as usize]) -> Result<Self, StreamError> {
        if &bytes[..8] != MAGIC {
            return Err(StreamError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != FORMAT_VERSION {
            return Err(StreamError::UnsupportedVersion(version));
        }
        let header = StreamHeader {
            version,
            detectors_per_cycle: u32::from_le_bytes(bytes[10..14].try_into().unwrap()),
            observables: u16::from_le_bytes([bytes[14], bytes[15]]),
            cycles_per_shot: u64::from_le_bytes(bytes[16..24].try_into().unwrap()),
        };
        if header.detectors_per_cycle == 0 {
            return Err(StreamError::NoDetectors);
        }
        Ok(header)
    }
}

/// Packs fired detector indices into a frame, bit `i` of byte `i / 8` set
/// when detector `i` fired.
pub fn encode_frame(fired: &[u32], detectors_per_cycle: u32, out: &mut Vec<u8>) {
    out.clear();
    out.resize((detectors_per_cycle as usize).div_ceil(8), 0);
    for &i in fired {
        assert!(i < detectors_per_cycle, "detector {i} out of range");
        out[i as usize / 8] |= 1 << (i % 8);
    }
}

/// Unpacks a frame into ascending detector indices.
pub fn decode_frame(frame: &[u8], out: &mut Vec<u32>) {
    out.clear();
    for (k, &byte) in frame.iter().enumerate() {
        let mut bits = byte;
        while bits != 0 {
            let b = bits.trailing_zeros();
            out.push(k as u32 * 8 + b);
            bits &= bits - 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameEvent {
    /// Fired detectors of the next cycle, ascending.
    Cycle(Vec<u32>),
    /// The current shot is complete.
    EndOfShot,
}

/// Reads a detection-event stream frame by frame.
pub struct FrameReader<R> {
    inner: R,
    header: StreamHeader,
    offset: u64,
    frame: Vec<u8>,
    cycle_in_shot: u64,
    shots: u64,
    pending_end: bool,
    done: bool,
}

impl<R: Read> FrameReader<R> {
    pub fn new(mut inner: R) -> Result<Self, StreamError> {
        let mut bytes = [0u8; HEADER_BYTES as usize];
        read_exact_at(&mut inner, &mut bytes, 0)?;
        let header = StreamHeader::from_bytes(&bytes)?;
        Ok(FrameReader {
            inner,
            frame: vec![0; header.frame_bytes()],
            header,
            offset: HEADER_BYTES,
            cycle_in_shot: 0,
            shots: 0,
            pending_end: false,
            done: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    /// Bytes consumed so far, header included.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Shots completed so far.
    pub fn shots(&self) -> u64 {
        self.shots
    }

    /// Cycles read in the shot in progress.
    pub fn cycle_in_shot(&self) -> u64 {
        self.cycle_in_shot
    }

    /// Next frame, or `None` at a clean end of stream. End of input inside an
    /// unbounded shot ends that shot.
    pub fn next_event(&mut self) -> Result<Option<FrameEvent>, StreamError> {
        if self.pending_end {
            self.pending_end = false;
            return Ok(Some(self.end_shot()));
        }
        if self.done {
            return Ok(None);
        }
        let start = self.offset;
        let got = read_up_to(&mut self.inner, &mut self.frame)?;
        if got == 0 {
            self.done = true;
            return match (self.header.shot_cycles(), self.cycle_in_shot) {
                (_, 0) => Ok(None),
                (Some(t), c) => Err(StreamError::ShortShot { offset: start, cycles: c, expected: t }),
                (None, _) => Ok(Some(self.end_shot())),
            };
        }
        if got < self.frame.len() {
            return Err(StreamError::TruncatedFrame { offset: start });
        }
        self.offset += got as u64;
        let dpc = self.header.detectors_per_cycle;
        let all_ones = self.frame.iter().all(|&b| b == 0xFF);
        if all_ones {
            match self.header.shot_cycles() {
                Some(_) if !dpc.is_multiple_of(8) => return Err(StreamError::TerminatorInBoundedShot { offset: start }),
                Some(_) => {}
                None => {
                    let mut guard = [0u8; 1];
                    read_exact_at(&mut self.inner, &mut guard, self.offset)?;
                    self.offset += 1;
                    match guard[0] {
                        GUARD_END => {
                            if self.cycle_in_shot == 0 {
                                return Err(StreamError::EmptyShot { offset: start });
                            }
                            return Ok(Some(self.end_shot()));
                        }
                        GUARD_DATA if dpc.is_multiple_of(8) => {}
                        other => return Err(StreamError::BadGuard { offset: self.offset - 1, byte: other }),
                    }
                }
            }
        } else if !dpc.is_multiple_of(8) {
            let last = *self.frame.last().unwrap();
            if last >> (dpc % 8) != 0 {
                return Err(StreamError::PaddingBits { offset: start });
            }
        }
        let mut fired = Vec::new();
        decode_frame(&self.frame, &mut fired);
        self.cycle_in_shot += 1;
        if self.header.shot_cycles() == Some(self.cycle_in_shot) {
            // The shot end is implied; report it on the next call.
            self.pending_end = true;
        }
        Ok(Some(FrameEvent::Cycle(fired)))
    }

    fn end_shot(&mut self) -> FrameEvent {
        self.cycle_in_shot = 0;
        self.shots += 1;
        FrameEvent::EndOfShot
    }
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<(), StreamError> {
    let got = read_up_to(r, buf)?;
    if got < buf.len() {
        return Err(StreamError::TruncatedFrame { offset });
    }
    Ok(())
}

/// Writes a detection-event stream.
pub struct FrameWriter<W: Write> {
    inner: W,
    header: StreamHeader,
    frame: Vec<u8>,
    cycle_in_shot: u64,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(mut inner: W, header: StreamHeader) -> io::Result<Self> {
        inner.write_all(&header.to_bytes())?;
        Ok(FrameWriter { inner, header, frame: Vec::new(), cycle_in_shot: 0 })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn write_cycle(&mut self, fired: &[u32]) -> io::Result<()> {
        encode_frame(fired, self.header.detectors_per_cycle, &mut self.frame);
        self.inner.write_all(&self.frame)?;
        if self.header.shot_cycles().is_none() && self.frame.iter().all(|&b| b == 0xFF) {
            self.inner.write_all(&[GUARD_DATA])?;
        }
        self.cycle_in_shot += 1;
        if self.header.shot_cycles() == Some(self.cycle_in_shot) {
            self.cycle_in_shot = 0;
        }
        Ok(())
    }

    /// Closes the current shot. Writes a terminator for unbounded shots and
    /// checks the cycle count for bounded ones.
    pub fn end_shot(&mut self) -> io::Result<()> {
        match self.header.shot_cycles() {
            Some(t) if self.cycle_in_shot != 0 => Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("shot ended after {} of {t} cycles", self.cycle_in_shot),
            )),
            Some(_) => Ok(()),
            None => {
                self.frame.clear();
                self.frame.resize(self.header.frame_bytes(), 0xFF);
                self.inner.write_all(&self.frame)?;
                self.inner.write_all(&[GUARD_END])?;
                self.cycle_in_shot = 0;
                Ok(())
            }
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}
