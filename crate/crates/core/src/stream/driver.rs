use std::io::Read;

use thiserror::Error;

use super::{FrameEvent, FrameReader, LatencyRecord, StreamError};
use crate::parallel::{PipelineError, ShotOutcome, StreamingDecoder};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum DriveError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("stream has {stream} detectors per cycle but the model has {model}")]
    DetectorMismatch { stream: u32, model: u32 },
    #[error("output failed: {0}")]
    Output(#[from] std::io::Error),
}

/// Decodes every shot of a stream as its frames arrive.
///
/// `on_block` sees each block's latency record as soon as the block retires;
/// `on_shot` receives each finished shot in order. Returns the shot count.
pub fn decode_stream<R, W, B, S>(
    decoder: &mut StreamingDecoder<W>,
    reader: &mut FrameReader<R>,
    mut on_block: B,
    mut on_shot: S,
) -> Result<u64, DriveError>
where
    R: Read,
    W: Real,
    B: FnMut(&LatencyRecord) -> std::io::Result<()>,
    S: FnMut(ShotOutcome<W>) -> std::io::Result<()>,
{
    let header = *reader.header();
    let model = decoder.buffer().template().detectors_per_cycle();
    if header.detectors_per_cycle != model {
        return Err(DriveError::DetectorMismatch { stream: header.detectors_per_cycle, model });
    }
    let mut shot = 0u64;
    loop {
        let mut fired = match reader.next_event()? {
            None => return Ok(shot),
            Some(FrameEvent::Cycle(fired)) => fired,
            Some(FrameEvent::EndOfShot) => continue,
        };
        let mut session = decoder.begin_shot(shot, header.shot_cycles())?;
        let mut seen = 0;
        loop {
            session.push_cycle(&fired)?;
            for r in session.new_records() {
                on_block(r)?;
                seen += 1;
            }
            match reader.next_event()? {
                Some(FrameEvent::Cycle(next)) => fired = next,
                Some(FrameEvent::EndOfShot) | None => break,
            }
        }
        let outcome = session.finish()?;
        for r in &outcome.blocks[seen..] {
            on_block(r)?;
        }
        on_shot(outcome)?;
        shot += 1;
    }
}
