//! Two-stage online pipeline: a tracking stage feeding the single-writer
//! calibration stage over a bounded channel.

use std::sync::mpsc::sync_channel;
use std::thread;

use crate::calibrator::state::{CalibrationState, CalibratorConfig, Phase};
use crate::error::Result;
use crate::photometry::Frame;
use crate::tracker::{SequenceTracker, Track, TrackerConfig};

/// Result of running the online calibrator over a sequence.
#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub state: CalibrationState,
    /// Frame id at which the snapshot froze.
    pub frozen_at: Option<u64>,
    pub frames: usize,
}

/// Runs tracking and calibration over `frames` in order.
pub fn run_online<I>(
    frames: I,
    tracker: TrackerConfig,
    max_tracks: usize,
    config: CalibratorConfig,
) -> Result<CalibrationOutcome>
where
    I: IntoIterator<Item = Result<Frame>>,
    I::IntoIter: Send,
{
    let mut state = CalibrationState::new(config)?;
    let max_gap = config.max_gap;
    let frames = frames.into_iter();
    thread::scope(|scope| {
        let (tx, rx) = sync_channel::<Result<(Frame, Vec<Track>)>>(4);
        let producer = scope.spawn(move || {
            let mut seq = SequenceTracker::new(tracker, max_tracks);
            for frame in frames {
                let item = frame.and_then(|f| {
                    seq.push(&f)?;
                    let live: Vec<Track> = seq
                        .live_tracks()
                        .map(|t| Track {
                            id: t.id,
                            observations: t
                                .observations
                                .iter()
                                .filter(|o| o.frame_id + max_gap >= f.id())
                                .copied()
                                .collect(),
                        })
                        .collect();
                    Ok((f, live))
                });
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        });

        let mut frozen_at = None;
        let mut count = 0;
        for item in rx {
            let (frame, tracks) = item?;
            count += 1;
            let before = state.phase();
            let after = state.feed_frame(&frame, &tracks)?;
            if before != Phase::Frozen && after == Phase::Frozen {
                frozen_at = Some(frame.id());
            }
        }
        producer.join().expect("tracking stage panicked");
        Ok(CalibrationOutcome {
            state,
            frozen_at,
            frames: count,
        })
    })
}
