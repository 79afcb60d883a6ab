//! Detection stream to train summary, one camera at a time.

use thiserror::Error;
use tracing::debug;

use crate::config::PipelineConfig;
use crate::detection::{FrameDetections, StreamError};
use crate::grammar::CheckDigitScheme;
use crate::recognize::{recognize_train, RecognizeConfig};
use crate::summary::{build_summary, TrainSummary};
use crate::track::{CountingState, FinalizedTrain, TrackError, TrackEvent};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Track(#[from] TrackError),
}

pub struct Pipeline {
    state: CountingState,
    recognize: RecognizeConfig,
    scheme: CheckDigitScheme,
    frames: u64,
}

impl Pipeline {
    pub fn new(config: &PipelineConfig, scheme: CheckDigitScheme) -> Self {
        Pipeline {
            state: CountingState::new(config.tracker.clone()),
            recognize: config.recognize.clone(),
            scheme,
            frames: 0,
        }
    }

    pub fn push(&mut self, frame: &FrameDetections) -> Result<Vec<TrackEvent>, TrackError> {
        let events = self.state.update(frame)?;
        self.frames += 1;
        for e in &events {
            if let TrackEvent::WagonCounted { track, frame, count } = e {
                debug!(track, frame, count, "wagon counted");
            }
        }
        Ok(events)
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn finish(self) -> TrainSummary {
        let finalized = self.state.finalize();
        summarize(&finalized, &self.scheme, &self.recognize)
    }
}

pub fn summarize(train: &FinalizedTrain, scheme: &CheckDigitScheme, config: &RecognizeConfig) -> TrainSummary {
    build_summary(recognize_train(train, scheme, config), &train.meta)
}

/// Runs a whole stream, stopping at the first malformed or out-of-order frame.
pub fn run<I>(frames: I, config: &PipelineConfig) -> Result<TrainSummary, PipelineError>
where
    I: IntoIterator<Item = Result<FrameDetections, StreamError>>,
{
    let mut pipeline = Pipeline::new(config, CheckDigitScheme::default());
    for frame in frames {
        pipeline.push(&frame?)?;
    }
    Ok(pipeline.finish())
}
