//! The "latest term" display slot.
//!
//! A shown term stays up for at least `min_display_ms`. Terms identified in
//! the meantime wait in a FIFO queue; when the slot has nothing to hand over
//! the current term stays up indefinitely. Both transitions are pure; the
//! caller owns the clock and calls [`DisplayState::tick`] periodically.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MIN_DISPLAY_MS: u64 = 7000;
pub const DEFAULT_TICK_MS: u64 = 250;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayChange {
    pub key: String,
    pub shown_at_ms: u64,
    pub previous: Option<String>,
    pub queue_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedulerError {
    #[error("{0:?} is already shown or queued")]
    DuplicateKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayState {
    current: Option<String>,
    shown_since_ms: u64,
    queue: VecDeque<String>,
    min_display_ms: u64,
}

impl Default for DisplayState {
    fn default() -> Self {
        Self::new(DEFAULT_MIN_DISPLAY_MS)
    }
}

impl DisplayState {
    pub fn new(min_display_ms: u64) -> Self {
        Self {
            current: None,
            shown_since_ms: 0,
            queue: VecDeque::new(),
            min_display_ms: min_display_ms.max(1),
        }
    }

    pub fn current(&self) -> Option<&str> {
        self.current.as_deref()
    }

    pub fn shown_since_ms(&self) -> Option<u64> {
        self.current.as_ref().map(|_| self.shown_since_ms)
    }

    pub fn queue(&self) -> impl Iterator<Item = &str> {
        self.queue.iter().map(String::as_str)
    }

    pub fn queue_depth(&self) -> usize {
        self.queue.len()
    }

    pub fn min_display_ms(&self) -> u64 {
        self.min_display_ms
    }

    fn held_long_enough(&self, now_ms: u64) -> bool {
        now_ms.saturating_sub(self.shown_since_ms) >= self.min_display_ms
    }

    fn show(&mut self, key: String, now_ms: u64) -> DisplayChange {
        let previous = self.current.replace(key.clone());
        self.shown_since_ms = now_ms;
        DisplayChange {
            key,
            shown_at_ms: now_ms,
            previous,
            queue_depth: self.queue.len(),
        }
    }

    /// Offers a newly identified term to the slot.
    pub fn push_term(
        &mut self,
        key: impl Into<String>,
        now_ms: u64,
    ) -> Result<Option<DisplayChange>, SchedulerError> {
        let key = key.into();
        if self.current.as_ref() == Some(&key) || self.queue.contains(&key) {
            return Err(SchedulerError::DuplicateKey(key));
        }
        let free = match self.current {
            None => true,
            Some(_) => self.queue.is_empty() && self.held_long_enough(now_ms),
        };
        if free {
            Ok(Some(self.show(key, now_ms)))
        } else {
            self.queue.push_back(key);
            Ok(None)
        }
    }

    /// Advances the head of the queue once the current term has been up long enough.
    pub fn tick(&mut self, now_ms: u64) -> Option<DisplayChange> {
        if self.current.is_none() || !self.held_long_enough(now_ms) {
            return None;
        }
        let next = self.queue.pop_front()?;
        Some(self.show(next, now_ms))
    }
}
