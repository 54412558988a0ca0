use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::image::Image;

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock advanced by hand, for tests and scripted sessions.
#[derive(Clone, Debug, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Pending,
    Active,
    Won,
    TimedOut,
    Skipped,
}

impl RoundStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RoundStatus::Won | RoundStatus::TimedOut | RoundStatus::Skipped)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrushStroke {
    pub points: Vec<[i32; 2]>,
    #[serde(default)]
    pub client_ts: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: String,
    pub confidence: f64,
}

#[derive(Clone, Debug)]
pub struct Round {
    pub round_id: u64,
    pub participant_id: String,
    pub image_id: String,
    pub category: String,
    pub display: Arc<Image>,
    /// Row-major reveal mask; bits are only ever set.
    pub mask: Vec<bool>,
    pub started_at: Option<u64>,
    pub deadline: Option<u64>,
    pub status: RoundStatus,
    pub score: u64,
}

impl Round {
    pub fn size(&self) -> usize {
        self.display.width()
    }

    pub fn revealed(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Sets the `brush × brush` square centred on `(x, y)`, clipped at the
    /// borders; returns the indices of pixels that were not yet set.
    pub fn reveal(&mut self, x: i32, y: i32, brush: usize) -> Vec<u32> {
        let n = self.size() as i32;
        let r = (brush / 2) as i32;
        let mut fresh = Vec::new();
        for yy in (y - r).max(0)..=(y + r).min(n - 1) {
            for xx in (x - r).max(0)..=(x + r).min(n - 1) {
                let i = (yy * n + xx) as usize;
                if !self.mask[i] {
                    self.mask[i] = true;
                    fresh.push(i as u32);
                }
            }
        }
        fresh
    }

    /// Display pixels where revealed, blank canvas elsewhere.
    pub fn masked_image(&self) -> Image {
        let data = self
            .display
            .pixels()
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Image::new(self.size(), self.size(), data).expect("mask matches display")
    }

    pub fn mask_image(&self) -> Image {
        Image::new(self.size(), self.size(), self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
            .expect("mask matches display")
    }

    pub fn remaining_ms(&self, now: u64) -> Option<u64> {
        self.deadline.map(|d| d.saturating_sub(now))
    }
}
