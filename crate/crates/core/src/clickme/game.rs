use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::MaskedClassifier;
use super::config::ClickMeConfig;
use super::round::{BrushStroke, Clock, Round, RoundStatus, Verdict};
use super::store::{AnnotationStore, MapRecord};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug)]
pub struct PoolImage {
    pub image_id: String,
    pub category: String,
    pub image: Arc<Image>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub token: String,
    pub participant_id: String,
    pub pool_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeBatch {
    /// Resubmitting a batch id returns the first response unchanged.
    #[serde(default)]
    pub batch_id: Option<String>,
    pub strokes: Vec<BrushStroke>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeOutcome {
    pub round_id: u64,
    /// Row-major indices of pixels revealed by this batch.
    pub mask_delta: Vec<u32>,
    pub revealed: usize,
    pub verdict: Option<Verdict>,
    pub status: RoundStatus,
    pub score: u64,
    pub remaining_ms: u64,
}

struct Session {
    participant_id: String,
    order: Vec<usize>,
    next: usize,
    current: Option<u64>,
}

struct RoundEntry {
    round: Round,
    token: String,
    batches: HashMap<String, StrokeOutcome>,
}

/// Game backend: sessions draw pool images without replacement, strokes grow
/// the reveal mask and trigger live classification, terminal rounds are persisted.
pub struct GameService {
    config: ClickMeConfig,
    pool: Vec<PoolImage>,
    classifier: Arc<dyn MaskedClassifier>,
    clock: Arc<dyn Clock>,
    store: AnnotationStore,
    sessions: Mutex<HashMap<String, Session>>,
    rounds: Mutex<HashMap<u64, Arc<Mutex<RoundEntry>>>>,
    next_round: AtomicU64,
    rng: Mutex<ChaCha8Rng>,
}

impl GameService {
    pub fn new(
        config: ClickMeConfig,
        pool: Vec<PoolImage>,
        classifier: Arc<dyn MaskedClassifier>,
        store: AnnotationStore,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            return Err(Error::InvalidArgument("image pool is empty".into()));
        }
        let n = config.image_size;
        if let Some(p) = pool.iter().find(|p| p.image.width() != n || p.image.height() != n) {
            return Err(Error::Shape(format!("pool image {} is not {n}x{n}", p.image_id)));
        }
        let start = store.records()?.iter().map(|r| r.round_id).max().map_or(1, |m| m + 1);
        Ok(Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            config,
            pool,
            classifier,
            clock,
            store,
            sessions: Mutex::new(HashMap::new()),
            rounds: Mutex::new(HashMap::new()),
            next_round: AtomicU64::new(start),
        })
    }

    pub fn config(&self) -> &ClickMeConfig {
        &self.config
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn create_session(&self, participant_id: Option<String>) -> SessionInfo {
        let (token, order) = {
            let mut rng = self.rng.lock().expect("rng lock poisoned");
            let token = format!("{:032x}", rng.gen::<u128>());
            let mut order: Vec<usize> = (0..self.pool.len()).collect();
            order.shuffle(&mut *rng);
            (token, order)
        };
        let participant_id = participant_id.unwrap_or_else(|| format!("anon-{}", &token[..8]));
        self.sessions.lock().expect("session lock poisoned").insert(
            token.clone(),
            Session {
                participant_id: participant_id.clone(),
                order,
                next: 0,
                current: None,
            },
        );
        SessionInfo {
            token,
            participant_id,
            pool_size: self.pool.len(),
        }
    }

    fn entry(&self, round_id: u64) -> Result<Arc<Mutex<RoundEntry>>> {
        self.rounds
            .lock()
            .expect("round table poisoned")
            .get(&round_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("round {round_id}")))
    }

    /// Current unfinished round of the session, or a fresh pending one.
    pub fn start_round(&self, token: &str) -> Result<Round> {
        let current = {
            let sessions = self.sessions.lock().expect("session lock poisoned");
            sessions.get(token).ok_or_else(|| Error::NotFound("session".into()))?.current
        };
        if let Some(id) = current {
            let entry = self.entry(id)?;
            let mut e = entry.lock().expect("round lock poisoned");
            self.expire(&mut e.round)?;
            if !e.round.status.is_terminal() {
                return Ok(e.round.clone());
            }
        }
        let mut sessions = self.sessions.lock().expect("session lock poisoned");
        let s = sessions.get_mut(token).ok_or_else(|| Error::NotFound("session".into()))?;
        if s.next >= s.order.len() {
            return Err(Error::Insufficient("image pool exhausted for this session".into()));
        }
        let img = &self.pool[s.order[s.next]];
        s.next += 1;
        let round_id = self.next_round.fetch_add(1, Ordering::SeqCst);
        let round = Round {
            round_id,
            participant_id: s.participant_id.clone(),
            image_id: img.image_id.clone(),
            category: img.category.clone(),
            display: img.image.clone(),
            mask: vec![false; self.config.image_size * self.config.image_size],
            started_at: None,
            deadline: None,
            status: RoundStatus::Pending,
            score: 0,
        };
        s.current = Some(round_id);
        self.rounds.lock().expect("round table poisoned").insert(
            round_id,
            Arc::new(Mutex::new(RoundEntry {
                round: round.clone(),
                token: token.into(),
                batches: HashMap::new(),
            })),
        );
        Ok(round)
    }

    /// Times out an active round whose deadline has passed.
    fn expire(&self, round: &mut Round) -> Result<()> {
        if round.status == RoundStatus::Active && round.deadline.is_some_and(|d| self.clock.now_ms() >= d) {
            round.status = RoundStatus::TimedOut;
            round.score = 0;
            self.finish_round(round)?;
        }
        Ok(())
    }

    fn owned_entry(&self, token: &str, round_id: u64) -> Result<Arc<Mutex<RoundEntry>>> {
        let entry = self.entry(round_id)?;
        if entry.lock().expect("round lock poisoned").token != token {
            return Err(Error::NotFound(format!("round {round_id} in this session")));
        }
        Ok(entry)
    }

    pub fn apply_strokes(&self, token: &str, round_id: u64, batch: &StrokeBatch) -> Result<StrokeOutcome> {
        let entry = self.owned_entry(token, round_id)?;
        let mut e = entry.lock().expect("round lock poisoned");
        if let Some(prev) = batch.batch_id.as_ref().and_then(|b| e.batches.get(b)) {
            return Ok(prev.clone());
        }
        let now = self.clock.now_ms();
        let round = &mut e.round;
        if round.status == RoundStatus::Pending {
            round.status = RoundStatus::Active;
            round.started_at = Some(now);
            round.deadline = Some(now + self.config.round_duration_ms);
        }
        self.expire(round)?;
        if round.status.is_terminal() {
            if round.status == RoundStatus::TimedOut {
                return Ok(StrokeOutcome {
                    round_id,
                    mask_delta: vec![],
                    revealed: round.revealed(),
                    verdict: None,
                    status: round.status,
                    score: 0,
                    remaining_ms: 0,
                });
            }
            return Err(Error::State(format!("round {round_id} is already {:?}", round.status)));
        }
        let mut delta = Vec::new();
        for s in &batch.strokes {
            for p in &s.points {
                delta.extend(round.reveal(p[0], p[1], self.config.brush_size));
            }
        }
        let revealed = round.revealed();
        let verdict = self.classifier.classify(&round.masked_image())?;
        let remaining = round.remaining_ms(now).unwrap_or(0);
        // a blank canvas never wins, whatever the classifier says about it
        if revealed > 0 && verdict.label == round.category {
            round.status = RoundStatus::Won;
            round.score = remaining / self.config.score_divisor;
            self.finish_round(round)?;
        }
        let out = StrokeOutcome {
            round_id,
            mask_delta: delta,
            revealed,
            verdict: Some(verdict),
            status: round.status,
            score: round.score,
            remaining_ms: remaining,
        };
        if let Some(b) = &batch.batch_id {
            e.batches.insert(b.clone(), out.clone());
        }
        Ok(out)
    }

    pub fn skip(&self, token: &str, round_id: u64) -> Result<Round> {
        let entry = self.owned_entry(token, round_id)?;
        let mut e = entry.lock().expect("round lock poisoned");
        self.expire(&mut e.round)?;
        if e.round.status.is_terminal() {
            return Err(Error::State(format!("round {round_id} is already {:?}", e.round.status)));
        }
        e.round.status = RoundStatus::Skipped;
        e.round.score = 0;
        self.finish_round(&e.round)?;
        Ok(e.round.clone())
    }

    pub fn round(&self, token: &str, round_id: u64) -> Result<Round> {
        let entry = self.owned_entry(token, round_id)?;
        let mut e = entry.lock().expect("round lock poisoned");
        self.expire(&mut e.round)?;
        Ok(e.round.clone())
    }

    /// Persists the final mask of a terminal round: won rounds always, timed-out
    /// rounds when configured, skipped rounds never. Returns whether a map was stored.
    pub fn finish_round(&self, round: &Round) -> Result<bool> {
        let keep = match round.status {
            RoundStatus::Won => true,
            RoundStatus::TimedOut => self.config.include_timed_out,
            RoundStatus::Skipped => false,
            s => return Err(Error::State(format!("round {} is not finished ({s:?})", round.round_id))),
        };
        if keep {
            self.store.append(
                &MapRecord {
                    participant_id: round.participant_id.clone(),
                    image_id: round.image_id.clone(),
                    category: round.category.clone(),
                    round_id: round.round_id,
                    status: round.status,
                    score: round.score,
                    map_file: AnnotationStore::map_file_for(round.round_id),
                },
                &round.mask_image(),
            )?;
        }
        Ok(keep)
    }

    /// Categories in the pool, sorted.
    pub fn categories(&self) -> Vec<String> {
        let set: HashSet<&String> = self.pool.iter().map(|p| &p.category).collect();
        let mut v: Vec<String> = set.into_iter().cloned().collect();
        v.sort();
        v
    }
}
