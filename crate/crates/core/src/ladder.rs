//! Generation parameters and the adaptive retry ladder.
//!
//! The ladder starts with greedy decoding at a 150-word soft limit and
//! lowers the limit by 10 per rung down to 0. It then switches to seeded
//! sampling with seed 42, stepping the temperature from 0.1 to 1.0, and
//! finally holds the temperature at 1.0 while raising the seed by 10.

use serde::{Deserialize, Serialize};

pub const INITIAL_WORD_LIMIT: u32 = 150;
pub const WORD_LIMIT_STEP: u32 = 10;
pub const BASE_SEED: u64 = 42;
pub const SEED_STEP: u64 = 10;
/// Temperatures are tenths: 1 ..= 10 maps to 0.1 ..= 1.0.
pub const MAX_TEMPERATURE_TENTHS: u32 = 10;
pub const DEFAULT_MAX_ATTEMPTS: usize = 50;

const GREEDY_RUNGS: usize = (INITIAL_WORD_LIMIT / WORD_LIMIT_STEP) as usize + 1;
const TEMPERATURE_RUNGS: usize = MAX_TEMPERATURE_TENTHS as usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
    Seeded { seed: u64, temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    #[serde(flatten)]
    pub decoding: Decoding,
    pub word_limit: u32,
    pub logprobs_requested: bool,
}

impl GenerationParams {
    pub fn greedy(word_limit: u32) -> Self {
        GenerationParams {
            decoding: Decoding::Greedy,
            word_limit,
            logprobs_requested: false,
        }
    }

    pub fn with_logprobs(mut self, on: bool) -> Self {
        self.logprobs_requested = on;
        self
    }

    pub fn seed(&self) -> Option<u64> {
        match self.decoding {
            Decoding::Greedy => None,
            Decoding::Seeded { seed, .. } => Some(seed),
        }
    }

    /// Temperature sent on the wire; greedy decoding is temperature 0.
    pub fn temperature(&self) -> f64 {
        match self.decoding {
            Decoding::Greedy => 0.0,
            Decoding::Seeded { temperature, .. } => temperature,
        }
    }
}

/// Parameters of the 1-based `rung` of the ladder.
///
/// Seeded rungs keep the word limit at 0, where the greedy phase stopped.
pub fn rung_params(rung: usize) -> GenerationParams {
    assert!(rung >= 1, "ladder rungs are 1-based");
    let i = rung - 1;
    if i < GREEDY_RUNGS {
        return GenerationParams::greedy(INITIAL_WORD_LIMIT - WORD_LIMIT_STEP * i as u32);
    }
    let j = i - GREEDY_RUNGS;
    let (seed, tenths) = if j < TEMPERATURE_RUNGS {
        (BASE_SEED, j as u32 + 1)
    } else {
        let k = (j - TEMPERATURE_RUNGS + 1) as u64;
        (BASE_SEED + SEED_STEP * k, MAX_TEMPERATURE_TENTHS)
    };
    GenerationParams {
        decoding: Decoding::Seeded {
            seed,
            temperature: f64::from(tenths) / 10.0,
        },
        word_limit: 0,
        logprobs_requested: false,
    }
}

/// Inverse of [`rung_params`]: which rung a set of request parameters
/// belongs to, or `None` if it is not on the ladder.
pub fn rung_of(decoding: Decoding, word_limit: u32) -> Option<usize> {
    match decoding {
        Decoding::Greedy => {
            if word_limit > INITIAL_WORD_LIMIT || !word_limit.is_multiple_of(WORD_LIMIT_STEP) {
                return None;
            }
            Some(((INITIAL_WORD_LIMIT - word_limit) / WORD_LIMIT_STEP) as usize + 1)
        }
        Decoding::Seeded { seed, temperature } => {
            let tenths = (temperature * 10.0).round();
            if (temperature * 10.0 - tenths).abs() > 1e-9 || !(1.0..=10.0).contains(&tenths) {
                return None;
            }
            let tenths = tenths as usize;
            if seed == BASE_SEED {
                Some(GREEDY_RUNGS + tenths)
            } else if seed > BASE_SEED && (seed - BASE_SEED).is_multiple_of(SEED_STEP) && tenths == TEMPERATURE_RUNGS {
                Some(GREEDY_RUNGS + TEMPERATURE_RUNGS + ((seed - BASE_SEED) / SEED_STEP) as usize)
            } else {
                None
            }
        }
    }
}

/// The unbounded rung sequence, starting at rung 1.
pub fn schedule() -> impl Iterator<Item = GenerationParams> {
    (1..).map(rung_params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Ok,
    OverLength,
    Invalid,
    TransportError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub params: GenerationParams,
    pub outcome: AttemptOutcome,
    /// Extra transport-level tries spent on this rung.
    #[serde(default)]
    pub transport_retries: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LadderTrace {
    pub attempts: Vec<Attempt>,
}

impl LadderTrace {
    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }

    pub fn accepted(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.outcome == AttemptOutcome::Ok)
    }

    /// Checks the structural invariants of a trace: attempt `i` uses rung
    /// `i + 1`, and only the final attempt may be accepted.
    pub fn check(&self) -> Result<(), String> {
        for (i, a) in self.attempts.iter().enumerate() {
            let mut expected = rung_params(i + 1);
            expected.logprobs_requested = a.params.logprobs_requested;
            if a.params != expected {
                return Err(format!("attempt {} has {:?}, expected {:?}", i + 1, a.params, expected));
            }
            if a.outcome == AttemptOutcome::Ok && i + 1 != self.attempts.len() {
                return Err(format!("attempt {} accepted but ladder continued", i + 1));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderLimits {
    pub max_attempts: usize,
    /// Tries per rung when the transport fails (the first try included).
    pub transport_tries: u32,
    /// Initial backoff between transport tries; doubles each time.
    pub backoff_ms: u64,
}

impl Default for LadderLimits {
    fn default() -> Self {
        LadderLimits {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            transport_tries: 3,
            backoff_ms: 250,
        }
    }
}
